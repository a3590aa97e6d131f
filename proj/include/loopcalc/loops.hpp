#pragma once

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "loopcalc/bp.hpp"
#include "loopcalc/exp_family.hpp"
#include "loopcalc/factor_graph.hpp"

namespace loopcalc {

// Edge subset with no degree-1 node on either side of the bipartite graph.
struct GeneralizedLoop {
  std::vector<int> edges;       // sorted edge ids
  std::vector<int> var_degree;  // d_i(E')
  std::vector<int> fac_degree;  // d_a(E')
};

GeneralizedLoop make_generalized_loop(const FactorGraph& g, std::vector<int> edges);
bool is_generalized_loop(const FactorGraph& g, const std::vector<int>& edges);

// Connected, all degrees in {0,2}: a cycle of the bipartite incidence graph.
// facs[k] joins vars[k] and vars[(k+1) % len]; canonical orientation starts at
// the smallest variable id and proceeds toward the smaller adjacent factor.
struct SimpleLoop {
  std::vector<int> vars;
  std::vector<int> facs;
  std::vector<int> edges;  // sorted edge ids
};

// Exhaustive scan (2^|E| with degree pruning). Requires |E| <= 24 unless
// max_edges bounds the subset size. Result sorted lexicographically.
std::vector<GeneralizedLoop> enumerate_generalized_loops(
    const FactorGraph& g, std::optional<int> max_edges = std::nullopt);

// Cycle enumeration anchored at the smallest node of each cycle.
std::vector<SimpleLoop> enumerate_simple_loops(const FactorGraph& g);

std::vector<SufficientStatistic> indicator_stats(const FactorGraph& g);
std::vector<SufficientStatistic> diagonalizing_stats(const FactorGraph& g,
                                                     const PseudoMarginals& beliefs);

// Loop weight via the tangent-vector label sum over (q-1)^{|E'|} labels,
// with per-factor/per-variable inner expectations memoized. Valid for any
// edge subset; non-loop subsets evaluate to zero.
double loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                   const std::vector<int>& loop_edges,
                   const std::vector<SufficientStatistic>& stats);
// Default path: per-variable statistics normalizing the Fisher matrix to the
// identity, under which both tangents reduce to standardized statistics.
double loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                   const std::vector<int>& loop_edges);

// Binary-alphabet closed form; rejects q != 2.
double loop_weight_binary(const FactorGraph& g, const PseudoMarginals& beliefs,
                          const std::vector<int>& loop_edges);

// Delta-basis representation: labels run over the full alphabet with kernels
// (delta(z, X) - b(z)) / sqrt(b(z)).
double loop_weight_delta_basis(const FactorGraph& g, const PseudoMarginals& beliefs,
                               const std::vector<int>& loop_edges);

// Trace of the cycle product of correlation matrices
// Cor_{b_a}[t^i, t^j] = Var^{-1/2} Cov Var^{-1/2}.
double simple_loop_weight_trace(const FactorGraph& g, const PseudoMarginals& beliefs,
                                const SimpleLoop& loop,
                                const std::vector<SufficientStatistic>& stats);
double simple_loop_weight_trace(const FactorGraph& g, const PseudoMarginals& beliefs,
                                const SimpleLoop& loop);

struct LoopWeightReport {
  std::vector<int> edges;
  double weight = 0.0;
  std::string method;
  double cumulative_sum = 0.0;
};

struct LoopSeriesResult {
  double z_bethe = 0.0;
  double z_estimate = 0.0;
  std::vector<LoopWeightReport> ledger;
};

// Z_Bethe (1 + sum over all generalized loops). Verification scale.
LoopSeriesResult full_loop_series(const FactorGraph& g, const BetheResult& bethe,
                                  int threads = 0);

struct TruncatedSeriesResult {
  double z_bethe = 0.0;
  double z_bethe_plus_loops = 0.0;
  double z_bethe_times_loops = 0.0;
  std::vector<LoopWeightReport> ledger;
};

// Truncation to simple generalized loops; additive and multiplicative forms.
TruncatedSeriesResult truncated_series_estimates(const FactorGraph& g, const BetheResult& bethe,
                                                 int threads = 0);

// Table of g over assignments of C, indexed by sum_k x_{C[k]} q^k.
using MarginalFunction = std::vector<double>;

// Weight K_G^g(E') of the marginal loop series; loop_edges must avoid E(F_C).
double marginal_loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                            const std::vector<int>& C, const MarginalFunction& gval,
                            const std::vector<int>& loop_edges,
                            const std::vector<SufficientStatistic>& stats);
double marginal_loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                            const std::vector<int>& C, const MarginalFunction& gval,
                            const std::vector<int>& loop_edges);

struct MarginalCorrectionResult {
  double bethe_estimate = 0.0;      // <g>_{b_C} / <1>_{b_C}
  double corrected_estimate = 0.0;  // sum K^g / sum K^1
  int loops_used = 0;
};

// Exhaustive sum over E' in E \ E(F_C) with the relaxed degree condition
// (degree-1 allowed on C and F_C).
MarginalCorrectionResult marginal_correction(const FactorGraph& g, const BetheResult& bethe,
                                             const std::vector<int>& C,
                                             const MarginalFunction& gval,
                                             std::optional<int> max_edges = std::nullopt);

// Correlation matrix between t^i and t^j on a tree, decomposed as the product
// of edge correlation matrices along the unique i-j path.
Eigen::MatrixXd tree_correlation_decompose(const FactorGraph& g, const PseudoMarginals& beliefs,
                                           int var_i, int var_j,
                                           const std::vector<SufficientStatistic>& stats);

}  // namespace loopcalc
