#pragma once

#include <Eigen/Dense>

#include <utility>
#include <vector>

#include "loopcalc/bp.hpp"

namespace loopcalc {

// Density exp(-x'Jx/2 + h'x) for symmetric positive-definite J; the zero
// pattern of J defines the pairwise graph.
struct GaussianModel {
  Eigen::MatrixXd J;
  Eigen::VectorXd h;
};

void validate_gaussian(const GaussianModel& model);

// Undirected pairwise edges (i < j) where J_ij != 0.
std::vector<std::pair<int, int>> gaussian_edges(const GaussianModel& model);

struct GaussianExact {
  double log_normalizer;  // N/2 log(2 pi) - log det(J)/2 + h'inv(J)h/2
  Eigen::VectorXd mean;   // inv(J) h
  Eigen::MatrixXd cov;    // inv(J)
};

GaussianExact gaussian_exact(const GaussianModel& model);

struct GaussianBelief {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  std::vector<std::pair<int, int>> edges;
  std::vector<double> edge_cov;  // Cov_{b_a}[X_i, X_j] per edge
};

struct GaussianBPResult {
  GaussianBelief beliefs;
  double log_z_bethe = 0.0;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
  bool negative_precision_seen = false;  // some cavity precision went <= 0
};

// Messages carried as (precision, linear) pairs; means are exact at any
// converged fixed point, variances are the Bethe variances.
GaussianBPResult gaussian_bp_run(const GaussianModel& model, const BPConfig& config = {});

// c / (1 - c) with c the loop correlation: product of edge covariances over
// the product of variances around the cycle.
double gaussian_simple_loop_weight(const GaussianBPResult& bp,
                                   const std::vector<int>& cycle_vars);

double gaussian_loop_correlation(const GaussianBPResult& bp, const std::vector<int>& cycle_vars);

struct GaussianCycleResult {
  double log_z = 0.0;               // log(Z_Bethe / (1 - c))
  double loop_correlation = 0.0;    // c
  Eigen::VectorXd corrected_var;    // Var_{b_i} (1+c)/(1-c)
  Eigen::VectorXd mean;
};

// Closed-form correction for a model whose pairwise graph is one cycle.
GaussianCycleResult gaussian_single_cycle(const GaussianModel& model,
                                          const BPConfig& config = {});

struct WalkSumReport {
  double spectral_radius = 0.0;  // of |W|, W = I - D^{-1/2} J D^{-1/2}
  double var_truncated = 0.0;    // from sum_{k<=max_len} W^k
  double var_closed = 0.0;       // Var_{b_i} (1+c)/(1-c)
  double var_exact = 0.0;        // diag(inv(J))_i
  double tail_bound = 0.0;       // rho^{max_len+1} / (1-rho), scaled by 1/J_ii
  double resid_truncated = 0.0;  // |var_truncated - var_exact|
  double resid_closed = 0.0;     // |var_closed - var_exact|
};

// Cross-checks the cycle variance correction against the truncated walk-sum
// series. Requires walk-summability and a single-cycle (or edgeless) model.
WalkSumReport walk_sum_check(const GaussianModel& model, int var, int max_len,
                             const BPConfig& config = {});

}  // namespace loopcalc
