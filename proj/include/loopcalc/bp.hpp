#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "loopcalc/exact.hpp"
#include "loopcalc/factor_graph.hpp"

namespace loopcalc {

// Normalized messages for each edge, indexed by edge id.
struct MessageSet {
  std::vector<std::vector<double>> var_to_fac;
  std::vector<std::vector<double>> fac_to_var;
};

struct BPConfig {
  double tolerance = 1e-10;   // max-norm message change
  int max_iterations = 10000;
  double damping = 0.0;       // m <- (1-damping) m_new + damping m_old
  enum class Schedule { parallel, sequential } schedule = Schedule::parallel;
};

MessageSet uniform_messages(const FactorGraph& g);
// Uniform messages with a seeded multiplicative perturbation, renormalized.
MessageSet perturbed_messages(const FactorGraph& g, std::uint64_t seed,
                              double amplitude = 0.1);

// One sweep of the two update rules; returns the new messages and the
// max-norm applied change.
std::pair<MessageSet, double> bp_step(const FactorGraph& g, const MessageSet& messages,
                                      const BPConfig& config);

// The three normalizers of the stationary representation.
struct BeliefNormalizers {
  std::vector<double> z_fac;   // Z_a
  std::vector<double> z_var;   // Z_i
  std::vector<double> z_edge;  // Z_{i,a}
};

std::pair<PseudoMarginals, BeliefNormalizers> beliefs_from_messages(const FactorGraph& g,
                                                                    const MessageSet& messages);

struct BetheFreeEnergy {
  double f;  // f = u - h
  double u;
  double h;
};

// Requires local consistency within consistency_tol; 0 log 0 = 0.
BetheFreeEnergy bethe_free_energy(const FactorGraph& g, const PseudoMarginals& beliefs,
                                  double consistency_tol = 1e-6);

// sum log Z_a + sum log Z_i - sum log Z_{i,a}.
double log_z_bethe_stationary(const BeliefNormalizers& z);

struct BetheResult {
  MessageSet messages;
  PseudoMarginals beliefs;
  BeliefNormalizers normalizers;
  double log_z_bethe = 0.0;
  double u_bethe = 0.0;
  double h_bethe = 0.0;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

BetheResult bp_run(const FactorGraph& g, const MessageSet& init, const BPConfig& config = {});
BetheResult bp_run(const FactorGraph& g, const BPConfig& config = {});

struct StationarityReport {
  double max_violation = 0.0;  // relative to the largest entry of each message
  bool pass = false;
};

// Verifies both proportionality relations of the fixed-point condition.
StationarityReport check_stationarity(const FactorGraph& g, const MessageSet& messages,
                                      double tol);

// Verifies the reparameterization identity pointwise over all states and in
// summed form against exhaustive enumeration; returns the max relative error.
double check_reparameterization(const FactorGraph& g, const BetheResult& result,
                                const ExactBudget& budget = {}, int threads = 0);

}  // namespace loopcalc
