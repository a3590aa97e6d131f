#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "loopcalc/factor_graph.hpp"

namespace loopcalc {

struct ExactBudget {
  double max_states = 1e8;            // brute-force enumeration cap on q^N
  std::size_t max_table_entries = 1 << 24;  // per-intermediate cap for elimination
};

struct PartitionResult {
  double log_z;
  double z;  // exp(log_z); +inf if not representable
};

// Flat mixed-radix scan over all q^N states. Serial reference kernel; kept
// deliberately simple so it can ground-truth the parallel path.
PartitionResult brute_force_partition_serial(const FactorGraph& g,
                                             const ExactBudget& budget = {});

// Depth-first enumeration with zero-weight pruning, partitioned over
// assignment-prefix blocks. Block partial sums are reduced in block order, so
// the result is independent of the thread count.
PartitionResult brute_force_partition(const FactorGraph& g, const ExactBudget& budget = {},
                                      int threads = 0);

struct ExactInferenceResult {
  double log_z;
  std::vector<std::vector<double>> var_marginals;  // b_i, exact
  std::vector<std::vector<double>> fac_marginals;  // per factor, aligned with entries
};

// Exact inference by variable elimination. Order defaults to min-fill.
// fac_marginals are computed for every factor scope.
ExactInferenceResult exact_inference_ve(const FactorGraph& g,
                                        const std::vector<int>& elimination_order = {},
                                        const ExactBudget& budget = {});

// Min-fill heuristic over the variable interaction graph; deterministic
// tie-break by variable id.
std::vector<int> min_fill_order(const FactorGraph& g);

// Partition function only (skips the marginal passes).
double log_partition_ve(const FactorGraph& g, const std::vector<int>& elimination_order = {},
                        const ExactBudget& budget = {});

}  // namespace loopcalc
