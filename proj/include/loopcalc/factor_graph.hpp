#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace loopcalc {

using Symbol = int;  // alphabet element, 0..q-1

// One positive entry of a sparse factor table. Assignments absent from the
// entry list have weight zero and lie outside the support S_a.
struct FactorEntry {
  std::vector<Symbol> x;  // values of the factor's neighbors, in neighbor order
  double f = 0.0;
};

struct FactorNode {
  std::vector<int> neighbors;  // ordered variable ids
  std::vector<FactorEntry> entries;
};

struct VariableNode {
  std::vector<double> h;  // per-symbol weight h_i(x), length q
};

// Immutable after build(); safe to share across threads.
class FactorGraph {
 public:
  int q = 0;
  std::vector<VariableNode> variables;
  std::vector<FactorNode> factors;

  // Derived incidence structure, filled by build().
  // Edge ids follow factor order, then neighbor order within the factor.
  std::vector<std::pair<int, int>> edges;        // (variable id, factor id)
  std::vector<std::vector<int>> var_neighbors;   // ∂i as factor ids
  std::vector<std::vector<int>> var_edge_ids;    // edge ids incident to variable
  std::vector<std::vector<int>> fac_edge_ids;    // edge ids incident to factor

  void build();

  int num_variables() const { return static_cast<int>(variables.size()); }
  int num_factors() const { return static_cast<int>(factors.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int var_degree(int i) const { return static_cast<int>(var_neighbors[i].size()); }
  int fac_degree(int a) const { return static_cast<int>(factors[a].neighbors.size()); }

  // -1 if (i, a) is not an edge.
  int edge_index(int var, int fac) const;

  // Dense view of a factor table, indexed by sum_k x_k * q^k over neighbor
  // positions k. Entries outside S_a are zero.
  std::vector<double> dense_table(int fac) const;

  bool is_cycle_free() const;

  double table_value(int fac, const std::vector<Symbol>& full_assignment) const;
};

// Diagnostics for the model invariants: d_a >= 2, h_i > 0, stored factor
// weights > 0, support coverage of S_a per edge, no duplicate edges.
std::vector<std::string> validate(const FactorGraph& g);

// Beliefs over variables and factor supports. fac[a] is aligned with
// g.factors[a].entries.
struct PseudoMarginals {
  std::vector<std::vector<double>> var;
  std::vector<std::vector<double>> fac;
};

// Max violation of the local consistency constraints sum_{∂a\{i}} b_a = b_i
// together with normalization of each belief.
double local_consistency_error(const FactorGraph& g, const PseudoMarginals& beliefs);

// The tree joint p'(x) = prod_a [b_a / prod_{i in ∂a} b_i] prod_i b_i.
// Valid on cycle-free graphs with beliefs in the local marginal polytope.
class TreeJointEvaluator {
 public:
  TreeJointEvaluator(const FactorGraph& g, const PseudoMarginals& beliefs,
                     double consistency_tol = 1e-9);

  double operator()(const std::vector<Symbol>& x) const;

 private:
  const FactorGraph* g_;
  std::vector<std::vector<double>> var_beliefs_;
  std::vector<std::vector<double>> fac_dense_;  // b_a as dense tables
};

TreeJointEvaluator tree_joint_from_marginals(const FactorGraph& g,
                                             const PseudoMarginals& beliefs,
                                             double consistency_tol = 1e-9);

}  // namespace loopcalc
