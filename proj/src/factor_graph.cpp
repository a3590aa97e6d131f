#include "loopcalc/factor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

void FactorGraph::build() {
  const int n = num_variables();
  const int m = num_factors();
  edges.clear();
  var_neighbors.assign(n, {});
  var_edge_ids.assign(n, {});
  fac_edge_ids.assign(m, {});
  for (int a = 0; a < m; ++a) {
    for (int i : factors[a].neighbors) {
      if (i < 0 || i >= n) {
        std::ostringstream os;
        os << "factor " << a << ": neighbor id " << i << " out of range";
        throw InputError(os.str());
      }
      const int e = static_cast<int>(edges.size());
      edges.emplace_back(i, a);
      var_neighbors[i].push_back(a);
      var_edge_ids[i].push_back(e);
      fac_edge_ids[a].push_back(e);
    }
  }
}

int FactorGraph::edge_index(int var, int fac) const {
  for (int e : fac_edge_ids[fac]) {
    if (edges[e].first == var) return e;
  }
  return -1;
}

std::vector<double> FactorGraph::dense_table(int fac) const {
  const auto& f = factors[fac];
  const int d = static_cast<int>(f.neighbors.size());
  std::size_t size = 1;
  for (int k = 0; k < d; ++k) {
    size *= static_cast<std::size_t>(q);
    if (size > (std::size_t{1} << 24)) {
      std::ostringstream os;
      os << "factor " << fac << ": dense table q^" << d << " exceeds budget";
      throw BudgetError(os.str());
    }
  }
  std::vector<double> table(size, 0.0);
  for (const auto& entry : f.entries) {
    std::size_t idx = 0;
    std::size_t stride = 1;
    for (int k = 0; k < d; ++k) {
      idx += static_cast<std::size_t>(entry.x[k]) * stride;
      stride *= static_cast<std::size_t>(q);
    }
    table[idx] = entry.f;
  }
  return table;
}

bool FactorGraph::is_cycle_free() const {
  // Union-find over variable and factor nodes; a cycle exists iff some edge
  // joins two nodes already connected.
  const int n = num_variables();
  const int total = n + num_factors();
  std::vector<int> parent(total);
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  for (const auto& [i, a] : edges) {
    const int ra = find(i);
    const int rb = find(n + a);
    if (ra == rb) return false;
    parent[ra] = rb;
  }
  return true;
}

double FactorGraph::table_value(int fac, const std::vector<Symbol>& full_assignment) const {
  const auto& f = factors[fac];
  for (const auto& entry : f.entries) {
    bool match = true;
    for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
      if (full_assignment[f.neighbors[k]] != entry.x[k]) {
        match = false;
        break;
      }
    }
    if (match) return entry.f;
  }
  return 0.0;
}

std::vector<std::string> validate(const FactorGraph& g) {
  std::vector<std::string> violations;
  auto add = [&](const std::string& s) { violations.push_back(s); };

  if (g.q < 2) add("alphabet: q < 2");

  for (int i = 0; i < g.num_variables(); ++i) {
    const auto& h = g.variables[i].h;
    if (static_cast<int>(h.size()) != g.q) {
      std::ostringstream os;
      os << "variable " << i << ": h has " << h.size() << " entries, expected q=" << g.q;
      add(os.str());
      continue;
    }
    for (int x = 0; x < g.q; ++x) {
      if (!(h[x] > 0.0)) {
        std::ostringstream os;
        os << "variable " << i << ": h(" << x << ") = " << h[x] << " not > 0";
        add(os.str());
      }
    }
  }

  std::set<std::pair<int, int>> seen_edges;
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    const int d = static_cast<int>(f.neighbors.size());
    if (d < 2) {
      std::ostringstream os;
      os << "factor " << a << ": d_a=" << d << " < 2";
      add(os.str());
    }
    for (int i : f.neighbors) {
      if (!seen_edges.insert({i, a}).second) {
        std::ostringstream os;
        os << "edge (" << i << "," << a << "): duplicate";
        add(os.str());
      }
    }
    for (const auto& entry : f.entries) {
      if (static_cast<int>(entry.x.size()) != d) {
        std::ostringstream os;
        os << "factor " << a << ": entry arity " << entry.x.size() << " != d_a=" << d;
        add(os.str());
        continue;
      }
      for (Symbol s : entry.x) {
        if (s < 0 || s >= g.q) {
          std::ostringstream os;
          os << "factor " << a << ": entry symbol " << s << " outside alphabet";
          add(os.str());
        }
      }
      if (!(entry.f > 0.0)) {
        std::ostringstream os;
        os << "factor " << a << ": stored weight " << entry.f << " not > 0";
        add(os.str());
      }
    }
    // Support coverage: for every edge (i,a) and z, S_a must hit x_i = z.
    for (int k = 0; k < d; ++k) {
      std::vector<bool> covered(g.q, false);
      for (const auto& entry : f.entries) {
        if (static_cast<int>(entry.x.size()) == d && entry.x[k] >= 0 && entry.x[k] < g.q) {
          covered[entry.x[k]] = true;
        }
      }
      for (int z = 0; z < g.q; ++z) {
        if (!covered[z]) {
          std::ostringstream os;
          os << "edge (" << f.neighbors[k] << "," << a << "): support S_a excludes x="
             << z;
          add(os.str());
        }
      }
    }
  }
  return violations;
}

double local_consistency_error(const FactorGraph& g, const PseudoMarginals& beliefs) {
  double worst = 0.0;
  for (int i = 0; i < g.num_variables(); ++i) {
    double s = 0.0;
    for (double v : beliefs.var[i]) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
  }
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    double s = 0.0;
    for (double v : beliefs.fac[a]) s += v;
    worst = std::max(worst, std::abs(s - 1.0));
    for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
      std::vector<double> marg(g.q, 0.0);
      for (std::size_t e = 0; e < f.entries.size(); ++e) {
        marg[f.entries[e].x[k]] += beliefs.fac[a][e];
      }
      const int i = f.neighbors[k];
      for (int x = 0; x < g.q; ++x) {
        worst = std::max(worst, std::abs(marg[x] - beliefs.var[i][x]));
      }
    }
  }
  return worst;
}

TreeJointEvaluator::TreeJointEvaluator(const FactorGraph& g, const PseudoMarginals& beliefs,
                                       double consistency_tol)
    : g_(&g) {
  if (!g.is_cycle_free()) throw InputError("tree_joint_from_marginals: graph has a cycle");
  const double err = local_consistency_error(g, beliefs);
  if (err > consistency_tol) {
    std::ostringstream os;
    os << "beliefs outside local marginal polytope: max violation " << err;
    throw DegeneracyError(os.str());
  }
  for (int a = 0; a < g.num_factors(); ++a) {
    for (std::size_t e = 0; e < g.factors[a].entries.size(); ++e) {
      if (!(beliefs.fac[a][e] > 0.0)) {
        std::ostringstream os;
        os << "factor " << a << ": b_a not strictly positive on S_a";
        throw DegeneracyError(os.str());
      }
    }
  }
  var_beliefs_ = beliefs.var;
  fac_dense_.resize(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    const int d = static_cast<int>(f.neighbors.size());
    std::size_t size = 1;
    for (int k = 0; k < d; ++k) size *= static_cast<std::size_t>(g.q);
    fac_dense_[a].assign(size, 0.0);
    for (std::size_t e = 0; e < f.entries.size(); ++e) {
      std::size_t idx = 0;
      std::size_t stride = 1;
      for (int k = 0; k < d; ++k) {
        idx += static_cast<std::size_t>(f.entries[e].x[k]) * stride;
        stride *= static_cast<std::size_t>(g.q);
      }
      fac_dense_[a][idx] = beliefs.fac[a][e];
    }
  }
}

double TreeJointEvaluator::operator()(const std::vector<Symbol>& x) const {
  const FactorGraph& g = *g_;
  double p = 1.0;
  for (int i = 0; i < g.num_variables(); ++i) p *= var_beliefs_[i][x[i]];
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    std::size_t idx = 0;
    std::size_t stride = 1;
    double denom = 1.0;
    for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
      idx += static_cast<std::size_t>(x[f.neighbors[k]]) * stride;
      stride *= static_cast<std::size_t>(g.q);
      denom *= var_beliefs_[f.neighbors[k]][x[f.neighbors[k]]];
    }
    const double ba = fac_dense_[a][idx];
    if (ba == 0.0) return 0.0;
    p *= ba / denom;
  }
  return p;
}

TreeJointEvaluator tree_joint_from_marginals(const FactorGraph& g,
                                             const PseudoMarginals& beliefs,
                                             double consistency_tol) {
  return TreeJointEvaluator(g, beliefs, consistency_tol);
}

}  // namespace loopcalc
