#include "loopcalc/exact.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

namespace {

double states_count(const FactorGraph& g) {
  return std::pow(static_cast<double>(g.q), static_cast<double>(g.num_variables()));
}

void check_enumeration_budget(const FactorGraph& g, const ExactBudget& budget) {
  const double states = states_count(g);
  if (states > budget.max_states) {
    std::ostringstream os;
    os << "enumeration budget exceeded: q^N = " << states << " > " << budget.max_states
       << " (use variable elimination instead)";
    throw BudgetError(os.str());
  }
}

// Scales every table by its max so per-state products stay in range; the
// pulled-out log is added back at the end.
struct ScaledModel {
  std::vector<std::vector<double>> fac_tables;  // dense, scaled
  std::vector<std::vector<double>> var_tables;  // h_i, scaled
  double log_scale = 0.0;
};

ScaledModel scale_model(const FactorGraph& g) {
  ScaledModel s;
  s.fac_tables.reserve(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    auto table = g.dense_table(a);
    const double m = *std::max_element(table.begin(), table.end());
    if (!(m > 0.0)) throw DegeneracyError("factor " + std::to_string(a) + ": empty support");
    for (double& v : table) v /= m;
    s.log_scale += std::log(m);
    s.fac_tables.push_back(std::move(table));
  }
  s.var_tables.reserve(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) {
    auto h = g.variables[i].h;
    const double m = *std::max_element(h.begin(), h.end());
    if (!(m > 0.0)) throw DegeneracyError("variable " + std::to_string(i) + ": h not positive");
    for (double& v : h) v /= m;
    s.log_scale += std::log(m);
    s.var_tables.push_back(std::move(h));
  }
  return s;
}

PartitionResult finish(double scaled_sum, double log_scale) {
  if (!(scaled_sum > 0.0)) throw DegeneracyError("partition function is zero");
  PartitionResult r;
  r.log_z = std::log(scaled_sum) + log_scale;
  r.z = std::exp(r.log_z);
  return r;
}

}  // namespace

PartitionResult brute_force_partition_serial(const FactorGraph& g, const ExactBudget& budget) {
  check_enumeration_budget(g, budget);
  const ScaledModel s = scale_model(g);
  const int n = g.num_variables();
  std::vector<Symbol> x(n, 0);
  double sum = 0.0;
  while (true) {
    double w = 1.0;
    for (int i = 0; i < n; ++i) w *= s.var_tables[i][x[i]];
    for (int a = 0; a < g.num_factors(); ++a) {
      const auto& nb = g.factors[a].neighbors;
      std::size_t idx = 0;
      std::size_t stride = 1;
      for (int k = 0; k < static_cast<int>(nb.size()); ++k) {
        idx += static_cast<std::size_t>(x[nb[k]]) * stride;
        stride *= static_cast<std::size_t>(g.q);
      }
      w *= s.fac_tables[a][idx];
      if (w == 0.0) break;
    }
    sum += w;
    int i = 0;
    while (i < n && ++x[i] == g.q) x[i++] = 0;
    if (i == n) break;
  }
  return finish(sum, s.log_scale);
}

namespace {

// Factors become "ready" at the depth where their last neighbor is assigned.
struct DfsPlan {
  std::vector<std::vector<int>> ready_at;  // depth -> factor ids
  std::vector<std::vector<std::size_t>> strides;  // per factor, per neighbor position
};

DfsPlan make_plan(const FactorGraph& g) {
  DfsPlan plan;
  plan.ready_at.assign(g.num_variables(), {});
  plan.strides.assign(g.num_factors(), {});
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& nb = g.factors[a].neighbors;
    int last = 0;
    std::size_t stride = 1;
    for (std::size_t k = 0; k < nb.size(); ++k) {
      plan.strides[a].push_back(stride);
      stride *= static_cast<std::size_t>(g.q);
      last = std::max(last, nb[k]);
    }
    if (!nb.empty()) plan.ready_at[last].push_back(a);
  }
  return plan;
}

double dfs_block_sum(const FactorGraph& g, const ScaledModel& s, const DfsPlan& plan,
                     std::vector<Symbol>& x, int depth) {
  const int n = g.num_variables();
  double sum = 0.0;
  for (Symbol v = 0; v < g.q; ++v) {
    x[depth] = v;
    double w = s.var_tables[depth][v];
    for (int a : plan.ready_at[depth]) {
      const auto& nb = g.factors[a].neighbors;
      std::size_t idx = 0;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        idx += static_cast<std::size_t>(x[nb[k]]) * plan.strides[a][k];
      }
      w *= s.fac_tables[a][idx];
      if (w == 0.0) break;
    }
    if (w == 0.0) continue;
    if (depth + 1 == n) {
      sum += w;
    } else {
      sum += w * dfs_block_sum(g, s, plan, x, depth + 1);
    }
  }
  return sum;
}

// Weight of a fixed prefix (variables 0..depth-1 assigned) times the sum over
// the rest; used to seed the parallel blocks.
double dfs_suffix_sum(const FactorGraph& g, const ScaledModel& s, const DfsPlan& plan,
                      std::vector<Symbol>& x, int prefix_len) {
  double w = 1.0;
  for (int d = 0; d < prefix_len; ++d) {
    w *= s.var_tables[d][x[d]];
    for (int a : plan.ready_at[d]) {
      const auto& nb = g.factors[a].neighbors;
      std::size_t idx = 0;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        idx += static_cast<std::size_t>(x[nb[k]]) * plan.strides[a][k];
      }
      w *= s.fac_tables[a][idx];
      if (w == 0.0) return 0.0;
    }
  }
  if (prefix_len == g.num_variables()) return w;
  return w * dfs_block_sum(g, s, plan, x, prefix_len);
}

}  // namespace

PartitionResult brute_force_partition(const FactorGraph& g, const ExactBudget& budget,
                                      int threads) {
  check_enumeration_budget(g, budget);
  const ScaledModel s = scale_model(g);
  const DfsPlan plan = make_plan(g);
  const int n = g.num_variables();
  const int nt = threads > 0 ? threads : omp_get_max_threads();

  // Prefix depth chosen so there are enough blocks to balance the threads.
  int prefix = 0;
  std::size_t blocks = 1;
  while (prefix < n && blocks < static_cast<std::size_t>(64 * nt)) {
    blocks *= static_cast<std::size_t>(g.q);
    ++prefix;
  }

  std::vector<double> partial(blocks, 0.0);
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
  for (std::int64_t blk = 0; blk < static_cast<std::int64_t>(blocks); ++blk) {
    std::vector<Symbol> x(n, 0);
    std::size_t rest = static_cast<std::size_t>(blk);
    for (int d = 0; d < prefix; ++d) {
      x[d] = static_cast<Symbol>(rest % g.q);
      rest /= g.q;
    }
    partial[blk] = dfs_suffix_sum(g, s, plan, x, prefix);
  }

  double sum = 0.0;
  for (double v : partial) sum += v;  // fixed block order, thread-count independent
  return finish(sum, s.log_scale);
}

// ---------------------------------------------------------------------------
// Variable elimination
// ---------------------------------------------------------------------------

namespace {

struct Table {
  std::vector<int> scope;  // ascending variable ids
  std::vector<double> data;
};

std::size_t table_size(int q, std::size_t arity) {
  std::size_t s = 1;
  for (std::size_t k = 0; k < arity; ++k) s *= static_cast<std::size_t>(q);
  return s;
}

Table factor_to_table(const FactorGraph& g, int a) {
  const auto& f = g.factors[a];
  Table t;
  t.scope = f.neighbors;
  std::vector<int> perm(t.scope.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(),
            [&](int u, int v) { return t.scope[u] < t.scope[v]; });
  std::sort(t.scope.begin(), t.scope.end());
  t.data.assign(table_size(g.q, t.scope.size()), 0.0);
  for (const auto& entry : f.entries) {
    std::size_t idx = 0;
    std::size_t stride = 1;
    for (std::size_t k = 0; k < t.scope.size(); ++k) {
      idx += static_cast<std::size_t>(entry.x[perm[k]]) * stride;
      stride *= static_cast<std::size_t>(g.q);
    }
    t.data[idx] = entry.f;
  }
  return t;
}

Table singleton_table(const FactorGraph& g, int i) {
  Table t;
  t.scope = {i};
  t.data = g.variables[i].h;
  return t;
}

Table multiply(const FactorGraph& g, const Table& lhs, const Table& rhs,
               const ExactBudget& budget) {
  Table out;
  out.scope.resize(lhs.scope.size() + rhs.scope.size());
  auto end = std::set_union(lhs.scope.begin(), lhs.scope.end(), rhs.scope.begin(),
                            rhs.scope.end(), out.scope.begin());
  out.scope.erase(end, out.scope.end());
  if (table_size(g.q, out.scope.size()) > budget.max_table_entries) {
    std::ostringstream os;
    os << "elimination clique of " << out.scope.size() << " variables exceeds memory budget ("
       << table_size(g.q, out.scope.size()) << " entries)";
    throw BudgetError(os.str());
  }
  out.data.assign(table_size(g.q, out.scope.size()), 0.0);

  auto strides_into = [&](const Table& t) {
    // stride of each out-scope position within t's index space (0 if absent)
    std::vector<std::size_t> strides(out.scope.size(), 0);
    std::size_t stride = 1;
    std::size_t k = 0;
    for (std::size_t p = 0; p < t.scope.size(); ++p) {
      while (out.scope[k] != t.scope[p]) ++k;
      strides[k] = stride;
      stride *= static_cast<std::size_t>(g.q);
    }
    return strides;
  };
  const auto ls = strides_into(lhs);
  const auto rs = strides_into(rhs);

  std::vector<Symbol> x(out.scope.size(), 0);
  std::size_t li = 0, ri = 0;
  for (std::size_t idx = 0; idx < out.data.size(); ++idx) {
    out.data[idx] = lhs.data[li] * rhs.data[ri];
    for (std::size_t k = 0; k < out.scope.size(); ++k) {
      if (++x[k] < g.q) {
        li += ls[k];
        ri += rs[k];
        break;
      }
      x[k] = 0;
      li -= ls[k] * static_cast<std::size_t>(g.q - 1);
      ri -= rs[k] * static_cast<std::size_t>(g.q - 1);
    }
  }
  return out;
}

Table sum_out(const FactorGraph& g, const Table& t, int var) {
  Table out;
  out.scope.reserve(t.scope.size() - 1);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < t.scope.size(); ++k) {
    if (t.scope[k] == var) {
      pos = k;
    } else {
      out.scope.push_back(t.scope[k]);
    }
  }
  out.data.assign(table_size(g.q, out.scope.size()), 0.0);
  const std::size_t lo = table_size(g.q, pos);  // stride of var in t
  const std::size_t hi_count = t.data.size() / (lo * static_cast<std::size_t>(g.q));
  std::size_t src = 0;
  std::size_t dst = 0;
  for (std::size_t h = 0; h < hi_count; ++h) {
    for (Symbol v = 0; v < g.q; ++v) {
      for (std::size_t l = 0; l < lo; ++l) out.data[dst + l] += t.data[src + l];
      src += lo;
    }
    dst += lo;
  }
  return out;
}

// Eliminates everything outside `keep`; returns log scale plus the product of
// surviving tables joined over `keep`.
std::pair<double, Table> run_elimination(const FactorGraph& g, const std::vector<int>& order,
                                         const std::set<int>& keep, const ExactBudget& budget) {
  std::vector<Table> tables;
  tables.reserve(g.num_factors() + g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) tables.push_back(singleton_table(g, i));
  for (int a = 0; a < g.num_factors(); ++a) tables.push_back(factor_to_table(g, a));

  double log_scale = 0.0;
  auto rescale = [&](Table& t) {
    const double m = *std::max_element(t.data.begin(), t.data.end());
    if (!(m > 0.0)) throw DegeneracyError("partition function is zero (empty joint support)");
    for (double& v : t.data) v /= m;
    log_scale += std::log(m);
  };

  for (int var : order) {
    if (keep.count(var)) continue;
    Table merged;
    bool have = false;
    std::vector<Table> rest;
    rest.reserve(tables.size());
    for (auto& t : tables) {
      if (std::binary_search(t.scope.begin(), t.scope.end(), var)) {
        merged = have ? multiply(g, merged, t, budget) : std::move(t);
        have = true;
      } else {
        rest.push_back(std::move(t));
      }
    }
    if (!have) throw InputError("elimination order names unknown or repeated variable");
    Table reduced = sum_out(g, merged, var);
    rescale(reduced);
    rest.push_back(std::move(reduced));
    tables = std::move(rest);
  }

  Table joint;
  joint.data = {1.0};
  for (auto& t : tables) joint = multiply(g, joint, t, budget);
  rescale(joint);
  return {log_scale, std::move(joint)};
}

std::vector<int> normalize_order(const FactorGraph& g, const std::vector<int>& order) {
  if (order.empty()) return min_fill_order(g);
  std::vector<bool> seen(g.num_variables(), false);
  if (static_cast<int>(order.size()) != g.num_variables()) {
    throw InputError("elimination order must be a permutation of all variables");
  }
  for (int v : order) {
    if (v < 0 || v >= g.num_variables() || seen[v]) {
      throw InputError("elimination order must be a permutation of all variables");
    }
    seen[v] = true;
  }
  return order;
}

}  // namespace

std::vector<int> min_fill_order(const FactorGraph& g) {
  const int n = g.num_variables();
  std::vector<std::set<int>> adj(n);
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& nb = g.factors[a].neighbors;
    for (std::size_t u = 0; u < nb.size(); ++u) {
      for (std::size_t v = u + 1; v < nb.size(); ++v) {
        adj[nb[u]].insert(nb[v]);
        adj[nb[v]].insert(nb[u]);
      }
    }
  }
  std::vector<int> order;
  order.reserve(n);
  std::vector<bool> eliminated(n, false);
  for (int step = 0; step < n; ++step) {
    int best = -1;
    long best_fill = std::numeric_limits<long>::max();
    for (int v = 0; v < n; ++v) {
      if (eliminated[v]) continue;
      long fill = 0;
      std::vector<int> nb(adj[v].begin(), adj[v].end());
      for (std::size_t x = 0; x < nb.size(); ++x) {
        for (std::size_t y = x + 1; y < nb.size(); ++y) {
          if (!adj[nb[x]].count(nb[y])) ++fill;
        }
      }
      if (fill < best_fill) {
        best_fill = fill;
        best = v;
      }
    }
    order.push_back(best);
    eliminated[best] = true;
    std::vector<int> nb(adj[best].begin(), adj[best].end());
    for (std::size_t x = 0; x < nb.size(); ++x) {
      adj[nb[x]].erase(best);
      for (std::size_t y = x + 1; y < nb.size(); ++y) {
        adj[nb[x]].insert(nb[y]);
        adj[nb[y]].insert(nb[x]);
      }
    }
    adj[best].clear();
  }
  return order;
}

double log_partition_ve(const FactorGraph& g, const std::vector<int>& elimination_order,
                        const ExactBudget& budget) {
  const auto order = normalize_order(g, elimination_order);
  auto [log_scale, joint] = run_elimination(g, order, {}, budget);
  double total = 0.0;
  for (double v : joint.data) total += v;
  if (!(total > 0.0)) throw DegeneracyError("partition function is zero");
  return log_scale + std::log(total);
}

ExactInferenceResult exact_inference_ve(const FactorGraph& g,
                                        const std::vector<int>& elimination_order,
                                        const ExactBudget& budget) {
  const auto order = normalize_order(g, elimination_order);
  ExactInferenceResult res;
  res.log_z = log_partition_ve(g, order, budget);

  res.var_marginals.resize(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) {
    auto [log_scale, joint] = run_elimination(g, order, {i}, budget);
    (void)log_scale;
    double total = std::accumulate(joint.data.begin(), joint.data.end(), 0.0);
    res.var_marginals[i].resize(g.q);
    for (int x = 0; x < g.q; ++x) res.var_marginals[i][x] = joint.data[x] / total;
  }

  res.fac_marginals.resize(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    std::set<int> keep(f.neighbors.begin(), f.neighbors.end());
    auto [log_scale, joint] = run_elimination(g, order, keep, budget);
    (void)log_scale;
    const double total = std::accumulate(joint.data.begin(), joint.data.end(), 0.0);
    // joint.scope is sorted; map each entry assignment into it.
    res.fac_marginals[a].resize(f.entries.size());
    for (std::size_t e = 0; e < f.entries.size(); ++e) {
      std::size_t idx = 0;
      for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
        const auto it = std::lower_bound(joint.scope.begin(), joint.scope.end(), f.neighbors[k]);
        const std::size_t pos = static_cast<std::size_t>(it - joint.scope.begin());
        idx += static_cast<std::size_t>(f.entries[e].x[k]) * table_size(g.q, pos);
      }
      res.fac_marginals[a][e] = joint.data[idx] / total;
    }
  }
  return res;
}

}  // namespace loopcalc
