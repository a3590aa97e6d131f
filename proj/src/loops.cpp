#include "loopcalc/loops.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

namespace {

constexpr double kInteriorMass = 1e-12;
constexpr double kLabelBudget = 1 << 26;

std::pair<std::vector<int>, std::vector<int>> loop_degrees(const FactorGraph& g,
                                                           const std::vector<int>& edges) {
  std::vector<int> dvar(g.num_variables(), 0), dfac(g.num_factors(), 0);
  for (int e : edges) {
    dvar[g.edges[e].first]++;
    dfac[g.edges[e].second]++;
  }
  return {dvar, dfac};
}

}  // namespace

GeneralizedLoop make_generalized_loop(const FactorGraph& g, std::vector<int> edges) {
  std::sort(edges.begin(), edges.end());
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (edges[k] < 0 || edges[k] >= g.num_edges() || (k > 0 && edges[k] == edges[k - 1])) {
      throw InputError("generalized loop: invalid or duplicate edge id");
    }
  }
  GeneralizedLoop loop;
  loop.edges = std::move(edges);
  std::tie(loop.var_degree, loop.fac_degree) = loop_degrees(g, loop.edges);
  return loop;
}

bool is_generalized_loop(const FactorGraph& g, const std::vector<int>& edges) {
  auto [dvar, dfac] = loop_degrees(g, edges);
  for (int d : dvar) {
    if (d == 1) return false;
  }
  for (int d : dfac) {
    if (d == 1) return false;
  }
  return true;
}

namespace {

// Shared by the generalized-loop scan and the marginal-series scan (where
// nodes in C / F_C are exempt from the degree rule).
std::vector<std::vector<int>> scan_degree_subsets(const FactorGraph& g,
                                                  const std::vector<int>& allowed_edges,
                                                  const std::vector<bool>& exempt_var,
                                                  const std::vector<bool>& exempt_fac,
                                                  std::optional<int> max_edges) {
  const int E = static_cast<int>(allowed_edges.size());
  if (!max_edges.has_value() && E > 24) {
    std::ostringstream os;
    os << "exhaustive loop scan needs |E| <= 24, have " << E << "; pass max_edges";
    throw BudgetError(os.str());
  }
  // Last decision index at which each node's degree becomes final.
  std::vector<int> last_var(g.num_variables(), -1), last_fac(g.num_factors(), -1);
  for (int k = 0; k < E; ++k) {
    last_var[g.edges[allowed_edges[k]].first] = k;
    last_fac[g.edges[allowed_edges[k]].second] = k;
  }
  std::vector<int> dvar(g.num_variables(), 0), dfac(g.num_factors(), 0);
  std::vector<int> chosen;
  std::vector<std::vector<int>> out;

  auto degrees_ok = [&](int k) {
    const auto [i, a] = g.edges[allowed_edges[k]];
    if (last_var[i] == k && dvar[i] == 1 && !exempt_var[i]) return false;
    if (last_fac[a] == k && dfac[a] == 1 && !exempt_fac[a]) return false;
    return true;
  };

  std::function<void(int)> rec = [&](int k) {
    if (k == E) {
      if (!chosen.empty()) out.push_back(chosen);
      return;
    }
    const auto [i, a] = g.edges[allowed_edges[k]];
    // exclude
    if (degrees_ok(k)) rec(k + 1);
    // include
    if (!max_edges.has_value() || static_cast<int>(chosen.size()) < *max_edges) {
      dvar[i]++;
      dfac[a]++;
      chosen.push_back(allowed_edges[k]);
      if (degrees_ok(k)) rec(k + 1);
      chosen.pop_back();
      dvar[i]--;
      dfac[a]--;
    }
  };
  rec(0);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::vector<GeneralizedLoop> enumerate_generalized_loops(const FactorGraph& g,
                                                         std::optional<int> max_edges) {
  std::vector<int> allowed(g.num_edges());
  std::iota(allowed.begin(), allowed.end(), 0);
  const std::vector<bool> no_var(g.num_variables(), false), no_fac(g.num_factors(), false);
  auto sets = scan_degree_subsets(g, allowed, no_var, no_fac, max_edges);
  std::vector<GeneralizedLoop> out;
  out.reserve(sets.size());
  for (auto& s : sets) out.push_back(make_generalized_loop(g, std::move(s)));
  return out;
}

std::vector<SimpleLoop> enumerate_simple_loops(const FactorGraph& g) {
  const int n = g.num_variables();
  const int total = n + g.num_factors();
  std::vector<std::vector<int>> adj(total);
  for (const auto& [i, a] : g.edges) {
    adj[i].push_back(n + a);
    adj[n + a].push_back(i);
  }
  for (auto& list : adj) std::sort(list.begin(), list.end());

  std::vector<SimpleLoop> out;
  std::vector<bool> on_path(total, false);
  std::vector<int> path;

  std::function<void(int, int)> dfs = [&](int s, int u) {
    for (int w : adj[u]) {
      if (w == s && path.size() >= 4 && path[1] < path.back()) {
        SimpleLoop loop;
        for (std::size_t k = 0; k < path.size(); k += 2) loop.vars.push_back(path[k]);
        for (std::size_t k = 1; k < path.size(); k += 2) loop.facs.push_back(path[k] - n);
        const int len = static_cast<int>(loop.vars.size());
        for (int k = 0; k < len; ++k) {
          loop.edges.push_back(g.edge_index(loop.vars[k], loop.facs[k]));
          loop.edges.push_back(g.edge_index(loop.vars[(k + 1) % len], loop.facs[k]));
        }
        std::sort(loop.edges.begin(), loop.edges.end());
        out.push_back(std::move(loop));
      } else if (w > s && !on_path[w]) {
        on_path[w] = true;
        path.push_back(w);
        dfs(s, w);
        path.pop_back();
        on_path[w] = false;
      }
    }
  };

  for (int s = 0; s < n; ++s) {
    on_path[s] = true;
    path = {s};
    dfs(s, s);
    on_path[s] = false;
  }
  std::sort(out.begin(), out.end(),
            [](const SimpleLoop& x, const SimpleLoop& y) { return x.edges < y.edges; });
  return out;
}

std::vector<SufficientStatistic> indicator_stats(const FactorGraph& g) {
  return std::vector<SufficientStatistic>(g.num_variables(),
                                          SufficientStatistic::indicator(g.q));
}

std::vector<SufficientStatistic> diagonalizing_stats(const FactorGraph& g,
                                                     const PseudoMarginals& beliefs) {
  std::vector<SufficientStatistic> stats;
  stats.reserve(g.num_variables());
  const auto indicator = SufficientStatistic::indicator(g.q);
  for (int i = 0; i < g.num_variables(); ++i) {
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beliefs.var[i].data(), g.q);
    stats.push_back(diagonalizing_statistic(point_from_belief(indicator, b)));
  }
  return stats;
}

namespace {

struct SlotGroup {
  std::vector<int> slots;       // positions in loop_edges
  std::vector<double> table;    // inner expectations over label tuples
};

void check_interior(const FactorGraph& g, const PseudoMarginals& beliefs,
                    const std::vector<int>& loop_edges) {
  std::set<int> vars;
  for (int e : loop_edges) vars.insert(g.edges[e].first);
  for (int i : vars) {
    for (double v : beliefs.var[i]) {
      if (v < kInteriorMass) {
        throw DegeneracyError("boundary belief at variable " + std::to_string(i) +
                              " (mass < 1e-12); loop weights need an interior point");
      }
    }
  }
}

void check_label_budget(int labels, std::size_t loop_size) {
  if (loop_size * std::log(std::max(labels, 1)) > std::log(kLabelBudget)) {
    std::ostringstream os;
    os << "label enumeration " << labels << "^" << loop_size << " exceeds budget";
    throw BudgetError(os.str());
  }
}

// Label sum of the holographic expansion:
//   sum_labels prod_a <prod fac_kernel_i(y, X_i)>_{b_a}
//              prod_i <prod var_kernel_i(y, X_i)>_{b_i}.
// Kernels are (labels x q) matrices per variable. Works for any edge subset;
// zero-mean kernels make non-loop subsets vanish.
double holant_label_sum(const FactorGraph& g, const PseudoMarginals& beliefs,
                        const std::vector<int>& loop_edges, int labels,
                        const std::vector<Eigen::MatrixXd>& fac_kernels,
                        const std::vector<Eigen::MatrixXd>& var_kernels) {
  const int m = static_cast<int>(loop_edges.size());
  if (m == 0) return 1.0;
  check_label_budget(labels, loop_edges.size());

  std::vector<SlotGroup> groups;
  {
    std::map<int, std::vector<int>> by_fac, by_var;
    for (int s = 0; s < m; ++s) {
      by_fac[g.edges[loop_edges[s]].second].push_back(s);
      by_var[g.edges[loop_edges[s]].first].push_back(s);
    }
    for (const auto& [a, slots] : by_fac) {
      SlotGroup grp;
      grp.slots = slots;
      const auto& f = g.factors[a];
      const std::size_t tsize = static_cast<std::size_t>(std::pow(labels, slots.size()));
      grp.table.assign(tsize, 0.0);
      // neighbor position of each slot inside the factor
      std::vector<int> nb_pos(slots.size());
      std::vector<const Eigen::MatrixXd*> kern(slots.size());
      for (std::size_t j = 0; j < slots.size(); ++j) {
        const int e = loop_edges[slots[j]];
        const auto& ids = g.fac_edge_ids[a];
        nb_pos[j] = static_cast<int>(std::find(ids.begin(), ids.end(), e) - ids.begin());
        kern[j] = &fac_kernels[g.edges[e].first];
      }
      std::vector<int> y(slots.size(), 0);
      for (std::size_t idx = 0; idx < tsize; ++idx) {
        double acc = 0.0;
        for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
          double w = beliefs.fac[a][ent];
          for (std::size_t j = 0; j < slots.size() && w != 0.0; ++j) {
            w *= (*kern[j])(y[j], f.entries[ent].x[nb_pos[j]]);
          }
          acc += w;
        }
        grp.table[idx] = acc;
        for (std::size_t j = 0; j < y.size(); ++j) {
          if (++y[j] < labels) break;
          y[j] = 0;
        }
      }
      groups.push_back(std::move(grp));
    }
    for (const auto& [i, slots] : by_var) {
      SlotGroup grp;
      grp.slots = slots;
      const std::size_t tsize = static_cast<std::size_t>(std::pow(labels, slots.size()));
      grp.table.assign(tsize, 0.0);
      const Eigen::MatrixXd& kern = var_kernels[i];
      std::vector<int> y(slots.size(), 0);
      for (std::size_t idx = 0; idx < tsize; ++idx) {
        double acc = 0.0;
        for (int x = 0; x < g.q; ++x) {
          double w = beliefs.var[i][x];
          for (std::size_t j = 0; j < slots.size(); ++j) w *= kern(y[j], x);
          acc += w;
        }
        grp.table[idx] = acc;
        for (std::size_t j = 0; j < y.size(); ++j) {
          if (++y[j] < labels) break;
          y[j] = 0;
        }
      }
      groups.push_back(std::move(grp));
    }
  }

  // Precompute per-group strides over the global label odometer.
  std::vector<std::vector<std::size_t>> strides(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    std::size_t stride = 1;
    strides[gi].assign(m, 0);
    for (int slot : groups[gi].slots) {
      strides[gi][slot] = stride;
      stride *= static_cast<std::size_t>(labels);
    }
  }

  std::vector<int> y(m, 0);
  std::vector<std::size_t> local(groups.size(), 0);
  const std::size_t total = static_cast<std::size_t>(std::pow(labels, m));
  double sum = 0.0;
  for (std::size_t step = 0; step < total; ++step) {
    double prod = 1.0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) prod *= groups[gi].table[local[gi]];
    sum += prod;
    for (int s = 0; s < m; ++s) {
      if (++y[s] < labels) {
        for (std::size_t gi = 0; gi < groups.size(); ++gi) local[gi] += strides[gi][s];
        break;
      }
      y[s] = 0;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        local[gi] -= strides[gi][s] * static_cast<std::size_t>(labels - 1);
      }
    }
  }
  return sum;
}

std::vector<ExpFamilyPoint> touched_points(const FactorGraph& g, const PseudoMarginals& beliefs,
                                           const std::vector<int>& loop_edges,
                                           const std::vector<SufficientStatistic>& stats) {
  std::vector<ExpFamilyPoint> points(g.num_variables());
  std::set<int> vars;
  for (int e : loop_edges) vars.insert(g.edges[e].first);
  for (int i : vars) {
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beliefs.var[i].data(), g.q);
    points[i] = point_from_belief(stats[i], b);
  }
  return points;
}

}  // namespace

double loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                   const std::vector<int>& loop_edges,
                   const std::vector<SufficientStatistic>& stats) {
  check_interior(g, beliefs, loop_edges);
  const auto points = touched_points(g, beliefs, loop_edges, stats);
  std::vector<Eigen::MatrixXd> fac_kernels(g.num_variables()), var_kernels(g.num_variables());
  std::set<int> vars;
  for (int e : loop_edges) vars.insert(g.edges[e].first);
  for (int i : vars) {
    fac_kernels[i] = tangent_theta_table(points[i]);
    var_kernels[i] = tangent_eta_table(points[i]);
  }
  return holant_label_sum(g, beliefs, loop_edges, g.q - 1, fac_kernels, var_kernels);
}

double loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                   const std::vector<int>& loop_edges) {
  check_interior(g, beliefs, loop_edges);
  std::vector<SufficientStatistic> stats(g.num_variables());
  const auto indicator = SufficientStatistic::indicator(g.q);
  std::set<int> vars;
  for (int e : loop_edges) vars.insert(g.edges[e].first);
  for (int i : vars) {
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beliefs.var[i].data(), g.q);
    stats[i] = diagonalizing_statistic(point_from_belief(indicator, b));
  }
  return loop_weight(g, beliefs, loop_edges, stats);
}

double loop_weight_binary(const FactorGraph& g, const PseudoMarginals& beliefs,
                          const std::vector<int>& loop_edges) {
  if (g.q != 2) throw InputError("loop_weight_binary requires q = 2");
  check_interior(g, beliefs, loop_edges);
  auto [dvar, dfac] = loop_degrees(g, loop_edges);

  std::vector<double> eta(g.num_variables()), sd(g.num_variables());
  for (int i = 0; i < g.num_variables(); ++i) {
    eta[i] = beliefs.var[i][1];
    sd[i] = std::sqrt(beliefs.var[i][0] * beliefs.var[i][1]);
  }

  double w = 1.0;
  std::set<int> facs;
  for (int e : loop_edges) facs.insert(g.edges[e].second);
  for (int a : facs) {
    const auto& f = g.factors[a];
    std::vector<bool> in_loop(f.neighbors.size(), false);
    for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
      const int e = g.fac_edge_ids[a][k];
      in_loop[k] = std::find(loop_edges.begin(), loop_edges.end(), e) != loop_edges.end();
    }
    double acc = 0.0;
    for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
      double term = beliefs.fac[a][ent];
      for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
        if (!in_loop[k]) continue;
        const int i = f.neighbors[k];
        term *= (f.entries[ent].x[k] - eta[i]) / sd[i];
      }
      acc += term;
    }
    w *= acc;
  }
  for (int i = 0; i < g.num_variables(); ++i) {
    if (dvar[i] == 0) continue;
    double acc = 0.0;
    for (int x = 0; x < 2; ++x) {
      acc += beliefs.var[i][x] * std::pow((x - eta[i]) / sd[i], dvar[i]);
    }
    w *= acc;
  }
  return w;
}

double loop_weight_delta_basis(const FactorGraph& g, const PseudoMarginals& beliefs,
                               const std::vector<int>& loop_edges) {
  if (!is_generalized_loop(g, loop_edges)) {
    throw InputError("edge subset is not a generalized loop");
  }
  check_interior(g, beliefs, loop_edges);
  std::vector<Eigen::MatrixXd> kernels(g.num_variables());
  std::set<int> vars;
  for (int e : loop_edges) vars.insert(g.edges[e].first);
  for (int i : vars) {
    Eigen::MatrixXd k(g.q, g.q);  // row z, col x: (delta(z,x) - b(z)) / sqrt(b(z))
    for (int z = 0; z < g.q; ++z) {
      const double bz = beliefs.var[i][z];
      for (int x = 0; x < g.q; ++x) {
        k(z, x) = ((z == x ? 1.0 : 0.0) - bz) / std::sqrt(bz);
      }
    }
    kernels[i] = k;
  }
  return holant_label_sum(g, beliefs, loop_edges, g.q, kernels, kernels);
}

namespace {

Eigen::MatrixXd inverse_sqrt_spd(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
    throw DegeneracyError(std::string(what) + ": matrix not positive-definite");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

double simple_loop_weight_trace(const FactorGraph& g, const PseudoMarginals& beliefs,
                                const SimpleLoop& loop,
                                const std::vector<SufficientStatistic>& stats) {
  const int len = static_cast<int>(loop.vars.size());
  if (len < 2 || static_cast<int>(loop.facs.size()) != len) {
    throw InputError("not a simple generalized loop");
  }
  auto [dvar, dfac] = loop_degrees(g, loop.edges);
  for (int a : loop.facs) {
    if (dfac[a] != 2) {
      throw InputError("loop factor " + std::to_string(a) + " has d_a(E') != 2");
    }
  }
  for (int e : loop.edges) {
    if (e < 0) throw InputError("simple loop references a non-edge");
  }
  check_interior(g, beliefs, loop.edges);

  std::vector<ExpFamilyPoint> points(g.num_variables());
  std::vector<Eigen::MatrixXd> whiten(g.num_variables());
  for (int i : loop.vars) {
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beliefs.var[i].data(), g.q);
    points[i] = point_from_belief(stats[i], b);
    whiten[i] = inverse_sqrt_spd(fisher_theta(points[i]), "variance matrix");
  }

  Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(g.q - 1, g.q - 1);
  for (int k = 0; k < len; ++k) {
    const int i = loop.vars[k];
    const int j = loop.vars[(k + 1) % len];
    const int a = loop.facs[k];
    const auto& f = g.factors[a];
    int pos_i = -1, pos_j = -1;
    for (std::size_t p = 0; p < f.neighbors.size(); ++p) {
      if (f.neighbors[p] == i) pos_i = static_cast<int>(p);
      if (f.neighbors[p] == j) pos_j = static_cast<int>(p);
    }
    if (pos_i < 0 || pos_j < 0) throw InputError("loop factor does not join its variables");
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(g.q - 1, g.q - 1);
    const auto ti = tangent_theta_table(points[i]);  // centered statistics
    const auto tj = tangent_theta_table(points[j]);
    for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
      const double w = beliefs.fac[a][ent];
      cov += w * ti.col(f.entries[ent].x[pos_i]) * tj.col(f.entries[ent].x[pos_j]).transpose();
    }
    prod = prod * whiten[i] * cov * whiten[j];
  }
  return prod.trace();
}

double simple_loop_weight_trace(const FactorGraph& g, const PseudoMarginals& beliefs,
                                const SimpleLoop& loop) {
  return simple_loop_weight_trace(g, beliefs, loop, indicator_stats(g));
}

LoopSeriesResult full_loop_series(const FactorGraph& g, const BetheResult& bethe, int threads) {
  LoopSeriesResult res;
  res.z_bethe = std::exp(bethe.log_z_bethe);
  const auto loops = enumerate_generalized_loops(g);
  const auto stats = diagonalizing_stats(g, bethe.beliefs);

  std::vector<double> weights(loops.size(), 0.0);
  const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(loops.size()); ++k) {
    weights[k] = loop_weight(g, bethe.beliefs, loops[k].edges, stats);
  }

  double total = 0.0;
  res.ledger.reserve(loops.size());
  for (std::size_t k = 0; k < loops.size(); ++k) {
    total += weights[k];
    res.ledger.push_back({loops[k].edges, weights[k], "diagonal_fisher", total});
  }
  res.z_estimate = res.z_bethe * (1.0 + total);
  return res;
}

TruncatedSeriesResult truncated_series_estimates(const FactorGraph& g, const BetheResult& bethe,
                                                 int threads) {
  TruncatedSeriesResult res;
  res.z_bethe = std::exp(bethe.log_z_bethe);
  const auto loops = enumerate_simple_loops(g);
  const auto stats = indicator_stats(g);

  std::vector<double> weights(loops.size(), 0.0);
  const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(nt)
  for (std::int64_t k = 0; k < static_cast<std::int64_t>(loops.size()); ++k) {
    weights[k] = simple_loop_weight_trace(g, bethe.beliefs, loops[k], stats);
  }

  double total = 0.0;
  double log_prod = 0.0;
  res.ledger.reserve(loops.size());
  for (std::size_t k = 0; k < loops.size(); ++k) {
    total += weights[k];
    if (1.0 + weights[k] <= 0.0) {
      throw DegeneracyError("multiplicative truncation undefined: 1 + K <= 0");
    }
    log_prod += std::log1p(weights[k]);
    res.ledger.push_back({loops[k].edges, weights[k], "trace", total});
  }
  res.z_bethe_plus_loops = res.z_bethe * (1.0 + total);
  res.z_bethe_times_loops = res.z_bethe * std::exp(log_prod);
  return res;
}

namespace {

struct MarginalScope {
  std::vector<bool> in_c;       // variables in C
  std::vector<bool> in_fc;      // factors with ∂a ⊆ C
  std::vector<bool> edge_in_fc; // E(F_C)
};

MarginalScope marginal_scope(const FactorGraph& g, const std::vector<int>& C) {
  MarginalScope s;
  s.in_c.assign(g.num_variables(), false);
  for (int i : C) {
    if (i < 0 || i >= g.num_variables()) throw InputError("C contains an unknown variable id");
    s.in_c[i] = true;
  }
  s.in_fc.assign(g.num_factors(), false);
  s.edge_in_fc.assign(g.num_edges(), false);
  for (int a = 0; a < g.num_factors(); ++a) {
    bool inside = true;
    for (int i : g.factors[a].neighbors) inside = inside && s.in_c[i];
    s.in_fc[a] = inside;
    if (inside) {
      for (int e : g.fac_edge_ids[a]) s.edge_in_fc[e] = true;
    }
  }
  return s;
}

// Un-normalized b_C over assignments of C (index = sum_k x_{C[k]} q^k).
std::vector<double> bethe_marginal_block(const FactorGraph& g, const PseudoMarginals& beliefs,
                                         const std::vector<int>& C, const MarginalScope& scope) {
  const std::size_t size = static_cast<std::size_t>(std::pow(g.q, C.size()));
  if (size > (std::size_t{1} << 24)) throw BudgetError("C block q^|C| exceeds budget");
  std::vector<int> pos_of(g.num_variables(), -1);
  for (std::size_t k = 0; k < C.size(); ++k) pos_of[C[k]] = static_cast<int>(k);

  std::vector<double> block(size, 0.0);
  std::vector<Symbol> x(C.size(), 0);
  for (std::size_t idx = 0; idx < size; ++idx) {
    double w = 1.0;
    for (std::size_t k = 0; k < C.size(); ++k) w *= beliefs.var[C[k]][x[k]];
    for (int a = 0; a < g.num_factors(); ++a) {
      if (!scope.in_fc[a]) continue;
      const auto& f = g.factors[a];
      double ba = 0.0;
      for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
        bool match = true;
        for (std::size_t k = 0; k < f.neighbors.size() && match; ++k) {
          match = f.entries[ent].x[k] == x[pos_of[f.neighbors[k]]];
        }
        if (match) {
          ba = beliefs.fac[a][ent];
          break;
        }
      }
      double denom = 1.0;
      for (int i : f.neighbors) denom *= beliefs.var[i][x[pos_of[i]]];
      w *= ba / denom;
    }
    block[idx] = w;
    for (std::size_t k = 0; k < C.size(); ++k) {
      if (++x[k] < g.q) break;
      x[k] = 0;
    }
  }
  return block;
}

}  // namespace

double marginal_loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                            const std::vector<int>& C, const MarginalFunction& gval,
                            const std::vector<int>& loop_edges,
                            const std::vector<SufficientStatistic>& stats) {
  const auto scope = marginal_scope(g, C);
  for (int e : loop_edges) {
    if (scope.edge_in_fc[e]) {
      throw InputError("loop edge " + std::to_string(e) + " lies inside E(F_C)");
    }
  }
  const std::size_t block_size = static_cast<std::size_t>(std::pow(g.q, C.size()));
  if (gval.size() != block_size) {
    throw InputError("g table must have q^|C| entries");
  }
  check_interior(g, beliefs, loop_edges);
  for (int i : C) {
    for (double v : beliefs.var[i]) {
      if (v < kInteriorMass) throw DegeneracyError("boundary belief inside C");
    }
  }

  // Split loop slots: C-incident slots feed the b_C pseudo-expectation.
  std::vector<int> outside_edges;
  std::vector<std::pair<int, int>> c_slots;  // (slot, variable)
  for (std::size_t s = 0; s < loop_edges.size(); ++s) {
    const int i = g.edges[loop_edges[s]].first;
    if (scope.in_c[i]) {
      c_slots.emplace_back(static_cast<int>(s), i);
    }
  }

  const int labels = g.q - 1;
  check_label_budget(labels, loop_edges.size());

  const auto points = touched_points(g, beliefs, loop_edges, stats);
  std::vector<Eigen::MatrixXd> fac_kernels(g.num_variables()), var_kernels(g.num_variables());
  {
    std::set<int> vars;
    for (int e : loop_edges) vars.insert(g.edges[e].first);
    for (int i : vars) {
      fac_kernels[i] = tangent_theta_table(points[i]);
      var_kernels[i] = tangent_eta_table(points[i]);
    }
  }

  // Group tables as in the plain label sum, except variables in C are pooled
  // into one block evaluated under un-normalized b_C together with g.
  std::vector<SlotGroup> groups;
  const int m = static_cast<int>(loop_edges.size());
  {
    std::map<int, std::vector<int>> by_fac, by_var;
    for (int s = 0; s < m; ++s) {
      const auto [i, a] = g.edges[loop_edges[s]];
      by_fac[a].push_back(s);
      if (!scope.in_c[i]) by_var[i].push_back(s);
    }
    for (const auto& [a, slots] : by_fac) {
      SlotGroup grp;
      grp.slots = slots;
      const auto& f = g.factors[a];
      const std::size_t tsize = static_cast<std::size_t>(std::pow(labels, slots.size()));
      grp.table.assign(tsize, 0.0);
      std::vector<int> nb_pos(slots.size());
      std::vector<const Eigen::MatrixXd*> kern(slots.size());
      for (std::size_t j = 0; j < slots.size(); ++j) {
        const int e = loop_edges[slots[j]];
        const auto& ids = g.fac_edge_ids[a];
        nb_pos[j] = static_cast<int>(std::find(ids.begin(), ids.end(), e) - ids.begin());
        kern[j] = &fac_kernels[g.edges[e].first];
      }
      std::vector<int> y(slots.size(), 0);
      for (std::size_t idx = 0; idx < tsize; ++idx) {
        double acc = 0.0;
        for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
          double w = beliefs.fac[a][ent];
          for (std::size_t j = 0; j < slots.size() && w != 0.0; ++j) {
            w *= (*kern[j])(y[j], f.entries[ent].x[nb_pos[j]]);
          }
          acc += w;
        }
        grp.table[idx] = acc;
        for (std::size_t j = 0; j < y.size(); ++j) {
          if (++y[j] < labels) break;
          y[j] = 0;
        }
      }
      groups.push_back(std::move(grp));
    }
    for (const auto& [i, slots] : by_var) {
      SlotGroup grp;
      grp.slots = slots;
      const std::size_t tsize = static_cast<std::size_t>(std::pow(labels, slots.size()));
      grp.table.assign(tsize, 0.0);
      const Eigen::MatrixXd& kern = var_kernels[i];
      std::vector<int> y(slots.size(), 0);
      for (std::size_t idx = 0; idx < tsize; ++idx) {
        double acc = 0.0;
        for (int x = 0; x < g.q; ++x) {
          double w = beliefs.var[i][x];
          for (std::size_t j = 0; j < slots.size(); ++j) w *= kern(y[j], x);
          acc += w;
        }
        grp.table[idx] = acc;
        for (std::size_t j = 0; j < y.size(); ++j) {
          if (++y[j] < labels) break;
          y[j] = 0;
        }
      }
      groups.push_back(std::move(grp));
    }
  }

  // C block: <g(X_C) prod_{slots} var_kernel_i(y, X_i)>_{b_C}.
  {
    SlotGroup grp;
    for (const auto& [s, i] : c_slots) grp.slots.push_back(s);
    const std::size_t tsize = static_cast<std::size_t>(std::pow(labels, c_slots.size()));
    grp.table.assign(tsize, 0.0);
    const auto block = bethe_marginal_block(g, beliefs, C, scope);
    std::vector<int> pos_of(g.num_variables(), -1);
    for (std::size_t k = 0; k < C.size(); ++k) pos_of[C[k]] = static_cast<int>(k);

    std::vector<int> y(c_slots.size(), 0);
    for (std::size_t idx = 0; idx < tsize; ++idx) {
      double acc = 0.0;
      std::vector<Symbol> x(C.size(), 0);
      for (std::size_t bidx = 0; bidx < block.size(); ++bidx) {
        double w = block[bidx] * gval[bidx];
        for (std::size_t j = 0; j < c_slots.size() && w != 0.0; ++j) {
          const int i = c_slots[j].second;
          w *= var_kernels[i](y[j], x[pos_of[i]]);
        }
        acc += w;
        for (std::size_t k = 0; k < C.size(); ++k) {
          if (++x[k] < g.q) break;
          x[k] = 0;
        }
      }
      grp.table[idx] = acc;
      for (std::size_t j = 0; j < y.size(); ++j) {
        if (++y[j] < labels) break;
        y[j] = 0;
      }
    }
    groups.push_back(std::move(grp));
  }

  // Global label odometer over all loop slots.
  std::vector<std::vector<std::size_t>> strides(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    std::size_t stride = 1;
    strides[gi].assign(std::max(m, 1), 0);
    for (int slot : groups[gi].slots) {
      strides[gi][slot] = stride;
      stride *= static_cast<std::size_t>(labels);
    }
  }
  const std::size_t total = static_cast<std::size_t>(std::pow(labels, m));
  std::vector<int> y(m, 0);
  std::vector<std::size_t> local(groups.size(), 0);
  double sum = 0.0;
  for (std::size_t step = 0; step < total; ++step) {
    double prod = 1.0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) prod *= groups[gi].table[local[gi]];
    sum += prod;
    for (int s = 0; s < m; ++s) {
      if (++y[s] < labels) {
        for (std::size_t gi = 0; gi < groups.size(); ++gi) local[gi] += strides[gi][s];
        break;
      }
      y[s] = 0;
      for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        local[gi] -= strides[gi][s] * static_cast<std::size_t>(labels - 1);
      }
    }
  }
  return sum;
}

double marginal_loop_weight(const FactorGraph& g, const PseudoMarginals& beliefs,
                            const std::vector<int>& C, const MarginalFunction& gval,
                            const std::vector<int>& loop_edges) {
  return marginal_loop_weight(g, beliefs, C, gval, loop_edges,
                              diagonalizing_stats(g, beliefs));
}

MarginalCorrectionResult marginal_correction(const FactorGraph& g, const BetheResult& bethe,
                                             const std::vector<int>& C,
                                             const MarginalFunction& gval,
                                             std::optional<int> max_edges) {
  const auto scope = marginal_scope(g, C);
  std::vector<int> allowed;
  for (int e = 0; e < g.num_edges(); ++e) {
    if (!scope.edge_in_fc[e]) allowed.push_back(e);
  }
  auto subsets = scan_degree_subsets(g, allowed, scope.in_c, scope.in_fc, max_edges);

  const auto stats = diagonalizing_stats(g, bethe.beliefs);
  MarginalFunction ones(gval.size(), 1.0);

  double sum_g = marginal_loop_weight(g, bethe.beliefs, C, gval, {}, stats);
  double sum_1 = marginal_loop_weight(g, bethe.beliefs, C, ones, {}, stats);
  MarginalCorrectionResult res;
  res.bethe_estimate = sum_g / sum_1;
  for (const auto& subset : subsets) {
    sum_g += marginal_loop_weight(g, bethe.beliefs, C, gval, subset, stats);
    sum_1 += marginal_loop_weight(g, bethe.beliefs, C, ones, subset, stats);
  }
  res.corrected_estimate = sum_g / sum_1;
  res.loops_used = static_cast<int>(subsets.size());
  return res;
}

Eigen::MatrixXd tree_correlation_decompose(const FactorGraph& g, const PseudoMarginals& beliefs,
                                           int var_i, int var_j,
                                           const std::vector<SufficientStatistic>& stats) {
  if (!g.is_cycle_free()) throw InputError("tree_correlation_decompose: graph has a cycle");
  if (var_i == var_j) throw InputError("tree_correlation_decompose: endpoints coincide");

  // BFS over the bipartite graph to find the unique variable path.
  const int n = g.num_variables();
  const int total = n + g.num_factors();
  std::vector<int> prev(total, -2);
  std::deque<int> queue{var_i};
  prev[var_i] = -1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (u == var_j) break;
    if (u < n) {
      for (std::size_t k = 0; k < g.var_neighbors[u].size(); ++k) {
        const int w = n + g.var_neighbors[u][k];
        if (prev[w] == -2) {
          prev[w] = u;
          queue.push_back(w);
        }
      }
    } else {
      for (int w : g.factors[u - n].neighbors) {
        if (prev[w] == -2) {
          prev[w] = u;
          queue.push_back(w);
        }
      }
    }
  }
  if (prev[var_j] == -2) throw InputError("variables are in different components");
  std::vector<int> path;  // alternating var, fac, var, ...
  for (int u = var_j; u != -1; u = prev[u]) path.push_back(u);
  std::reverse(path.begin(), path.end());

  std::vector<ExpFamilyPoint> points(g.num_variables());
  std::vector<Eigen::MatrixXd> whiten(g.num_variables());
  for (std::size_t k = 0; k < path.size(); k += 2) {
    const int i = path[k];
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(beliefs.var[i].data(), g.q);
    points[i] = point_from_belief(stats[i], b);
    whiten[i] = inverse_sqrt_spd(fisher_theta(points[i]), "variance matrix");
  }

  Eigen::MatrixXd prod = Eigen::MatrixXd::Identity(g.q - 1, g.q - 1);
  for (std::size_t k = 0; k + 2 < path.size(); k += 2) {
    const int i = path[k];
    const int a = path[k + 1] - n;
    const int j = path[k + 2];
    const auto& f = g.factors[a];
    int pos_i = -1, pos_j = -1;
    for (std::size_t p = 0; p < f.neighbors.size(); ++p) {
      if (f.neighbors[p] == i) pos_i = static_cast<int>(p);
      if (f.neighbors[p] == j) pos_j = static_cast<int>(p);
    }
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(g.q - 1, g.q - 1);
    const auto ti = tangent_theta_table(points[i]);
    const auto tj = tangent_theta_table(points[j]);
    for (std::size_t ent = 0; ent < f.entries.size(); ++ent) {
      const double w = beliefs.fac[a][ent];
      cov += w * ti.col(f.entries[ent].x[pos_i]) * tj.col(f.entries[ent].x[pos_j]).transpose();
    }
    prod = prod * whiten[i] * cov * whiten[j];
  }
  return prod;
}

}  // namespace loopcalc
