#include "loopcalc/bp.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

namespace {

void normalize_or_throw(std::vector<double>& m, const char* what) {
  double s = 0.0;
  for (double v : m) s += v;
  if (!(s > 0.0)) throw DegeneracyError(std::string(what) + ": message summed to zero");
  for (double& v : m) v /= s;
}

std::vector<double> var_to_fac_update(const FactorGraph& g, const MessageSet& msgs, int edge) {
  const auto [i, a] = g.edges[edge];
  std::vector<double> m = g.variables[i].h;
  for (int e : g.var_edge_ids[i]) {
    if (e == edge) continue;
    const auto& in = msgs.fac_to_var[e];
    for (int x = 0; x < g.q; ++x) m[x] *= in[x];
  }
  normalize_or_throw(m, "var->fac");
  return m;
}

std::vector<double> fac_to_var_update(const FactorGraph& g, const MessageSet& msgs, int edge) {
  const auto [i, a] = g.edges[edge];
  const auto& f = g.factors[a];
  std::vector<double> m(g.q, 0.0);
  for (const auto& entry : f.entries) {
    double w = entry.f;
    Symbol xi = 0;
    for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
      const int e = g.fac_edge_ids[a][k];
      if (e == edge) {
        xi = entry.x[k];
      } else {
        w *= msgs.var_to_fac[e][entry.x[k]];
      }
    }
    m[xi] += w;
  }
  normalize_or_throw(m, "fac->var");
  return m;
}

double apply_damped(std::vector<double>& dst, const std::vector<double>& fresh, double damping) {
  double change = 0.0;
  for (std::size_t x = 0; x < dst.size(); ++x) {
    const double next = (1.0 - damping) * fresh[x] + damping * dst[x];
    change = std::max(change, std::abs(next - dst[x]));
    dst[x] = next;
  }
  return change;
}

}  // namespace

MessageSet uniform_messages(const FactorGraph& g) {
  MessageSet m;
  m.var_to_fac.assign(g.num_edges(), std::vector<double>(g.q, 1.0 / g.q));
  m.fac_to_var.assign(g.num_edges(), std::vector<double>(g.q, 1.0 / g.q));
  return m;
}

MessageSet perturbed_messages(const FactorGraph& g, std::uint64_t seed, double amplitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  MessageSet m = uniform_messages(g);
  for (auto* side : {&m.var_to_fac, &m.fac_to_var}) {
    for (auto& msg : *side) {
      for (double& v : msg) v *= 1.0 + u(rng);
      normalize_or_throw(msg, "perturbed init");
    }
  }
  return m;
}

std::pair<MessageSet, double> bp_step(const FactorGraph& g, const MessageSet& messages,
                                      const BPConfig& config) {
  MessageSet next = messages;
  double residual = 0.0;
  if (config.schedule == BPConfig::Schedule::parallel) {
    for (int e = 0; e < g.num_edges(); ++e) {
      const auto fresh = var_to_fac_update(g, messages, e);
      residual = std::max(residual, apply_damped(next.var_to_fac[e], fresh, config.damping));
    }
    for (int e = 0; e < g.num_edges(); ++e) {
      const auto fresh = fac_to_var_update(g, messages, e);
      residual = std::max(residual, apply_damped(next.fac_to_var[e], fresh, config.damping));
    }
  } else {
    for (int e = 0; e < g.num_edges(); ++e) {
      const auto fresh = var_to_fac_update(g, next, e);
      residual = std::max(residual, apply_damped(next.var_to_fac[e], fresh, config.damping));
      const auto fresh2 = fac_to_var_update(g, next, e);
      residual = std::max(residual, apply_damped(next.fac_to_var[e], fresh2, config.damping));
    }
  }
  return {std::move(next), residual};
}

std::pair<PseudoMarginals, BeliefNormalizers> beliefs_from_messages(const FactorGraph& g,
                                                                    const MessageSet& msgs) {
  PseudoMarginals beliefs;
  BeliefNormalizers z;
  beliefs.var.resize(g.num_variables());
  beliefs.fac.resize(g.num_factors());
  z.z_fac.resize(g.num_factors());
  z.z_var.resize(g.num_variables());
  z.z_edge.resize(g.num_edges());

  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    auto& ba = beliefs.fac[a];
    ba.resize(f.entries.size());
    double za = 0.0;
    for (std::size_t e = 0; e < f.entries.size(); ++e) {
      double w = f.entries[e].f;
      for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
        w *= msgs.var_to_fac[g.fac_edge_ids[a][k]][f.entries[e].x[k]];
      }
      ba[e] = w;
      za += w;
    }
    if (!(za > 0.0)) {
      throw DegeneracyError("Z_a = 0 for factor " + std::to_string(a) +
                            " (degenerate support/message combination)");
    }
    for (double& v : ba) v /= za;
    z.z_fac[a] = za;
  }

  for (int i = 0; i < g.num_variables(); ++i) {
    auto& bi = beliefs.var[i];
    bi = g.variables[i].h;
    for (int e : g.var_edge_ids[i]) {
      for (int x = 0; x < g.q; ++x) bi[x] *= msgs.fac_to_var[e][x];
    }
    double zi = 0.0;
    for (double v : bi) zi += v;
    if (!(zi > 0.0)) {
      throw DegeneracyError("Z_i = 0 for variable " + std::to_string(i));
    }
    for (double& v : bi) v /= zi;
    z.z_var[i] = zi;
  }

  for (int e = 0; e < g.num_edges(); ++e) {
    double ze = 0.0;
    for (int x = 0; x < g.q; ++x) ze += msgs.var_to_fac[e][x] * msgs.fac_to_var[e][x];
    if (!(ze > 0.0)) {
      throw DegeneracyError("Z_{i,a} = 0 for edge " + std::to_string(e));
    }
    z.z_edge[e] = ze;
  }
  return {std::move(beliefs), std::move(z)};
}

namespace {

double xlogx(double v) { return v > 0.0 ? v * std::log(v) : 0.0; }

BetheFreeEnergy bethe_free_energy_unchecked(const FactorGraph& g,
                                            const PseudoMarginals& beliefs) {
  double u = 0.0;
  double h = 0.0;
  for (int a = 0; a < g.num_factors(); ++a) {
    const auto& f = g.factors[a];
    for (std::size_t e = 0; e < f.entries.size(); ++e) {
      const double ba = beliefs.fac[a][e];
      if (ba > 0.0) u -= ba * std::log(f.entries[e].f);
      h -= xlogx(ba);
    }
  }
  for (int i = 0; i < g.num_variables(); ++i) {
    const int d = g.var_degree(i);
    for (int x = 0; x < g.q; ++x) {
      const double bi = beliefs.var[i][x];
      if (bi > 0.0) u -= bi * std::log(g.variables[i].h[x]);
      h += (d - 1) * xlogx(bi);
    }
  }
  return {u - h, u, h};
}

}  // namespace

BetheFreeEnergy bethe_free_energy(const FactorGraph& g, const PseudoMarginals& beliefs,
                                  double consistency_tol) {
  const double err = local_consistency_error(g, beliefs);
  if (err > consistency_tol) {
    std::ostringstream os;
    os << "pseudo-marginals violate local consistency by " << err << " (tol " << consistency_tol
       << ")";
    throw DegeneracyError(os.str());
  }
  return bethe_free_energy_unchecked(g, beliefs);
}

double log_z_bethe_stationary(const BeliefNormalizers& z) {
  double log_z = 0.0;
  for (double za : z.z_fac) {
    if (!(za > 0.0)) throw DegeneracyError("nonpositive normalizer Z_a");
    log_z += std::log(za);
  }
  for (double zi : z.z_var) {
    if (!(zi > 0.0)) throw DegeneracyError("nonpositive normalizer Z_i");
    log_z += std::log(zi);
  }
  for (double ze : z.z_edge) {
    if (!(ze > 0.0)) throw DegeneracyError("nonpositive normalizer Z_{i,a}");
    log_z -= std::log(ze);
  }
  return log_z;
}

BetheResult bp_run(const FactorGraph& g, const MessageSet& init, const BPConfig& config) {
  BetheResult res;
  res.messages = init;
  res.residual = INFINITY;
  for (res.iterations = 0; res.iterations < config.max_iterations; ++res.iterations) {
    auto [next, residual] = bp_step(g, res.messages, config);
    res.messages = std::move(next);
    res.residual = residual;
    if (residual <= config.tolerance) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }
  auto [beliefs, z] = beliefs_from_messages(g, res.messages);
  res.beliefs = std::move(beliefs);
  res.normalizers = std::move(z);
  res.log_z_bethe = log_z_bethe_stationary(res.normalizers);
  const auto fe = bethe_free_energy_unchecked(g, res.beliefs);
  res.u_bethe = fe.u;
  res.h_bethe = fe.h;
  return res;
}

BetheResult bp_run(const FactorGraph& g, const BPConfig& config) {
  return bp_run(g, uniform_messages(g), config);
}

StationarityReport check_stationarity(const FactorGraph& g, const MessageSet& messages,
                                      double tol) {
  StationarityReport rep;
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto rhs_v = var_to_fac_update(g, messages, e);
    const auto rhs_f = fac_to_var_update(g, messages, e);
    double scale_v = *std::max_element(rhs_v.begin(), rhs_v.end());
    double scale_f = *std::max_element(rhs_f.begin(), rhs_f.end());
    for (int x = 0; x < g.q; ++x) {
      rep.max_violation =
          std::max(rep.max_violation, std::abs(messages.var_to_fac[e][x] - rhs_v[x]) / scale_v);
      rep.max_violation =
          std::max(rep.max_violation, std::abs(messages.fac_to_var[e][x] - rhs_f[x]) / scale_f);
    }
  }
  rep.pass = rep.max_violation <= tol;
  return rep;
}

double check_reparameterization(const FactorGraph& g, const BetheResult& result,
                                const ExactBudget& budget, int threads) {
  const double states = std::pow(static_cast<double>(g.q), g.num_variables());
  if (states > budget.max_states) {
    std::ostringstream os;
    os << "reparameterization check needs q^N = " << states << " <= " << budget.max_states;
    throw BudgetError(os.str());
  }
  const std::int64_t total = static_cast<std::int64_t>(states);
  const double z_bethe = std::exp(result.log_z_bethe);

  std::vector<std::vector<double>> fac_dense(g.num_factors());
  std::vector<std::vector<double>> bel_dense(g.num_factors());
  for (int a = 0; a < g.num_factors(); ++a) {
    fac_dense[a] = g.dense_table(a);
    bel_dense[a].assign(fac_dense[a].size(), 0.0);
    const auto& f = g.factors[a];
    for (std::size_t e = 0; e < f.entries.size(); ++e) {
      std::size_t idx = 0;
      std::size_t stride = 1;
      for (std::size_t k = 0; k < f.neighbors.size(); ++k) {
        idx += static_cast<std::size_t>(f.entries[e].x[k]) * stride;
        stride *= static_cast<std::size_t>(g.q);
      }
      bel_dense[a][idx] = result.beliefs.fac[a][e];
    }
  }

  const int nt = threads > 0 ? threads : omp_get_max_threads();
  const int n = g.num_variables();
  double worst = 0.0;
  double lhs_sum = 0.0;  // sums Z(G) as a byproduct
  double rhs_sum = 0.0;
#pragma omp parallel num_threads(nt)
  {
    double local_worst = 0.0;
    std::vector<Symbol> x(n);
#pragma omp for schedule(static) reduction(+ : lhs_sum, rhs_sum)
    for (std::int64_t s = 0; s < total; ++s) {
      std::int64_t rest = s;
      for (int i = 0; i < n; ++i) {
        x[i] = static_cast<Symbol>(rest % g.q);
        rest /= g.q;
      }
      double lhs = 1.0;
      double rhs = 1.0;
      for (int i = 0; i < n; ++i) {
        lhs *= g.variables[i].h[x[i]];
        rhs *= result.beliefs.var[i][x[i]];
      }
      for (int a = 0; a < g.num_factors(); ++a) {
        const auto& nb = g.factors[a].neighbors;
        std::size_t idx = 0;
        std::size_t stride = 1;
        double denom = 1.0;
        for (std::size_t k = 0; k < nb.size(); ++k) {
          idx += static_cast<std::size_t>(x[nb[k]]) * stride;
          stride *= static_cast<std::size_t>(g.q);
          denom *= result.beliefs.var[nb[k]][x[nb[k]]];
        }
        lhs *= fac_dense[a][idx];
        rhs *= bel_dense[a][idx] / denom;
      }
      rhs *= z_bethe;
      lhs_sum += lhs;
      rhs_sum += rhs;
      if (lhs > 0.0 || rhs > 0.0) {
        local_worst = std::max(local_worst, std::abs(lhs - rhs) / std::max(lhs, rhs));
      }
    }
#pragma omp critical
    worst = std::max(worst, local_worst);
  }
  if (lhs_sum > 0.0) {
    worst = std::max(worst, std::abs(lhs_sum - rhs_sum) / lhs_sum);
  }
  return worst;
}

}  // namespace loopcalc
