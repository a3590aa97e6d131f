#include "loopcalc/coloring.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "loopcalc/errors.hpp"
#include "loopcalc/exact.hpp"
#include "loopcalc/loops.hpp"

namespace loopcalc {

FactorGraph build_coloring_factor_graph(const ColoringModel& model) {
  if (model.num_nodes <= 0) throw InputError("coloring model: no nodes");
  if (model.q < 2) throw InputError("coloring model: q must be >= 2");
  if (!(model.w > 0.0)) throw InputError("coloring model: w must be > 0");
  std::set<std::pair<int, int>> seen;
  for (const auto& [u, v] : model.edges) {
    if (u < 0 || v < 0 || u >= model.num_nodes || v >= model.num_nodes) {
      throw InputError("coloring model: edge endpoint out of range");
    }
    if (u == v) throw InputError("coloring model: self-loop at node " + std::to_string(u));
    if (!seen.insert({std::min(u, v), std::max(u, v)}).second) {
      throw InputError("coloring model: duplicate edge");
    }
  }

  FactorGraph g;
  g.q = model.q;
  g.variables.resize(model.num_nodes);
  for (auto& v : g.variables) {
    v.h.assign(model.q, 1.0);
    v.h[0] = model.w;
  }
  g.factors.reserve(model.edges.size());
  for (const auto& [u, v] : model.edges) {
    FactorNode f;
    f.neighbors = {u, v};
    for (Symbol x = 0; x < model.q; ++x) {
      for (Symbol y = 0; y < model.q; ++y) {
        if (x != y) f.entries.push_back({{x, y}, 1.0});
      }
    }
    g.factors.push_back(std::move(f));
  }
  g.build();
  return g;
}

namespace {

double eta_of_theta(double theta, int q) {
  const double e = std::exp(theta);
  return e / (q - 1 + e);
}

double theta_of_eta(double eta, int q) { return std::log((q - 1) * eta / (1.0 - eta)); }

// Forward map on u = eta(theta_v2f); its fixed point solves the system.
double forward_map(double u, int q, int k, double w) {
  const double eta_f2v = (1.0 - u) / (q - 1);
  const double theta_v2f = std::log(w) + (k - 1) * theta_of_eta(eta_f2v, q);
  return eta_of_theta(theta_v2f, q);
}

SymmetricFixedPoint finish_fixed_point(double u, int q, int k, double w) {
  SymmetricFixedPoint fp;
  fp.eta_f2v = (1.0 - u) / (q - 1);
  fp.theta_v2f = std::log(w) + (k - 1) * theta_of_eta(fp.eta_f2v, q);
  const double r1 = fp.theta_v2f - (std::log(w) + (k - 1) * theta_of_eta(fp.eta_f2v, q));
  const double r2 = fp.eta_f2v - (1.0 - eta_of_theta(fp.theta_v2f, q)) / (q - 1);
  fp.residual = std::max(std::abs(r1), std::abs(r2));
  return fp;
}

}  // namespace

SymmetricFixedPoint symmetric_fixed_point(int q, int k, double w, SymmetricMethod method) {
  if (q < 2 || k < 2 || !(w > 0.0)) {
    throw InputError("symmetric_fixed_point needs q >= 2, k >= 2, w > 0");
  }
  const double lo_limit = 1e-12;
  const double hi_limit = 1.0 - 1e-12;

  if (method == SymmetricMethod::bisection) {
    auto gap = [&](double u) { return forward_map(u, q, k, w) - u; };
    double lo = lo_limit, hi = hi_limit;
    double glo = gap(lo), ghi = gap(hi);
    if (glo == 0.0) return finish_fixed_point(lo, q, k, w);
    if (ghi == 0.0) return finish_fixed_point(hi, q, k, w);
    if (glo * ghi > 0.0) {
      // No sign change at the bracket ends; scan for one.
      bool found = false;
      double prev_u = lo, prev_g = glo;
      for (int s = 1; s <= 1024 && !found; ++s) {
        const double u = lo + (hi - lo) * s / 1024.0;
        const double gu = gap(u);
        if (prev_g * gu <= 0.0) {
          lo = prev_u;
          glo = prev_g;
          hi = u;
          found = true;
        }
        prev_u = u;
        prev_g = gu;
      }
      if (!found) {
        std::ostringstream os;
        os << "bisection bracket failure for q=" << q << " k=" << k << " w=" << w
           << ": no sign change of the fixed-point gap on (0,1)";
        throw DegeneracyError(os.str());
      }
    }
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double gm = gap(mid);
      if (gm == 0.0) {
        lo = hi = mid;
        break;
      }
      if (glo * gm < 0.0) {
        hi = mid;
      } else {
        lo = mid;
        glo = gm;
      }
    }
    return finish_fixed_point(0.5 * (lo + hi), q, k, w);
  }

  // Backward substitution: iterate the inverse of the forward map, which is
  // contracting exactly when the forward map is expanding.
  double u = 1.0 / q;
  for (int it = 0; it < 100000; ++it) {
    // Solve forward_map(next) = u for next.
    const double theta_v2f = theta_of_eta(u, q);
    const double eta_f2v = eta_of_theta((theta_v2f - std::log(w)) / (k - 1), q);
    const double next = 1.0 - (q - 1) * eta_f2v;
    if (!(next > lo_limit) || !(next < hi_limit)) {
      throw DegeneracyError("backward substitution left the unit interval");
    }
    if (std::abs(next - u) < 1e-15) {
      u = next;
      break;
    }
    u = next;
  }
  return finish_fixed_point(u, q, k, w);
}

MessageSet symmetric_messages(const FactorGraph& g, const SymmetricFixedPoint& fp) {
  const int q = g.q;
  std::vector<double> v2f(q), f2v(q);
  const double eta_v2f = 1.0 / (1.0 + (q - 1) * std::exp(-fp.theta_v2f));
  v2f[0] = eta_v2f;
  f2v[0] = fp.eta_f2v;
  for (int x = 1; x < q; ++x) {
    v2f[x] = (1.0 - eta_v2f) / (q - 1);
    f2v[x] = (1.0 - fp.eta_f2v) / (q - 1);
  }
  MessageSet m;
  m.var_to_fac.assign(g.num_edges(), v2f);
  m.fac_to_var.assign(g.num_edges(), f2v);
  return m;
}

std::vector<Table1Row> table1_report(int num_nodes,
                                     const std::vector<std::pair<int, int>>& edges,
                                     const std::vector<int>& q_list,
                                     const std::vector<double>& w_list, int threads) {
  // The symmetric ansatz needs a k-regular graph.
  std::vector<int> degree(num_nodes, 0);
  for (const auto& [u, v] : edges) {
    if (u < 0 || v < 0 || u >= num_nodes || v >= num_nodes) {
      throw InputError("edge endpoint out of range");
    }
    degree[u]++;
    degree[v]++;
  }
  const int k = num_nodes > 0 ? degree[0] : 0;
  for (int i = 0; i < num_nodes; ++i) {
    if (degree[i] != k) {
      std::ostringstream os;
      os << "graph is not regular: node " << i << " has degree " << degree[i] << ", node 0 has "
         << k;
      throw InputError(os.str());
    }
  }

  std::vector<Table1Row> rows;
  for (double w : w_list) {
    for (int q : q_list) {
      ColoringModel model{num_nodes, edges, q, w};
      const FactorGraph g = build_coloring_factor_graph(model);

      Table1Row row;
      row.w = w;
      row.q = q;

      const double states = std::pow(static_cast<double>(q), num_nodes);
      if (states <= 1e8) {
        row.z_exact = brute_force_partition(g, {}, threads).z;
      } else {
        row.z_exact = std::exp(log_partition_ve(g));
      }

      const auto fp = symmetric_fixed_point(q, k, w);
      const auto messages = symmetric_messages(g, fp);
      row.stationarity = check_stationarity(g, messages, 1e-8).max_violation;

      BetheResult bethe;
      bethe.messages = messages;
      std::tie(bethe.beliefs, bethe.normalizers) = beliefs_from_messages(g, messages);
      bethe.log_z_bethe = log_z_bethe_stationary(bethe.normalizers);
      bethe.converged = true;
      row.log_z_bethe = bethe.log_z_bethe;

      const auto series = truncated_series_estimates(g, bethe, threads);
      row.simple_loops = static_cast<int>(series.ledger.size());
      row.ratio_bethe = std::exp(bethe.log_z_bethe) / row.z_exact;
      row.ratio_plus_loops = series.z_bethe_plus_loops / row.z_exact;
      row.ratio_times_loops = series.z_bethe_times_loops / row.z_exact;
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace loopcalc
