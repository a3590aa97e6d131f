#include "loopcalc/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

void validate_gaussian(const GaussianModel& model) {
  const auto n = model.J.rows();
  if (model.J.cols() != n || model.h.size() != n) {
    throw InputError("Gaussian model: J must be square and h of matching length");
  }
  if ((model.J - model.J.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
    throw InputError("Gaussian model: J not symmetric within 1e-12");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(model.J);
  if (llt.info() != Eigen::Success) {
    throw DegeneracyError("Gaussian model: J not positive-definite");
  }
}

std::vector<std::pair<int, int>> gaussian_edges(const GaussianModel& model) {
  std::vector<std::pair<int, int>> edges;
  const int n = static_cast<int>(model.J.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (model.J(i, j) != 0.0) edges.emplace_back(i, j);
    }
  }
  return edges;
}

GaussianExact gaussian_exact(const GaussianModel& model) {
  validate_gaussian(model);
  const int n = static_cast<int>(model.J.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(model.J);
  GaussianExact res;
  res.mean = llt.solve(model.h);
  res.cov = llt.solve(Eigen::MatrixXd::Identity(n, n));
  double log_det = 0.0;
  for (int i = 0; i < n; ++i) log_det += 2.0 * std::log(llt.matrixL()(i, i));
  res.log_normalizer = 0.5 * n * std::log(kTwoPi) - 0.5 * log_det +
                       0.5 * model.h.dot(res.mean);
  return res;
}

GaussianBPResult gaussian_bp_run(const GaussianModel& model, const BPConfig& config) {
  validate_gaussian(model);
  const int n = static_cast<int>(model.J.rows());
  const auto edges = gaussian_edges(model);
  const int m = static_cast<int>(edges.size());

  // Directed messages along each edge: lambda (precision) and mu (linear).
  std::vector<double> lam(2 * m, 0.0), mu(2 * m, 0.0);
  std::vector<std::vector<std::pair<int, int>>> incoming(n);  // (dir index, other end)
  for (int e = 0; e < m; ++e) {
    const auto [i, j] = edges[e];
    incoming[j].emplace_back(2 * e, i);      // direction i -> j
    incoming[i].emplace_back(2 * e + 1, j);  // direction j -> i
  }

  GaussianBPResult res;
  auto cavity = [&](int i, int skip_dir) {
    double lam_c = model.J(i, i);
    double mu_c = model.h(i);
    for (const auto& [dir, src] : incoming[i]) {
      if (dir == skip_dir) continue;
      lam_c += lam[dir];
      mu_c += mu[dir];
    }
    return std::make_pair(lam_c, mu_c);
  };

  for (res.iterations = 0; res.iterations < config.max_iterations; ++res.iterations) {
    std::vector<double> lam_next(2 * m), mu_next(2 * m);
    double residual = 0.0;
    for (int e = 0; e < m; ++e) {
      const auto [i, j] = edges[e];
      const double jij = model.J(i, j);
      for (int d = 0; d < 2; ++d) {
        const int src = d == 0 ? i : j;
        const int dir = 2 * e + d;
        const int rev = 2 * e + (1 - d);
        auto [lam_c, mu_c] = cavity(src, rev);
        if (lam_c <= 0.0) res.negative_precision_seen = true;
        const double lam_new = -jij * jij / lam_c;
        const double mu_new = -jij * mu_c / lam_c;
        lam_next[dir] = (1.0 - config.damping) * lam_new + config.damping * lam[dir];
        mu_next[dir] = (1.0 - config.damping) * mu_new + config.damping * mu[dir];
        residual = std::max(residual, std::abs(lam_next[dir] - lam[dir]));
        residual = std::max(residual, std::abs(mu_next[dir] - mu[dir]));
      }
    }
    lam.swap(lam_next);
    mu.swap(mu_next);
    res.residual = residual;
    if (residual <= config.tolerance) {
      res.converged = true;
      ++res.iterations;
      break;
    }
  }

  auto& bel = res.beliefs;
  bel.mean.resize(n);
  bel.var.resize(n);
  for (int i = 0; i < n; ++i) {
    auto [p, lin] = cavity(i, -1);
    if (!(p > 0.0)) {
      throw DegeneracyError("belief precision nonpositive at variable " + std::to_string(i) +
                            " (frustrated model)");
    }
    bel.var(i) = 1.0 / p;
    bel.mean(i) = lin / p;
  }
  bel.edges = edges;
  bel.edge_cov.resize(m);
  double log_z = 0.0;
  double u = 0.0;
  for (int e = 0; e < m; ++e) {
    const auto [i, j] = edges[e];
    auto [ai, li] = cavity(i, 2 * e + 1);  // exclude message j -> i
    auto [aj, lj] = cavity(j, 2 * e);      // exclude message i -> j
    const double jij = model.J(i, j);
    const double det = ai * aj - jij * jij;
    if (!(det > 0.0) || !(ai > 0.0)) {
      throw DegeneracyError("pairwise belief not positive-definite on edge (" +
                            std::to_string(i) + "," + std::to_string(j) + ")");
    }
    bel.edge_cov[e] = -jij / det;
    // Pairwise entropy and energy for the Bethe free energy.
    log_z += 0.5 * std::log(kTwoPi * kTwoPi / det) + 1.0;  // H(b_a) with log(2 pi e) split
    u += jij * (bel.edge_cov[e] + bel.mean(i) * bel.mean(j));
  }
  for (int i = 0; i < n; ++i) {
    const int d = static_cast<int>(incoming[i].size());
    log_z -= (d - 1) * 0.5 * (std::log(kTwoPi * bel.var(i)) + 1.0);  // -(d_i-1) H(b_i)
    u += 0.5 * model.J(i, i) * (bel.var(i) + bel.mean(i) * bel.mean(i)) -
         model.h(i) * bel.mean(i);
  }
  res.log_z_bethe = log_z - u;  // H_Bethe - U_Bethe
  return res;
}

double gaussian_loop_correlation(const GaussianBPResult& bp, const std::vector<int>& cycle_vars) {
  const int len = static_cast<int>(cycle_vars.size());
  if (len < 3) throw InputError("cycle must have length >= 3");
  auto cov_of = [&](int i, int j) {
    for (std::size_t e = 0; e < bp.beliefs.edges.size(); ++e) {
      const auto [u, v] = bp.beliefs.edges[e];
      if ((u == i && v == j) || (u == j && v == i)) return bp.beliefs.edge_cov[e];
    }
    throw InputError("cycle step (" + std::to_string(i) + "," + std::to_string(j) +
                     ") is not an edge");
  };
  double c = 1.0;
  for (int k = 0; k < len; ++k) {
    c *= cov_of(cycle_vars[k], cycle_vars[(k + 1) % len]);
    c /= bp.beliefs.var(cycle_vars[k]);
  }
  return c;
}

double gaussian_simple_loop_weight(const GaussianBPResult& bp,
                                   const std::vector<int>& cycle_vars) {
  const double c = gaussian_loop_correlation(bp, cycle_vars);
  if (c >= 1.0) {
    throw DegeneracyError("loop correlation >= 1: weight diverges, Bethe anchor invalid");
  }
  return c / (1.0 - c);
}

namespace {

// The unique cycle of a model whose pairwise graph is a single cycle.
std::vector<int> single_cycle_order(const GaussianModel& model) {
  const auto edges = gaussian_edges(model);
  const int n = static_cast<int>(model.J.rows());
  if (static_cast<int>(edges.size()) != n || n < 3) {
    throw InputError("pairwise graph is not a single cycle");
  }
  std::vector<std::vector<int>> adj(n);
  for (const auto& [i, j] : edges) {
    adj[i].push_back(j);
    adj[j].push_back(i);
  }
  for (int i = 0; i < n; ++i) {
    if (adj[i].size() != 2) throw InputError("pairwise graph is not a single cycle");
  }
  std::vector<int> order{0};
  int prev = -1;
  while (static_cast<int>(order.size()) < n) {
    const int cur = order.back();
    const int next = adj[cur][0] == prev ? adj[cur][1] : adj[cur][0];
    prev = cur;
    order.push_back(next);
  }
  if (adj[order.back()][0] != 0 && adj[order.back()][1] != 0) {
    throw InputError("pairwise graph is not a single cycle");
  }
  return order;
}

}  // namespace

GaussianCycleResult gaussian_single_cycle(const GaussianModel& model, const BPConfig& config) {
  const auto cycle = single_cycle_order(model);
  auto bp = gaussian_bp_run(model, config);
  const double c = gaussian_loop_correlation(bp, cycle);
  if (c >= 1.0) throw DegeneracyError("loop correlation >= 1 on the cycle");
  GaussianCycleResult res;
  res.loop_correlation = c;
  res.log_z = bp.log_z_bethe - std::log1p(-c);
  res.mean = bp.beliefs.mean;
  res.corrected_var = bp.beliefs.var * ((1.0 + c) / (1.0 - c));
  return res;
}

WalkSumReport walk_sum_check(const GaussianModel& model, int var, int max_len,
                             const BPConfig& config) {
  validate_gaussian(model);
  const int n = static_cast<int>(model.J.rows());
  if (var < 0 || var >= n) throw InputError("walk_sum_check: variable out of range");
  const Eigen::VectorXd dinv_sqrt = model.J.diagonal().cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd W = Eigen::MatrixXd::Identity(n, n) -
                            dinv_sqrt.asDiagonal() * model.J * dinv_sqrt.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W.cwiseAbs());
  const double rho = es.eigenvalues().cwiseAbs().maxCoeff();
  WalkSumReport rep;
  rep.spectral_radius = rho;
  if (rho >= 1.0) {
    std::ostringstream os;
    os << "model not walk-summable: spectral radius of |W| = " << rho;
    throw DegeneracyError(os.str());
  }

  Eigen::MatrixXd series = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(n, n);
  for (int k = 1; k <= max_len; ++k) {
    power = power * W;
    series += power;
  }
  rep.var_truncated = dinv_sqrt(var) * series(var, var) * dinv_sqrt(var);
  rep.tail_bound = std::pow(rho, max_len + 1) / (1.0 - rho) / model.J(var, var);

  auto bp = gaussian_bp_run(model, config);
  double c = 0.0;
  if (!gaussian_edges(model).empty()) {
    c = gaussian_loop_correlation(bp, single_cycle_order(model));
  }
  rep.var_closed = bp.beliefs.var(var) * (1.0 + c) / (1.0 - c);
  rep.var_exact = gaussian_exact(model).cov(var, var);
  rep.resid_truncated = std::abs(rep.var_truncated - rep.var_exact);
  rep.resid_closed = std::abs(rep.var_closed - rep.var_exact);
  return rep;
}

}  // namespace loopcalc
