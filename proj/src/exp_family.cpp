#include "loopcalc/exp_family.hpp"

#include <cmath>
#include <sstream>

#include "loopcalc/errors.hpp"

namespace loopcalc {

SufficientStatistic SufficientStatistic::indicator(int q) {
  SufficientStatistic s;
  s.q = q;
  s.t = Eigen::MatrixXd::Zero(q - 1, q);
  for (int y = 1; y < q; ++y) s.t(y - 1, y) = 1.0;
  return s;
}

bool statistic_full_rank(const SufficientStatistic& stat, double tol) {
  Eigen::MatrixXd m(stat.q, stat.q);
  m.row(0).setOnes();
  m.bottomRows(stat.q - 1) = stat.t;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  lu.setThreshold(tol);
  return lu.rank() == stat.q;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> eta_from_theta(const SufficientStatistic& stat,
                                                           const Eigen::VectorXd& theta) {
  Eigen::VectorXd logits = stat.t.transpose() * theta;  // length q
  const double m = logits.maxCoeff();
  Eigen::VectorXd b = (logits.array() - m).exp();
  b /= b.sum();
  return {b, stat.t * b};
}

Eigen::VectorXd theta_from_eta(const SufficientStatistic& stat, const Eigen::VectorXd& eta) {
  const int d = stat.q - 1;
  // Boundary pre-check available in closed form for the indicator basis.
  if (stat.t == SufficientStatistic::indicator(stat.q).t) {
    double sum = 0.0;
    for (int y = 0; y < d; ++y) {
      if (!(eta[y] > 0.0)) throw DegeneracyError("eta on/outside the expectation domain");
      sum += eta[y];
    }
    if (!(sum < 1.0)) throw DegeneracyError("eta on/outside the expectation domain");
  }

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  auto residual = [&](const Eigen::VectorXd& th) {
    auto [b, et] = eta_from_theta(stat, th);
    return std::make_pair(b, (eta - et).eval());
  };
  auto [b, r] = residual(theta);
  double rnorm = r.lpNorm<Eigen::Infinity>();
  for (int iter = 0; iter < 200; ++iter) {
    if (rnorm <= 1e-12) return theta;
    Eigen::MatrixXd F = stat.t * b.asDiagonal() * stat.t.transpose() -
                        (stat.t * b) * (stat.t * b).transpose();
    Eigen::VectorXd step = F.ldlt().solve(r);
    double scale = 1.0;
    for (int half = 0; half < 60; ++half) {
      auto [b2, r2] = residual(theta + scale * step);
      const double rnorm2 = r2.lpNorm<Eigen::Infinity>();
      if (rnorm2 < rnorm || rnorm2 <= 1e-12) {
        theta += scale * step;
        b = b2;
        r = r2;
        rnorm = rnorm2;
        break;
      }
      scale *= 0.5;
      if (half == 59) throw DegeneracyError("theta_from_eta: no descent step (boundary eta?)");
    }
  }
  std::ostringstream os;
  os << "theta_from_eta did not converge in 200 iterations, residual " << rnorm;
  throw DegeneracyError(os.str());
}

ExpFamilyPoint point_from_theta(const SufficientStatistic& stat, const Eigen::VectorXd& theta) {
  auto [b, eta] = eta_from_theta(stat, theta);
  return ExpFamilyPoint{stat, b, theta, eta};
}

ExpFamilyPoint point_from_eta(const SufficientStatistic& stat, const Eigen::VectorXd& eta) {
  Eigen::VectorXd theta = theta_from_eta(stat, eta);
  auto [b, eta2] = eta_from_theta(stat, theta);
  return ExpFamilyPoint{stat, b, theta, eta2};
}

ExpFamilyPoint point_from_belief(const SufficientStatistic& stat, const Eigen::VectorXd& b) {
  for (int x = 0; x < stat.q; ++x) {
    if (!(b[x] > 0.0)) throw DegeneracyError("belief not strictly positive; no interior point");
  }
  Eigen::MatrixXd m(stat.q, stat.q);
  m.row(0).setOnes();
  m.bottomRows(stat.q - 1) = stat.t;
  Eigen::VectorXd coeffs = m.transpose().fullPivLu().solve(b.array().log().matrix());
  ExpFamilyPoint p;
  p.stat = stat;
  p.b = b / b.sum();
  p.theta = coeffs.tail(stat.q - 1);
  p.eta = stat.t * p.b;
  return p;
}

Eigen::MatrixXd fisher_theta(const ExpFamilyPoint& point) {
  return point.stat.t * point.b.asDiagonal() * point.stat.t.transpose() -
         point.eta * point.eta.transpose();
}

Eigen::MatrixXd fisher_eta(const ExpFamilyPoint& point) {
  const Eigen::MatrixXd F = fisher_theta(point);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F);
  const auto& ev = es.eigenvalues();
  if (!(ev.minCoeff() > 0.0) || ev.maxCoeff() / ev.minCoeff() > 1e12) {
    std::ostringstream os;
    os << "Fisher matrix near-singular (condition "
       << (ev.minCoeff() > 0 ? ev.maxCoeff() / ev.minCoeff() : INFINITY)
       << "); beliefs too close to the boundary";
    throw DegeneracyError(os.str());
  }
  return es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
}

double tangent_theta(const ExpFamilyPoint& point, int y, int x) {
  return point.stat.t(y - 1, x) - point.eta[y - 1];
}

double tangent_eta(const ExpFamilyPoint& point, int y, int x) {
  const Eigen::MatrixXd Fe = fisher_eta(point);
  double v = 0.0;
  for (int w = 1; w < point.stat.q; ++w) {
    v += Fe(w - 1, y - 1) * tangent_theta(point, w, x);
  }
  return v;
}

Eigen::MatrixXd tangent_theta_table(const ExpFamilyPoint& point) {
  return point.stat.t.colwise() - point.eta;
}

Eigen::MatrixXd tangent_eta_table(const ExpFamilyPoint& point) {
  return fisher_eta(point) * tangent_theta_table(point);
}

SufficientStatistic transform_statistic(const SufficientStatistic& stat,
                                        const Eigen::MatrixXd& L) {
  if (L.rows() != stat.q - 1 || L.cols() != stat.q - 1) {
    throw InputError("transform matrix must be (q-1)x(q-1)");
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(L);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw DegeneracyError("transform matrix is singular");
  SufficientStatistic out;
  out.q = stat.q;
  out.t = L * stat.t;
  return out;
}

SufficientStatistic diagonalizing_statistic(const ExpFamilyPoint& point) {
  const Eigen::MatrixXd F = fisher_theta(point);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(F);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) {
    throw DegeneracyError("Fisher eigendecomposition failed on degenerate beliefs");
  }
  const Eigen::MatrixXd L =
      es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  return transform_statistic(point.stat, L);
}

}  // namespace loopcalc
