#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <random>

#include "loopcalc/errors.hpp"
#include "loopcalc/exp_family.hpp"

using namespace loopcalc;

namespace {

Eigen::MatrixXd random_statistic_rows(std::mt19937_64& rng, int q) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (true) {
    Eigen::MatrixXd t(q - 1, q);
    for (int r = 0; r < q - 1; ++r) {
      for (int c = 0; c < q; ++c) t(r, c) = u(rng);
    }
    SufficientStatistic s{q, t};
    if (statistic_full_rank(s)) return t;
  }
}

Eigen::MatrixXd random_invertible(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  while (true) {
    Eigen::MatrixXd L(d, d);
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) L(r, c) = u(rng);
    }
    if (std::abs(L.determinant()) > 1e-3) return L;
  }
}

Eigen::VectorXd random_interior_belief(std::mt19937_64& rng, int q) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::VectorXd b(q);
  for (int x = 0; x < q; ++x) b(x) = u(rng);
  return b / b.sum();
}

// Central-difference Hessian of log Z(theta), step 1e-4.
Eigen::MatrixXd finite_difference_hessian(const SufficientStatistic& stat,
                                          const Eigen::VectorXd& theta) {
  const double h = 1e-4;
  const int d = stat.q - 1;
  auto log_z = [&](const Eigen::VectorXd& th) {
    const Eigen::VectorXd logits = stat.t.transpose() * th;
    const double m = logits.maxCoeff();
    return m + std::log((logits.array() - m).exp().sum());
  };
  Eigen::MatrixXd hess(d, d);
  for (int k = 0; k < d; ++k) {
    for (int l = 0; l < d; ++l) {
      Eigen::VectorXd pp = theta, pm = theta, mp = theta, mm = theta;
      pp(k) += h; pp(l) += h;
      pm(k) += h; pm(l) -= h;
      mp(k) -= h; mp(l) += h;
      mm(k) -= h; mm(l) -= h;
      hess(k, l) = (log_z(pp) - log_z(pm) - log_z(mp) + log_z(mm)) / (4 * h * h);
    }
  }
  return hess;
}

}  // namespace

TEST_SUITE("exp_family") {

TEST_CASE("zero natural parameter gives the uniform distribution") {
  const auto stat = SufficientStatistic::indicator(3);
  const auto [b, eta] = eta_from_theta(stat, Eigen::VectorXd::Zero(2));
  for (int x = 0; x < 3; ++x) CHECK(b(x) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(eta(0) == doctest::Approx(1.0 / 3).epsilon(1e-14));
  CHECK(eta(1) == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("theta = (log 2, 0) normalizes (1,2,1)") {
  const auto stat = SufficientStatistic::indicator(3);
  Eigen::VectorXd theta(2);
  theta << std::log(2.0), 0.0;
  const auto [b, eta] = eta_from_theta(stat, theta);
  CHECK(b(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(b(1) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(b(2) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(eta(0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(eta(1) == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("indicator basis: theta recovers belief log-ratios") {
  const auto stat = SufficientStatistic::indicator(4);
  Eigen::VectorXd eta(3);
  eta << 0.3, 0.2, 0.1;  // b = (0.4, 0.3, 0.2, 0.1)
  const auto theta = theta_from_eta(stat, eta);
  CHECK(theta(0) == doctest::Approx(std::log(0.3 / 0.4)).epsilon(1e-10));
  CHECK(theta(1) == doctest::Approx(std::log(0.2 / 0.4)).epsilon(1e-10));
  CHECK(theta(2) == doctest::Approx(std::log(0.1 / 0.4)).epsilon(1e-10));
}

TEST_CASE("uniform eta maps to zero theta") {
  const auto stat = SufficientStatistic::indicator(3);
  Eigen::VectorXd eta(2);
  eta << 1.0 / 3, 1.0 / 3;
  CHECK(theta_from_eta(stat, eta).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("round trips theta -> eta -> theta within 1e-10") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 4);
    const auto stat = trial % 2 == 0
                          ? SufficientStatistic::indicator(q)
                          : SufficientStatistic{q, random_statistic_rows(rng, q)};
    Eigen::VectorXd theta(q - 1);
    for (int k = 0; k < q - 1; ++k) theta(k) = u(rng);
    const auto [b, eta] = eta_from_theta(stat, theta);
    const auto theta2 = theta_from_eta(stat, eta);
    CHECK((theta2 - theta).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("boundary eta is rejected") {
  const auto stat = SufficientStatistic::indicator(3);
  Eigen::VectorXd eta(2);
  eta << 0.0, 0.5;
  CHECK_THROWS_AS(theta_from_eta(stat, eta), DegeneracyError);
  eta << 0.7, 0.4;  // sums over 1
  CHECK_THROWS_AS(theta_from_eta(stat, eta), DegeneracyError);
}

TEST_CASE("Fisher matrix at the uniform point, indicator basis") {
  const auto point = point_from_theta(SufficientStatistic::indicator(3),
                                      Eigen::VectorXd::Zero(2));
  const auto F = fisher_theta(point);
  CHECK(F(0, 0) == doctest::Approx(2.0 / 9).epsilon(1e-12));
  CHECK(F(1, 1) == doctest::Approx(2.0 / 9).epsilon(1e-12));
  CHECK(F(0, 1) == doctest::Approx(-1.0 / 9).epsilon(1e-12));
  CHECK(F(1, 0) == doctest::Approx(-1.0 / 9).epsilon(1e-12));
}

TEST_CASE("q=2 Fisher matrix is the Bernoulli variance") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto b = random_interior_belief(rng, 2);
    const auto point = point_from_belief(SufficientStatistic::indicator(2), b);
    CHECK(fisher_theta(point)(0, 0) == doctest::Approx(b(0) * b(1)).epsilon(1e-12));
  }
}

TEST_CASE("Fisher matrix matches the finite-difference Hessian of log Z") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 40; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 4);
    const auto stat = trial % 2 == 0
                          ? SufficientStatistic::indicator(q)
                          : SufficientStatistic{q, random_statistic_rows(rng, q)};
    Eigen::VectorXd theta(q - 1);
    for (int k = 0; k < q - 1; ++k) theta(k) = u(rng);
    const auto point = point_from_theta(stat, theta);
    const auto diff = (fisher_theta(point) - finite_difference_hessian(stat, theta))
                          .cwiseAbs()
                          .maxCoeff();
    CHECK(diff < 1e-6);
  }
}

TEST_CASE("fisher_eta inverts fisher_theta") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 4);
    const auto point =
        point_from_belief(SufficientStatistic::indicator(q), random_interior_belief(rng, q));
    const Eigen::MatrixXd prod = fisher_eta(point) * fisher_theta(point);
    CHECK((prod - Eigen::MatrixXd::Identity(q - 1, q - 1)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("fisher_eta rejects boundary beliefs") {
  Eigen::VectorXd b(3);
  b << 1e-15, 0.5, 0.5 - 1e-15;
  const auto point = point_from_belief(SufficientStatistic::indicator(3), b);
  CHECK_THROWS_AS(fisher_eta(point), DegeneracyError);
}

TEST_CASE("tangent values at the uniform q=3 point") {
  const auto point = point_from_theta(SufficientStatistic::indicator(3),
                                      Eigen::VectorXd::Zero(2));
  CHECK(tangent_theta(point, 1, 1) == doctest::Approx(2.0 / 3).epsilon(1e-14));
  CHECK(tangent_theta(point, 1, 0) == doctest::Approx(-1.0 / 3).epsilon(1e-14));
}

TEST_CASE("q=2 eta-tangent is the standardized score (x - eta)/(eta(1-eta))") {
  std::mt19937_64 rng(11);
  const auto b = random_interior_belief(rng, 2);
  const auto point = point_from_belief(SufficientStatistic::indicator(2), b);
  const double eta = b(1);
  for (int x = 0; x < 2; ++x) {
    CHECK(tangent_eta(point, 1, x) ==
          doctest::Approx((x - eta) / (eta * (1 - eta))).epsilon(1e-10));
  }
}

TEST_CASE("tangents have zero mean and satisfy the dual pairing") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 30; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 4);
    const auto stat = trial % 2 == 0
                          ? SufficientStatistic::indicator(q)
                          : SufficientStatistic{q, random_statistic_rows(rng, q)};
    const auto point = point_from_belief(stat, random_interior_belief(rng, q));
    for (int y = 1; y < q; ++y) {
      double mean_theta = 0.0, mean_eta = 0.0;
      for (int x = 0; x < q; ++x) {
        mean_theta += point.b(x) * tangent_theta(point, y, x);
        mean_eta += point.b(x) * tangent_eta(point, y, x);
      }
      CHECK(std::abs(mean_theta) < 1e-12);
      CHECK(std::abs(mean_eta) < 1e-12);
    }
    for (int k = 1; k < q; ++k) {
      for (int l = 1; l < q; ++l) {
        double pair = 0.0;
        for (int x = 0; x < q; ++x) {
          pair += point.b(x) * tangent_theta(point, k, x) * tangent_eta(point, l, x);
        }
        CHECK(std::abs(pair - (k == l ? 1.0 : 0.0)) < 1e-10);
      }
    }
  }
}

TEST_CASE("diagonal Fisher makes the eta-tangent the variance-scaled theta-tangent") {
  std::mt19937_64 rng(17);
  const auto b = random_interior_belief(rng, 4);
  const auto base = point_from_belief(SufficientStatistic::indicator(4), b);
  const auto diag_stat = diagonalizing_statistic(base);
  const auto point = point_from_belief(diag_stat, b);
  for (int y = 1; y < 4; ++y) {
    const double var = fisher_theta(point)(y - 1, y - 1);
    for (int x = 0; x < 4; ++x) {
      CHECK(tangent_eta(point, y, x) ==
            doctest::Approx(tangent_theta(point, y, x) / var).epsilon(1e-9));
    }
  }
}

TEST_CASE("transform_statistic maps coordinates as eta' = L eta, theta' = inv(L)^T theta") {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const int q = 3 + static_cast<int>(rng() % 3);
    const auto stat = SufficientStatistic::indicator(q);
    const auto b = random_interior_belief(rng, q);
    const auto point = point_from_belief(stat, b);
    const auto L = random_invertible(rng, q - 1);
    const auto stat2 = transform_statistic(stat, L);
    const auto point2 = point_from_belief(stat2, b);
    CHECK((point2.eta - L * point.eta).lpNorm<Eigen::Infinity>() < 1e-10);
    CHECK((point2.theta - L.inverse().transpose() * point.theta).lpNorm<Eigen::Infinity>() <
          1e-10);
  }
}

TEST_CASE("transform round trip restores the statistic") {
  std::mt19937_64 rng(23);
  const auto stat = SufficientStatistic::indicator(4);
  const auto L = random_invertible(rng, 3);
  const auto back = transform_statistic(transform_statistic(stat, L),
                                        Eigen::MatrixXd(L.inverse()));
  CHECK((back.t - stat.t).cwiseAbs().maxCoeff() < 1e-10);
  CHECK_THROWS_AS(transform_statistic(stat, Eigen::MatrixXd::Zero(3, 3)), DegeneracyError);
}

TEST_CASE("diagonalizing statistic whitens the Fisher matrix") {
  std::mt19937_64 rng(29);
  SUBCASE("uniform q=3") {
    const auto point = point_from_theta(SufficientStatistic::indicator(3),
                                        Eigen::VectorXd::Zero(2));
    const auto stat2 = diagonalizing_statistic(point);
    const auto point2 = point_from_belief(stat2, point.b);
    CHECK((fisher_theta(point2) - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() <
          1e-9);
  }
  SUBCASE("random q up to 6, idempotent") {
    for (int trial = 0; trial < 15; ++trial) {
      const int q = 2 + static_cast<int>(rng() % 5);
      const auto point =
          point_from_belief(SufficientStatistic::indicator(q), random_interior_belief(rng, q));
      const auto stat2 = diagonalizing_statistic(point);
      const auto point2 = point_from_belief(stat2, point.b);
      CHECK((fisher_theta(point2) - Eigen::MatrixXd::Identity(q - 1, q - 1))
                .cwiseAbs()
                .maxCoeff() < 1e-9);
      const auto stat3 = diagonalizing_statistic(point2);
      const auto point3 = point_from_belief(stat3, point.b);
      CHECK((fisher_theta(point3) - Eigen::MatrixXd::Identity(q - 1, q - 1))
                .cwiseAbs()
                .maxCoeff() < 1e-9);
    }
  }
  SUBCASE("q=2 rescales to unit variance") {
    const auto b = random_interior_belief(rng, 2);
    const auto point = point_from_belief(SufficientStatistic::indicator(2), b);
    const auto stat2 = diagonalizing_statistic(point);
    const auto point2 = point_from_belief(stat2, b);
    CHECK(fisher_theta(point2)(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

}  // TEST_SUITE
