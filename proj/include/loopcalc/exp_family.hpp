#pragma once

#include <Eigen/Dense>

#include <utility>

namespace loopcalc {

// Sufficient statistic of a (q-1)-dimensional exponential family over
// {0,..,q-1}. Row y-1 holds t_y(x) for the label y in {1,..,q-1}; together
// with the all-ones function the rows must be linearly independent.
struct SufficientStatistic {
  int q = 0;
  Eigen::MatrixXd t;  // (q-1) x q

  static SufficientStatistic indicator(int q);
};

bool statistic_full_rank(const SufficientStatistic& stat, double tol = 1e-12);

// Interior distribution together with its dual coordinates under a statistic.
struct ExpFamilyPoint {
  SufficientStatistic stat;
  Eigen::VectorXd b;      // length q, strictly positive, sums to 1
  Eigen::VectorXd theta;  // length q-1
  Eigen::VectorXd eta;    // length q-1
};

// b(x) ∝ exp(sum_y theta_y t_y(x)) with max-subtraction; returns (b, eta).
std::pair<Eigen::VectorXd, Eigen::VectorXd> eta_from_theta(const SufficientStatistic& stat,
                                                           const Eigen::VectorXd& theta);

// Damped Newton on the convex dual; tolerance 1e-12, cap 200 iterations.
Eigen::VectorXd theta_from_eta(const SufficientStatistic& stat, const Eigen::VectorXd& eta);

ExpFamilyPoint point_from_theta(const SufficientStatistic& stat, const Eigen::VectorXd& theta);
ExpFamilyPoint point_from_eta(const SufficientStatistic& stat, const Eigen::VectorXd& eta);
// Decomposes log b in the basis {1, t_1, .., t_{q-1}} to recover theta.
ExpFamilyPoint point_from_belief(const SufficientStatistic& stat, const Eigen::VectorXd& b);

// (k,l) entry <t_k t_l>_b - eta_k eta_l; the Hessian of log Z(theta).
Eigen::MatrixXd fisher_theta(const ExpFamilyPoint& point);
// Inverse of fisher_theta; errors if the condition number exceeds 1e12.
Eigen::MatrixXd fisher_eta(const ExpFamilyPoint& point);

// d log b(x) / d theta_y = t_y(x) - eta_y, for y in {1,..,q-1}.
double tangent_theta(const ExpFamilyPoint& point, int y, int x);
// d log b(x) / d eta_y = sum_w fisher_eta[w,y] (t_w(x) - eta_w).
double tangent_eta(const ExpFamilyPoint& point, int y, int x);

// Full tangent tables, rows indexed by label-1, columns by symbol.
Eigen::MatrixXd tangent_theta_table(const ExpFamilyPoint& point);
Eigen::MatrixXd tangent_eta_table(const ExpFamilyPoint& point);

// t' = L t for invertible L; coordinates follow eta' = L eta,
// theta' = inv(L)^T theta.
SufficientStatistic transform_statistic(const SufficientStatistic& stat,
                                        const Eigen::MatrixXd& L);

// Statistic under which the Fisher matrix at the point's b is the identity.
SufficientStatistic diagonalizing_statistic(const ExpFamilyPoint& point);

}  // namespace loopcalc
