#pragma once

#include <string>
#include <utility>
#include <vector>

#include "loopcalc/bp.hpp"
#include "loopcalc/factor_graph.hpp"

namespace loopcalc {

struct ColoringModel {
  int num_nodes = 0;
  std::vector<std::pair<int, int>> edges;  // simple undirected graph
  int q = 0;                               // colors
  double w = 1.0;                          // weight on color 0
};

// One degree-2 factor per edge with f(x, y) = 1 - delta(x, y) stored on its
// support; h_i(x) = w^{delta(x, 0)}.
FactorGraph build_coloring_factor_graph(const ColoringModel& model);

// Scalar fixed point of the symmetric-message equations
//   theta_v2f = log w + (k-1) theta(eta_f2v)
//   eta_f2v   = (1 - eta(theta_v2f)) / (q-1)
// with eta(theta) = e^theta / (q-1+e^theta), theta(eta) = log((q-1)eta/(1-eta)).
struct SymmetricFixedPoint {
  double theta_v2f = 0.0;
  double eta_f2v = 0.0;
  double residual = 0.0;
};

enum class SymmetricMethod { bisection, backward };

SymmetricFixedPoint symmetric_fixed_point(int q, int k, double w,
                                          SymmetricMethod method = SymmetricMethod::bisection);

// Installs the symmetric messages on every edge of the coloring factor graph.
MessageSet symmetric_messages(const FactorGraph& g, const SymmetricFixedPoint& fp);

struct Table1Row {
  double w = 0.0;
  int q = 0;
  double z_exact = 0.0;
  double ratio_bethe = 0.0;        // Z_Bethe / Z
  double ratio_plus_loops = 0.0;   // Z_Bethe+loops / Z
  double ratio_times_loops = 0.0;  // Z_Bethe*loops / Z
  double log_z_bethe = 0.0;
  double stationarity = 0.0;       // fixed-point violation of installed messages
  int simple_loops = 0;
};

// One row per (w, q): exact Z (brute force when q^N is small, elimination
// otherwise), Z_Bethe at the symmetric fixed point, and the two simple-loop
// truncations. Requires a k-regular graph.
std::vector<Table1Row> table1_report(int num_nodes,
                                     const std::vector<std::pair<int, int>>& edges,
                                     const std::vector<int>& q_list,
                                     const std::vector<double>& w_list, int threads = 0);

}  // namespace loopcalc
