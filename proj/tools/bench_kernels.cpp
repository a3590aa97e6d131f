// Compares the serial reference kernels against the OpenMP paths on the
// bundled 3-regular coloring instance.

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <string>

#include "loopcalc/coloring.hpp"
#include "loopcalc/exact.hpp"
#include "loopcalc/loops.hpp"
#include "loopcalc/model_io.hpp"

using namespace loopcalc;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string graph_path = argc > 1 ? argv[1] : "data/fig6.edges";
  const int q = argc > 2 ? std::stoi(argv[2]) : 3;
  const auto edges = load_edge_list(graph_path);
  int n = 0;
  for (const auto& [u, v] : edges) n = std::max({n, u + 1, v + 1});
  const auto g = build_coloring_factor_graph({n, edges, q, 1.0});
  const int max_threads = omp_get_max_threads();

  std::printf("instance: %s, q=%d (%d vars, %d factors), max threads %d\n", graph_path.c_str(),
              q, g.num_variables(), g.num_factors(), max_threads);

  auto t0 = std::chrono::steady_clock::now();
  const auto serial = brute_force_partition_serial(g);
  const double t_serial = ms_since(t0);
  std::printf("brute force serial     : %10.1f ms  Z = %.6f\n", t_serial, serial.z);

  t0 = std::chrono::steady_clock::now();
  const auto par1 = brute_force_partition(g, {}, 1);
  const double t_par1 = ms_since(t0);
  std::printf("brute force dfs x1     : %10.1f ms  Z = %.6f\n", t_par1, par1.z);

  t0 = std::chrono::steady_clock::now();
  const auto parn = brute_force_partition(g, {}, max_threads);
  const double t_parn = ms_since(t0);
  std::printf("brute force dfs x%-2d    : %10.1f ms  Z = %.6f  (%.1fx vs serial)\n", max_threads,
              t_parn, parn.z, t_serial / t_parn);

  const auto fp = symmetric_fixed_point(q, 3, 1.0);
  const auto messages = symmetric_messages(g, fp);
  BetheResult bethe;
  bethe.messages = messages;
  std::tie(bethe.beliefs, bethe.normalizers) = beliefs_from_messages(g, messages);
  bethe.log_z_bethe = log_z_bethe_stationary(bethe.normalizers);
  bethe.converged = true;

  t0 = std::chrono::steady_clock::now();
  const auto series1 = truncated_series_estimates(g, bethe, 1);
  const double t_loops1 = ms_since(t0);
  std::printf("simple-loop weights x1 : %10.1f ms  (%zu loops)\n", t_loops1,
              series1.ledger.size());

  t0 = std::chrono::steady_clock::now();
  const auto seriesn = truncated_series_estimates(g, bethe, max_threads);
  const double t_loopsn = ms_since(t0);
  std::printf("simple-loop weights x%-2d: %10.1f ms  (%.1fx)\n", max_threads, t_loopsn,
              t_loops1 / t_loopsn);

  const double drift = std::abs(series1.z_bethe_plus_loops - seriesn.z_bethe_plus_loops);
  std::printf("serial/parallel agreement: |dZ| brute = %.3g, |dZ+loops| = %.3g\n",
              std::abs(serial.z - parn.z), drift);
  return 0;
}
