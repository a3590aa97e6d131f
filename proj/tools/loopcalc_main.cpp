#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "loopcalc/coloring.hpp"
#include "loopcalc/errors.hpp"
#include "loopcalc/exact.hpp"
#include "loopcalc/gaussian.hpp"
#include "loopcalc/gaussian_io.hpp"
#include "loopcalc/loops.hpp"
#include "loopcalc/model_io.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

using ordered_json = nlohmann::ordered_json;
using namespace loopcalc;

ordered_json make_report(const std::string& command, const std::string& digest,
                         ordered_json params, ordered_json result) {
  ordered_json rep;
  rep["tool"] = "loopcalc";
  rep["version"] = kVersion;
  rep["command"] = command;
  rep["model_digest"] = digest;
  rep["params"] = std::move(params);
  rep["result"] = std::move(result);
  return rep;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

ordered_json beliefs_to_json(const PseudoMarginals& beliefs) {
  ordered_json b;
  b["var"] = beliefs.var;
  b["fac"] = beliefs.fac;
  return b;
}

ordered_json ledger_to_json(const std::vector<LoopWeightReport>& ledger) {
  ordered_json arr = ordered_json::array();
  for (const auto& item : ledger) {
    arr.push_back({{"edges", item.edges},
                   {"weight", item.weight},
                   {"method", item.method},
                   {"cumulative_sum", item.cumulative_sum}});
  }
  return arr;
}

void write_ledger_lines(const std::string& path, const std::vector<LoopWeightReport>& ledger) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write ledger file: " + path);
  for (const auto& item : ledger) {
    ordered_json line = {{"edges", item.edges},
                         {"weight", item.weight},
                         {"method", item.method},
                         {"cumulative_sum", item.cumulative_sum}};
    out << line.dump() << "\n";
  }
}

void emit(const ordered_json& report, bool pretty) {
  if (pretty) {
    std::cout << report.dump(2) << "\n";
  } else {
    std::cout << report.dump() << "\n";
  }
}

struct CommonBP {
  double tol = 1e-10;
  int max_iter = 10000;
  double damping = 0.0;
  std::string schedule = "parallel";
  std::uint64_t seed = 0;

  void attach(CLI::App* cmd) {
    cmd->add_option("--tol", tol, "message-change tolerance");
    cmd->add_option("--max-iter", max_iter, "iteration cap");
    cmd->add_option("--damping", damping, "damping in [0,1)");
    cmd->add_option("--schedule", schedule, "parallel|sequential")
        ->check(CLI::IsMember({"parallel", "sequential"}));
    cmd->add_option("--seed", seed, "0 = uniform init, otherwise perturbed init seed");
  }

  BPConfig config() const {
    BPConfig c;
    c.tolerance = tol;
    c.max_iterations = max_iter;
    c.damping = damping;
    c.schedule = schedule == "sequential" ? BPConfig::Schedule::sequential
                                          : BPConfig::Schedule::parallel;
    return c;
  }
};

int run(int argc, char** argv) {
  CLI::App app{"factor-graph partition functions, Bethe approximation, loop-series corrections"};
  app.set_version_flag("--version", std::string("loopcalc ") + kVersion);
  app.require_subcommand(1);
  bool pretty = false;
  app.add_flag("--pretty", pretty, "human-readable output");

  // ---- exact ----
  auto* cmd_exact = app.add_subcommand("exact", "exact partition function");
  std::string exact_model, exact_method = "brute", exact_order = "auto";
  int exact_threads = 1;
  double exact_budget = 1e8;
  cmd_exact->add_option("--model", exact_model, "model JSON path")->required();
  cmd_exact->add_option("--method", exact_method, "brute|ve")
      ->check(CLI::IsMember({"brute", "ve"}));
  cmd_exact->add_option("--order", exact_order, "auto or comma-separated variable ids (ve)");
  cmd_exact->add_option("--threads", exact_threads, "worker threads");
  cmd_exact->add_option("--budget", exact_budget, "max enumerated states");

  // ---- bp ----
  auto* cmd_bp = app.add_subcommand("bp", "belief propagation to a Bethe stationary point");
  std::string bp_model;
  CommonBP bp_opts;
  cmd_bp->add_option("--model", bp_model, "model JSON path")->required();
  bp_opts.attach(cmd_bp);

  // ---- loops ----
  auto* cmd_loops = app.add_subcommand("loops", "loop-series corrections");
  std::string loops_model, loops_mode = "full", loops_c, loops_gtable, loops_ledger;
  int loops_threads = 1;
  int loops_max_edges = -1;
  CommonBP loops_bp;
  cmd_loops->add_option("--model", loops_model, "model JSON path")->required();
  cmd_loops->add_option("--mode", loops_mode, "full|simple|marginal")
      ->check(CLI::IsMember({"full", "simple", "marginal"}));
  cmd_loops->add_option("--max-edges", loops_max_edges, "bound on |E'| for enumeration");
  cmd_loops->add_option("--C", loops_c, "comma-separated variable ids (marginal mode)");
  cmd_loops->add_option("--g-table", loops_gtable,
                        "JSON array of q^|C| reals, index sum_k x_{C[k]} q^k (marginal mode)");
  cmd_loops->add_option("--ledger", loops_ledger, "write per-loop JSON lines to this file");
  cmd_loops->add_option("--threads", loops_threads, "worker threads");
  loops_bp.attach(cmd_loops);

  // ---- coloring ----
  auto* cmd_coloring = app.add_subcommand("coloring", "weighted q-coloring table");
  std::string col_graph, col_q = "3,4,9", col_w = "1.0,1.5", col_out;
  int col_threads = 1;
  cmd_coloring->add_option("--graph", col_graph, "edge-list file")->required();
  cmd_coloring->add_option("--q", col_q, "comma-separated color counts");
  cmd_coloring->add_option("--w", col_w, "comma-separated weights on color 0");
  cmd_coloring->add_option("--out", col_out, "also write the report to this file");
  cmd_coloring->add_option("--threads", col_threads, "worker threads");

  // ---- gaussian ----
  auto* cmd_gauss = app.add_subcommand("gaussian", "Gaussian model: exact, BP, cycle correction");
  std::string gauss_model;
  int gauss_walk_var = -1, gauss_max_len = 200;
  bool gauss_cycle = false;
  CommonBP gauss_bp;
  cmd_gauss->add_option("--model", gauss_model, "gaussian JSON path {\"J\":[[..]],\"h\":[..]}")
      ->required();
  cmd_gauss->add_flag("--cycle", gauss_cycle, "single-cycle closed-form correction");
  cmd_gauss->add_option("--walk-sum", gauss_walk_var, "verify the variance of this variable");
  cmd_gauss->add_option("--max-len", gauss_max_len, "walk-sum truncation length");
  gauss_bp.attach(cmd_gauss);

  CLI11_PARSE(app, argc, argv);
  const auto t0 = std::chrono::steady_clock::now();

  if (cmd_exact->parsed()) {
    const FactorGraph g = load_model(exact_model);
    ordered_json params = {{"method", exact_method},
                           {"order", exact_order},
                           {"threads", exact_threads}};
    ordered_json result;
    ExactBudget budget;
    budget.max_states = exact_budget;
    if (exact_method == "brute") {
      const auto r = brute_force_partition(g, budget, exact_threads);
      result["log_z"] = r.log_z;
      result["z"] = r.z;
    } else {
      std::vector<int> order;
      if (exact_order != "auto") order = parse_int_list(exact_order);
      const double log_z = log_partition_ve(g, order, budget);
      result["log_z"] = log_z;
      result["z"] = std::exp(log_z);
    }
    emit(make_report("exact", file_digest(exact_model), params, result), pretty);
  } else if (cmd_bp->parsed()) {
    const FactorGraph g = load_model(bp_model);
    const auto init = bp_opts.seed == 0 ? uniform_messages(g)
                                        : perturbed_messages(g, bp_opts.seed);
    const auto res = bp_run(g, init, bp_opts.config());
    ordered_json params = {{"tol", bp_opts.tol},
                           {"max_iter", bp_opts.max_iter},
                           {"damping", bp_opts.damping},
                           {"schedule", bp_opts.schedule},
                           {"seed", bp_opts.seed}};
    ordered_json result;
    result["log_z_bethe"] = res.log_z_bethe;
    result["converged"] = res.converged;
    result["iterations"] = res.iterations;
    result["residual"] = res.residual;
    result["beliefs"] = beliefs_to_json(res.beliefs);
    emit(make_report("bp", file_digest(bp_model), params, result), pretty);
  } else if (cmd_loops->parsed()) {
    const FactorGraph g = load_model(loops_model);
    const auto init = loops_bp.seed == 0 ? uniform_messages(g)
                                         : perturbed_messages(g, loops_bp.seed);
    const auto bethe = bp_run(g, init, loops_bp.config());
    if (!bethe.converged) {
      throw DegeneracyError("BP did not converge; loop weights need a stationary point");
    }
    ordered_json params = {{"mode", loops_mode},
                           {"threads", loops_threads},
                           {"seed", loops_bp.seed}};
    ordered_json result;
    result["log_z_bethe"] = bethe.log_z_bethe;
    if (loops_mode == "full") {
      std::optional<int> max_edges;
      if (loops_max_edges >= 0) max_edges = loops_max_edges;
      auto series = max_edges.has_value()
                        ? LoopSeriesResult{}
                        : full_loop_series(g, bethe, loops_threads);
      if (max_edges.has_value()) {
        // Bounded enumeration path.
        series.z_bethe = std::exp(bethe.log_z_bethe);
        const auto loops = enumerate_generalized_loops(g, max_edges);
        const auto stats = diagonalizing_stats(g, bethe.beliefs);
        double total = 0.0;
        for (const auto& loop : loops) {
          const double w = loop_weight(g, bethe.beliefs, loop.edges, stats);
          total += w;
          series.ledger.push_back({loop.edges, w, "diagonal_fisher", total});
        }
        series.z_estimate = series.z_bethe * (1.0 + total);
      }
      result["z_bethe"] = series.z_bethe;
      result["z_estimate"] = series.z_estimate;
      result["loops"] = series.ledger.size();
      result["ledger"] = ledger_to_json(series.ledger);
      if (!loops_ledger.empty()) write_ledger_lines(loops_ledger, series.ledger);
    } else if (loops_mode == "simple") {
      const auto series = truncated_series_estimates(g, bethe, loops_threads);
      result["z_bethe"] = series.z_bethe;
      result["z_bethe_plus_loops"] = series.z_bethe_plus_loops;
      result["z_bethe_times_loops"] = series.z_bethe_times_loops;
      result["loops"] = series.ledger.size();
      result["ledger"] = ledger_to_json(series.ledger);
      if (!loops_ledger.empty()) write_ledger_lines(loops_ledger, series.ledger);
    } else {
      if (loops_c.empty()) throw InputError("marginal mode needs --C");
      const auto C = parse_int_list(loops_c);
      MarginalFunction gval;
      if (loops_gtable.empty()) {
        std::size_t size = 1;
        for (std::size_t k = 0; k < C.size(); ++k) size *= static_cast<std::size_t>(g.q);
        gval.assign(size, 1.0);
      } else {
        std::ifstream in(loops_gtable);
        if (!in) throw InputError("cannot open g table: " + loops_gtable);
        nlohmann::json doc;
        try {
          in >> doc;
          gval = doc.get<std::vector<double>>();
        } catch (const nlohmann::json::exception& e) {
          throw InputError(std::string("g table parse error: ") + e.what());
        }
      }
      std::optional<int> max_edges;
      if (loops_max_edges >= 0) max_edges = loops_max_edges;
      const auto corr = marginal_correction(g, bethe, C, gval, max_edges);
      result["bethe_estimate"] = corr.bethe_estimate;
      result["corrected_estimate"] = corr.corrected_estimate;
      result["loops"] = corr.loops_used;
    }
    emit(make_report("loops", file_digest(loops_model), params, result), pretty);
  } else if (cmd_coloring->parsed()) {
    const auto edges = load_edge_list(col_graph);
    int n = 0;
    for (const auto& [u, v] : edges) n = std::max({n, u + 1, v + 1});
    const auto q_list = parse_int_list(col_q);
    const auto w_list = parse_double_list(col_w);
    const auto rows = table1_report(n, edges, q_list, w_list, col_threads);
    ordered_json params = {{"q", q_list}, {"w", w_list}, {"threads", col_threads}};
    ordered_json result = ordered_json::array();
    for (const auto& row : rows) {
      result.push_back({{"w", row.w},
                        {"q", row.q},
                        {"z", row.z_exact},
                        {"z_bethe_over_z", row.ratio_bethe},
                        {"z_bethe_plus_loops_over_z", row.ratio_plus_loops},
                        {"z_bethe_times_loops_over_z", row.ratio_times_loops},
                        {"log_z_bethe", row.log_z_bethe},
                        {"stationarity", row.stationarity},
                        {"simple_loops", row.simple_loops}});
    }
    const auto report =
        make_report("coloring", file_digest(col_graph), params, {{"rows", result}});
    if (pretty) {
      std::printf("%8s %4s %22s %14s %14s %14s\n", "w", "q", "Z", "Bethe/Z", "+loops/Z",
                  "xloops/Z");
      for (const auto& row : rows) {
        std::printf("%8.3f %4d %22.6f %14.6f %14.6f %14.6f\n", row.w, row.q, row.z_exact,
                    row.ratio_bethe, row.ratio_plus_loops, row.ratio_times_loops);
      }
    } else {
      emit(report, false);
    }
    if (!col_out.empty()) {
      std::ofstream out(col_out);
      if (!out) throw InputError("cannot write output file: " + col_out);
      out << report.dump(2) << "\n";
    }
  } else if (cmd_gauss->parsed()) {
    const GaussianModel model = load_gaussian(gauss_model);
    const auto exact = gaussian_exact(model);
    const auto bp = gaussian_bp_run(model, gauss_bp.config());
    ordered_json result;
    result["log_normalizer_exact"] = exact.log_normalizer;
    result["log_z_bethe"] = bp.log_z_bethe;
    result["converged"] = bp.converged;
    result["iterations"] = bp.iterations;
    result["mean"] = std::vector<double>(bp.beliefs.mean.data(),
                                         bp.beliefs.mean.data() + bp.beliefs.mean.size());
    result["var"] = std::vector<double>(bp.beliefs.var.data(),
                                        bp.beliefs.var.data() + bp.beliefs.var.size());
    if (gauss_cycle) {
      const auto cyc = gaussian_single_cycle(model, gauss_bp.config());
      result["cycle"] = {{"log_z", cyc.log_z},
                         {"loop_correlation", cyc.loop_correlation},
                         {"corrected_var",
                          std::vector<double>(cyc.corrected_var.data(),
                                              cyc.corrected_var.data() + cyc.corrected_var.size())}};
    }
    if (gauss_walk_var >= 0) {
      const auto rep = walk_sum_check(model, gauss_walk_var, gauss_max_len, gauss_bp.config());
      result["walk_sum"] = {{"spectral_radius", rep.spectral_radius},
                            {"var_truncated", rep.var_truncated},
                            {"var_closed", rep.var_closed},
                            {"var_exact", rep.var_exact},
                            {"tail_bound", rep.tail_bound},
                            {"resid_truncated", rep.resid_truncated},
                            {"resid_closed", rep.resid_closed}};
    }
    ordered_json params = {{"tol", gauss_bp.tol}, {"damping", gauss_bp.damping}};
    emit(make_report("gaussian", file_digest(gauss_model), params, result), pretty);
  }

  const auto t1 = std::chrono::steady_clock::now();
  std::fprintf(stderr, "# elapsed_ms=%lld\n",
               static_cast<long long>(
                   std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const loopcalc::InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return 2;
  } catch (const loopcalc::BudgetError& e) {
    std::fprintf(stderr, "budget error: %s\n", e.what());
    return 3;
  } catch (const loopcalc::DegeneracyError& e) {
    std::fprintf(stderr, "degeneracy error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
