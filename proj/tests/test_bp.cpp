#include <doctest.h>

#include <cmath>
#include <random>

#include "loopcalc/bp.hpp"
#include "loopcalc/errors.hpp"
#include "loopcalc/exact.hpp"

#include "helpers.hpp"

using namespace loopcalc;
using testutil::fig6_edges;
using testutil::random_loopy;
using testutil::random_tree;
using testutil::triangle_coloring;

namespace {

int graph_diameter_sweeps(const FactorGraph& g) {
  // Coarse upper bound: one sweep per bipartite node.
  return g.num_variables() + g.num_factors() + 2;
}

}  // namespace

TEST_SUITE("bp_engine") {

TEST_CASE("bp_step: tree messages stop moving after diameter-many sweeps") {
  std::mt19937_64 rng(101);
  const auto g = random_tree(rng, 6, 3);
  auto msgs = uniform_messages(g);
  BPConfig config;
  double residual = 1.0;
  for (int it = 0; it < graph_diameter_sweeps(g); ++it) {
    std::tie(msgs, residual) = bp_step(g, msgs, config);
  }
  std::tie(msgs, residual) = bp_step(g, msgs, config);
  CHECK(residual < 1e-12);
}

TEST_CASE("bp_step: uniform messages are a fixed point of the w=1 coloring model") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  const auto [next, residual] = bp_step(g, uniform_messages(g), BPConfig{});
  CHECK(residual < 1e-15);
}

TEST_CASE("bp_step: damping 0.5 halves the undamped step exactly") {
  std::mt19937_64 rng(103);
  const auto g = random_loopy(rng, 5, 3, 2);
  const auto msgs = perturbed_messages(g, 7);
  BPConfig plain;
  BPConfig damped;
  damped.damping = 0.5;
  const auto [undamped_next, r1] = bp_step(g, msgs, plain);
  const auto [damped_next, r2] = bp_step(g, msgs, damped);
  for (int e = 0; e < g.num_edges(); ++e) {
    for (int x = 0; x < g.q; ++x) {
      CHECK(damped_next.var_to_fac[e][x] - msgs.var_to_fac[e][x] ==
            doctest::Approx((undamped_next.var_to_fac[e][x] - msgs.var_to_fac[e][x]) / 2)
                .epsilon(1e-14));
      CHECK(damped_next.fac_to_var[e][x] - msgs.fac_to_var[e][x] ==
            doctest::Approx((undamped_next.fac_to_var[e][x] - msgs.fac_to_var[e][x]) / 2)
                .epsilon(1e-14));
    }
  }
}

TEST_CASE("bp_run is exact on random trees") {
  std::mt19937_64 rng(107);
  for (int trial = 0; trial < 20; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 3);
    const auto g = random_tree(rng, 3 + static_cast<int>(rng() % 5), q);
    const auto res = bp_run(g);
    REQUIRE(res.converged);
    const auto exact = brute_force_partition(g);
    CHECK(std::abs(res.log_z_bethe - exact.log_z) < 1e-9);
    const auto marg = exact_inference_ve(g);
    for (int i = 0; i < g.num_variables(); ++i) {
      for (int x = 0; x < g.q; ++x) {
        CHECK(std::abs(res.beliefs.var[i][x] - marg.var_marginals[i][x]) < 1e-9);
      }
    }
  }
}

TEST_CASE("bp_run reproduces the Table I Bethe ratios at w=1") {
  SUBCASE("q=3") {
    const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
    const auto res = bp_run(g);
    REQUIRE(res.converged);
    const double z = brute_force_partition(g).z;
    CHECK(std::exp(res.log_z_bethe) / z == doctest::Approx(0.973).epsilon(0.001));
  }
  SUBCASE("q=4") {
    const auto g = build_coloring_factor_graph({16, fig6_edges(), 4, 1.0});
    const auto res = bp_run(g);
    REQUIRE(res.converged);
    const double z = std::exp(log_partition_ve(g));
    CHECK(std::exp(res.log_z_bethe) / z == doctest::Approx(1.040).epsilon(0.001));
  }
}

TEST_CASE("bp_run reports non-convergence as a status, not an error") {
  std::mt19937_64 rng(109);
  const auto g = random_loopy(rng, 6, 3, 3);
  BPConfig config;
  config.max_iterations = 1;
  const auto res = bp_run(g, perturbed_messages(g, 3), config);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 1);
  CHECK(res.residual > config.tolerance);
}

TEST_CASE("sequential schedule reaches a fixed point of the same equations") {
  std::mt19937_64 rng(113);
  const auto g = random_loopy(rng, 6, 3, 2);
  BPConfig config;
  config.schedule = BPConfig::Schedule::sequential;
  const auto res = bp_run(g, perturbed_messages(g, 11), config);
  REQUIRE(res.converged);
  CHECK(check_stationarity(g, res.messages, 1e-8).pass);
}

TEST_CASE("beliefs_from_messages: single factor with uniform messages gives b_a ∝ f_a") {
  std::mt19937_64 rng(127);
  FactorGraph g;
  g.q = 3;
  g.variables.resize(2);
  g.variables[0].h = {1.0, 1.0, 1.0};
  g.variables[1].h = {1.0, 1.0, 1.0};
  g.factors.push_back(testutil::random_factor(rng, {0, 1}, 3));
  g.build();
  const auto [beliefs, z] = beliefs_from_messages(g, uniform_messages(g));
  double fsum = 0.0;
  for (const auto& e : g.factors[0].entries) fsum += e.f;
  for (std::size_t e = 0; e < g.factors[0].entries.size(); ++e) {
    CHECK(beliefs.fac[0][e] ==
          doctest::Approx(g.factors[0].entries[e].f / fsum).epsilon(1e-12));
  }
}

TEST_CASE("at a fixed point the two b_i representations agree and are consistent") {
  std::mt19937_64 rng(131);
  const auto g = random_loopy(rng, 5, 3, 2);
  const auto res = bp_run(g, perturbed_messages(g, 5), BPConfig{});
  REQUIRE(res.converged);
  const auto [beliefs, z] = beliefs_from_messages(g, res.messages);
  // Second representation: b_i ∝ m_{i->a} m_{a->i} for every incident a.
  for (int e = 0; e < g.num_edges(); ++e) {
    const auto [i, a] = g.edges[e];
    for (int x = 0; x < g.q; ++x) {
      const double alt =
          res.messages.var_to_fac[e][x] * res.messages.fac_to_var[e][x] / z.z_edge[e];
      CHECK(std::abs(alt - beliefs.var[i][x]) < 1e-10);
    }
  }
  CHECK(local_consistency_error(g, beliefs) < 1e-9);
}

TEST_CASE("beliefs_from_messages raises on an all-zero normalizer") {
  // Two-variable factor whose support forces x_0 = 0 paired with a message
  // that puts no mass there.
  FactorGraph g;
  g.q = 2;
  g.variables.resize(2);
  g.variables[0].h = {1.0, 1.0};
  g.variables[1].h = {1.0, 1.0};
  FactorNode f;
  f.neighbors = {0, 1};
  f.entries = {{{0, 0}, 1.0}, {{0, 1}, 1.0}, {{1, 0}, 1.0}, {{1, 1}, 1.0}};
  g.factors.push_back(f);
  g.build();
  auto msgs = uniform_messages(g);
  msgs.var_to_fac[0] = {0.0, 0.0};
  CHECK_THROWS_AS(beliefs_from_messages(g, msgs), DegeneracyError);
}

TEST_CASE("bethe_free_energy equals -log Z on a tree with exact marginals") {
  std::mt19937_64 rng(137);
  const auto g = random_tree(rng, 6, 3);
  const auto marg = exact_inference_ve(g);
  PseudoMarginals beliefs{marg.var_marginals, marg.fac_marginals};
  const auto fe = bethe_free_energy(g, beliefs);
  CHECK(std::abs(-fe.f - marg.log_z) < 1e-9);
}

TEST_CASE("bethe_free_energy at the uniform coloring point matches the closed form") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  const auto [beliefs, z] = beliefs_from_messages(g, uniform_messages(g));
  const auto fe = bethe_free_energy(g, beliefs);
  // q^N (1-1/q)^{|E|} = 2^24 / 3^8 for q=3, N=16, |E|=24.
  const double expected = std::pow(2.0, 24) / std::pow(3.0, 8);
  CHECK(std::exp(-fe.f) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("bethe_free_energy on a factor-less graph degenerates to entropy sums") {
  FactorGraph g;
  g.q = 3;
  g.variables.resize(2);
  g.variables[0].h = {1.0, 2.0, 1.0};
  g.variables[1].h = {0.5, 0.5, 2.0};
  g.build();
  PseudoMarginals beliefs;
  beliefs.var = {{0.25, 0.5, 0.25}, {0.125, 0.125, 0.75}};
  beliefs.fac = {};
  const auto fe = bethe_free_energy(g, beliefs);
  double expected_u = 0.0, expected_h = 0.0;
  for (int i = 0; i < 2; ++i) {
    for (int x = 0; x < 3; ++x) {
      const double b = beliefs.var[i][x];
      expected_u -= b * std::log(g.variables[i].h[x]);
      // d_i = 0 so the entropy term carries weight -(d_i - 1) = +1.
      expected_h -= b * std::log(b);
    }
  }
  CHECK(fe.u == doctest::Approx(expected_u).epsilon(1e-12));
  CHECK(fe.h == doctest::Approx(expected_h).epsilon(1e-12));
}

TEST_CASE("bethe_free_energy rejects inconsistent pseudo-marginals") {
  std::mt19937_64 rng(139);
  const auto g = random_loopy(rng, 4, 3, 1);
  auto [beliefs, z] = beliefs_from_messages(g, uniform_messages(g));
  beliefs.var[0] = {0.8, 0.1, 0.1};  // breaks consistency with b_a
  CHECK_THROWS_AS(bethe_free_energy(g, beliefs, 1e-6), DegeneracyError);
}

TEST_CASE("stationary-point formula: tree gives log Z, fig6 gives the closed form") {
  std::mt19937_64 rng(149);
  const auto tree = random_tree(rng, 7, 3);
  const auto res = bp_run(tree);
  REQUIRE(res.converged);
  CHECK(std::abs(log_z_bethe_stationary(res.normalizers) -
                 brute_force_partition(tree).log_z) < 1e-9);

  const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  const auto [beliefs, z] = beliefs_from_messages(g, uniform_messages(g));
  CHECK(log_z_bethe_stationary(z) ==
        doctest::Approx(24 * std::log(2.0) - 8 * std::log(3.0)).epsilon(1e-10));
}

TEST_CASE("free energy and stationary formula agree at random fixed points") {
  std::mt19937_64 rng(151);
  int converged_count = 0;
  for (int trial = 0; trial < 200 && converged_count < 50; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 3);
    const auto g = random_loopy(rng, 3 + static_cast<int>(rng() % 4), q,
                                1 + static_cast<int>(rng() % 2));
    BPConfig config;
    config.damping = 0.2;
    config.tolerance = 1e-12;
    const auto res = bp_run(g, perturbed_messages(g, trial + 1), config);
    if (!res.converged) continue;
    ++converged_count;
    const auto fe = bethe_free_energy(g, res.beliefs, 1e-6);
    CHECK(std::abs(-fe.f - res.log_z_bethe) < 1e-9);
  }
  CHECK(converged_count >= 50);
}

TEST_CASE("check_stationarity: converged output passes, perturbed messages fail") {
  std::mt19937_64 rng(157);
  const auto g = random_loopy(rng, 5, 3, 2);
  const auto res = bp_run(g, uniform_messages(g), BPConfig{});
  REQUIRE(res.converged);
  CHECK(check_stationarity(g, res.messages, 1e-8).pass);

  auto bad = res.messages;
  bad.var_to_fac[0][0] += 0.1;
  double s = 0.0;
  for (double v : bad.var_to_fac[0]) s += v;
  for (double& v : bad.var_to_fac[0]) v /= s;
  CHECK_FALSE(check_stationarity(g, bad, 1e-8).pass);

  const auto coloring = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  CHECK(check_stationarity(coloring, uniform_messages(coloring), 1e-15).pass);
}

TEST_CASE("reparameterization identity on trees and small loopy graphs") {
  std::mt19937_64 rng(163);
  SUBCASE("tree") {
    const auto g = random_tree(rng, 6, 3);
    const auto res = bp_run(g);
    REQUIRE(res.converged);
    CHECK(check_reparameterization(g, res) < 1e-10);
  }
  SUBCASE("triangle coloring at the BP fixed point") {
    const auto g = triangle_coloring(3);
    const auto res = bp_run(g);
    REQUIRE(res.converged);
    CHECK(check_reparameterization(g, res) < 1e-8);
  }
  SUBCASE("budget error") {
    const auto g = build_coloring_factor_graph({16, fig6_edges(), 9, 1.0});
    BetheResult fake;
    CHECK_THROWS_AS(check_reparameterization(g, fake), BudgetError);
  }
}

TEST_CASE("reparameterization identity on the fig6 q=3 model") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  const auto res = bp_run(g);
  REQUIRE(res.converged);
  CHECK(check_reparameterization(g, res, {}, 0) < 1e-6);
}

}  // TEST_SUITE
