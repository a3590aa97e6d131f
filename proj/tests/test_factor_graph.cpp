#include <doctest.h>

#include <cmath>
#include <random>

#include "loopcalc/errors.hpp"
#include "loopcalc/exact.hpp"
#include "loopcalc/factor_graph.hpp"
#include "loopcalc/model_io.hpp"

#include "helpers.hpp"

using namespace loopcalc;
using testutil::fig6_edges;
using testutil::random_loopy;
using testutil::random_tree;
using testutil::triangle_coloring;

TEST_SUITE("factor_graph") {

TEST_CASE("validate accepts the triangle coloring instance") {
  CHECK(validate(triangle_coloring(3)).empty());
}

TEST_CASE("validate flags a degree-1 factor") {
  FactorGraph g;
  g.q = 2;
  g.variables.resize(2);
  g.variables[0].h = {1.0, 1.0};
  g.variables[1].h = {1.0, 1.0};
  FactorNode f;
  f.neighbors = {0};
  f.entries = {{{0}, 1.0}, {{1}, 1.0}};
  g.factors.push_back(f);
  g.build();
  const auto violations = validate(g);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0] == "factor 0: d_a=1 < 2");
}

TEST_CASE("validate flags missing support coverage") {
  // q=3 factor whose support never lets x_0 take the value 2.
  FactorGraph g;
  g.q = 3;
  g.variables.resize(2);
  g.variables[0].h = {1.0, 1.0, 1.0};
  g.variables[1].h = {1.0, 1.0, 1.0};
  FactorNode f;
  f.neighbors = {0, 1};
  for (Symbol x = 0; x < 2; ++x) {
    for (Symbol y = 0; y < 3; ++y) f.entries.push_back({{x, y}, 1.0});
  }
  g.factors.push_back(f);
  g.build();
  const auto violations = validate(g);
  REQUIRE(violations.size() == 1);
  CHECK(violations[0].find("support S_a excludes x=2") != std::string::npos);
}

TEST_CASE("brute force: one free variable") {
  FactorGraph g;
  g.q = 3;
  g.variables.resize(1);
  g.variables[0].h = {1.0, 1.0, 1.0};
  g.build();
  CHECK(brute_force_partition(g).z == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(brute_force_partition_serial(g).z == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("brute force: triangle proper coloring has 6 colorings") {
  const auto g = triangle_coloring(3);
  CHECK(brute_force_partition(g).z == doctest::Approx(6.0).epsilon(1e-12));
  CHECK(brute_force_partition_serial(g).z == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("brute force: fig6 q=3 proper colorings") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 3, 1.0});
  const auto r = brute_force_partition(g);
  CHECK(r.z == doctest::Approx(2628.0).epsilon(1e-9));
}

TEST_CASE("brute force budget error signals elimination") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 9, 1.0});
  CHECK_THROWS_AS(brute_force_partition(g), BudgetError);
}

TEST_CASE("variable elimination matches Table I partition values") {
  const auto g9 = build_coloring_factor_graph({16, fig6_edges(), 9, 1.0});
  CHECK(std::exp(log_partition_ve(g9)) ==
        doctest::Approx(108384232602240.0).epsilon(1e-9));

  const auto g4 = build_coloring_factor_graph({16, fig6_edges(), 4, 1.5});
  CHECK(std::exp(log_partition_ve(g4)) == doctest::Approx(23205262.5).epsilon(1e-9));
}

TEST_CASE("variable elimination agrees with brute force on random instances") {
  std::mt19937_64 rng(20240811);
  for (int trial = 0; trial < 30; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 3);
    const int n = 3 + static_cast<int>(rng() % 4);
    const auto g = random_loopy(rng, n, q, 1 + static_cast<int>(rng() % 2),
                                trial % 3 == 0, trial % 4 == 0 ? 0.2 : 0.0);
    const auto brute = brute_force_partition(g);
    const double ve = log_partition_ve(g);
    CHECK(std::abs(ve - brute.log_z) < 1e-9 * std::max(1.0, std::abs(brute.log_z)));
    CHECK(brute_force_partition_serial(g).log_z ==
          doctest::Approx(brute.log_z).epsilon(1e-12));
  }
}

TEST_CASE("explicit elimination order is honored and validated") {
  std::mt19937_64 rng(7);
  const auto g = random_loopy(rng, 5, 3, 2);
  const double auto_order = log_partition_ve(g);
  const double explicit_order = log_partition_ve(g, {4, 3, 2, 1, 0});
  CHECK(auto_order == doctest::Approx(explicit_order).epsilon(1e-12));
  CHECK_THROWS_AS(log_partition_ve(g, {0, 1}), InputError);
  CHECK_THROWS_AS(log_partition_ve(g, {0, 0, 1, 2, 3}), InputError);
}

TEST_CASE("elimination memory budget names the clique size") {
  const auto g = build_coloring_factor_graph({16, fig6_edges(), 9, 1.0});
  ExactBudget tiny;
  tiny.max_table_entries = 10;
  try {
    log_partition_ve(g, {}, tiny);
    FAIL("expected BudgetError");
  } catch (const BudgetError& e) {
    CHECK(std::string(e.what()).find("clique") != std::string::npos);
  }
}

TEST_CASE("exact marginals normalize and match brute-force marginals") {
  std::mt19937_64 rng(99);
  const auto g = random_loopy(rng, 5, 3, 2);
  const auto res = exact_inference_ve(g);
  // Normalization within 1e-12.
  for (const auto& m : res.var_marginals) {
    double s = 0.0;
    for (double v : m) s += v;
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
  // Against direct enumeration.
  const auto z = brute_force_partition(g);
  std::vector<std::vector<double>> direct(g.num_variables(),
                                          std::vector<double>(g.q, 0.0));
  std::vector<Symbol> x(g.num_variables(), 0);
  while (true) {
    double w = 1.0;
    for (int i = 0; i < g.num_variables(); ++i) w *= g.variables[i].h[x[i]];
    for (int a = 0; a < g.num_factors(); ++a) w *= g.table_value(a, x);
    for (int i = 0; i < g.num_variables(); ++i) direct[i][x[i]] += w;
    int k = 0;
    while (k < g.num_variables() && ++x[k] == g.q) x[k++] = 0;
    if (k == g.num_variables()) break;
  }
  for (int i = 0; i < g.num_variables(); ++i) {
    for (int v = 0; v < g.q; ++v) {
      CHECK(res.var_marginals[i][v] == doctest::Approx(direct[i][v] / z.z).epsilon(1e-9));
    }
  }
}

TEST_CASE("tree joint from exact marginals reproduces the true joint") {
  std::mt19937_64 rng(4242);
  for (int trial = 0; trial < 10; ++trial) {
    const int q = 2 + static_cast<int>(rng() % 3);
    const auto g = random_tree(rng, 3 + static_cast<int>(rng() % 4), q);
    const auto exact = exact_inference_ve(g);
    PseudoMarginals beliefs{exact.var_marginals, exact.fac_marginals};
    const auto joint = tree_joint_from_marginals(g, beliefs);

    const auto z = brute_force_partition(g);
    std::vector<Symbol> x(g.num_variables(), 0);
    double total = 0.0;
    while (true) {
      double w = 1.0;
      for (int i = 0; i < g.num_variables(); ++i) w *= g.variables[i].h[x[i]];
      for (int a = 0; a < g.num_factors(); ++a) w *= g.table_value(a, x);
      const double expected = w / z.z;
      const double got = joint(x);
      total += got;
      if (expected > 1e-14) {
        CHECK(std::abs(got - expected) < 1e-10 * expected);
      }
      int k = 0;
      while (k < g.num_variables() && ++x[k] == g.q) x[k++] = 0;
      if (k == g.num_variables()) break;
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("tree joint collapses to b_a on a single-edge graph") {
  std::mt19937_64 rng(5);
  const auto g = random_tree(rng, 2, 3);
  const auto exact = exact_inference_ve(g);
  PseudoMarginals beliefs{exact.var_marginals, exact.fac_marginals};
  const auto joint = tree_joint_from_marginals(g, beliefs);
  for (std::size_t e = 0; e < g.factors[0].entries.size(); ++e) {
    std::vector<Symbol> x(2);
    x[g.factors[0].neighbors[0]] = g.factors[0].entries[e].x[0];
    x[g.factors[0].neighbors[1]] = g.factors[0].entries[e].x[1];
    CHECK(joint(x) == doctest::Approx(exact.fac_marginals[0][e]).epsilon(1e-12));
  }
}

TEST_CASE("tree joint refuses non-tree input even with consistent beliefs") {
  // The classic triangle counterexample lies in L(G) but the op gates on the
  // graph being cycle-free.
  FactorGraph g;
  g.q = 2;
  g.variables.resize(3);
  for (auto& v : g.variables) v.h = {1.0, 1.0};
  for (int i = 0; i < 3; ++i) {
    FactorNode f;
    f.neighbors = {i, (i + 1) % 3};
    f.entries = {{{0, 0}, 1.0}, {{0, 1}, 1.0}, {{1, 0}, 1.0}, {{1, 1}, 1.0}};
    g.factors.push_back(f);
  }
  g.build();
  PseudoMarginals beliefs;
  beliefs.var.assign(3, {0.5, 0.5});
  beliefs.fac.assign(3, {0.0, 0.5, 0.5, 0.0});
  CHECK(local_consistency_error(g, beliefs) < 1e-15);
  CHECK_THROWS_AS(tree_joint_from_marginals(g, beliefs), InputError);
}

TEST_CASE("model JSON round trip") {
  std::mt19937_64 rng(31337);
  const auto g = random_loopy(rng, 4, 3, 1, true, 0.15);
  const auto text = model_to_json_text(g);
  const auto g2 = model_from_json_text(text);
  CHECK(g2.q == g.q);
  CHECK(g2.num_variables() == g.num_variables());
  CHECK(g2.num_factors() == g.num_factors());
  CHECK(g2.edges == g.edges);
  const auto z1 = brute_force_partition(g);
  const auto z2 = brute_force_partition(g2);
  CHECK(z1.log_z == doctest::Approx(z2.log_z).epsilon(1e-15));
}

TEST_CASE("malformed model JSON raises InputError") {
  CHECK_THROWS_AS(model_from_json_text("{\"q\": 3, \"variables\": ["), InputError);
  CHECK_THROWS_AS(model_from_json_text("{\"q\": 3}"), InputError);
}

}  // TEST_SUITE
