#pragma once

#include <random>
#include <set>
#include <vector>

#include "loopcalc/coloring.hpp"
#include "loopcalc/factor_graph.hpp"

namespace testutil {

using namespace loopcalc;

inline FactorGraph triangle_coloring(int q, double w = 1.0) {
  return build_coloring_factor_graph({3, {{0, 1}, {1, 2}, {2, 0}}, q, w});
}

inline FactorNode random_factor(std::mt19937_64& rng, const std::vector<int>& neighbors, int q,
                                double drop_prob = 0.0) {
  std::uniform_real_distribution<double> val(0.4, 1.8);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  FactorNode f;
  f.neighbors = neighbors;
  const int d = static_cast<int>(neighbors.size());
  while (true) {
    f.entries.clear();
    std::vector<Symbol> x(d, 0);
    while (true) {
      if (!(drop_prob > 0.0) || coin(rng) >= drop_prob) {
        f.entries.push_back({x, val(rng)});
      }
      int k = 0;
      while (k < d && ++x[k] == q) x[k++] = 0;
      if (k == d) break;
    }
    // Keep the support-coverage assumption: every (position, symbol) pair hit.
    bool covered = true;
    for (int k = 0; k < d && covered; ++k) {
      std::set<Symbol> seen;
      for (const auto& e : f.entries) seen.insert(e.x[k]);
      covered = static_cast<int>(seen.size()) == q;
    }
    if (covered) return f;
  }
}

inline std::vector<double> random_h(std::mt19937_64& rng, int q) {
  std::uniform_real_distribution<double> val(0.5, 1.5);
  std::vector<double> h(q);
  for (double& v : h) v = val(rng);
  return h;
}

inline FactorGraph random_tree(std::mt19937_64& rng, int n_vars, int q) {
  FactorGraph g;
  g.q = q;
  g.variables.resize(n_vars);
  for (auto& v : g.variables) v.h = random_h(rng, q);
  for (int i = 1; i < n_vars; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    g.factors.push_back(random_factor(rng, {pick(rng), i}, q));
  }
  g.build();
  return g;
}

// Random connected graph: a spanning tree plus extra pairwise factors and
// optionally one ternary factor. |E| stays small enough for exhaustive loop
// enumeration.
inline FactorGraph random_loopy(std::mt19937_64& rng, int n_vars, int q, int extra_pairs,
                                bool add_ternary = false, double drop_prob = 0.0) {
  FactorGraph g;
  g.q = q;
  g.variables.resize(n_vars);
  for (auto& v : g.variables) v.h = random_h(rng, q);
  std::set<std::pair<int, int>> used;
  for (int i = 1; i < n_vars; ++i) {
    std::uniform_int_distribution<int> pick(0, i - 1);
    const int p = pick(rng);
    used.insert({std::min(p, i), std::max(p, i)});
    g.factors.push_back(random_factor(rng, {p, i}, q, drop_prob));
  }
  std::uniform_int_distribution<int> pick(0, n_vars - 1);
  const int available = n_vars * (n_vars - 1) / 2 - (n_vars - 1);
  extra_pairs = std::min(extra_pairs, available);
  for (int added = 0; added < extra_pairs;) {
    const int u = pick(rng);
    const int v = pick(rng);
    if (u == v) continue;
    const auto key = std::make_pair(std::min(u, v), std::max(u, v));
    if (used.count(key)) continue;
    used.insert(key);
    g.factors.push_back(random_factor(rng, {u, v}, q, drop_prob));
    ++added;
  }
  if (add_ternary && n_vars >= 3) {
    std::vector<int> ids{0, 1, 2};
    g.factors.push_back(random_factor(rng, ids, q, drop_prob));
  }
  g.build();
  return g;
}

inline FactorGraph random_single_cycle(std::mt19937_64& rng, int len, int q) {
  FactorGraph g;
  g.q = q;
  g.variables.resize(len);
  for (auto& v : g.variables) v.h = random_h(rng, q);
  for (int i = 0; i < len; ++i) {
    g.factors.push_back(random_factor(rng, {i, (i + 1) % len}, q));
  }
  g.build();
  return g;
}

inline std::vector<std::pair<int, int>> fig6_edges() {
  return {{1, 5}, {14, 13}, {11, 2}, {3, 13}, {7, 15}, {11, 5}, {6, 5},  {11, 8},
          {10, 14}, {9, 3}, {6, 15}, {14, 12}, {4, 15}, {0, 4}, {2, 10}, {1, 9},
          {8, 7},  {6, 7}, {8, 12}, {12, 0},  {13, 2}, {10, 1}, {3, 4}, {0, 9}};
}

}  // namespace testutil
