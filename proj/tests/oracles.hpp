#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance runner. None of them calls into the library code they check.

#include <algorithm>
#include <array>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "ptrm/metrics.hpp"
#include "ptrm/puzzles.hpp"
#include "ptrm/rng.hpp"

namespace ptrm::testing {

// Random fixture: answers drawn from a small pool (so modes and ties occur),
// q from a coarse grid (so best-q ties occur), truth is pool[0].
inline CorrectnessMatrix random_matrix(CounterRng& rng, bool with_answers = true) {
  const std::size_t p = 1 + rng.below(12), k = 1 + rng.below(16);
  CorrectnessMatrix m(p, k);
  const std::size_t pool_size = 1 + rng.below(4);
  for (std::size_t i = 0; i < p; ++i) {
    std::vector<std::vector<int>> pool;
    for (std::size_t a = 0; a < pool_size; ++a) pool.push_back({int(rng.below(3)), int(a), int(rng.below(2))});
    for (std::size_t j = 0; j < k; ++j) {
      const auto pick = rng.below(pool_size);
      const auto idx = m.index(i, j);
      m.correct[idx] = pick == 0;
      m.q[idx] = double(rng.below(5)) - 2.0;
      m.hashes[idx] = hash_answer(pool[pick]);
      if (with_answers) m.answers.push_back(pool[pick]);
    }
  }
  return m;
}

inline double oracle_pass(const CorrectnessMatrix& m, std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < m.puzzles; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < k; ++j) any = any || m.correct[i * m.rollouts + j];
    hits += any;
  }
  return hits / double(m.puzzles);
}

inline double oracle_best_q(const CorrectnessMatrix& m, std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < m.puzzles; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (m.q[i * m.rollouts + j] > m.q[i * m.rollouts + best]) best = j;
    hits += m.correct[i * m.rollouts + best];
  }
  return hits / double(m.puzzles);
}

inline double oracle_mode(const CorrectnessMatrix& m, std::size_t k) {
  double hits = 0;
  for (std::size_t i = 0; i < m.puzzles; ++i) {
    std::map<std::vector<int>, std::pair<int, bool>> counts;
    for (std::size_t j = 0; j < k; ++j) {
      auto& e = counts[m.answers[i * m.rollouts + j]];
      ++e.first;
      e.second = m.correct[i * m.rollouts + j];
    }
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it)
      if (it->second.first > best->second.first) best = it;
    hits += best->second.second;
  }
  return hits / double(m.puzzles);
}

inline std::vector<std::vector<double>> random_cloud(CounterRng& rng, std::size_t n, std::size_t d, bool anisotropic) {
  std::vector<double> scale(d, 1.0);
  if (anisotropic)
    for (auto& s : scale) s = 0.2 + 3.0 * rng.uniform();
  std::vector<std::vector<double>> pts(n, std::vector<double>(d));
  for (auto& p : pts)
    for (std::size_t j = 0; j < d; ++j) p[j] = 5.0 + scale[j] * rng.normal();
  return pts;
}

// Independent solution counter: most-constrained-cell search, no shared code
// with the library solver.
inline std::size_t count_solutions(std::vector<int> g, int br, int bc, std::size_t limit) {
  const int n = br * bc;
  int best = -1, best_options = n + 1;
  std::vector<int> best_cands;
  for (int cell = 0; cell < n * n; ++cell) {
    if (g[cell]) continue;
    const int r = cell / n, c = cell % n;
    std::vector<int> cands;
    for (int d = 1; d <= n; ++d) {
      bool ok = true;
      for (int k = 0; k < n && ok; ++k) ok = g[r * n + k] != d && g[k * n + c] != d;
      const int r0 = r / br * br, c0 = c / bc * bc;
      for (int i = 0; i < br && ok; ++i)
        for (int j = 0; j < bc && ok; ++j) ok = g[(r0 + i) * n + c0 + j] != d;
      if (ok) cands.push_back(d);
    }
    if (static_cast<int>(cands.size()) < best_options) {
      best = cell;
      best_options = static_cast<int>(cands.size());
      best_cands = cands;
    }
  }
  if (best < 0) return 1;
  std::size_t total = 0;
  for (int d : best_cands) {
    g[best] = d;
    total += count_solutions(g, br, bc, limit - total);
    if (total >= limit) break;
  }
  return total;
}

inline bool rows_cols_boxes_ok(const std::vector<int>& g, int br, int bc) {
  const int n = br * bc;
  for (int u = 0; u < n; ++u) {
    std::set<int> row, col, box;
    for (int v = 0; v < n; ++v) {
      row.insert(g[u * n + v]);
      col.insert(g[v * n + u]);
      const int r = u / (n / bc) * br + v / bc, c = u % (n / bc) * bc + v % bc;
      box.insert(g[r * n + c]);
    }
    if (row.size() != std::size_t(n) || col.size() != std::size_t(n) || box.size() != std::size_t(n)) return false;
  }
  return true;
}

inline std::vector<int> digits_of(const std::vector<int>& tokens, std::size_t cells) {
  std::vector<int> g(cells);
  for (std::size_t i = 0; i < cells; ++i) g[i] = tokens[i] == vocab::kBlank ? 0 : vocab::token_digit(tokens[i]);
  return g;
}

inline std::optional<std::vector<int>> bfs_path(const std::vector<int>& t, int rows, int cols) {
  const int cells = rows * cols;
  const int start = int(std::find(t.begin(), t.begin() + cells, vocab::kStart) - t.begin());
  const int goal = int(std::find(t.begin(), t.begin() + cells, vocab::kGoal) - t.begin());
  std::vector<int> parent(cells, -2);
  std::deque<int> queue{start};
  parent[start] = -1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    const int r = u / cols, c = u % cols;
    const std::array<std::pair<int, int>, 4> nb{{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
    for (auto [nr, nc] : nb) {
      if (nr < 0 || nr >= rows || nc < 0 || nc >= cols) continue;
      const int v = nr * cols + nc;
      if (t[v] == vocab::kWall || parent[v] != -2) continue;
      parent[v] = u;
      queue.push_back(v);
    }
  }
  if (parent[goal] == -2) return std::nullopt;
  std::vector<int> path;
  for (int v = goal; v != -1; v = parent[v]) path.push_back(v);
  std::reverse(path.begin(), path.end());
  return path;
}

// Counts full 4x4 grids by trying every choice of four row permutations.
inline std::size_t enumerate_4x4_solutions() {
  std::vector<std::array<int, 4>> perms;
  std::array<int, 4> p{1, 2, 3, 4};
  do perms.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  std::size_t count = 0;
  for (const auto& a : perms)
    for (const auto& b : perms)
      for (const auto& c : perms)
        for (const auto& d : perms) {
          std::vector<int> g;
          for (const auto* row : {&a, &b, &c, &d}) g.insert(g.end(), row->begin(), row->end());
          count += rows_cols_boxes_ok(g, 2, 2);
        }
  return count;
}

}  // namespace ptrm::testing
