#include "ptrm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ptrm/rng.hpp"
#include "ptrm/tensor.hpp"

namespace ptrm {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

void check_k(const CorrectnessMatrix& m, std::size_t k) {
  m.validate();
  require(k >= 1 && k <= m.rollouts, "metric: k must be in [1, rollouts]");
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void normalize(std::vector<double>& v) {
  const double n = std::sqrt(dot(v, v));
  if (n > 0)
    for (auto& x : v) x /= n;
}

}  // namespace

double cell_accuracy(std::span<const int> predicted, std::span<const int> truth, int pad_id) {
  require(predicted.size() == truth.size(), "cell_accuracy: length mismatch");
  std::size_t total = 0, hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == pad_id) continue;
    ++total;
    hits += predicted[i] == truth[i];
  }
  return total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total);
}

std::uint64_t hash_answer(std::span<const int> tokens) {
  std::uint64_t h = 0xCBF29CE484222325ull ^ tokens.size();
  for (int t : tokens) h = splitmix64(h ^ static_cast<std::uint64_t>(static_cast<std::uint32_t>(t)));
  return h;
}

CorrectnessMatrix::CorrectnessMatrix(std::size_t p, std::size_t k)
    : puzzles(p), rollouts(k), correct(p * k, 0), q(p * k, 0.0), hashes(p * k, 0) {}

void CorrectnessMatrix::validate() const {
  const std::size_t n = puzzles * rollouts;
  require(correct.size() == n && q.size() == n && hashes.size() == n,
          "CorrectnessMatrix: arrays must all have P*K entries");
  require(answers.empty() || answers.size() == n, "CorrectnessMatrix: answers must be empty or P*K");
}

bool puzzle_pass(const CorrectnessMatrix& m, std::size_t p, std::size_t k) {
  for (std::size_t j = 0; j < k; ++j)
    if (m.is_correct(p, j)) return true;
  return false;
}

std::size_t puzzle_best_q_index(const CorrectnessMatrix& m, std::size_t p, std::size_t k) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (m.q[m.index(p, j)] > m.q[m.index(p, best)]) best = j;
  return best;
}

std::size_t puzzle_mode_index(const CorrectnessMatrix& m, std::size_t p, std::size_t k) {
  // Group rollouts by answer identity: hash first, sequence equality to
  // split genuine collisions.
  struct Group {
    std::size_t first;
    std::size_t count;
  };
  std::vector<Group> groups;
  const bool have_answers = !m.answers.empty();
  std::map<std::uint64_t, std::vector<std::size_t>> by_hash;  // hash -> group ids
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t idx = m.index(p, j);
    auto& bucket = by_hash[m.hashes[idx]];
    bool placed = false;
    for (std::size_t g : bucket) {
      if (!have_answers || m.answers[m.index(p, groups[g].first)] == m.answers[idx]) {
        ++groups[g].count;
        placed = true;
        break;
      }
    }
    if (!placed) {
      bucket.push_back(groups.size());
      groups.push_back({j, 1});
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < groups.size(); ++g) {
    const auto& cand = groups[g];
    const auto& cur = groups[best];
    if (cand.count != cur.count) {
      if (cand.count > cur.count) best = g;
      continue;
    }
    const auto ci = m.index(p, cand.first), bi = m.index(p, cur.first);
    const bool smaller = have_answers ? m.answers[ci] < m.answers[bi] : m.hashes[ci] < m.hashes[bi];
    if (smaller) best = g;
  }
  return groups[best].first;
}

double pass_at_k(const CorrectnessMatrix& m, std::size_t k) {
  check_k(m, k);
  if (m.puzzles == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < m.puzzles; ++p) hits += puzzle_pass(m, p, k);
  return static_cast<double>(hits) / static_cast<double>(m.puzzles);
}

double best_q_at_k(const CorrectnessMatrix& m, std::size_t k) {
  check_k(m, k);
  if (m.puzzles == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < m.puzzles; ++p) hits += m.is_correct(p, puzzle_best_q_index(m, p, k));
  return static_cast<double>(hits) / static_cast<double>(m.puzzles);
}

double mode_at_k(const CorrectnessMatrix& m, std::size_t k) {
  check_k(m, k);
  if (m.puzzles == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t p = 0; p < m.puzzles; ++p) hits += m.is_correct(p, puzzle_mode_index(m, p, k));
  return static_cast<double>(hits) / static_cast<double>(m.puzzles);
}

TrajectoryCurves aggregate_trajectories(std::span<const TrajectoryLog> logs) {
  TrajectoryCurves out;
  if (logs.empty()) return out;
  const std::size_t steps = logs.front().q.size();
  for (const auto& log : logs) {
    require(log.q.size() == steps && log.cell_accuracy.size() == steps,
            "aggregate_trajectories: logs must share the same length");
  }
  auto fill = [&](bool want, std::vector<double>& q, std::vector<double>& cell, std::size_t& count) {
    for (const auto& log : logs) count += log.correct == want;
    if (count == 0) return;
    q.assign(steps, 0.0);
    cell.assign(steps, 0.0);
    for (const auto& log : logs) {
      if (log.correct != want) continue;
      for (std::size_t t = 0; t < steps; ++t) {
        q[t] += log.q[t];
        cell[t] += log.cell_accuracy[t];
      }
    }
    for (std::size_t t = 0; t < steps; ++t) {
      q[t] /= static_cast<double>(count);
      cell[t] /= static_cast<double>(count);
    }
  };
  fill(true, out.correct_q, out.correct_cell_accuracy, out.correct_count);
  fill(false, out.incorrect_q, out.incorrect_cell_accuracy, out.incorrect_count);
  return out;
}

PcaProjection pca_project(const std::vector<std::vector<double>>& latents, const PcaOptions& opts) {
  require(latents.size() >= 3, "pca_project: need at least 3 latents");
  const std::size_t n = latents.size(), d = latents.front().size();
  require(d >= 1, "pca_project: latents must be non-empty");
  for (const auto& v : latents) require(v.size() == d, "pca_project: latents must share a dimension");

  PcaProjection out;
  auto& plane = out.plane;
  plane.mean.assign(d, 0.0);
  for (const auto& v : latents)
    for (std::size_t j = 0; j < d; ++j) plane.mean[j] += v[j];
  for (auto& m : plane.mean) m /= static_cast<double>(n);
  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      centered[i][j] = latents[i][j] - plane.mean[j];
      out.total_variance += centered[i][j] * centered[i][j];
    }
  out.total_variance /= static_cast<double>(n);

  // C v = X^T (X v) / n, with the first direction deflated out for the second.
  auto apply_cov = [&](const std::vector<double>& v, const std::vector<double>* deflate, double lambda) {
    std::vector<double> w(d, 0.0);
    for (const auto& row : centered) {
      const double s = dot(row, v);
      for (std::size_t j = 0; j < d; ++j) w[j] += s * row[j];
    }
    for (auto& x : w) x /= static_cast<double>(n);
    if (deflate) {
      const double s = lambda * dot(*deflate, v);
      for (std::size_t j = 0; j < d; ++j) w[j] -= s * (*deflate)[j];
    }
    return w;
  };

  const double scale = std::max(out.total_variance, 1e-300);
  for (int which = 0; which < 2; ++which) {
    const std::vector<double>* deflate = which == 1 ? &plane.directions[0] : nullptr;
    std::vector<double> v(d);
    CounterRng rng{0x9CAull, static_cast<std::uint64_t>(which)};
    for (auto& x : v) x = rng.normal();
    if (deflate) {
      const double s = dot(v, *deflate);
      for (std::size_t j = 0; j < d; ++j) v[j] -= s * (*deflate)[j];
    }
    normalize(v);
    double lambda = 0.0;
    for (int it = 0; it < opts.max_iterations; ++it) {
      auto w = apply_cov(v, deflate, plane.variance[0]);
      lambda = dot(v, w);
      double residual = 0.0;
      for (std::size_t j = 0; j < d; ++j) residual += (w[j] - lambda * v[j]) * (w[j] - lambda * v[j]);
      if (dot(w, w) <= 1e-30 * scale * scale) {
        lambda = 0.0;
        break;
      }
      if (std::sqrt(residual) <= opts.tolerance * scale) break;
      v = std::move(w);
      if (deflate) {
        const double s = dot(v, *deflate);
        for (std::size_t j = 0; j < d; ++j) v[j] -= s * (*deflate)[j];
      }
      normalize(v);
    }
    if (lambda <= 0.0) {
      // No variance left: pick any unit vector orthogonal to the first one.
      lambda = 0.0;
      for (std::size_t axis = 0; axis < d; ++axis) {
        std::vector<double> e(d, 0.0);
        e[axis] = 1.0;
        if (deflate) {
          const double s = dot(e, *deflate);
          for (std::size_t j = 0; j < d; ++j) e[j] -= s * (*deflate)[j];
        }
        if (dot(e, e) > 1e-6) {
          normalize(e);
          v = std::move(e);
          break;
        }
      }
    }
    // Sign convention: first non-negligible component positive.
    for (double x : v) {
      if (std::abs(x) > 1e-12) {
        if (x < 0)
          for (auto& y : v) y = -y;
        break;
      }
    }
    plane.directions[which] = std::move(v);
    plane.variance[which] = lambda;
  }

  out.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (plane.variance[0] == 0.0) {
      out.coords[i] = {0.0, 0.0};
      continue;
    }
    out.coords[i] = {dot(centered[i], plane.directions[0]),
                     plane.variance[1] == 0.0 ? 0.0 : dot(centered[i], plane.directions[1])};
  }
  return out;
}

double cost_estimate(double seconds, double hourly_rate) {
  require(seconds >= 0.0 && hourly_rate >= 0.0, "cost_estimate: inputs must be non-negative");
  return (seconds / 3600.0) * hourly_rate;  // hours first: exact for both reference values
}

}  // namespace ptrm
