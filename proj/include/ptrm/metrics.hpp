#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace ptrm {

/// Fraction of non-pad cells predicted correctly; 1.0 when every cell is pad.
double cell_accuracy(std::span<const int> predicted, std::span<const int> truth, int pad_id = 0);

std::uint64_t hash_answer(std::span<const int> tokens);

/// Per-puzzle, per-rollout outcomes in rollout-index order.
struct CorrectnessMatrix {
  std::size_t puzzles = 0;
  std::size_t rollouts = 0;
  std::vector<char> correct;                 // [P*K]
  std::vector<double> q;                     // [P*K]
  std::vector<std::uint64_t> hashes;         // [P*K]
  std::vector<std::vector<int>> answers;     // [P*K], optional; confirms hash matches

  CorrectnessMatrix() = default;
  CorrectnessMatrix(std::size_t p, std::size_t k);

  std::size_t index(std::size_t p, std::size_t k) const { return p * rollouts + k; }
  bool is_correct(std::size_t p, std::size_t k) const { return correct[index(p, k)] != 0; }
  void validate() const;
};

/// Mean over puzzles of [any of the first k rollouts correct].
double pass_at_k(const CorrectnessMatrix& m, std::size_t k);
/// Mean over puzzles of the correctness of the highest-q rollout among the
/// first k (ties: smallest index).
double best_q_at_k(const CorrectnessMatrix& m, std::size_t k);
/// Mean over puzzles of the correctness of the most frequent answer among
/// the first k (ties: lexicographically smallest answer, or smallest hash
/// when answers are absent).
double mode_at_k(const CorrectnessMatrix& m, std::size_t k);

/// Per-puzzle helpers behind the aggregate rates.
bool puzzle_pass(const CorrectnessMatrix& m, std::size_t p, std::size_t k);
std::size_t puzzle_best_q_index(const CorrectnessMatrix& m, std::size_t p, std::size_t k);
std::size_t puzzle_mode_index(const CorrectnessMatrix& m, std::size_t p, std::size_t k);

struct TrajectoryLog {
  std::vector<double> q;
  std::vector<double> cell_accuracy;
  std::vector<std::vector<double>> latents;  // optional y_t snapshots, flattened
  bool correct = false;
};

struct TrajectoryCurves {
  std::vector<double> correct_q;
  std::vector<double> correct_cell_accuracy;
  std::vector<double> incorrect_q;
  std::vector<double> incorrect_cell_accuracy;
  std::size_t correct_count = 0;
  std::size_t incorrect_count = 0;
};

/// Per-step means grouped by final correctness. Empty groups yield empty
/// curves.
TrajectoryCurves aggregate_trajectories(std::span<const TrajectoryLog> logs);

struct PcaPlane {
  std::vector<double> mean;
  std::array<std::vector<double>, 2> directions;
  std::array<double, 2> variance{0.0, 0.0};  // population covariance eigenvalues
};

struct PcaOptions {
  int max_iterations = 1000;
  double tolerance = 1e-12;  // on the eigen-residual, relative to the leading variance
};

struct PcaProjection {
  PcaPlane plane;
  std::vector<std::array<double, 2>> coords;
  double total_variance = 0.0;
};

/// Top-2 principal plane by power iteration with deflation.
PcaProjection pca_project(const std::vector<std::vector<double>>& latents, const PcaOptions& opts = {});

/// Dollar cost of `seconds` of accelerator time at `hourly_rate`.
double cost_estimate(double seconds, double hourly_rate = 2.50);

}  // namespace ptrm
