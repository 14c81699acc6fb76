#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ptrm/inference.hpp"
#include "ptrm/metrics.hpp"

namespace ptrm {

/// Correctness matrix (with answers for collision-checked mode@K) from
/// evaluation outcomes.
CorrectnessMatrix correctness_matrix(std::span<const PuzzleOutcome> outcomes);

struct SweepRow {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  double deterministic = 0.0;
  double pass = 0.0;
  double best_q = 0.0;
  double mode = 0.0;
};

struct SweepSummary {
  double sigma = 0.0;
  double pass_mean = 0.0, pass_spread = 0.0;
  double best_q_mean = 0.0, best_q_spread = 0.0;
  double mode_mean = 0.0, mode_spread = 0.0;
};

struct SweepTable {
  std::vector<SweepRow> rows;          // sigma-major, then seed
  std::vector<SweepSummary> summary;   // one per sigma; spread = max - min over seeds
  double deterministic = 0.0;
};

struct SweepOptions {
  int rollouts = 32;
  int depth = 1;
  std::vector<double> sigmas;
  std::vector<std::uint64_t> seeds;
  int workers = 1;
};

/// PTRM at every (sigma, seed); pass@K, best-Q@K and mode@K per row.
template <typename T>
SweepTable sigma_sweep(const ModelParams<T>& params, std::span<const PuzzleInstance> puzzles,
                       const SweepOptions& opts);

}  // namespace ptrm
