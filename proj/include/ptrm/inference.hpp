#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptrm/model.hpp"
#include "ptrm/puzzles.hpp"
#include "ptrm/rng.hpp"

namespace ptrm {

enum class Selector { best_q, mode, oracle };

std::string to_string(Selector s);
Selector parse_selector(const std::string& s);

struct InferenceConfig {
  int rollouts = 1;           // K
  int depth = 1;              // D, supervision steps at inference
  double sigma = 0.0;         // std of the Gaussian added to z
  Selector selector = Selector::best_q;
  std::uint64_t master_seed = 0;
  bool trace = false;
  int workers = 1;

  void validate() const;
};

void to_json(nlohmann::json& j, const InferenceConfig& c);
void from_json(const nlohmann::json& j, InferenceConfig& c);

struct LangevinConfig {
  double step_size = 0.0;  // eta
  int steps = 0;           // N per deep recursion
  bool gradient_enabled = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const LangevinConfig& c);
void from_json(const nlohmann::json& j, LangevinConfig& c);

struct TraceStep {
  double q = 0.0;
  double cell_accuracy = -1.0;  // -1 when no ground truth was supplied
  Tensor<float> y;              // [L,H] snapshot
};

struct RolloutRecord {
  int k = 0;
  std::vector<int> answer;
  double q = 0.0;
  std::vector<TraceStep> trace;
};

struct InferenceResult {
  std::vector<int> answer;
  int selected = 0;
  std::vector<RolloutRecord> records;
};

/// Zero carry, D noiseless deep recursions, argmax decode of f_O(y_D).
template <typename T>
InferenceResult deterministic_infer(const ModelParams<T>& params, std::span<const int> x, int depth,
                                    bool trace = false, const std::vector<int>* truth = nullptr);

/// z + eps with eps ~ N(0, sigma^2) per coordinate; sigma = 0 returns z.
template <typename T>
Tensor<T> inject_noise(const Tensor<T>& z, double sigma, CounterRng& rng);

/// Noise stream for rollout k at supervision step t.
CounterRng rollout_noise_stream(std::uint64_t master_seed, int k, int t);
CounterRng langevin_noise_stream(std::uint64_t master_seed, int k, int t);

/// K stochastic rollouts and selection. `truth` is needed by the oracle
/// selector and for per-step cell accuracy in traces.
template <typename T>
InferenceResult ptrm_infer(const ModelParams<T>& params, std::span<const int> x,
                           const InferenceConfig& cfg, const std::vector<int>* truth = nullptr,
                           const LangevinConfig* langevin = nullptr);

/// Most frequent answer; ties go to the lexicographically smallest sequence.
std::vector<int> select_mode(std::span<const RolloutRecord> records);

/// Highest q; ties go to the smallest rollout index.
int select_best_q(std::span<const RolloutRecord> records);

/// Energy -log sigmoid(f_Q(y)) per batch element.
template <typename T>
std::vector<double> q_energy(const Tensor<T>& y, const ModelParams<T>& params);

/// N Langevin updates of y under the pooled Q head:
///   y <- y - eta * dE/dy + sqrt(2 eta) * xi.
/// One noise stream per batch element.
template <typename T>
Carry<T> langevin_refine(const Carry<T>& carry, const ModelParams<T>& params, const LangevinConfig& cfg,
                         std::span<CounterRng> rngs);

/// dE/dy through the Q head alone, [batch*L,H].
template <typename T>
Tensor<T> q_energy_gradient(const Tensor<T>& y, const ModelParams<T>& params);

struct BasinEscapeResult {
  std::vector<int> deterministic_answer;
  std::vector<char> correct;  // per rollout
  std::vector<RolloutRecord> records;
  double escape_fraction = 0.0;
};

/// Traced PTRM rollouts on a puzzle the deterministic model gets wrong.
template <typename T>
BasinEscapeResult basin_escape_experiment(const ModelParams<T>& params, const PuzzleInstance& puzzle,
                                          const InferenceConfig& cfg);

/// Per-puzzle outcome of an evaluation pass.
struct PuzzleOutcome {
  std::string id;
  PuzzleType type = PuzzleType::sudoku4;
  bool deterministic_correct = false;
  double deterministic_cell_accuracy = 0.0;
  std::vector<char> rollout_correct;
  std::vector<double> rollout_q;
  std::vector<std::vector<int>> rollout_answers;
  bool best_q_correct = false;
  bool mode_correct = false;
  bool oracle_correct = false;
};

/// Deterministic and PTRM evaluation over a set of puzzles. Work is split
/// by puzzle across cfg.workers threads; results do not depend on it.
template <typename T>
std::vector<PuzzleOutcome> evaluate_puzzles(const ModelParams<T>& params,
                                            std::span<const PuzzleInstance> puzzles,
                                            const InferenceConfig& cfg,
                                            const LangevinConfig* langevin = nullptr);

struct DeterministicScore {
  double exact = 0.0;
  double cell = 0.0;
};

/// Deterministic accuracy only, batched over puzzles.
template <typename T>
DeterministicScore deterministic_accuracy(const ModelParams<T>& params,
                                          std::span<const PuzzleInstance> puzzles, int depth,
                                          int workers = 1);

/// Runs fn(i) for i in [0,n) on up to `workers` threads, static contiguous
/// chunks.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace ptrm
