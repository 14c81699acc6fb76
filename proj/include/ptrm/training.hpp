#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptrm/model.hpp"
#include "ptrm/puzzles.hpp"

namespace ptrm {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 64;
  int epochs = 10;
  bool halting_enabled = true;
  double grad_clip_norm = 1.0;
  std::uint64_t seed = 0;

  // Plumbing around the loop.
  int eval_every_steps = 0;         // 0: evaluate at epoch boundaries only
  int checkpoint_every_steps = 0;   // 0: final checkpoint only
  std::int64_t max_steps = 0;       // 0: no cap
  double stop_at_val_exact = 2.0;   // stop once val exact accuracy >= this
  double stop_window_lo = -1.0;     // stop once val exact lies in [lo, hi]
  double stop_window_hi = -1.0;
  int eval_workers = 1;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// One sample in the supervision pool. `instance` indexes the train set;
/// -1 marks an empty slot once the stream is exhausted.
template <typename T>
struct BatchSlot {
  int instance = -1;
  Carry<T> carry;
  int steps_taken = 0;
  bool halted = false;
};

template <typename T>
struct SupervisionResult {
  double loss = 0.0;
  double ce = 0.0;
  double bce = 0.0;
  std::vector<double> q;
  std::vector<char> correct;
  std::vector<Carry<T>> carries;  // detached values, one per slot
};

/// One deep recursion with truncated gradients over a batch of samples.
/// loss = mean_slots[CE(f_O(y), y_true) + BCE(q, 1[argmax = y_true])], pad
/// cells ignored. Gradients accumulate into the parameter leaves when
/// `accumulate_grads` is set.
template <typename T>
SupervisionResult<T> supervision_step(const ModelParams<T>& params, std::span<const PuzzleInstance* const> samples,
                                      std::span<const Carry<T>> carries, bool accumulate_grads = true);

/// Halt iff sigmoid(q) > 0.5 or the budget is spent.
bool act_halt(double q, int steps_taken, int n_sup);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(ModelParams<T>& params);

/// Bias-corrected Adam with decoupled weight decay (matrices only) and
/// global-norm clipping. `grads` follows params.named() order. Returns the
/// pre-clip global gradient norm.
template <typename T>
double adam_update(ModelParams<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state,
                   const TrainConfig& cfg);

/// Whether weight decay applies to a named tensor.
bool decays(const std::string& name, const Shape& shape);

struct EvalEvent {
  std::int64_t step = 0;
  int epoch = 0;
  double val_exact = 0.0;
  double val_cell = 0.0;
};

/// Deep-supervision training state: parameters, optimizer moments, the
/// slot pool and the position in the shuffled stream. Everything needed to
/// resume bit-exactly.
class Trainer {
 public:
  Trainer(ModelParams<float> params, const std::vector<PuzzleInstance>& train,
          const std::vector<PuzzleInstance>& val, const TrainConfig& cfg);

  bool done() const;
  /// One optimizer step over the active slots; returns its log line.
  nlohmann::json step();
  EvalEvent evaluate();
  /// True when the last step crossed into a new epoch (or finished).
  bool epoch_boundary() const { return epoch_boundary_; }

  const ModelParams<float>& params() const { return params_; }
  ModelParams<float>& params() { return params_; }
  std::int64_t steps() const { return step_; }
  int epoch() const { return epoch_; }
  const std::vector<BatchSlot<float>>& slots() const { return slots_; }
  std::uint64_t samples_consumed() const { return consumed_; }
  const TrainConfig& config() const { return cfg_; }

  /// Serialized trainer state (without parameters): JSON header plus a
  /// float blob for moments and carries.
  nlohmann::json state_json() const;
  std::vector<float> state_blob() const;
  void restore_state(const nlohmann::json& header, std::span<const float> blob);

 private:
  int next_instance();
  void shuffle_epoch();

  ModelParams<float> params_;
  const std::vector<PuzzleInstance>& train_;
  const std::vector<PuzzleInstance>& val_;
  TrainConfig cfg_;
  AdamState<float> adam_;
  std::vector<BatchSlot<float>> slots_;
  std::vector<std::uint32_t> order_;
  std::size_t cursor_ = 0;
  int epoch_ = 0;
  std::int64_t step_ = 0;
  std::uint64_t consumed_ = 0;
  bool exhausted_ = false;
  bool epoch_boundary_ = false;
};

struct FitHooks {
  std::function<void(const nlohmann::json&)> on_log;
  /// Called at checkpoint intervals and once at the end.
  std::function<void(const Trainer&, bool final)> on_checkpoint;
  /// Extra stop predicate evaluated after every eval event.
  std::function<bool(const EvalEvent&)> should_stop;
};

struct FitResult {
  ModelParams<float> params;
  std::vector<EvalEvent> evals;
  std::int64_t steps = 0;
  bool stopped_early = false;
};

/// Full training loop: steps until the stream is exhausted, max_steps is
/// reached or a stop condition fires. `resume` continues an existing trainer.
FitResult fit(const std::vector<PuzzleInstance>& train, const std::vector<PuzzleInstance>& val,
              const ModelConfig& model_config, const TrainConfig& train_config, const FitHooks& hooks = {});
FitResult fit(Trainer& trainer, const FitHooks& hooks = {});

/// Startup checks: nonempty train set, sequence length and vocabulary agree.
void check_dataset_matches(const std::vector<PuzzleInstance>& data, const ModelConfig& config,
                           const char* split);

}  // namespace ptrm
