#include "ptrm/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ptrm/inference.hpp"
#include "ptrm/rng.hpp"

namespace ptrm {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

constexpr std::uint64_t kShuffleTag = 0x5F1E;

template <typename T>
Tensor<T> stack_rows(std::span<const Tensor<T>* const> parts) {
  std::size_t rows = 0;
  const std::size_t cols = parts.front()->cols();
  for (const auto* p : parts) rows += p->rows();
  Tensor<T> out({rows, cols});
  auto dst = out.data().begin();
  for (const auto* p : parts) dst = std::copy(p->data().begin(), p->data().end(), dst);
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& t, std::size_t row0, std::size_t rows) {
  const std::size_t cols = t.cols();
  Tensor<T> out({rows, cols});
  auto src = t.data().subspan(row0 * cols, rows * cols);
  std::copy(src.begin(), src.end(), out.data().begin());
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  require(std::isfinite(lr) && lr > 0.0, "train: lr must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "train: beta1 must be in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "train: beta2 must be in [0, 1)");
  require(eps > 0.0, "train: eps must be > 0");
  require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(epochs >= 1, "train: epochs must be >= 1");
  require(grad_clip_norm > 0.0, "train: grad_clip_norm must be > 0");
  require(eval_every_steps >= 0 && checkpoint_every_steps >= 0 && max_steps >= 0,
          "train: intervals must be >= 0");
  require(eval_workers >= 1, "train: eval_workers must be >= 1");
  require((stop_window_lo < 0.0) == (stop_window_hi < 0.0), "train: stop window needs both bounds");
  require(stop_window_lo <= stop_window_hi, "train: stop window lo must not exceed hi");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"eps", c.eps},
       {"weight_decay", c.weight_decay},
       {"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"halting_enabled", c.halting_enabled},
       {"grad_clip_norm", c.grad_clip_norm},
       {"seed", c.seed},
       {"eval_every_steps", c.eval_every_steps},
       {"checkpoint_every_steps", c.checkpoint_every_steps},
       {"max_steps", c.max_steps},
       {"stop_at_val_exact", c.stop_at_val_exact},
       {"stop_window_lo", c.stop_window_lo},
       {"stop_window_hi", c.stop_window_hi},
       {"eval_workers", c.eval_workers}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.halting_enabled = j.value("halting_enabled", d.halting_enabled);
  c.grad_clip_norm = j.value("grad_clip_norm", d.grad_clip_norm);
  c.seed = j.value("seed", d.seed);
  c.eval_every_steps = j.value("eval_every_steps", d.eval_every_steps);
  c.checkpoint_every_steps = j.value("checkpoint_every_steps", d.checkpoint_every_steps);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.stop_at_val_exact = j.value("stop_at_val_exact", d.stop_at_val_exact);
  c.stop_window_lo = j.value("stop_window_lo", d.stop_window_lo);
  c.stop_window_hi = j.value("stop_window_hi", d.stop_window_hi);
  c.eval_workers = j.value("eval_workers", d.eval_workers);
}

template <typename T>
SupervisionResult<T> supervision_step(const ModelParams<T>& params, std::span<const PuzzleInstance* const> samples,
                                      std::span<const Carry<T>> carries, bool accumulate_grads) {
  require(!samples.empty(), "supervision_step: empty batch");
  require(samples.size() == carries.size(), "supervision_step: one carry per sample");
  const auto& mc = params.config;
  const std::size_t seq_len = static_cast<std::size_t>(mc.seq_len);
  const std::size_t batch = samples.size();

  std::vector<int> tokens, targets;
  tokens.reserve(batch * seq_len);
  targets.reserve(batch * seq_len);
  std::vector<const Tensor<T>*> zs, ys;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& s = *samples[b];
    require(s.x.size() == seq_len && s.y.size() == seq_len, "supervision_step: sample length != seq_len");
    tokens.insert(tokens.end(), s.x.begin(), s.x.end());
    targets.insert(targets.end(), s.y.begin(), s.y.end());
    require(carries[b].z.rows() == seq_len && carries[b].y.rows() == seq_len,
            "supervision_step: carry must be [L,H] per sample");
    zs.push_back(&carries[b].z);
    ys.push_back(&carries[b].y);
  }
  const Carry<T> carry{stack_rows<T>(zs), stack_rows<T>(ys)};

  EnableGradGuard grad;
  const auto x_emb = embed_inputs(params, tokens);
  const auto state = deep_recursion(x_emb, carry, mc.recursions, params, GradMode::truncated);
  const auto logits = output_logits(state.y, params);
  const auto q = q_logits(state.y, params.q_head, seq_len);

  SupervisionResult<T> out;
  const auto predicted = argmax_rows(logits.value());
  std::vector<T> bce_targets(batch);
  out.q.resize(batch);
  out.correct.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto first = predicted.begin() + static_cast<std::ptrdiff_t>(b * seq_len);
    const std::vector<int> answer(first, first + static_cast<std::ptrdiff_t>(seq_len));
    out.correct[b] = answer_correct(answer, samples[b]->y);
    bce_targets[b] = out.correct[b] ? T(1) : T(0);
    out.q[b] = static_cast<double>(q.value().data()[b]);
  }
  const auto ce = ad::softmax_cross_entropy(logits, std::span<const int>(targets), vocab::kPad, seq_len);
  const auto bce = ad::bce_with_logits(q, std::span<const T>(bce_targets));
  const auto loss = ad::add(ce, bce);
  out.ce = static_cast<double>(ce.value().item());
  out.bce = static_cast<double>(bce.value().item());
  out.loss = static_cast<double>(loss.value().item());
  if (!std::isfinite(out.loss)) {
    std::ostringstream msg;
    msg << "supervision_step: non-finite loss (ce=" << out.ce << ", bce=" << out.bce << ", batch=" << batch << ")";
    throw NonFiniteError(msg.str());
  }
  if (accumulate_grads) backward(loss);

  out.carries.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b)
    out.carries.push_back({slice_rows(state.z.value(), b * seq_len, seq_len),
                           slice_rows(state.y.value(), b * seq_len, seq_len)});
  return out;
}

bool act_halt(double q, int steps_taken, int n_sup) { return sigmoid(q) > 0.5 || steps_taken >= n_sup; }

bool decays(const std::string& name, const Shape& shape) {
  if (name.find("gain") != std::string::npos || name.find("bias") != std::string::npos ||
      name.ends_with("_b"))
    return false;
  return shape.size() == 2 && shape[0] > 1;
}

template <typename T>
AdamState<T> make_adam_state(ModelParams<T>& params) {
  AdamState<T> s;
  for (const auto& np : params.named()) {
    s.m.emplace_back(np.var->shape());
    s.v.emplace_back(np.var->shape());
  }
  return s;
}

template <typename T>
double adam_update(ModelParams<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state,
                   const TrainConfig& cfg) {
  auto named = params.named();
  require(grads.size() == named.size() && state.m.size() == named.size() && state.v.size() == named.size(),
          "adam_update: gradient/state count mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < named.size(); ++i) {
    require(grads[i].shape() == named[i].var->shape(), "adam_update: gradient shape mismatch for " + named[i].name);
    for (T g : grads[i].data()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NonFiniteError("adam_update: non-finite gradient norm");
  const double clip = norm > cfg.grad_clip_norm ? cfg.grad_clip_norm / norm : 1.0;

  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.eps);
  const T c = static_cast<T>(clip);
  for (std::size_t i = 0; i < named.size(); ++i) {
    auto p = named[i].var->mutable_value().data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const T decay = decays(named[i].name, named[i].var->shape()) ? static_cast<T>(cfg.lr * cfg.weight_decay) : T(0);
    for (std::size_t k = 0; k < p.size(); ++k) {
      const T gk = g[k] * c;
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      p[k] -= decay * p[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_bc2 + eps);
    }
  }
  return norm;
}

void check_dataset_matches(const std::vector<PuzzleInstance>& data, const ModelConfig& config, const char* split) {
  for (const auto& p : data) {
    if (p.x.size() != static_cast<std::size_t>(config.seq_len) || p.y.size() != p.x.size())
      throw ContractViolation(std::string("dataset/model mismatch: ") + split + " instance " + p.id +
                              " has length " + std::to_string(p.x.size()) + ", model seq_len is " +
                              std::to_string(config.seq_len));
    for (int t : p.x)
      if (t < 0 || t >= config.vocab)
        throw ContractViolation(std::string("dataset/model mismatch: ") + split + " token " + std::to_string(t) +
                                " outside vocab " + std::to_string(config.vocab));
    for (int t : p.y)
      if (t < 0 || t >= config.vocab)
        throw ContractViolation(std::string("dataset/model mismatch: ") + split + " token " + std::to_string(t) +
                                " outside vocab " + std::to_string(config.vocab));
  }
}

// --- Trainer -----------------------------------------------------------------

Trainer::Trainer(ModelParams<float> params, const std::vector<PuzzleInstance>& train,
                 const std::vector<PuzzleInstance>& val, const TrainConfig& cfg)
    : params_(std::move(params)), train_(train), val_(val), cfg_(cfg) {
  cfg_.validate();
  params_.config.validate();
  require(!train_.empty(), "fit: train set is empty");
  check_dataset_matches(train_, params_.config, "train");
  check_dataset_matches(val_, params_.config, "val");
  adam_ = make_adam_state(params_);
  shuffle_epoch();
  slots_.resize(static_cast<std::size_t>(cfg_.batch_size));
  for (auto& s : slots_) {
    s.instance = next_instance();
    s.carry = zero_carry<float>(params_.config, 1);
  }
}

void Trainer::shuffle_epoch() {
  order_.resize(train_.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<std::uint32_t>(i);
  CounterRng rng{cfg_.seed, kShuffleTag, static_cast<std::uint64_t>(epoch_)};
  for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.below(i)]);
  cursor_ = 0;
}

int Trainer::next_instance() {
  if (exhausted_) return -1;
  if (cursor_ == order_.size()) {
    epoch_boundary_ = true;
    if (epoch_ + 1 >= cfg_.epochs) {
      exhausted_ = true;
      return -1;
    }
    ++epoch_;
    shuffle_epoch();
  }
  ++consumed_;
  return static_cast<int>(order_[cursor_++]);
}

bool Trainer::done() const {
  if (cfg_.max_steps > 0 && step_ >= cfg_.max_steps) return true;
  return std::none_of(slots_.begin(), slots_.end(), [](const auto& s) { return s.instance >= 0; });
}

nlohmann::json Trainer::step() {
  require(!done(), "Trainer::step: training is finished");
  epoch_boundary_ = false;
  const int n_sup = params_.config.supervision_steps;

  std::vector<std::size_t> active;
  std::vector<const PuzzleInstance*> samples;
  std::vector<Carry<float>> carries;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    if (slots_[i].instance < 0) continue;
    active.push_back(i);
    samples.push_back(&train_[static_cast<std::size_t>(slots_[i].instance)]);
    carries.push_back(slots_[i].carry);
  }

  params_.zero_grad();
  const auto res = supervision_step<float>(params_, samples, carries, true);
  std::vector<Tensor<float>> grads;
  for (const auto& np : params_.named()) grads.push_back(np.var->grad());
  const double grad_norm = adam_update<float>(params_, grads, adam_, cfg_);
  ++step_;

  std::size_t halted = 0;
  for (std::size_t a = 0; a < active.size(); ++a) {
    auto& slot = slots_[active[a]];
    slot.carry = res.carries[a];
    ++slot.steps_taken;
    slot.halted = cfg_.halting_enabled ? act_halt(res.q[a], slot.steps_taken, n_sup) : slot.steps_taken >= n_sup;
    if (!slot.halted) continue;
    ++halted;
    slot.instance = next_instance();
    slot.carry = zero_carry<float>(params_.config, 1);
    slot.steps_taken = 0;
    slot.halted = false;
  }
  if (exhausted_) epoch_boundary_ = epoch_boundary_ || done();

  std::size_t correct = 0;
  for (char c : res.correct) correct += c != 0;
  return {{"step", step_},
          {"epoch", epoch_},
          {"loss", res.loss},
          {"ce", res.ce},
          {"bce", res.bce},
          {"lr", cfg_.lr},
          {"grad_norm", grad_norm},
          {"halted_fraction", static_cast<double>(halted) / static_cast<double>(active.size())},
          {"train_exact", static_cast<double>(correct) / static_cast<double>(active.size())}};
}

EvalEvent Trainer::evaluate() {
  EvalEvent e;
  e.step = step_;
  e.epoch = epoch_;
  if (val_.empty()) return e;
  const auto score = deterministic_accuracy(params_, std::span<const PuzzleInstance>(val_),
                                            params_.config.supervision_steps, cfg_.eval_workers);
  e.val_exact = score.exact;
  e.val_cell = score.cell;
  return e;
}

nlohmann::json Trainer::state_json() const {
  nlohmann::json slots = nlohmann::json::array();
  for (const auto& s : slots_) slots.push_back({{"instance", s.instance}, {"steps_taken", s.steps_taken}});
  return {{"step", step_},       {"epoch", epoch_},         {"cursor", cursor_},
          {"consumed", consumed_}, {"exhausted", exhausted_}, {"epoch_boundary", epoch_boundary_},
          {"adam_step", adam_.step}, {"slots", slots},        {"train_size", train_.size()}};
}

std::vector<float> Trainer::state_blob() const {
  std::vector<float> blob;
  for (const auto& t : adam_.m) blob.insert(blob.end(), t.data().begin(), t.data().end());
  for (const auto& t : adam_.v) blob.insert(blob.end(), t.data().begin(), t.data().end());
  for (const auto& s : slots_) {
    if (s.instance < 0) continue;
    blob.insert(blob.end(), s.carry.z.data().begin(), s.carry.z.data().end());
    blob.insert(blob.end(), s.carry.y.data().begin(), s.carry.y.data().end());
  }
  return blob;
}

void Trainer::restore_state(const nlohmann::json& header, std::span<const float> blob) {
  require(header.at("train_size").get<std::size_t>() == train_.size(),
          "resume: train set size differs from the checkpointed run");
  const auto& slots = header.at("slots");
  require(slots.size() == slots_.size(), "resume: batch size differs from the checkpointed run");
  step_ = header.at("step").get<std::int64_t>();
  epoch_ = header.at("epoch").get<int>();
  shuffle_epoch();
  cursor_ = header.at("cursor").get<std::size_t>();
  consumed_ = header.at("consumed").get<std::uint64_t>();
  exhausted_ = header.at("exhausted").get<bool>();
  epoch_boundary_ = header.at("epoch_boundary").get<bool>();
  adam_.step = header.at("adam_step").get<std::int64_t>();

  std::size_t off = 0;
  auto take = [&](Tensor<float>& t) {
    require(off + t.size() <= blob.size(), "resume: trainer state blob is truncated");
    std::copy(blob.begin() + static_cast<std::ptrdiff_t>(off),
              blob.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.data().begin());
    off += t.size();
  };
  for (auto& t : adam_.m) take(t);
  for (auto& t : adam_.v) take(t);
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    auto& s = slots_[i];
    s.instance = slots[i].at("instance").get<int>();
    s.steps_taken = slots[i].at("steps_taken").get<int>();
    s.halted = false;
    s.carry = zero_carry<float>(params_.config, 1);
    if (s.instance < 0) continue;
    require(static_cast<std::size_t>(s.instance) < train_.size(), "resume: slot instance out of range");
    take(s.carry.z);
    take(s.carry.y);
  }
  require(off == blob.size(), "resume: trainer state blob has trailing data");
}

// --- fit ---------------------------------------------------------------------

FitResult fit(Trainer& trainer, const FitHooks& hooks) {
  const auto& cfg = trainer.config();
  FitResult result;
  auto log = [&](const nlohmann::json& line) {
    if (hooks.on_log) hooks.on_log(line);
  };
  auto stop_after = [&](const EvalEvent& e) {
    // The hook sees every event, including the one that trips a built-in stop.
    const bool hooked = hooks.should_stop && hooks.should_stop(e);
    if (e.val_exact >= cfg.stop_at_val_exact) return true;
    if (cfg.stop_window_lo >= 0.0 && e.val_exact >= cfg.stop_window_lo && e.val_exact <= cfg.stop_window_hi)
      return true;
    return hooked;
  };

  while (!trainer.done()) {
    log(trainer.step());
    const auto step = trainer.steps();
    const bool periodic = cfg.eval_every_steps > 0 && step % cfg.eval_every_steps == 0;
    const bool finishing = trainer.done();
    if (periodic || trainer.epoch_boundary() || finishing) {
      const auto e = trainer.evaluate();
      result.evals.push_back(e);
      log({{"event", "eval"}, {"step", e.step}, {"epoch", e.epoch}, {"val_exact", e.val_exact},
           {"val_cell", e.val_cell}});
      if (stop_after(e)) {
        result.stopped_early = !finishing;
        break;
      }
    }
    if (cfg.checkpoint_every_steps > 0 && step % cfg.checkpoint_every_steps == 0 && !trainer.done() &&
        hooks.on_checkpoint)
      hooks.on_checkpoint(trainer, false);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(trainer, true);
  result.params = trainer.params().clone();
  result.steps = trainer.steps();
  return result;
}

FitResult fit(const std::vector<PuzzleInstance>& train, const std::vector<PuzzleInstance>& val,
              const ModelConfig& model_config, const TrainConfig& train_config, const FitHooks& hooks) {
  Trainer trainer(init_params<float>(model_config, train_config.seed), train, val, train_config);
  return fit(trainer, hooks);
}

#define PTRM_INSTANTIATE_TRAINING(T)                                                                          \
  template SupervisionResult<T> supervision_step(const ModelParams<T>&, std::span<const PuzzleInstance* const>, \
                                                 std::span<const Carry<T>>, bool);                             \
  template AdamState<T> make_adam_state(ModelParams<T>&);                                                      \
  template double adam_update(ModelParams<T>&, std::span<const Tensor<T>>, AdamState<T>&, const TrainConfig&);

PTRM_INSTANTIATE_TRAINING(float)
PTRM_INSTANTIATE_TRAINING(double)

}  // namespace ptrm
