#include "ptrm/inference.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <thread>

#include "ptrm/metrics.hpp"

namespace ptrm {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

// Stream tags keep rollout noise and Langevin noise independent.
constexpr std::uint64_t kRolloutTag = 0x5A11;
constexpr std::uint64_t kLangevinTag = 0x1A6E;

template <typename T>
void add_noise_rows(Tensor<T>& t, std::size_t row0, std::size_t rows, double sigma, CounterRng& rng) {
  const std::size_t cols = t.cols();
  auto data = t.data().subspan(row0 * cols, rows * cols);
  for (auto& v : data) v = v + static_cast<T>(sigma * rng.normal());
}

std::vector<int> repeat_tokens(std::span<const int> x, std::size_t batch) {
  std::vector<int> out;
  out.reserve(x.size() * batch);
  for (std::size_t b = 0; b < batch; ++b) out.insert(out.end(), x.begin(), x.end());
  return out;
}

template <typename T>
Tensor<float> snapshot_rows(const Tensor<T>& y, std::size_t row0, std::size_t rows) {
  Tensor<float> out({rows, y.cols()});
  auto src = y.data().subspan(row0 * y.cols(), rows * y.cols());
  std::transform(src.begin(), src.end(), out.data().begin(), [](T v) { return static_cast<float>(v); });
  return out;
}

// Decoded answers and q logits for every batch element of the carry.
template <typename T>
struct Readout {
  std::vector<std::vector<int>> answers;
  std::vector<double> q;
};

template <typename T>
Readout<T> read_out(const Carry<T>& carry, const ModelParams<T>& params, std::size_t seq_len) {
  auto y = Var<T>::constant(carry.y);
  const auto tokens = argmax_rows(output_logits(y, params).value());
  const auto q = q_logits(y, params.q_head, seq_len).value();
  const std::size_t batch = carry.y.rows() / seq_len;
  Readout<T> out;
  out.answers.resize(batch);
  out.q.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    out.answers[b].assign(tokens.begin() + static_cast<std::ptrdiff_t>(b * seq_len),
                          tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * seq_len));
    out.q[b] = static_cast<double>(q.data()[b]);
  }
  return out;
}

void check_input(const ModelConfig& config, std::span<const int> x) {
  require(x.size() == static_cast<std::size_t>(config.seq_len), "inference: input length must equal seq_len");
  for (int t : x) require(t >= 0 && t < config.vocab, "inference: token out of vocabulary");
}

// Runs rollouts [k0, k1) as one batch. Each row block only ever sees its own
// noise stream and the kernels are row-independent, so the result for rollout
// k is the same whatever batch it shares.
template <typename T>
void run_rollouts(const ModelParams<T>& params, std::span<const int> x, const InferenceConfig& cfg,
                  const std::vector<int>* truth, const LangevinConfig* langevin, int k0, int k1,
                  std::vector<RolloutRecord>& records) {
  NoGradGuard no_grad;
  const auto& mc = params.config;
  const std::size_t seq_len = static_cast<std::size_t>(mc.seq_len);
  const std::size_t batch = static_cast<std::size_t>(k1 - k0);
  const auto tokens = repeat_tokens(x, batch);
  const auto x_emb = embed_inputs(params, tokens);
  Carry<T> carry = zero_carry<T>(mc, batch);
  const bool refine = langevin && langevin->steps > 0;

  for (int t = 1; t <= cfg.depth; ++t) {
    if (cfg.sigma > 0.0) {
      for (std::size_t b = 0; b < batch; ++b) {
        auto rng = rollout_noise_stream(cfg.master_seed, k0 + static_cast<int>(b), t);
        add_noise_rows(carry.z, b * seq_len, seq_len, cfg.sigma, rng);
      }
    }
    carry = deep_recursion(x_emb, carry, mc.recursions, params, GradMode::none).values();
    if (refine) {
      std::vector<CounterRng> rngs;
      rngs.reserve(batch);
      for (std::size_t b = 0; b < batch; ++b)
        rngs.push_back(langevin_noise_stream(cfg.master_seed, k0 + static_cast<int>(b), t));
      carry = langevin_refine(carry, params, *langevin, rngs);
    }
    if (cfg.trace || t == cfg.depth) {
      const auto out = read_out(carry, params, seq_len);
      for (std::size_t b = 0; b < batch; ++b) {
        auto& rec = records[static_cast<std::size_t>(k0) + b];
        if (cfg.trace) {
          TraceStep step;
          step.q = out.q[b];
          if (truth) step.cell_accuracy = cell_accuracy(out.answers[b], *truth);
          step.y = snapshot_rows(carry.y, b * seq_len, seq_len);
          rec.trace.push_back(std::move(step));
        }
        if (t == cfg.depth) {
          rec.answer = out.answers[b];
          rec.q = out.q[b];
        }
      }
    }
  }
}

}  // namespace

std::string to_string(Selector s) {
  switch (s) {
    case Selector::best_q: return "best-q";
    case Selector::mode: return "mode";
    case Selector::oracle: return "oracle";
  }
  return "?";
}

Selector parse_selector(const std::string& s) {
  if (s == "best-q" || s == "best_q") return Selector::best_q;
  if (s == "mode") return Selector::mode;
  if (s == "oracle") return Selector::oracle;
  throw ContractViolation("unknown selector: " + s);
}

void InferenceConfig::validate() const {
  require(rollouts >= 1, "inference: rollouts must be >= 1");
  require(depth >= 1, "inference: depth must be >= 1");
  require(std::isfinite(sigma) && sigma >= 0.0, "inference: sigma must be finite and >= 0");
  require(workers >= 1, "inference: workers must be >= 1");
}

void to_json(nlohmann::json& j, const InferenceConfig& c) {
  j = {{"rollouts", c.rollouts}, {"depth", c.depth},     {"sigma", c.sigma},
       {"selector", to_string(c.selector)}, {"master_seed", c.master_seed},
       {"trace", c.trace},       {"workers", c.workers}};
}

void from_json(const nlohmann::json& j, InferenceConfig& c) {
  InferenceConfig d;
  c.rollouts = j.value("rollouts", d.rollouts);
  c.depth = j.value("depth", d.depth);
  c.sigma = j.value("sigma", d.sigma);
  c.selector = parse_selector(j.value("selector", to_string(d.selector)));
  c.master_seed = j.value("master_seed", d.master_seed);
  c.trace = j.value("trace", d.trace);
  c.workers = j.value("workers", d.workers);
}

void LangevinConfig::validate() const {
  require(std::isfinite(step_size) && step_size >= 0.0, "langevin: step_size must be finite and >= 0");
  require(steps >= 0, "langevin: steps must be >= 0");
}

void to_json(nlohmann::json& j, const LangevinConfig& c) {
  j = {{"step_size", c.step_size}, {"steps", c.steps}, {"gradient_enabled", c.gradient_enabled}};
}

void from_json(const nlohmann::json& j, LangevinConfig& c) {
  LangevinConfig d;
  c.step_size = j.value("step_size", d.step_size);
  c.steps = j.value("steps", d.steps);
  c.gradient_enabled = j.value("gradient_enabled", d.gradient_enabled);
}

CounterRng rollout_noise_stream(std::uint64_t master_seed, int k, int t) {
  return CounterRng{master_seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t), kRolloutTag};
}

CounterRng langevin_noise_stream(std::uint64_t master_seed, int k, int t) {
  return CounterRng{master_seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(t), kLangevinTag};
}

template <typename T>
Tensor<T> inject_noise(const Tensor<T>& z, double sigma, CounterRng& rng) {
  require(std::isfinite(sigma) && sigma >= 0.0, "inject_noise: sigma must be finite and >= 0");
  Tensor<T> out = z;
  if (sigma == 0.0) return out;
  add_noise_rows(out, 0, out.rows(), sigma, rng);
  return out;
}

template <typename T>
InferenceResult deterministic_infer(const ModelParams<T>& params, std::span<const int> x, int depth,
                                    bool trace, const std::vector<int>* truth) {
  require(depth >= 1, "deterministic_infer: depth must be >= 1");
  check_input(params.config, x);
  NoGradGuard no_grad;
  const auto& mc = params.config;
  const std::size_t seq_len = static_cast<std::size_t>(mc.seq_len);
  const auto x_emb = embed_inputs(params, x);
  Carry<T> carry = zero_carry<T>(mc, 1);
  RolloutRecord rec;
  for (int t = 1; t <= depth; ++t) {
    carry = deep_recursion(x_emb, carry, mc.recursions, params, GradMode::none).values();
    if (!trace && t < depth) continue;
    const auto out = read_out(carry, params, seq_len);
    if (trace) {
      TraceStep step;
      step.q = out.q[0];
      if (truth) step.cell_accuracy = cell_accuracy(out.answers[0], *truth);
      step.y = snapshot_rows(carry.y, 0, seq_len);
      rec.trace.push_back(std::move(step));
    }
    if (t == depth) {
      rec.answer = out.answers[0];
      rec.q = out.q[0];
    }
  }
  InferenceResult result;
  result.answer = rec.answer;
  result.records.push_back(std::move(rec));
  return result;
}

std::vector<int> select_mode(std::span<const RolloutRecord> records) {
  require(!records.empty(), "select_mode: no rollouts");
  std::map<std::vector<int>, int> counts;
  for (const auto& r : records) ++counts[r.answer];
  // std::map iterates in lexicographic order, so the first maximum wins ties.
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it)
    if (it->second > best->second) best = it;
  return best->first;
}

int select_best_q(std::span<const RolloutRecord> records) {
  require(!records.empty(), "select_best_q: no rollouts");
  std::size_t best = 0;
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].q > records[best].q) best = i;
  return static_cast<int>(best);
}

template <typename T>
InferenceResult ptrm_infer(const ModelParams<T>& params, std::span<const int> x, const InferenceConfig& cfg,
                           const std::vector<int>* truth, const LangevinConfig* langevin) {
  cfg.validate();
  check_input(params.config, x);
  require(cfg.selector != Selector::oracle || truth, "ptrm_infer: the oracle selector needs ground truth");
  if (truth) require(truth->size() == x.size(), "ptrm_infer: truth length must equal seq_len");
  if (langevin) {
    langevin->validate();
    require(langevin->steps == 0 || params.config.q_head == QHeadKind::attention_pooled,
            "configuration error: Langevin refinement requires the attention-pooled Q head");
  }

  const int K = cfg.rollouts;
  std::vector<RolloutRecord> records(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) records[static_cast<std::size_t>(k)].k = k;
  const int workers = std::min(cfg.workers, K);
  const int chunk = (K + workers - 1) / workers;
  parallel_for(static_cast<std::size_t>(workers), workers, [&](std::size_t w) {
    const int k0 = static_cast<int>(w) * chunk;
    const int k1 = std::min(K, k0 + chunk);
    if (k0 < k1) run_rollouts(params, x, cfg, truth, langevin, k0, k1, records);
  });

  InferenceResult result;
  switch (cfg.selector) {
    case Selector::best_q:
      result.selected = select_best_q(records);
      break;
    case Selector::mode: {
      const auto answer = select_mode(records);
      for (const auto& r : records)
        if (r.answer == answer) {
          result.selected = r.k;
          break;
        }
      break;
    }
    case Selector::oracle: {
      result.selected = select_best_q(records);
      for (const auto& r : records)
        if (answer_correct(r.answer, *truth)) {
          result.selected = r.k;
          break;
        }
      break;
    }
  }
  result.answer = records[static_cast<std::size_t>(result.selected)].answer;
  result.records = std::move(records);
  return result;
}

template <typename T>
std::vector<double> q_energy(const Tensor<T>& y, const ModelParams<T>& params) {
  NoGradGuard no_grad;
  const auto q = q_logits(Var<T>::constant(y), params.q_head, static_cast<std::size_t>(params.config.seq_len));
  std::vector<double> out;
  out.reserve(q.value().size());
  for (T v : q.value().data()) out.push_back(softplus(-static_cast<double>(v)));
  return out;
}

template <typename T>
Tensor<T> q_energy_gradient(const Tensor<T>& y, const ModelParams<T>& params) {
  EnableGradGuard grad;
  const auto head = params.q_head.detached();
  auto yv = Var<T>::parameter(y);
  auto q = q_logits(yv, head, static_cast<std::size_t>(params.config.seq_len));
  const std::size_t batch = q.value().size();
  std::vector<T> ones(batch, T(1));
  // bce averages over the batch; rescale so each element gets its own dE/dy.
  auto energy = ad::scale(ad::bce_with_logits(q, std::span<const T>(ones)), static_cast<T>(batch));
  backward(energy);
  return yv.grad();
}

template <typename T>
Carry<T> langevin_refine(const Carry<T>& carry, const ModelParams<T>& params, const LangevinConfig& cfg,
                         std::span<CounterRng> rngs) {
  cfg.validate();
  require(params.config.q_head == QHeadKind::attention_pooled,
          "configuration error: Langevin refinement requires the attention-pooled Q head");
  const std::size_t seq_len = static_cast<std::size_t>(params.config.seq_len);
  const std::size_t batch = carry.y.rows() / seq_len;
  require(rngs.size() == batch, "langevin_refine: need one noise stream per batch element");
  Carry<T> out = carry;
  const double noise_scale = std::sqrt(2.0 * cfg.step_size);
  const T eta = static_cast<T>(cfg.step_size);
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor<T> g;
    if (cfg.gradient_enabled) g = q_energy_gradient(out.y, params);
    // Noise first, gradient second: with the gradient disabled this is
    // exactly repeated noise injection of scale sqrt(2 eta).
    for (std::size_t b = 0; b < batch; ++b) add_noise_rows(out.y, b * seq_len, seq_len, noise_scale, rngs[b]);
    if (cfg.gradient_enabled) {
      auto yd = out.y.data();
      auto gd = g.data();
      for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = yd[i] - eta * gd[i];
    }
  }
  if (!out.y.all_finite()) throw NonFiniteError("langevin_refine: non-finite latent");
  return out;
}

template <typename T>
BasinEscapeResult basin_escape_experiment(const ModelParams<T>& params, const PuzzleInstance& puzzle,
                                          const InferenceConfig& cfg) {
  const auto det = deterministic_infer(params, puzzle.x, cfg.depth);
  require(!answer_correct(det.answer, puzzle.y),
          "basin_escape_experiment: the deterministic model already solves this puzzle");
  InferenceConfig traced = cfg;
  traced.trace = true;
  auto res = ptrm_infer(params, puzzle.x, traced, &puzzle.y);
  BasinEscapeResult out;
  out.deterministic_answer = det.answer;
  std::size_t hits = 0;
  for (const auto& r : res.records) {
    const bool ok = answer_correct(r.answer, puzzle.y);
    out.correct.push_back(ok);
    hits += ok;
  }
  out.escape_fraction = static_cast<double>(hits) / static_cast<double>(res.records.size());
  out.records = std::move(res.records);
  return out;
}

template <typename T>
std::vector<PuzzleOutcome> evaluate_puzzles(const ModelParams<T>& params, std::span<const PuzzleInstance> puzzles,
                                            const InferenceConfig& cfg, const LangevinConfig* langevin) {
  cfg.validate();
  std::vector<PuzzleOutcome> out(puzzles.size());
  InferenceConfig per = cfg;
  per.workers = 1;
  per.trace = false;
  per.selector = Selector::best_q;
  // Without noise every rollout repeats the same computation bit for bit;
  // run one and replicate it.
  const bool replicate = cfg.sigma == 0.0 && (!langevin || langevin->steps == 0);
  if (replicate) per.rollouts = 1;
  parallel_for(puzzles.size(), cfg.workers, [&](std::size_t i) {
    const auto& p = puzzles[i];
    auto& o = out[i];
    o.id = p.id;
    o.type = p.type;
    const auto det = deterministic_infer(params, p.x, cfg.depth);
    o.deterministic_correct = answer_correct(det.answer, p.y);
    o.deterministic_cell_accuracy = cell_accuracy(det.answer, p.y);
    auto res = ptrm_infer(params, p.x, per, &p.y, langevin);
    if (replicate) {
      for (int k = 1; k < cfg.rollouts; ++k) {
        auto copy = res.records.front();
        copy.k = k;
        res.records.push_back(std::move(copy));
      }
    }
    for (const auto& r : res.records) {
      o.rollout_correct.push_back(answer_correct(r.answer, p.y));
      o.rollout_q.push_back(r.q);
      o.rollout_answers.push_back(r.answer);
    }
    o.best_q_correct = o.rollout_correct[static_cast<std::size_t>(select_best_q(res.records))];
    o.mode_correct = answer_correct(select_mode(res.records), p.y);
    o.oracle_correct = std::any_of(o.rollout_correct.begin(), o.rollout_correct.end(), [](char c) { return c; });
  });
  return out;
}

template <typename T>
DeterministicScore deterministic_accuracy(const ModelParams<T>& params, std::span<const PuzzleInstance> puzzles,
                                          int depth, int workers) {
  require(depth >= 1 && workers >= 1, "deterministic_accuracy: depth and workers must be >= 1");
  if (puzzles.empty()) return {};
  const auto& mc = params.config;
  const std::size_t seq_len = static_cast<std::size_t>(mc.seq_len);
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (puzzles.size() + kChunk - 1) / kChunk;
  std::vector<char> exact(puzzles.size());
  std::vector<double> cell(puzzles.size());
  parallel_for(chunks, workers, [&](std::size_t c) {
    NoGradGuard no_grad;
    const std::size_t p0 = c * kChunk, p1 = std::min(puzzles.size(), p0 + kChunk);
    std::vector<int> tokens;
    for (std::size_t p = p0; p < p1; ++p) {
      check_input(mc, puzzles[p].x);
      tokens.insert(tokens.end(), puzzles[p].x.begin(), puzzles[p].x.end());
    }
    const auto x_emb = embed_inputs(params, tokens);
    Carry<T> carry = zero_carry<T>(mc, p1 - p0);
    for (int t = 1; t <= depth; ++t)
      carry = deep_recursion(x_emb, carry, mc.recursions, params, GradMode::none).values();
    const auto outs = read_out(carry, params, seq_len);
    for (std::size_t p = p0; p < p1; ++p) {
      exact[p] = answer_correct(outs.answers[p - p0], puzzles[p].y);
      cell[p] = cell_accuracy(outs.answers[p - p0], puzzles[p].y);
    }
  });
  DeterministicScore s;
  for (std::size_t p = 0; p < puzzles.size(); ++p) {
    s.exact += exact[p];
    s.cell += cell[p];
  }
  s.exact /= static_cast<double>(puzzles.size());
  s.cell /= static_cast<double>(puzzles.size());
  return s;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  require(workers >= 1, "parallel_for: workers must be >= 1");
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::size_t chunk = (n + w - 1) / w;
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(w);
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  if (error) std::rethrow_exception(error);
}

#define PTRM_INSTANTIATE_INFERENCE(T)                                                                     \
  template Tensor<T> inject_noise(const Tensor<T>&, double, CounterRng&);                                 \
  template InferenceResult deterministic_infer(const ModelParams<T>&, std::span<const int>, int, bool,    \
                                               const std::vector<int>*);                                 \
  template InferenceResult ptrm_infer(const ModelParams<T>&, std::span<const int>, const InferenceConfig&, \
                                      const std::vector<int>*, const LangevinConfig*);                    \
  template std::vector<double> q_energy(const Tensor<T>&, const ModelParams<T>&);                         \
  template Tensor<T> q_energy_gradient(const Tensor<T>&, const ModelParams<T>&);                          \
  template Carry<T> langevin_refine(const Carry<T>&, const ModelParams<T>&, const LangevinConfig&,         \
                                    std::span<CounterRng>);                                               \
  template BasinEscapeResult basin_escape_experiment(const ModelParams<T>&, const PuzzleInstance&,         \
                                                     const InferenceConfig&);                             \
  template std::vector<PuzzleOutcome> evaluate_puzzles(const ModelParams<T>&, std::span<const PuzzleInstance>, \
                                                       const InferenceConfig&, const LangevinConfig*);    \
  template DeterministicScore deterministic_accuracy(const ModelParams<T>&, std::span<const PuzzleInstance>, \
                                                     int, int);

PTRM_INSTANTIATE_INFERENCE(float)
PTRM_INSTANTIATE_INFERENCE(double)

}  // namespace ptrm
