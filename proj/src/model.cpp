#include "ptrm/model.hpp"

#include <cmath>

#include "ptrm/rng.hpp"

namespace ptrm {

namespace {

thread_local std::uint64_t g_f_theta_calls = 0;

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

// Truncated normal at +-2 std, std = 1/sqrt(fan_in).
template <typename T>
Tensor<T> trunc_normal(std::size_t rows, std::size_t cols, std::size_t fan_in, std::uint64_t seed,
                       std::uint64_t tensor_id) {
  CounterRng rng{seed, 0x1417ull, tensor_id};
  const double std_dev = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor<T> t = Tensor<T>::matrix(rows, cols);
  for (auto& v : t.storage()) {
    double draw = rng.normal();
    while (std::abs(draw) > 2.0) draw = rng.normal();
    v = static_cast<T>(draw * std_dev);
  }
  return t;
}

template <typename T>
Var<T> param(Tensor<T> t) {
  return Var<T>::parameter(std::move(t));
}

template <typename T>
Var<T> copy_leaf(const Var<T>& v) {
  if (!v.defined()) return {};
  return v.requires_grad() ? Var<T>::parameter(v.value()) : Var<T>::constant(v.value());
}

template <typename U, typename T>
Var<U> cast_leaf(const Var<T>& v) {
  if (!v.defined()) return {};
  return Var<U>::parameter(v.value().template cast<U>());
}

template <typename T>
Var<T> block_layer(const Var<T>& x, const BlockLayer<T>& layer, NormPlacement norm) {
  auto mlp = [&layer](const Var<T>& h) {
    auto gated = ad::mul(ad::silu(ad::matmul(h, layer.gate)), ad::matmul(h, layer.up));
    return ad::matmul(gated, layer.down);
  };
  if (norm == NormPlacement::pre) {
    auto h = ad::add(x, ad::mix_positions(layer.mix, ad::rms_norm(x, layer.mix_gain)));
    return ad::add(h, mlp(ad::rms_norm(h, layer.mlp_gain)));
  }
  auto h = ad::rms_norm(ad::add(x, ad::mix_positions(layer.mix, x)), layer.mix_gain);
  return ad::rms_norm(ad::add(h, mlp(h)), layer.mlp_gain);
}

}  // namespace

std::string to_string(QHeadKind kind) {
  return kind == QHeadKind::linear_token0 ? "linear-token0" : "attention-pooled";
}

QHeadKind parse_q_head_kind(const std::string& s) {
  if (s == "linear-token0" || s == "linear") return QHeadKind::linear_token0;
  if (s == "attention-pooled" || s == "pooled") return QHeadKind::attention_pooled;
  throw ContractViolation("unknown q head kind '" + s + "'");
}

std::string to_string(NormPlacement placement) {
  return placement == NormPlacement::post ? "post" : "pre";
}

NormPlacement parse_norm_placement(const std::string& s) {
  if (s == "post") return NormPlacement::post;
  if (s == "pre") return NormPlacement::pre;
  throw ContractViolation("unknown norm placement '" + s + "'");
}

void ModelConfig::validate() const {
  require(vocab >= 2, "model.vocab must be >= 2");
  require(seq_len >= 1, "model.seq_len must be >= 1");
  require(hidden >= 4, "model.hidden must be >= 4");
  require(latent_updates >= 1, "model.latent_updates (n) must be >= 1");
  require(recursions >= 1, "model.recursions (T) must be >= 1");
  require(supervision_steps >= 1, "model.supervision_steps (N_sup) must be >= 1");
  require(expansion >= 1, "model.expansion must be >= 1");
  require(q_hidden >= 0, "model.q_hidden must be >= 0");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab", c.vocab},
                     {"seq_len", c.seq_len},
                     {"hidden", c.hidden},
                     {"latent_updates", c.latent_updates},
                     {"recursions", c.recursions},
                     {"supervision_steps", c.supervision_steps},
                     {"expansion", c.expansion},
                     {"q_head", to_string(c.q_head)},
                     {"q_hidden", c.q_hidden},
                     {"norm", to_string(c.norm)}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.vocab = j.value("vocab", d.vocab);
  c.seq_len = j.value("seq_len", d.seq_len);
  c.hidden = j.value("hidden", d.hidden);
  c.latent_updates = j.value("latent_updates", d.latent_updates);
  c.recursions = j.value("recursions", d.recursions);
  c.supervision_steps = j.value("supervision_steps", d.supervision_steps);
  c.expansion = j.value("expansion", d.expansion);
  c.q_head = parse_q_head_kind(j.value("q_head", to_string(d.q_head)));
  c.q_hidden = j.value("q_hidden", d.q_hidden);
  c.norm = parse_norm_placement(j.value("norm", to_string(d.norm)));
}

template <typename T>
QHead<T> QHead<T>::detached() const {
  QHead<T> out;
  out.kind = kind;
  auto d = [](const Var<T>& v) { return v.defined() ? Var<T>::constant(v.value()) : Var<T>{}; };
  out.weight = d(weight);
  out.bias = d(bias);
  out.score = d(score);
  out.hidden_w = d(hidden_w);
  out.hidden_b = d(hidden_b);
  out.out_w = d(out_w);
  out.out_b = d(out_b);
  return out;
}

template <typename T>
std::vector<NamedParam<T>> ModelParams<T>::named() {
  std::vector<NamedParam<T>> out;
  out.push_back({"embedding", &embedding});
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    auto& l = layers[i];
    out.push_back({p + "mix", &l.mix});
    out.push_back({p + "mix_gain", &l.mix_gain});
    out.push_back({p + "gate", &l.gate});
    out.push_back({p + "up", &l.up});
    out.push_back({p + "down", &l.down});
    out.push_back({p + "mlp_gain", &l.mlp_gain});
  }
  out.push_back({"out_proj", &out_proj});
  if (q_head.kind == QHeadKind::linear_token0) {
    out.push_back({"q_head.weight", &q_head.weight});
    out.push_back({"q_head.bias", &q_head.bias});
  } else {
    out.push_back({"q_head.score", &q_head.score});
    out.push_back({"q_head.hidden_w", &q_head.hidden_w});
    out.push_back({"q_head.hidden_b", &q_head.hidden_b});
    out.push_back({"q_head.out_w", &q_head.out_w});
    out.push_back({"q_head.out_b", &q_head.out_b});
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelParams<T>::tensors() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& np : const_cast<ModelParams*>(this)->named()) out.emplace_back(np.name, &np.var->value());
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams out;
  out.config = config;
  out.q_head.kind = q_head.kind;
  auto src = const_cast<ModelParams*>(this)->named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].var = copy_leaf(*src[i].var);
  return out;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.config = config;
  out.q_head.kind = q_head.kind;
  auto src = const_cast<ModelParams*>(this)->named();
  auto dst = out.named();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].var = cast_leaf<U>(*src[i].var);
  return out;
}

template <typename T>
void ModelParams<T>::zero_grad() {
  for (auto& np : named()) np.var->zero_grad();
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const auto V = static_cast<std::size_t>(config.vocab);
  const auto L = static_cast<std::size_t>(config.seq_len);
  const auto H = static_cast<std::size_t>(config.hidden);
  const auto E = static_cast<std::size_t>(config.expansion) * H;
  ModelParams<T> p;
  p.config = config;
  std::uint64_t id = 0;
  p.embedding = param(trunc_normal<T>(V, H, H, seed, id++));
  for (auto& layer : p.layers) {
    layer.mix = param(trunc_normal<T>(L, L, L, seed, id++));
    layer.mix_gain = param(Tensor<T>::matrix(1, H, T(1)));
    layer.gate = param(trunc_normal<T>(H, E, H, seed, id++));
    layer.up = param(trunc_normal<T>(H, E, H, seed, id++));
    layer.down = param(trunc_normal<T>(E, H, E, seed, id++));
    layer.mlp_gain = param(Tensor<T>::matrix(1, H, T(1)));
  }
  p.out_proj = param(trunc_normal<T>(H, V, H, seed, id++));
  p.q_head.kind = config.q_head;
  if (config.q_head == QHeadKind::linear_token0) {
    p.q_head.weight = param(trunc_normal<T>(H, 1, H, seed, id++));
    p.q_head.bias = param(Tensor<T>::matrix(1, 1));
  } else {
    const auto Q = static_cast<std::size_t>(config.pooled_hidden());
    p.q_head.score = param(trunc_normal<T>(H, 1, H, seed, id++));
    p.q_head.hidden_w = param(trunc_normal<T>(H, Q, H, seed, id++));
    p.q_head.hidden_b = param(Tensor<T>::matrix(1, Q));
    p.q_head.out_w = param(trunc_normal<T>(Q, 1, Q, seed, id++));
    p.q_head.out_b = param(Tensor<T>::matrix(1, 1));
  }
  return p;
}

template <typename T>
Carry<T> zero_carry(const ModelConfig& config, std::size_t batch) {
  const auto rows = batch * static_cast<std::size_t>(config.seq_len);
  const auto H = static_cast<std::size_t>(config.hidden);
  return {Tensor<T>::matrix(rows, H), Tensor<T>::matrix(rows, H)};
}

template <typename T>
Var<T> embed_inputs(const ModelParams<T>& params, std::span<const int> tokens) {
  const auto L = static_cast<std::size_t>(params.config.seq_len);
  require(!tokens.empty() && tokens.size() % L == 0,
          "embed_inputs: token count must be a positive multiple of seq_len");
  // Embeddings are scaled so x has the same per-position RMS as the latents.
  return ad::scale(ad::gather_rows(params.embedding, tokens),
                   static_cast<T>(std::sqrt(static_cast<double>(params.config.hidden))));
}

template <typename T>
Var<T> f_theta(const Var<T>& input, const ModelParams<T>& params) {
  ++g_f_theta_calls;
  Var<T> h = input;
  for (const auto& layer : params.layers) h = block_layer(h, layer, params.config.norm);
  return h;
}

template <typename T>
CarryVars<T> latent_recursion(const Var<T>& x_emb, CarryVars<T> carry, int n,
                              const ModelParams<T>& params) {
  require(n >= 1, "latent_recursion: n must be >= 1");
  for (int i = 0; i < n; ++i) carry.z = f_theta(ad::add(ad::add(x_emb, carry.y), carry.z), params);
  carry.y = f_theta(ad::add(carry.y, carry.z), params);
  return carry;
}

template <typename T>
CarryVars<T> deep_recursion(const Var<T>& x_emb, const Carry<T>& carry, int recursions,
                            const ModelParams<T>& params, GradMode mode) {
  require(recursions >= 1, "deep_recursion: T must be >= 1");
  const int n = params.config.latent_updates;
  CarryVars<T> state{Var<T>::constant(carry.z), Var<T>::constant(carry.y)};
  {
    NoGradGuard no_grad;
    const int untracked = mode == GradMode::truncated ? recursions - 1 : recursions;
    for (int i = 0; i < untracked; ++i) state = latent_recursion(x_emb, state, n, params);
  }
  if (mode == GradMode::truncated) {
    state = CarryVars<T>{ad::detach(state.z), ad::detach(state.y)};
    state = latent_recursion(x_emb, state, n, params);
  }
  return state;
}

template <typename T>
Var<T> output_logits(const Var<T>& y, const ModelParams<T>& params) {
  return ad::matmul(y, params.out_proj);
}

template <typename T>
Var<T> pooled_latent(const Var<T>& y, const QHead<T>& head, std::size_t seq_len) {
  require(head.kind == QHeadKind::attention_pooled, "pooled_latent: head is not attention-pooled");
  auto scores = ad::matmul(y, head.score);
  return ad::attention_pool(y, scores, seq_len);
}

template <typename T>
Var<T> q_logits(const Var<T>& y, const QHead<T>& head, std::size_t seq_len) {
  require(seq_len > 0 && y.rows() % seq_len == 0, "q_logits: rows must be a multiple of seq_len");
  if (head.kind == QHeadKind::linear_token0) {
    const std::size_t batch = y.rows() / seq_len;
    std::vector<int> first(batch);
    for (std::size_t b = 0; b < batch; ++b) first[b] = static_cast<int>(b * seq_len);
    return ad::add_row_bias(ad::matmul(ad::gather_rows(y, first), head.weight), head.bias);
  }
  auto pooled = pooled_latent(y, head, seq_len);
  auto hidden = ad::silu(ad::add_row_bias(ad::matmul(pooled, head.hidden_w), head.hidden_b));
  return ad::add_row_bias(ad::matmul(hidden, head.out_w), head.out_b);
}

template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[best]) best = j;
    out[r] = static_cast<int>(best);
  }
  return out;
}

std::uint64_t f_theta_call_count() { return g_f_theta_calls; }

#define PTRM_INSTANTIATE_MODEL(T)                                                                  \
  template struct QHead<T>;                                                                        \
  template struct ModelParams<T>;                                                                  \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                       \
  template Carry<T> zero_carry<T>(const ModelConfig&, std::size_t);                                \
  template Var<T> embed_inputs(const ModelParams<T>&, std::span<const int>);                       \
  template Var<T> f_theta(const Var<T>&, const ModelParams<T>&);                                   \
  template CarryVars<T> latent_recursion(const Var<T>&, CarryVars<T>, int, const ModelParams<T>&); \
  template CarryVars<T> deep_recursion(const Var<T>&, const Carry<T>&, int, const ModelParams<T>&, \
                                       GradMode);                                                  \
  template Var<T> output_logits(const Var<T>&, const ModelParams<T>&);                             \
  template Var<T> pooled_latent(const Var<T>&, const QHead<T>&, std::size_t);                      \
  template Var<T> q_logits(const Var<T>&, const QHead<T>&, std::size_t);                           \
  template std::vector<int> argmax_rows(const Tensor<T>&);

PTRM_INSTANTIATE_MODEL(float)
PTRM_INSTANTIATE_MODEL(double)

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

#undef PTRM_INSTANTIATE_MODEL

}  // namespace ptrm
