#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptrm/autodiff.hpp"

namespace ptrm {

enum class QHeadKind { linear_token0, attention_pooled };

/// Where each sub-block's rms-norm sits. `post` normalizes after the
/// residual add, keeping latent magnitudes bounded across long recursions;
/// `pre` normalizes the sub-block input and leaves the residual stream raw.
enum class NormPlacement { post, pre };

std::string to_string(QHeadKind kind);
QHeadKind parse_q_head_kind(const std::string& s);
std::string to_string(NormPlacement placement);
NormPlacement parse_norm_placement(const std::string& s);

struct ModelConfig {
  int vocab = 13;
  int seq_len = 16;
  int hidden = 64;
  int latent_updates = 2;    // n
  int recursions = 2;        // T
  int supervision_steps = 4; // N_sup
  int expansion = 2;
  QHeadKind q_head = QHeadKind::linear_token0;
  int q_hidden = 0;  // pooled head MLP width; 0 means `hidden`
  NormPlacement norm = NormPlacement::post;

  void validate() const;
  int pooled_hidden() const { return q_hidden > 0 ? q_hidden : hidden; }
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct BlockLayer {
  Var<T> mix;         // [L,L]
  Var<T> mix_gain;    // [1,H]
  Var<T> gate;        // [H,e*H]
  Var<T> up;          // [H,e*H]
  Var<T> down;        // [e*H,H]
  Var<T> mlp_gain;    // [1,H]
};

/// Scalar Q head. Only the tensors of the configured kind are populated.
template <typename T>
struct QHead {
  QHeadKind kind = QHeadKind::linear_token0;
  Var<T> weight;   // linear: [H,1]
  Var<T> bias;     // linear: [1,1]
  Var<T> score;    // pooled: [H,1]
  Var<T> hidden_w; // pooled: [H,Hq]
  Var<T> hidden_b; // pooled: [1,Hq]
  Var<T> out_w;    // pooled: [Hq,1]
  Var<T> out_b;    // pooled: [1,1]

  /// Constant copies; gradients taken through them stop at the head input.
  QHead detached() const;
};

template <typename T>
struct NamedParam {
  std::string name;
  Var<T>* var;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Var<T> embedding;  // [V,H]
  std::array<BlockLayer<T>, 2> layers;
  Var<T> out_proj;   // [H,V]
  QHead<T> q_head;

  /// Every trainable tensor, in a fixed order with stable names.
  std::vector<NamedParam<T>> named();
  std::vector<std::pair<std::string, const Tensor<T>*>> tensors() const;

  /// Deep copy (fresh leaf nodes).
  ModelParams clone() const;
  template <typename U>
  ModelParams<U> cast() const;

  void zero_grad();
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

/// Latent state for a batch: z and y are [batch*L, H].
template <typename T>
struct Carry {
  Tensor<T> z;
  Tensor<T> y;

  std::size_t batch(std::size_t seq_len) const { return z.rows() / seq_len; }
  bool operator==(const Carry&) const = default;
};

template <typename T>
Carry<T> zero_carry(const ModelConfig& config, std::size_t batch);

template <typename T>
struct CarryVars {
  Var<T> z;
  Var<T> y;

  Carry<T> values() const { return {z.value(), y.value()}; }
};

enum class GradMode { truncated, none };

/// Embeds a batch of token sequences (concatenated, batch*L ids).
template <typename T>
Var<T> embed_inputs(const ModelParams<T>& params, std::span<const int> tokens);

/// The shared two-layer block.
template <typename T>
Var<T> f_theta(const Var<T>& input, const ModelParams<T>& params);

/// n updates z <- f(x + y + z), then y <- f(y + z).
template <typename T>
CarryVars<T> latent_recursion(const Var<T>& x_emb, CarryVars<T> carry, int n,
                              const ModelParams<T>& params);

/// T latent recursions. Truncated mode records a graph for the last one
/// only; none mode records nothing.
template <typename T>
CarryVars<T> deep_recursion(const Var<T>& x_emb, const Carry<T>& carry, int recursions,
                            const ModelParams<T>& params, GradMode mode);

template <typename T>
Var<T> output_logits(const Var<T>& y, const ModelParams<T>& params);

/// One logit per batch element, shaped [batch,1].
template <typename T>
Var<T> q_logits(const Var<T>& y, const QHead<T>& head, std::size_t seq_len);

/// Attention-pooled latent [batch,H] (pooled head only).
template <typename T>
Var<T> pooled_latent(const Var<T>& y, const QHead<T>& head, std::size_t seq_len);

/// Per-row argmax, ties to the smallest index.
template <typename T>
std::vector<int> argmax_rows(const Tensor<T>& logits);

/// Number of f_theta evaluations on this thread since start.
std::uint64_t f_theta_call_count();

}  // namespace ptrm
