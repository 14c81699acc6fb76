#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "ptrm/tensor.hpp"

namespace ptrm {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

/// Handle to a node in a reverse-mode graph. Copying a Var shares the node.
/// A graph is confined to the thread that built it.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var parameter(Tensor<T> value);
  static Var constant(Tensor<T> value);
  static Var from_node(std::shared_ptr<Node<T>> node) {
    Var v;
    v.node_ = std::move(node);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// Leaf values only; used by optimizers and finite differences.
  Tensor<T>& mutable_value();
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }

  /// Accumulated gradient; zeros if nothing has flowed in yet.
  Tensor<T> grad() const;
  void zero_grad();
  bool requires_grad() const { return node_->requires_grad; }
  bool has_graph() const { return !node_->parents.empty(); }
  const char* op() const { return node_->op; }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

bool grad_enabled();

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Re-enables graph construction inside a NoGradGuard scope.
class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool previous_;
};

namespace ad {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T s);
/// x[m,n] + bias[1,n] broadcast over rows.
template <typename T> Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias);
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// Applies mix[L,L] to every consecutive block of L rows of x.
template <typename T> Var<T> mix_positions(const Var<T>& mix, const Var<T>& x);
/// Embedding lookup: rows of table selected by ids.
template <typename T> Var<T> gather_rows(const Var<T>& table, std::span<const int> ids);
/// Per-row x / rms(x) * gain, gain shaped [1,n].
template <typename T> Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps = T(1e-6));
template <typename T> Var<T> silu(const Var<T>& x);
template <typename T> Var<T> transpose(const Var<T>& x);
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> concat_cols(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> detach(const Var<T>& x);
/// Softmax-weighted sum of each block of `block` rows of x, weights from
/// scores[rows,1]. Returns [rows/block, cols].
template <typename T> Var<T> attention_pool(const Var<T>& x, const Var<T>& scores, std::size_t block);

/// Mean over non-ignored rows of -log softmax(logits)[target]. With
/// segment_rows > 0 the mean is taken per segment and then averaged over
/// segments. A segment whose rows are all ignored contributes 0.
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> targets, int ignore_id,
                             std::size_t segment_rows = 0);

/// Mean over entries of softplus(x) - t*x, t in {0,1}.
template <typename T> Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> targets);

}  // namespace ad

/// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
/// Intermediate gradients are reset first; leaf gradients are not.
template <typename T> void backward(const Var<T>& root);

/// Central-difference estimate of d loss / d param for every coordinate of
/// every param. Params are perturbed in place and restored.
template <typename T>
std::vector<Tensor<T>> finite_difference_gradient(const std::function<T()>& loss_fn,
                                                  std::span<Var<T>* const> params, T step);

// Scalar reference losses, shared by tests and the training diagnostics.
double softplus(double x);
double sigmoid(double x);

}  // namespace ptrm
