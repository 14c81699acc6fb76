#include "ptrm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

namespace ptrm {

namespace {

thread_local bool g_grad_enabled = true;

// Sum of squares with a fixed lane split, so it vectorizes without
// reassociation flags and stays a pure function of the row.
template <typename T>
T row_sum_squares(const T* x, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += x[j + l] * x[j + l];
  for (; j < n; ++j) lanes[j % kLanes] += x[j] * x[j];
  T total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
  return total;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!t.all_finite()) throw NonFiniteError(std::string("non-finite value produced by ") + op);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractViolation(what);
}

template <typename T>
void require_matrix(const Var<T>& v, const char* op) {
  require(v.defined() && v.shape().size() == 2,
          std::string(op) + ": expected a rank-2 tensor, got " +
              (v.defined() ? shape_string(v.shape()) : std::string("<undefined>")));
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                      " vs " + shape_string(b.shape()));
}

// Builds the result node; graph edges are only recorded when gradients are
// enabled and some parent needs them.
template <typename T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  check_finite(value, op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
    node->requires_grad = true;
  }
  return Var<T>::from_node(std::move(node));
}

template <typename T>
void accumulate(Node<T>& target, const Tensor<T>& delta) {
  if (!target.requires_grad) return;
  auto& g = target.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename T>
Var<T> Var<T>::parameter(Tensor<T> value) {
  check_finite(value, "parameter");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return from_node(std::move(node));
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  check_finite(value, "constant");
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = "constant";
  return from_node(std::move(node));
}

template <typename T>
Tensor<T>& Var<T>::mutable_value() {
  require(node_->parents.empty(), "mutable_value() is only available on leaf nodes");
  return node_->value;
}

template <typename T>
Tensor<T> Var<T>::grad() const {
  if (node_->grad.shape() == node_->value.shape()) return node_->grad;
  return Tensor<T>(node_->value.shape());
}

template <typename T>
void Var<T>::zero_grad() {
  node_->grad_buffer().fill(T(0));
}

namespace ad {

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(std::move(out), "add", {a.shared(), b.shared()}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return make_result<T>(std::move(out), "sub", {a.shared(), b.shared()}, [](Node<T>& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return make_result<T>(std::move(out), "mul", {a.shared(), b.shared()}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= s;
  return make_result<T>(std::move(out), "scale", {a.shared()}, [s](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

template <typename T>
Var<T> add_row_bias(const Var<T>& x, const Var<T>& bias) {
  require_matrix(x, "add_row_bias");
  require(bias.value().size() == x.cols(), "add_row_bias: bias length must equal column count");
  Tensor<T> out = x.value();
  const std::size_t m = x.rows(), n = x.cols();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += bv[j];
  return make_result<T>(std::move(out), "add_row_bias", {x.shared(), bias.shared()},
                        [m, n](Node<T>& self) {
                          accumulate(*self.parents[0], self.grad);
                          auto& pb = *self.parents[1];
                          if (pb.requires_grad) {
                            auto& g = pb.grad_buffer();
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
                          }
                        });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, "matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
  Tensor<T> out = Tensor<T>::matrix(m, n);
  kernels::matmul(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
  return make_result<T>(std::move(out), "matmul", {a.shared(), b.shared()},
                        [m, k, n](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          const T* g = self.grad.data().data();
                          if (pa.requires_grad)
                            kernels::matmul_bt_acc(g, pb.value.data().data(),
                                                   pa.grad_buffer().data().data(), m, n, k);
                          if (pb.requires_grad)
                            kernels::matmul_at_acc(pa.value.data().data(), g,
                                                   pb.grad_buffer().data().data(), m, k, n);
                        });
}

template <typename T>
Var<T> mix_positions(const Var<T>& mix, const Var<T>& x) {
  require_matrix(mix, "mix_positions");
  require_matrix(x, "mix_positions");
  const std::size_t len = mix.rows();
  require(mix.cols() == len, "mix_positions: mixing matrix must be square");
  require(len > 0 && x.rows() % len == 0, "mix_positions: row count must be a multiple of L");
  const std::size_t blocks = x.rows() / len, h = x.cols();
  Tensor<T> out = Tensor<T>::matrix(x.rows(), h);
  for (std::size_t b = 0; b < blocks; ++b) {
    kernels::matmul(mix.value().data().data(), x.value().data().data() + b * len * h,
                    out.data().data() + b * len * h, len, len, h);
  }
  return make_result<T>(std::move(out), "mix_positions", {mix.shared(), x.shared()},
                        [len, blocks, h](Node<T>& self) {
                          auto& pm = *self.parents[0];
                          auto& px = *self.parents[1];
                          for (std::size_t b = 0; b < blocks; ++b) {
                            const T* g = self.grad.data().data() + b * len * h;
                            if (px.requires_grad)
                              kernels::matmul_at_acc(pm.value.data().data(), g,
                                                     px.grad_buffer().data().data() + b * len * h,
                                                     len, len, h);
                            if (pm.requires_grad)
                              kernels::matmul_bt_acc(g, px.value.data().data() + b * len * h,
                                                     pm.grad_buffer().data().data(), len, h, len);
                          }
                        });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const int> ids) {
  require_matrix(table, "gather_rows");
  const std::size_t n = table.cols(), rows = table.rows();
  Tensor<T> out = Tensor<T>::matrix(ids.size(), n);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < rows,
            "gather_rows: id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(rows) + ")");
    auto src = table.value().row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return make_result<T>(std::move(out), "gather_rows", {table.shared()},
                        [idx = std::move(idx), n](Node<T>& self) {
                          auto& g = self.parents[0]->grad_buffer();
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            T* dst = g.data().data() + static_cast<std::size_t>(idx[i]) * n;
                            const T* src = self.grad.data().data() + i * n;
                            for (std::size_t j = 0; j < n; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Var<T> rms_norm(const Var<T>& x, const Var<T>& gain, T eps) {
  require_matrix(x, "rms_norm");
  const std::size_t m = x.rows(), n = x.cols();
  require(gain.value().size() == n, "rms_norm: gain length must equal feature count");
  Tensor<T> normed = Tensor<T>::matrix(m, n);  // x / rms, kept for backward
  std::vector<T> inv_rms(m);
  Tensor<T> out = Tensor<T>::matrix(m, n);
  const T* gv = gain.value().data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* xr = x.value().data().data() + i * n;
    T* nr = normed.data().data() + i * n;
    T* orow = out.data().data() + i * n;
    const T inv = T(1) / std::sqrt(row_sum_squares(xr, n) / static_cast<T>(n) + eps);
    inv_rms[i] = inv;
    for (std::size_t j = 0; j < n; ++j) {
      nr[j] = xr[j] * inv;
      orow[j] = nr[j] * gv[j];
    }
  }
  return make_result<T>(
      std::move(out), "rms_norm", {x.shared(), gain.shared()},
      [normed = std::move(normed), inv_rms = std::move(inv_rms), m, n](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        const auto& g = self.grad;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) gg[j] += g(i, j) * normed(i, j);
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          const auto& gv = pg.value;
          for (std::size_t i = 0; i < m; ++i) {
            T dot = 0;
            for (std::size_t j = 0; j < n; ++j) dot += g(i, j) * gv[j] * normed(i, j);
            dot /= static_cast<T>(n);
            for (std::size_t j = 0; j < n; ++j)
              gx(i, j) += (g(i, j) * gv[j] - normed(i, j) * dot) * inv_rms[i];
          }
        }
      });
}

template <typename T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v / (T(1) + std::exp(-v));
  return make_result<T>(std::move(out), "silu", {x.shared()}, [](Node<T>& self) {
    auto& px = *self.parents[0];
    auto& g = px.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = px.value[i];
      const T s = T(1) / (T(1) + std::exp(-v));
      g[i] += self.grad[i] * s * (T(1) + v * (T(1) - s));
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  require_matrix(x, "transpose");
  const std::size_t m = x.rows(), n = x.cols();
  Tensor<T> out = Tensor<T>::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = x.value()(i, j);
  return make_result<T>(std::move(out), "transpose", {x.shared()}, [m, n](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g(i, j) += self.grad(j, i);
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  return make_result<T>(Tensor<T>::scalar(s), "sum", {x.shared()}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0];
    for (auto& v : g.storage()) v += up;
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x.value().size() > 0, "mean: empty tensor");
  const T inv = T(1) / static_cast<T>(x.value().size());
  T s = 0;
  for (T v : x.value().data()) s += v;
  return make_result<T>(Tensor<T>::scalar(s * inv), "mean", {x.shared()}, [inv](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const T up = self.grad[0] * inv;
    for (auto& v : g.storage()) v += up;
  });
}

template <typename T>
Var<T> concat_cols(const Var<T>& a, const Var<T>& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  require(a.rows() == b.rows(), "concat_cols: row counts differ");
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols();
  Tensor<T> out = Tensor<T>::matrix(m, na + nb);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(a.value().row(i).begin(), a.value().row(i).end(), out.row(i).begin());
    std::copy(b.value().row(i).begin(), b.value().row(i).end(), out.row(i).begin() + na);
  }
  return make_result<T>(std::move(out), "concat_cols", {a.shared(), b.shared()},
                        [m, na, nb](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          for (std::size_t i = 0; i < m; ++i) {
                            if (pa.requires_grad) {
                              auto& g = pa.grad_buffer();
                              for (std::size_t j = 0; j < na; ++j) g(i, j) += self.grad(i, j);
                            }
                            if (pb.requires_grad) {
                              auto& g = pb.grad_buffer();
                              for (std::size_t j = 0; j < nb; ++j) g(i, j) += self.grad(i, na + j);
                            }
                          }
                        });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  auto node = std::make_shared<Node<T>>();
  node->value = x.value();
  node->op = "detach";
  return Var<T>::from_node(std::move(node));
}

template <typename T>
Var<T> attention_pool(const Var<T>& x, const Var<T>& scores, std::size_t block) {
  require_matrix(x, "attention_pool");
  require(block > 0 && x.rows() % block == 0, "attention_pool: rows must be a multiple of block");
  require(scores.value().size() == x.rows(), "attention_pool: one score per row required");
  const std::size_t groups = x.rows() / block, h = x.cols();
  Tensor<T> weights = Tensor<T>::matrix(x.rows(), 1);
  Tensor<T> out = Tensor<T>::matrix(groups, h);
  const auto& sv = scores.value();
  const auto& xv = x.value();
  for (std::size_t g = 0; g < groups; ++g) {
    T mx = sv[g * block];
    for (std::size_t l = 1; l < block; ++l) mx = std::max(mx, sv[g * block + l]);
    T z = 0;
    for (std::size_t l = 0; l < block; ++l) {
      weights[g * block + l] = std::exp(sv[g * block + l] - mx);
      z += weights[g * block + l];
    }
    for (std::size_t l = 0; l < block; ++l) {
      const std::size_t r = g * block + l;
      weights[r] /= z;
      for (std::size_t j = 0; j < h; ++j) out(g, j) += weights[r] * xv(r, j);
    }
  }
  return make_result<T>(
      std::move(out), "attention_pool", {x.shared(), scores.shared()},
      [weights = std::move(weights), groups, block, h](Node<T>& self) {
        auto& px = *self.parents[0];
        auto& ps = *self.parents[1];
        for (std::size_t g = 0; g < groups; ++g) {
          const T* up = self.grad.data().data() + g * h;
          std::vector<T> da(block);
          T weighted = 0;
          for (std::size_t l = 0; l < block; ++l) {
            const std::size_t r = g * block + l;
            T d = 0;
            for (std::size_t j = 0; j < h; ++j) d += up[j] * px.value(r, j);
            da[l] = d;
            weighted += weights[r] * d;
            if (px.requires_grad) {
              auto& gx = px.grad_buffer();
              for (std::size_t j = 0; j < h; ++j) gx(r, j) += weights[r] * up[j];
            }
          }
          if (ps.requires_grad) {
            auto& gs = ps.grad_buffer();
            for (std::size_t l = 0; l < block; ++l) {
              const std::size_t r = g * block + l;
              gs[r] += weights[r] * (da[l] - weighted);
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> targets, int ignore_id,
                             std::size_t segment_rows) {
  require_matrix(logits, "softmax_cross_entropy");
  const std::size_t rows = logits.rows(), vocab = logits.cols();
  require(rows >= 1, "softmax_cross_entropy: need at least one row");
  require(targets.size() == rows, "softmax_cross_entropy: one target per row required");
  const std::size_t seg = segment_rows == 0 ? rows : segment_rows;
  require(rows % seg == 0, "softmax_cross_entropy: rows must be a multiple of segment_rows");
  for (int t : targets) {
    require(t == ignore_id || (t >= 0 && static_cast<std::size_t>(t) < vocab),
            "softmax_cross_entropy: target " + std::to_string(t) + " outside [0," +
                std::to_string(vocab) + ")");
  }
  const std::size_t segments = rows / seg;
  // Row weight = 1 / (segments * non-ignored rows in its segment).
  std::vector<T> row_weight(rows, T(0));
  for (std::size_t s = 0; s < segments; ++s) {
    std::size_t count = 0;
    for (std::size_t r = s * seg; r < (s + 1) * seg; ++r) count += targets[r] != ignore_id;
    if (count == 0) continue;
    const T w = T(1) / (static_cast<T>(segments) * static_cast<T>(count));
    for (std::size_t r = s * seg; r < (s + 1) * seg; ++r)
      if (targets[r] != ignore_id) row_weight[r] = w;
  }
  Tensor<T> probs = Tensor<T>::matrix(rows, vocab);
  T loss = 0;
  const auto& lv = logits.value();
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] == ignore_id) continue;
    T mx = lv(r, 0);
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, lv(r, j));
    T z = 0;
    for (std::size_t j = 0; j < vocab; ++j) {
      probs(r, j) = std::exp(lv(r, j) - mx);
      z += probs(r, j);
    }
    for (std::size_t j = 0; j < vocab; ++j) probs(r, j) /= z;
    const T logp = lv(r, static_cast<std::size_t>(targets[r])) - mx - std::log(z);
    loss -= row_weight[r] * logp;
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  return make_result<T>(
      Tensor<T>::scalar(loss), "softmax_cross_entropy", {logits.shared()},
      [probs = std::move(probs), row_weight = std::move(row_weight), tgt = std::move(tgt), ignore_id,
       rows, vocab](Node<T>& self) {
        auto& g = self.parents[0]->grad_buffer();
        const T up = self.grad[0];
        for (std::size_t r = 0; r < rows; ++r) {
          if (tgt[r] == ignore_id) continue;
          const T w = up * row_weight[r];
          for (std::size_t j = 0; j < vocab; ++j) g(r, j) += w * probs(r, j);
          g(r, static_cast<std::size_t>(tgt[r])) -= w;
        }
      });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> targets) {
  const std::size_t n = logits.value().size();
  require(n >= 1, "bce_with_logits: empty input");
  require(targets.size() == n, "bce_with_logits: one target per logit required");
  for (T t : targets) require(t == T(0) || t == T(1), "bce_with_logits: target must be 0 or 1");
  const T inv = T(1) / static_cast<T>(n);
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits.value()[i];
    loss += softplus(x) - static_cast<double>(targets[i]) * x;
  }
  std::vector<T> tgt(targets.begin(), targets.end());
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(loss * inv)), "bce_with_logits",
                        {logits.shared()}, [tgt = std::move(tgt), inv](Node<T>& self) {
                          auto& px = *self.parents[0];
                          auto& g = px.grad_buffer();
                          const T up = self.grad[0] * inv;
                          for (std::size_t i = 0; i < g.size(); ++i)
                            g[i] += up * (static_cast<T>(sigmoid(px.value[i])) - tgt[i]);
                        });
}

}  // namespace ad

template <typename T>
void backward(const Var<T>& root) {
  require(root.defined() && root.value().size() == 1, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* node : order) {
    if (node->backward_fn) node->grad_buffer().fill(T(0));
  }
  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

template <typename T>
std::vector<Tensor<T>> finite_difference_gradient(const std::function<T()>& loss_fn,
                                                  std::span<Var<T>* const> params, T step) {
  require(step > T(0), "finite_difference_gradient: step must be positive");
  std::vector<Tensor<T>> grads;
  grads.reserve(params.size());
  for (Var<T>* p : params) {
    Tensor<T>& value = p->mutable_value();
    Tensor<T> g(value.shape());
    for (std::size_t i = 0; i < value.size(); ++i) {
      const T original = value[i];
      value[i] = original + step;
      const T up = loss_fn();
      value[i] = original - step;
      const T down = loss_fn();
      value[i] = original;
      g[i] = (up - down) / (T(2) * step);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

#define PTRM_INSTANTIATE_AUTODIFF(T)                                                               \
  template class Var<T>;                                                                           \
  template Var<T> ad::add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> ad::sub(const Var<T>&, const Var<T>&);                                           \
  template Var<T> ad::mul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> ad::scale(const Var<T>&, T);                                                     \
  template Var<T> ad::add_row_bias(const Var<T>&, const Var<T>&);                                  \
  template Var<T> ad::matmul(const Var<T>&, const Var<T>&);                                        \
  template Var<T> ad::mix_positions(const Var<T>&, const Var<T>&);                                 \
  template Var<T> ad::gather_rows(const Var<T>&, std::span<const int>);                            \
  template Var<T> ad::rms_norm(const Var<T>&, const Var<T>&, T);                                   \
  template Var<T> ad::silu(const Var<T>&);                                                         \
  template Var<T> ad::transpose(const Var<T>&);                                                    \
  template Var<T> ad::sum(const Var<T>&);                                                          \
  template Var<T> ad::mean(const Var<T>&);                                                         \
  template Var<T> ad::concat_cols(const Var<T>&, const Var<T>&);                                   \
  template Var<T> ad::detach(const Var<T>&);                                                       \
  template Var<T> ad::attention_pool(const Var<T>&, const Var<T>&, std::size_t);                   \
  template Var<T> ad::softmax_cross_entropy(const Var<T>&, std::span<const int>, int, std::size_t); \
  template Var<T> ad::bce_with_logits(const Var<T>&, std::span<const T>);                          \
  template void backward(const Var<T>&);                                                           \
  template std::vector<Tensor<T>> finite_difference_gradient(const std::function<T()>&,            \
                                                             std::span<Var<T>* const>, T);

PTRM_INSTANTIATE_AUTODIFF(float)
PTRM_INSTANTIATE_AUTODIFF(double)

#undef PTRM_INSTANTIATE_AUTODIFF

}  // namespace ptrm
