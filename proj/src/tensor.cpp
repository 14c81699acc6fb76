#include "ptrm/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace ptrm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace kernels {
namespace {

// Every element of C is produced by the same sequence: start from its
// current value and add a[i,p] * b[p,j] for p = 0..k-1, one fused
// multiply-add at a time. Tiles, tails and row counts only change which
// elements are computed together, never the arithmetic, so a row of the
// result does not depend on how many other rows share the call.

template <typename T, int R>
inline void row_block(const T* __restrict a, std::size_t lda, const T* __restrict b,
                      T* __restrict c, std::size_t ldc, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* __restrict brow = b + p * n;
    T coef[R];
    for (int r = 0; r < R; ++r) coef[r] = a[r * lda + p];
    for (int r = 0; r < R; ++r) {
      T* __restrict crow = c + r * ldc;
      const T s = coef[r];
      for (std::size_t j = 0; j < n; ++j) crow[j] += s * brow[j];
    }
  }
}

template <typename T>
void generic_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) row_block<T, 4>(a + i * k, k, b, c + i * n, n, k, n);
  for (; i < m; ++i) row_block<T, 1>(a + i * k, k, b, c + i * n, n, k, n);
}

#if defined(__AVX512F__)
// R rows x V 16-float vectors of C held in registers across the k loop.
// The last vector of a tile may be partial; it is handled with a mask.
template <int R, int V>
inline void tile_f32(const float* __restrict a, std::size_t lda, const float* __restrict b, std::size_t ldb,
                     float* __restrict c, std::size_t ldc, std::size_t k, __mmask16 last_mask) {
  __m512 acc[R][V];
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v)
      acc[r][v] = v == V - 1 ? _mm512_maskz_loadu_ps(last_mask, c + r * ldc + 16 * v)
                             : _mm512_loadu_ps(c + r * ldc + 16 * v);
  for (std::size_t p = 0; p < k; ++p) {
    __m512 bv[V];
    for (int v = 0; v < V; ++v)
      bv[v] = v == V - 1 ? _mm512_maskz_loadu_ps(last_mask, b + p * ldb + 16 * v)
                         : _mm512_loadu_ps(b + p * ldb + 16 * v);
    for (int r = 0; r < R; ++r) {
      const __m512 s = _mm512_set1_ps(a[r * lda + p]);
      for (int v = 0; v < V; ++v) acc[r][v] = _mm512_fmadd_ps(s, bv[v], acc[r][v]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int v = 0; v < V; ++v) {
      if (v == V - 1)
        _mm512_mask_storeu_ps(c + r * ldc + 16 * v, last_mask, acc[r][v]);
      else
        _mm512_storeu_ps(c + r * ldc + 16 * v, acc[r][v]);
    }
}

template <int R>
inline void row_panel_f32(const float* a, const float* b, float* c, std::size_t k, std::size_t n) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) tile_f32<R, 2>(a, k, b + j, n, c + j, n, k, 0xFFFF);
  const std::size_t rest = n - j;
  if (rest == 0) return;
  const auto tail_mask = [](std::size_t cnt) {
    return static_cast<__mmask16>(cnt >= 16 ? 0xFFFF : ((1u << cnt) - 1u));
  };
  if (rest > 16)
    tile_f32<R, 2>(a, k, b + j, n, c + j, n, k, tail_mask(rest - 16));
  else
    tile_f32<R, 1>(a, k, b + j, n, c + j, n, k, tail_mask(rest));
}

void avx512_acc(const float* a, const float* b, float* c, std::size_t m, std::size_t k, std::size_t n) {
  std::size_t i = 0;
  for (; i + 6 <= m; i += 6) row_panel_f32<6>(a + i * k, b, c + i * n, k, n);
  switch (m - i) {
    case 5: row_panel_f32<5>(a + i * k, b, c + i * n, k, n); break;
    case 4: row_panel_f32<4>(a + i * k, b, c + i * n, k, n); break;
    case 3: row_panel_f32<3>(a + i * k, b, c + i * n, k, n); break;
    case 2: row_panel_f32<2>(a + i * k, b, c + i * n, k, n); break;
    case 1: row_panel_f32<1>(a + i * k, b, c + i * n, k, n); break;
    default: break;
  }
}
#endif

template <typename T>
void transpose_into(std::vector<T>& dst, const T* src, std::size_t rows, std::size_t cols) {
  dst.resize(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

}  // namespace

template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    avx512_acc(a, b, c, m, k, n);
    return;
  }
#endif
  generic_acc(a, b, c, m, k, n);
}

template <typename T>
void matmul(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, T(0));
  matmul_acc(a, b, c, m, k, n);
}

template <typename T>
void matmul_bt_acc(const T* g, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  // Materialize B^T once so the product runs through the row kernel.
  thread_local std::vector<T> bt;
  transpose_into(bt, b, k, n);
  matmul_acc(g, bt.data(), c, m, n, k);
}

template <typename T>
void matmul_at_acc(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  thread_local std::vector<T> at;
  transpose_into(at, a, m, k);
  matmul_acc(at.data(), g, c, k, m, n);
}

template void matmul<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void matmul<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void matmul_acc<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void matmul_acc<double>(const double*, const double*, double*, std::size_t, std::size_t,
                                 std::size_t);
template void matmul_bt_acc<float>(const float*, const float*, float*, std::size_t, std::size_t,
                                   std::size_t);
template void matmul_bt_acc<double>(const double*, const double*, double*, std::size_t, std::size_t,
                                    std::size_t);
template void matmul_at_acc<float>(const float*, const float*, float*, std::size_t, std::size_t,
                                   std::size_t);
template void matmul_at_acc<double>(const double*, const double*, double*, std::size_t, std::size_t,
                                    std::size_t);

}  // namespace kernels
}  // namespace ptrm
