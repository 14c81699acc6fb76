#include <doctest.h>

#include <cmath>
#include <limits>

#include "ptrm/tensor.hpp"
#include "test_util.hpp"

using namespace ptrm;
using ptrm::testing::random_tensor;

namespace {

// Textbook triple loop, accumulating in long double.
template <typename T>
std::vector<long double> naive(const Tensor<T>& a, const Tensor<T>& b) {
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<long double> c(m * n, 0.0L);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += static_cast<long double>(a(i, p)) * b(p, j);
  return c;
}

template <typename T>
Tensor<T> transposed(const Tensor<T>& a) {
  Tensor<T> t = Tensor<T>::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("shape bookkeeping") {
    Tensor<float> t(Shape{3, 4}, 2.0f);
    CHECK(t.size() == 12);
    CHECK(t.rows() == 3);
    CHECK(t.cols() == 4);
    CHECK(shape_string(t.shape()) == "[3,4]");
    CHECK(Tensor<float>::scalar(5.0f).item() == 5.0f);
    CHECK_THROWS_AS(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), ContractViolation);
    CHECK_THROWS_AS(t.item(), ContractViolation);
  }

  TEST_CASE("all_finite catches nan and inf but not large values") {
    auto t = Tensor<double>::matrix(2, 2, {1.0, -3e300, 0.0, 1e-310});
    CHECK(t.all_finite());
    t(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    auto f = Tensor<float>::matrix(1, 3, {1.0f, std::numeric_limits<float>::max(), 0.0f});
    CHECK(f.all_finite());
    f[2] = -std::numeric_limits<float>::infinity();
    CHECK_FALSE(f.all_finite());
  }

  TEST_CASE("matmul matches an extended-precision reference") {
    CounterRng rng{11};
    for (int trial = 0; trial < 40; ++trial) {
      const auto m = 1 + rng.below(23), k = 1 + rng.below(70), n = 1 + rng.below(90);
      const auto a = random_tensor<double>(rng, m, k), b = random_tensor<double>(rng, k, n);
      Tensor<double> c = Tensor<double>::matrix(m, n);
      kernels::matmul(a.data().data(), b.data().data(), c.data().data(), m, k, n);
      const auto ref = naive(a, b);
      for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(double(ref[i])).epsilon(1e-12));

      const auto af = a.cast<float>(), bf = b.cast<float>();
      Tensor<float> cf = Tensor<float>::matrix(m, n);
      kernels::matmul(af.data().data(), bf.data().data(), cf.data().data(), m, k, n);
      const auto reff = naive(af, bf);
      for (std::size_t i = 0; i < cf.size(); ++i)
        CHECK(std::abs(cf[i] - double(reff[i])) <= 1e-5 * (1.0 + std::sqrt(double(k))));
    }
  }

  TEST_CASE("float kernel follows the documented fma order exactly") {
    CounterRng rng{12};
    const std::size_t m = 13, k = 37, n = 71;
    const auto a = random_tensor<float>(rng, m, k), b = random_tensor<float>(rng, k, n);
    Tensor<float> c = Tensor<float>::matrix(m, n);
    kernels::matmul(a.data().data(), b.data().data(), c.data().data(), m, k, n);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        float acc = 0.0f;
        for (std::size_t p = 0; p < k; ++p) acc = std::fma(a(i, p), b(p, j), acc);
        REQUIRE(c(i, j) == acc);
      }
  }

  TEST_CASE("property: a row's product does not depend on the rest of the batch") {
    CounterRng rng{13};
    for (int trial = 0; trial < 60; ++trial) {
      const auto m = 1 + rng.below(40), k = 1 + rng.below(130), n = 1 + rng.below(150);
      const auto a = random_tensor<float>(rng, m, k), b = random_tensor<float>(rng, k, n);
      Tensor<float> full = Tensor<float>::matrix(m, n);
      kernels::matmul(a.data().data(), b.data().data(), full.data().data(), m, k, n);
      const auto r = rng.below(m);
      std::vector<float> single(n);
      kernels::matmul(a.data().data() + r * k, b.data().data(), single.data(), 1, k, n);
      for (std::size_t j = 0; j < n; ++j) REQUIRE(single[j] == full(r, j));
    }
  }

  TEST_CASE("transposed variants agree with explicit transposes") {
    CounterRng rng{14};
    for (int trial = 0; trial < 25; ++trial) {
      const auto m = 1 + rng.below(20), k = 1 + rng.below(40), n = 1 + rng.below(40);
      const auto g = random_tensor<double>(rng, m, n), b = random_tensor<double>(rng, k, n);
      Tensor<double> c1 = random_tensor<double>(rng, m, k), c2 = c1;
      kernels::matmul_bt_acc(g.data().data(), b.data().data(), c1.data().data(), m, n, k);
      const auto bt = transposed(b);
      kernels::matmul_acc(g.data().data(), bt.data().data(), c2.data().data(), m, n, k);
      CHECK(c1 == c2);

      const auto a = random_tensor<double>(rng, m, k), g2 = random_tensor<double>(rng, m, n);
      Tensor<double> d1 = Tensor<double>::matrix(k, n), d2 = d1;
      kernels::matmul_at_acc(a.data().data(), g2.data().data(), d1.data().data(), m, k, n);
      const auto at = transposed(a);
      kernels::matmul_acc(at.data().data(), g2.data().data(), d2.data().data(), k, m, n);
      CHECK(d1 == d2);
    }
  }

  TEST_CASE("matmul_acc accumulates into existing values") {
    auto a = Tensor<float>::matrix(1, 2, {1.0f, 2.0f});
    auto b = Tensor<float>::matrix(2, 1, {3.0f, 4.0f});
    auto c = Tensor<float>::matrix(1, 1, {10.0f});
    kernels::matmul_acc(a.data().data(), b.data().data(), c.data().data(), 1, 2, 1);
    CHECK(c[0] == 21.0f);
  }
}
