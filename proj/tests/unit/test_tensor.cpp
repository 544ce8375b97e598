#include <cmath>
#include <numeric>

#include "doctest.h"
#include "raddet/ops.hpp"
#include "raddet/optim.hpp"
#include "raddet/rng.hpp"

using namespace raddet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v));
}

// Direct nested-loop cross-correlation.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, Pair2 s, Pair2 p) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const auto oh = (h + 2 * p.h - kh) / s.h + 1, ow = (wd + 2 * p.w - kw) / s.w + 1;
  std::vector<double> out(n * cout * oh * ow, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t co = 0; co < cout; ++co)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t ki = 0; ki < kh; ++ki)
              for (std::size_t kj = 0; kj < kw; ++kj) {
                const long ih = static_cast<long>(r * s.h + ki) - static_cast<long>(p.h);
                const long iw = static_cast<long>(c * s.w + kj) - static_cast<long>(p.w);
                if (ih < 0 || iw < 0 || ih >= static_cast<long>(h) || iw >= static_cast<long>(wd)) continue;
                acc += x.data()[((i * cin + ci) * h + ih) * wd + iw] * w.data()[((co * cin + ci) * kh + ki) * kw + kj];
              }
          out[((i * cout + co) * oh + r) * ow + c] = acc;
        }
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST_CASE("conv2d all-ones center value") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  auto y = conv2d(x, w, Tensor::full({1}, 0.0), 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()[4] == 9.0);
  CHECK(y.data()[0] == 4.0);
}

TEST_CASE("conv2d identity kernel reproduces input") {
  Rng rng(1);
  auto x = random_tensor({2, 1, 5, 6}, rng);
  Tensor w({1, 1, 3, 3});
  w.data_mut()[4] = 1.0;
  auto y = conv2d(x, w, Tensor(), 1, 1);
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("conv2d matches nested-loop oracle") {
  Rng rng(2);
  for (Pair2 stride : {Pair2{2}, Pair2{1}, Pair2{2, 1}}) {
    auto x = random_tensor({1, 2, 5, 5}, rng);
    auto w = random_tensor({3, 2, 3, 3}, rng);
    auto b = random_tensor({3}, rng);
    auto y = conv2d(x, w, b, stride, 1);
    auto ref = conv_oracle(x, w, b, stride, 1);
    REQUIRE(y.numel() == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.data()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("conv2d rejects mismatched channel axis") {
  Tensor x({1, 2, 4, 4});
  Tensor w({1, 3, 3, 3});
  CHECK_THROWS_WITH_AS(conv2d(x, w, Tensor(), 1, 1), doctest::Contains("channel axis (1)"), std::invalid_argument);
  Tensor even({1, 2, 2, 2});
  CHECK_THROWS_WITH_AS(conv2d(x, even, Tensor(), 1, 0), doctest::Contains("odd"), std::invalid_argument);
}

TEST_CASE("conv_transpose2d single pixel upsample") {
  Tensor x = Tensor::full({1, 1, 1, 1}, 3.0);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  auto y = conv_transpose2d(x, w, Tensor(), 2, 0);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.data()) CHECK(v == 3.0);
}

TEST_CASE("conv_transpose2d doubles resolution with k4 s2 p1") {
  Tensor x({1, 3, 4, 4});
  Tensor w({3, 5, 4, 4});
  auto y = conv_transpose2d(x, w, Tensor(), 2, 1);
  CHECK(y.shape() == Shape{1, 5, 8, 8});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Rng rng(3);
  struct Cfg {
    std::size_t h, w, k;
    Pair2 s, p;
  };
  // Sizes chosen so that the transposed output size equals the conv2d input size.
  for (Cfg cfg : {Cfg{7, 7, 3, 2, 1}, Cfg{6, 5, 3, 1, 1}, Cfg{9, 8, 3, {2, 1}, 1}, Cfg{9, 9, 5, 2, 2}, Cfg{5, 7, 1, 1, 0}}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto x = random_tensor({2, 3, cfg.h, cfg.w}, rng);
      auto w = random_tensor({4, 3, cfg.k, cfg.k}, rng);
      auto cx = conv2d(x, w, Tensor(), cfg.s, cfg.p);
      auto y = random_tensor(cx.shape(), rng);
      auto ty = conv_transpose2d(y, w, Tensor(), cfg.s, cfg.p);
      REQUIRE(ty.shape() == x.shape());
      CHECK(std::abs(dot(cx.data(), y.data()) - dot(x.data(), ty.data())) < 1e-10);
    }
  }
}

TEST_CASE("batched_matmul") {
  Rng rng(4);
  SUBCASE("identity") {
    auto a = random_tensor({2, 3, 3}, rng);
    Tensor eye({2, 3, 3});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 3; ++i) eye.data_mut()[c * 9 + i * 4] = 1.0;
    auto y = batched_matmul(a, eye);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(y.data()[i] == a.data()[i]);
  }
  SUBCASE("triple loop oracle, same summation order") {
    auto a = random_tensor({2, 3, 3}, rng);
    auto b = random_tensor({2, 3, 3}, rng);
    auto y = batched_matmul(a, b);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < 3; ++k) acc += a.data()[c * 9 + i * 3 + k] * b.data()[c * 9 + k * 3 + j];
          CHECK(y.data()[c * 9 + i * 3 + j] == acc);
        }
  }
  SUBCASE("zeros") {
    auto y = batched_matmul(Tensor({2, 3, 4}), random_tensor({2, 4, 5}, rng));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("inner mismatch") {
    CHECK_THROWS_AS(batched_matmul(Tensor({1, 2, 3}), Tensor({1, 4, 2})), std::invalid_argument);
  }
}

TEST_CASE("softmax_lastdim") {
  auto u = softmax_lastdim(Tensor::full({4}, 2.5));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  auto y = softmax_lastdim(Tensor({2}, {0.0, std::log(3.0)}));
  CHECK(std::abs(y.data()[0] - 0.25) < 1e-15);
  CHECK(std::abs(y.data()[1] - 0.75) < 1e-15);

  Rng rng(5);
  auto x = random_tensor({3, 7}, rng, -5, 5);
  Tensor shifted({3, 7});
  for (std::size_t i = 0; i < 21; ++i) shifted.data_mut()[i] = x.data()[i] + 123.0;
  auto a = softmax_lastdim(x);
  auto b = softmax_lastdim(shifted);
  for (std::size_t i = 0; i < 21; ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-12);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) s += a.data()[r * 7 + j];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("layernorm_channels") {
  Rng rng(6);
  auto x = random_tensor({1, 4, 2, 2}, rng, -3, 3);
  auto gamma = random_tensor({4}, rng);
  auto beta = random_tensor({4}, rng);
  SUBCASE("unit affine gives zero mean unit variance") {
    auto y = layernorm_channels(x, Tensor::full({4}, 1.0), Tensor({4}), 0.0);
    for (std::size_t p = 0; p < 4; ++p) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 4; ++c) m += y.data()[c * 4 + p];
      m /= 4;
      for (std::size_t c = 0; c < 4; ++c) v += std::pow(y.data()[c * 4 + p] - m, 2);
      v /= 4;
      CHECK(std::abs(m) < 1e-9);
      CHECK(std::abs(v - 1.0) < 1e-9);
    }
  }
  SUBCASE("constant channel vector normalizes to zero") {
    auto y = layernorm_channels(Tensor::full({1, 4, 2, 2}, 7.0), Tensor::full({4}, 1.0), Tensor({4}));
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("scalar-loop oracle") {
    const double eps = 1e-5;
    auto y = layernorm_channels(x, gamma, beta, eps);
    for (std::size_t p = 0; p < 4; ++p) {
      double m = 0, v = 0;
      for (std::size_t c = 0; c < 4; ++c) m += x.data()[c * 4 + p] / 4.0;
      for (std::size_t c = 0; c < 4; ++c) v += (x.data()[c * 4 + p] - m) * (x.data()[c * 4 + p] - m) / 4.0;
      for (std::size_t c = 0; c < 4; ++c) {
        const double ref = gamma.data()[c] * (x.data()[c * 4 + p] - m) / std::sqrt(v + eps) + beta.data()[c];
        CHECK(std::abs(y.data()[c * 4 + p] - ref) < 1e-10);
      }
    }
  }
  SUBCASE("gradient") {
    auto r = grad_check([&] { return sum(mul(layernorm_channels(x, gamma, beta), layernorm_channels(x, gamma, beta))); },
                        {x, gamma, beta});
    CHECK(r.max_rel_error < 1e-6);
  }
}

TEST_CASE("prelu") {
  Tensor x({1, 1, 2}, {-1.0, 2.0});
  auto relu = prelu(x, Tensor({1}, {0.0}));
  CHECK(relu.data()[0] == 0.0);
  CHECK(relu.data()[1] == 2.0);
  auto ident = prelu(x, Tensor({1}, {1.0}));
  CHECK(ident.data()[0] == -1.0);
  CHECK(prelu(Tensor({1, 1}, {-4.0}), Tensor({1}, {0.25})).data()[0] == -1.0);

  Rng rng(7);
  auto xr = random_tensor({2, 3, 4}, rng);
  auto a = random_tensor({3}, rng, 0.1, 0.5);
  CHECK(grad_check([&] { return sum(mul(prelu(xr, a), prelu(xr, a))); }, {xr, a}).max_rel_error < 1e-7);
}

TEST_CASE("batchnorm2d") {
  Rng rng(8);
  SUBCASE("training normalizes batch statistics") {
    Tensor x({4, 2, 3, 3});
    for (auto& v : x.data_mut()) v = 5.0 + 2.0 * rng.normal();
    BatchNormState st(2);
    auto y = batchnorm2d(x, Tensor::full({2}, 1.0), Tensor({2}), st, true);
    for (std::size_t c = 0; c < 2; ++c) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t p = 0; p < 9; ++p) m += y.data()[(i * 2 + c) * 9 + p] / 36.0;
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t p = 0; p < 9; ++p) v += std::pow(y.data()[(i * 2 + c) * 9 + p] - m, 2) / 36.0;
      CHECK(std::abs(m) < 1e-9);
      CHECK(std::abs(v - 1.0) < 1e-4);
      CHECK(st.running_mean[c] == doctest::Approx(0.5).epsilon(0.2));  // 0.9*0 + 0.1*~5
    }
  }
  SUBCASE("eval with unit running stats is identity") {
    auto x = random_tensor({2, 3, 2, 2}, rng);
    BatchNormState st(3);
    auto y = batchnorm2d(x, Tensor::full({3}, 1.0), Tensor({3}), st, false, 0.1, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("training gradient matches finite differences") {
    auto x = random_tensor({2, 3, 4, 4}, rng);
    auto gamma = random_tensor({3}, rng, 0.5, 1.5);
    auto beta = random_tensor({3}, rng);
    auto weights = random_tensor({2, 3, 4, 4}, rng);
    BatchNormState st(3);
    auto r = grad_check([&] { return sum(mul(batchnorm2d(x, gamma, beta, st, true), weights)); }, {x, gamma, beta});
    CHECK(r.max_rel_error < 1e-5);
  }
  SUBCASE("too few values in training mode") {
    BatchNormState st(1);
    CHECK_THROWS_AS(batchnorm2d(Tensor({1, 1, 1, 1}), Tensor::full({1}, 1.0), Tensor({1}), st, true),
                    std::invalid_argument);
  }
}

TEST_CASE("backward basics") {
  Rng rng(9);
  auto x = random_tensor({3, 4}, rng);
  x.set_requires_grad(true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);

  CHECK_THROWS_AS(mul(x, x).backward(), std::invalid_argument);

  // Shared subexpressions accumulate from both paths.
  x.zero_grad();
  auto y = mul(x, x);
  sum(add(y, y)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(4.0 * x.data()[i]));
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x = Tensor::full({2}, 1.0, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("debug checks flag non-finite results") {
  const bool prev = debug_checks();
  set_debug_checks(true);
  Tensor big = Tensor::full({1}, 1e200);
  CHECK_THROWS_AS(mul(big, big), std::runtime_error);
  set_debug_checks(prev);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr against the gradient sign") {
    Tensor p({3}, {1.0, -2.0, 0.5}, true);
    p.grad_mut()[0] = 0.3;
    p.grad_mut()[1] = -4.0;
    p.grad_mut()[2] = 1e-3;
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, st, 1e-3);
    CHECK(std::abs(p.data()[0] - (1.0 - 1e-3)) < 1e-9);
    CHECK(std::abs(p.data()[1] - (-2.0 + 1e-3)) < 1e-9);
    CHECK(std::abs(p.data()[2] - (0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8))) < 1e-15);
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    Tensor p({2}, {1.0, 2.0}, true);
    p.grad_mut();
    std::vector<Tensor> params{p};
    AdamState st;
    adam_step(params, st, 0.1);
    CHECK(p.data()[0] == 1.0);
    CHECK(p.data()[1] == 2.0);
  }
  SUBCASE("two-step scalar trace") {
    // g = 2 on both steps, lr = 0.1.
    // step 1: m=0.2, v=0.004, mhat=2, vhat=4 -> x -= 0.1*2/(2+1e-8)
    // step 2: m=0.38, v=0.007996, mhat=0.38/0.19=2, vhat=0.007996/0.001999=4 -> same update
    const double upd = 0.1 * 2.0 / (2.0 + 1e-8);
    Tensor p({1}, {1.0}, true);
    std::vector<Tensor> params{p};
    AdamState st;
    for (int i = 0; i < 2; ++i) {
      p.grad_mut()[0] = 2.0;
      adam_step(params, st, 0.1);
    }
    CHECK(std::abs(p.data()[0] - (1.0 - 2.0 * upd)) < 1e-12);
    CHECK(st.step == 2);
  }
  SUBCASE("state mismatch") {
    Tensor p = Tensor::zeros({2}, true);
    std::vector<Tensor> params{p};
    AdamState st;
    st.m = {{0.0}};
    st.v = {{0.0}};
    CHECK_THROWS_AS(adam_step(params, st, 0.1), std::invalid_argument);
  }
}

TEST_CASE("grad_check harness") {
  Rng rng(10);
  auto x = random_tensor({5}, rng);
  CHECK(grad_check([&] { return sum(mul(x, x)); }, {x}).max_rel_error < 1e-9);

  auto img = random_tensor({1, 2, 6, 6}, rng);
  auto w = random_tensor({3, 2, 3, 3}, rng);
  auto b = random_tensor({3}, rng);
  auto proj = random_tensor({1, 3, 3, 3}, rng);
  auto r = grad_check([&] { return sum(mul(conv2d(img, w, b, 2, 1), proj)); }, {img, w, b});
  CHECK(r.max_rel_error < 1e-5);

  auto wt = random_tensor({2, 3, 4, 4}, rng);
  auto small = random_tensor({1, 2, 3, 3}, rng);
  auto proj2 = random_tensor({1, 3, 6, 6}, rng);
  auto rt = grad_check([&] { return sum(mul(conv_transpose2d(small, wt, b, 2, 1), proj2)); }, {small, wt, b});
  CHECK(rt.max_rel_error < 1e-5);

  auto a3 = random_tensor({2, 3, 4}, rng);
  auto b3 = random_tensor({2, 4, 3}, rng);
  auto proj3 = random_tensor({2, 3, 3}, rng);
  auto rb = grad_check([&] { return sum(mul(softmax_lastdim(batched_matmul(a3, b3)), transpose_last2(proj3))); },
                       {a3, b3});
  CHECK(rb.max_rel_error < 1e-6);
}
