#include <cmath>

#include "doctest.h"
#include "raddet/optim.hpp"
#include "raddet/losses.hpp"
#include "raddet/rng.hpp"

using namespace raddet;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo, double hi, bool grad = false) {
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), grad);
}

}  // namespace

TEST_CASE("heatmap focal loss closed forms") {
  const double ln2 = std::log(2.0);
  SUBCASE("single positive") {
    const Tensor l = heatmap_focal(Tensor({1, 1, 1, 1}, {0.5}), Tensor({1, 1, 1, 1}, {1.0}));
    CHECK(l.item() == doctest::Approx(0.25 * ln2).epsilon(1e-14));
  }
  SUBCASE("penalty-reduced negative, no peaks") {
    // -(1-y)^4 p^2 log(1-p) with y = p = 0.5, normaliser max(1, 0) = 1
    const Tensor l = heatmap_focal(Tensor({1, 1, 1, 1}, {0.5}), Tensor({1, 1, 1, 1}, {0.5}));
    CHECK(l.item() == doctest::Approx(std::pow(0.5, 4) * 0.25 * ln2).epsilon(1e-14));
  }
  SUBCASE("normalised by the number of peaks") {
    const Tensor pred({1, 1, 1, 3}, {0.5, 0.5, 0.2});
    const Tensor target({1, 1, 1, 3}, {1.0, 1.0, 0.0});
    const double expect = (2 * 0.25 * ln2 - 0.04 * std::log(0.8)) / 2.0;
    CHECK(heatmap_focal(pred, target).item() == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("near-perfect prediction is near zero") {
    const Tensor pred({1, 1, 1, 3}, {1.0 - 1e-9, 1e-9, 0.5});
    const Tensor target({1, 1, 1, 3}, {1.0, 0.0, 0.999});
    CHECK(heatmap_focal(pred, target).item() < 1e-8);
  }
  SUBCASE("saturated predictions are clamped") {
    const Tensor l = heatmap_focal(Tensor({1, 1, 1, 2}, {0.0, 1.0}), Tensor({1, 1, 1, 2}, {1.0, 0.0}));
    CHECK(std::isfinite(l.item()));
    CHECK(l.item() > 10.0);
  }
  SUBCASE("out-of-range predictions are rejected") {
    CHECK_THROWS_AS(heatmap_focal(Tensor({1, 1, 1, 1}, {1.5}), Tensor({1, 1, 1, 1}, {1.0})), std::invalid_argument);
    CHECK_THROWS_AS(heatmap_focal(Tensor({1, 1, 1, 1}, {NAN}), Tensor({1, 1, 1, 1}, {1.0})), std::invalid_argument);
    CHECK_THROWS_AS(heatmap_focal(Tensor({1, 1, 1, 2}), Tensor({1, 1, 2, 1})), std::invalid_argument);
  }
}

TEST_CASE("offset and heading loss closed forms") {
  const Tensor mask({1, 1, 1}, {1.0});
  SUBCASE("focal BCE on a single cell") {
    // t = (0.5 + 1)/2 = 0.75, p = 0.5: |t-p|^2 BCE = 0.0625 ln 2; second channel has p = t
    const Tensor pred({1, 2, 1, 1}, {0.5, 0.3});
    const Tensor target({1, 2, 1, 1}, {0.5, -0.4});
    CHECK(offset_loss(pred, target, mask).item() == doctest::Approx(0.0625 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("zero when prediction equals target") {
    const Tensor pred({1, 2, 1, 1}, {0.75, 0.25});
    const Tensor target({1, 2, 1, 1}, {0.5, -0.5});
    CHECK(offset_loss(pred, target, mask).item() == 0.0);
    CHECK(offset_l1_loss(pred, target, mask).item() == 0.0);
  }
  SUBCASE("L1 alternative") {
    const Tensor pred({1, 2, 1, 1}, {0.5, 0.5});
    const Tensor target({1, 2, 1, 1}, {0.5, -0.25});
    CHECK(offset_l1_loss(pred, target, mask).item() == doctest::Approx(0.75));
  }
  SUBCASE("heading MSE") {
    const Tensor pred({1, 2, 1, 1}, {0.0, 0.0});
    const Tensor target({1, 2, 1, 1}, {0.0, 1.0});
    CHECK(heading_mse(pred, target, mask).item() == doctest::Approx(0.5));
  }
  SUBCASE("empty masks give zero") {
    Rng rng(1);
    const Tensor pred = random_tensor({2, 2, 3, 3}, rng, 0.1, 0.9, true);
    const Tensor target = random_tensor({2, 2, 3, 3}, rng, -1, 1);
    const Tensor l = offset_loss(pred, target, Tensor({2, 3, 3}));
    CHECK(l.item() == 0.0);
    CHECK(heading_mse(pred, target, Tensor({2, 3, 3})).item() == 0.0);
    l.backward();
    for (double g : pred.grad()) CHECK(g == 0.0);
  }
  SUBCASE("masked-out cells do not count") {
    const Tensor pred({1, 2, 1, 2}, {0.5, 0.9, 0.3, 0.9});
    const Tensor target({1, 2, 1, 2}, {0.5, -1.0, -0.4, 1.0});
    CHECK(offset_loss(pred, target, Tensor({1, 1, 2}, {1.0, 0.0})).item() ==
          doctest::Approx(0.0625 * std::log(2.0)).epsilon(1e-14));
  }
  SUBCASE("mask shape is checked") {
    CHECK_THROWS_AS(heading_mse(Tensor({1, 2, 2, 2}), Tensor({1, 2, 2, 2}), Tensor({1, 2, 3})), std::invalid_argument);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(2);
  const Tensor pred = random_tensor({2, 3, 4, 4}, rng, 0.05, 0.95, true);
  std::vector<double> y(pred.numel());
  for (auto& v : y) v = rng.bernoulli(0.1) ? 1.0 : rng.uniform(0.0, 0.9);
  const Tensor heat({2, 3, 4, 4}, y);
  CHECK(grad_check([&] { return heatmap_focal(pred, heat); }, {pred}, 1e-5, 0, 0, 1e-4).max_rel_error < 1e-7);

  const Tensor off = random_tensor({2, 2, 4, 4}, rng, 0.05, 0.95, true);
  const Tensor off_t = random_tensor({2, 2, 4, 4}, rng, -1, 1);
  std::vector<double> m(32);
  for (auto& v : m) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  const Tensor mask({2, 4, 4}, m);
  CHECK(grad_check([&] { return offset_loss(off, off_t, mask); }, {off}, 1e-5, 0, 0, 1e-4).max_rel_error < 1e-7);
  CHECK(grad_check([&] { return offset_l1_loss(off, off_t, mask); }, {off}, 1e-5, 0, 0, 1e-4).max_rel_error < 1e-7);
  CHECK(grad_check([&] { return heading_mse(off, off_t, mask); }, {off}, 1e-5, 0, 0, 1e-4).max_rel_error < 1e-7);
}

TEST_CASE("total loss is linear in the weights") {
  Rng rng(3);
  NetworkOutput out{random_tensor({1, 3, 4, 4}, rng, 0.05, 0.95), random_tensor({1, 2, 4, 4}, rng, 0.05, 0.95),
                    random_tensor({1, 2, 1, 1}, rng, -0.9, 0.9)};
  TargetMaps maps = empty_targets(4, 4);
  maps.heatmap[5] = 1.0;
  maps.offset_mask[5] = 1.0;
  maps.offset[5] = 0.3;
  maps.heading_mask[0] = 1.0;
  maps.heading[1] = 1.0;
  const TargetBatch tb = make_target_batch({maps});
  CHECK(tb.heading.shape() == Shape{1, 2, 1, 1});

  LossWeights w;
  const auto base = total_loss(out, tb, w);
  CHECK(base.total.item() == doctest::Approx(base.heatmap + base.offset + base.heading).epsilon(1e-15));
  w.w2 = 2.0;
  const auto doubled = total_loss(out, tb, w);
  CHECK(doubled.total.item() - base.total.item() == doctest::Approx(base.offset).epsilon(1e-12));
  w.w2 = 1.0;
  w.offset_l1 = true;
  const auto l1 = total_loss(out, tb, w);
  CHECK(l1.offset != base.offset);
}
