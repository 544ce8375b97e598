#include <bit>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "raddet/optim.hpp"
#include "raddet/model.hpp"
#include "raddet/rng.hpp"
#include "oracles.hpp"

using namespace raddet;
using oracle::random_input;
using oracle::random_tensor;
using oracle::same_bytes;

namespace {

ModelConfig small_config(int t_frames = 1) {
  ModelConfig c;
  c.geometry.r_bins = 32;
  c.geometry.a_bins = 32;
  c.geometry.d_bins = 8;
  c.t_frames = t_frames;
  c.enc_channels = {4, 4, 8, 8, 8, 8};
  c.dec_channels = {8, 8, 4, 4};
  return c;
}

}  // namespace

TEST_CASE("cross_attention matches a scalar-loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t C = 1 + rng.below(4), h = 1 + rng.below(5), w = 1 + rng.below(5), d = 1 + rng.below(4);
    const Tensor ra = random_tensor({C, h, w}, rng, -2, 2);
    const Tensor rd = random_tensor({C, h, d}, rng, -2, 2);
    const Tensor ad = random_tensor({C, w, d}, rng, -2, 2);
    const Tensor gamma = random_tensor({C}, rng, 0.5, 1.5);
    const Tensor beta = random_tensor({C}, rng, -0.5, 0.5);
    const Tensor out = cross_attention(ra, rd, ad, gamma, beta);
    REQUIRE(out.shape() == Shape{C, h, w});
    const auto ref = oracle::cross_attention(ra, rd, ad, {gamma.data().begin(), gamma.data().end()},
                                            {beta.data().begin(), beta.data().end()});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(out.data()[i] - ref[i]) < 1e-10);
  }
}

TEST_CASE("cross_attention shapes and degenerate inputs") {
  Rng rng(3);
  SUBCASE("shape audit") {
    const Tensor out = cross_attention(random_tensor({2, 4, 4}, rng), random_tensor({2, 4, 3}, rng),
                                       random_tensor({2, 4, 3}, rng), Tensor::full({2}, 1.0), Tensor({2}));
    CHECK(out.shape() == Shape{2, 4, 4});
    const Tensor batched = cross_attention(random_tensor({3, 2, 4, 4}, rng), random_tensor({3, 2, 4, 3}, rng),
                                           random_tensor({3, 2, 4, 3}, rng), Tensor::full({2}, 1.0), Tensor({2}));
    CHECK(batched.shape() == Shape{3, 2, 4, 4});
  }
  SUBCASE("zero Doppler features give uniform attention") {
    const std::size_t C = 3, h = 4, w = 5, d = 2;
    const Tensor ra = random_tensor({C, h, w}, rng);
    const Tensor out = cross_attention(ra, Tensor({C, h, d}), Tensor({C, w, d}), Tensor::full({C}, 1.0), Tensor({C}));
    // softmax of zeros is 1/w, so the pre-norm map is RA * (1 + 1/w), and layer norm removes the scale.
    std::vector<double> scaled(ra.data().begin(), ra.data().end());
    for (auto& v : scaled) v *= 1.0 + 1.0 / static_cast<double>(w);
    const auto ref = oracle::cross_attention(ra, Tensor({C, h, d}), Tensor({C, w, d}), {1, 1, 1}, {0, 0, 0});
    const auto plain = layernorm_channels(Tensor({1, C, h, w}, scaled), Tensor::full({C}, 1.0), Tensor({C}));
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(out.data()[i] - ref[i]) < 1e-12);
      CHECK(std::abs(out.data()[i] - plain.data()[i]) < 1e-12);
    }
  }
  SUBCASE("mismatched axes are rejected") {
    CHECK_THROWS_AS(cross_attention(random_tensor({2, 4, 4}, rng), random_tensor({2, 3, 3}, rng),
                                    random_tensor({2, 4, 3}, rng), Tensor::full({2}, 1.0), Tensor({2})),
                    std::invalid_argument);
    CHECK_THROWS_AS(cross_attention(random_tensor({2, 4, 4}, rng), random_tensor({2, 4, 3}, rng),
                                    random_tensor({2, 4, 2}, rng), Tensor::full({2}, 1.0), Tensor({2})),
                    std::invalid_argument);
  }
}

TEST_CASE("cross_attention gradients match finite differences") {
  Rng rng(5);
  const Tensor ra = random_tensor({2, 3, 4}, rng, -1, 1, true);
  const Tensor rd = random_tensor({2, 3, 2}, rng, -1, 1, true);
  const Tensor ad = random_tensor({2, 4, 2}, rng, -1, 1, true);
  const Tensor gamma = random_tensor({2}, rng, 0.5, 1.5, true);
  const Tensor beta = random_tensor({2}, rng, -0.5, 0.5, true);
  const Tensor weights = random_tensor({2, 3, 4}, rng);
  auto loss = [&] { return sum(mul(cross_attention(ra, rd, ad, gamma, beta), weights)); };
  const auto res = grad_check(loss, {ra, rd, ad, gamma, beta}, 1e-5, 0, 0, 1e-4);
  CHECK(res.coordinates == 24 + 12 + 16 + 4);
  CHECK(res.max_rel_error < 1e-6);
}

TEST_CASE("model output shapes") {
  Rng rng(1);
  SUBCASE("full-size geometry") {
    ModelConfig c;
    Model m(c, 42);
    NoGradGuard guard;
    const auto out = m.forward(random_input(c, 1, rng), false);
    CHECK(out.heatmap.shape() == Shape{1, 3, 64, 64});
    CHECK(out.offset.shape() == Shape{1, 2, 64, 64});
    CHECK(out.heading.shape() == Shape{1, 2, 16, 16});
    for (double v : out.heatmap.data()) CHECK((v > 0.0 && v < 1.0));
    for (double v : out.heading.data()) CHECK(std::abs(v) < 1.0);
  }
  SUBCASE("stacked frames and batch") {
    const auto c = small_config(3);
    Model m(c, 42);
    const auto out = m.forward(random_input(c, 2, rng), true);
    CHECK(out.heatmap.shape() == Shape{2, 3, 32, 32});
    CHECK(out.heading.shape() == Shape{2, 2, 8, 8});
  }
  SUBCASE("RA-only variant ignores Doppler inputs") {
    auto c = small_config();
    c.variant = ModelVariant::ra_only;
    Model m(c, 42);
    ModelInput in = random_input(c, 1, rng);
    in.rd = Tensor();
    in.ad = Tensor();
    CHECK(m.forward(in, false).heatmap.shape() == Shape{1, 3, 32, 32});
  }
  SUBCASE("initial heatmap sits near the prior") {
    Model m(small_config(), 9);
    NoGradGuard guard;
    const auto out = m.forward(random_input(small_config(), 1, rng), false);
    double mean = 0.0;
    for (double v : out.heatmap.data()) mean += v;
    mean /= static_cast<double>(out.heatmap.numel());
    CHECK(mean > 0.001);
    CHECK(mean < 0.1);
  }
  SUBCASE("wrong input shape is reported") {
    Model m(small_config(), 1);
    CHECK_THROWS_AS(m.forward(random_input(small_config(2), 1, rng), false), std::invalid_argument);
  }
}

TEST_CASE("model construction") {
  SUBCASE("same seed gives identical parameters") {
    Model a(small_config(), 77), b(small_config(), 77), c(small_config(), 78);
    CHECK(a.same_state(b));
    CHECK_FALSE(a.same_state(c));
  }
  SUBCASE("stacking frames changes only the first-layer weights") {
    Model one(small_config(1), 5), three(small_config(3), 5);
    const auto& p1 = one.named_parameters();
    const auto& p3 = three.named_parameters();
    REQUIRE(p1.size() == p3.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
      CHECK(p1[i].name == p3[i].name);
      const bool first = p1[i].name.ends_with(".0.weight") && p1[i].name.starts_with("enc_");
      if (first) {
        CHECK(p1[i].value.dim(1) == 1);
        CHECK(p3[i].value.dim(1) == 3);
      } else {
        CHECK(p1[i].value.shape() == p3[i].value.shape());
      }
    }
  }
  SUBCASE("fusion model is smaller than three decoders") {
    ModelConfig c;
    const Model fused(c, 1);
    c.variant = ModelVariant::three_decoder;
    const Model three(c, 1);
    c.variant = ModelVariant::ra_only;
    const Model ra(c, 1);
    CHECK(fused.parameter_count() < three.parameter_count());
    CHECK(ra.parameter_count() < fused.parameter_count());
    MESSAGE("parameters: ra_only ", ra.parameter_count(), ", fusion ", fused.parameter_count(), ", three_decoder ",
            three.parameter_count());
  }
  SUBCASE("three-decoder variant refuses to run") {
    auto c = small_config();
    c.variant = ModelVariant::three_decoder;
    Model m(c, 1);
    Rng rng(2);
    CHECK_THROWS_AS(m.forward(random_input(c, 1, rng), false), std::logic_error);
  }
  SUBCASE("geometry must divide by the encoder stride") {
    auto c = small_config();
    c.geometry.r_bins = 40;
    CHECK_THROWS_WITH_AS(Model(c, 1), doctest::Contains("divisible by 16"), std::invalid_argument);
    c = small_config();
    c.geometry.d_bins = 6;
    CHECK_THROWS_AS(Model(c, 1), std::invalid_argument);
  }
}

TEST_CASE("model evaluation is deterministic") {
  Rng rng(4);
  const auto c = small_config(2);
  Model m(c, 3);
  const auto in = random_input(c, 2, rng);
  m.forward(in, true);  // moves the running statistics away from their defaults
  NoGradGuard guard;
  const auto a = m.forward(in, false);
  const auto b = m.forward(in, false);
  CHECK(same_bytes(a.heatmap.data(), b.heatmap.data()));
  CHECK(same_bytes(a.offset.data(), b.offset.data()));
  CHECK(same_bytes(a.heading.data(), b.heading.data()));
}

TEST_CASE("checkpoint round trip") {
  Rng rng(8);
  const auto c = small_config(2);
  Model m(c, 21);
  const auto in = random_input(c, 2, rng);
  m.forward(in, true);
  const auto dir = std::filesystem::temp_directory_path() / "raddet_test_model";
  std::filesystem::create_directories(dir);
  const auto path = dir / "ck.bin";
  m.save(path, R"({"epoch": 3})");
  std::string extra;
  Model back = Model::load(path, &extra);
  CHECK(back.same_state(m));
  CHECK(back.config().t_frames == 2);
  CHECK(extra == R"({"epoch":3})");
  NoGradGuard guard;
  CHECK(same_bytes(m.forward(in, false).heatmap.data(), back.forward(in, false).heatmap.data()));

  SUBCASE("corrupt files are rejected") {
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK_THROWS_AS(Model::load(path), std::runtime_error);
    CHECK_THROWS_AS(Model::load(dir / "missing.bin"), std::runtime_error);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("model gradients match finite differences") {
  ModelConfig c;
  c.geometry.r_bins = 16;
  c.geometry.a_bins = 16;
  c.geometry.d_bins = 8;
  c.enc_channels = {2, 3, 3, 4, 4, 4};
  c.enc_strides = {2, 1, 2, 1, 2, 1};
  c.doppler_strides = {2, 1, 1, 1, 1, 1};
  c.dec_channels = {4, 3, 3};
  c.t_frames = 2;
  Model m(c, 12);
  Rng rng(6);
  const auto in = random_input(c, 2, rng);
  const Tensor wh = random_tensor({2, 3, 16, 16}, rng);
  const Tensor wo = random_tensor({2, 2, 16, 16}, rng);
  const Tensor wd = random_tensor({2, 2, 4, 4}, rng);
  auto loss = [&] {
    const auto out = m.forward(in, true);
    return add(add(sum(mul(out.heatmap, wh)), sum(mul(out.offset, wo))), sum(mul(out.heading, wd)));
  };
  const auto res = grad_check(loss, m.parameters(), 1e-5, 4, 7, 1e-6);
  MESSAGE("max relative error ", res.max_rel_error, " over ", res.coordinates, " coordinates");
  CHECK(res.max_rel_error < 1e-4);

  c.dec_channels = {4, 3};
  c.enc_strides = {2, 1, 2, 1, 1, 1};
  CHECK_THROWS_AS(Model(c, 1), std::invalid_argument);  // no quarter-resolution tap for the heading head
}
