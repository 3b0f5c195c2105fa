#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "strokenet/errors.hpp"
#include "strokenet/layers.hpp"

using namespace strokenet;
using oracle::mixed_error;
using oracle::numeric_gradient;
using oracle::random_tensor;

namespace {
constexpr double kGradTol = 1e-4;
const std::array<Shape, 3> kSmallVolumes{Shape{1, 2, 3, 4, 4}, Shape{2, 3, 2, 3, 5}, Shape{2, 1, 4, 3, 3}};
}  // namespace

TEST_CASE("conv3d identity kernel reproduces the input") {
  std::mt19937_64 rng(1);
  Tensor x = random_tensor({1, 1, 4, 5, 6}, rng);
  Tensor w({1, 1, 3, 3, 3}, 0.0);
  w.at({0, 0, 1, 1, 1}) = 1.0;
  CHECK(conv3d(x, w, Tensor({1}, 0.0), ConvSpec{}) == x);
}

TEST_CASE("conv3d output shapes") {
  Tensor x({1, 1, 8, 8, 8});
  Tensor w({5, 1, 3, 3, 3});
  CHECK(conv3d(x, w, Tensor({5}), ConvSpec{{2, 2, 2}, {1, 1, 1}}).shape() == Shape{1, 5, 4, 4, 4});
  std::mt19937_64 rng(2);
  for (const auto& s : kSmallVolumes) {
    Tensor in = random_tensor(s, rng);
    Tensor k = random_tensor({3, s[1], 3, 3, 3}, rng);
    Tensor out = conv3d(in, k, Tensor({3}), ConvSpec{});
    CHECK(out.shape() == Shape{s[0], 3, s[2], s[3], s[4]});
  }
  CHECK_THROWS_AS(conv3d(Tensor({1, 1, 1, 1, 1}), w, Tensor({5}), ConvSpec{{1, 1, 1}, {0, 0, 0}}),
                  ShapeError);
  CHECK_THROWS_AS(conv3d(Tensor({1, 2, 4, 4, 4}), w, Tensor({5}), ConvSpec{}), ShapeError);
}

TEST_CASE("conv3d matches the naive nested-loop oracle") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 4, 6, 6}, rng);
  for (auto stride : {std::array<std::size_t, 3>{1, 1, 1}, std::array<std::size_t, 3>{2, 2, 2},
                      std::array<std::size_t, 3>{1, 2, 3}}) {
    Tensor w = random_tensor({4, 3, 3, 3, 3}, rng);
    Tensor b = random_tensor({4}, rng);
    ConvSpec spec{stride, {1, 1, 1}};
    Tensor got = conv3d(x, w, b, spec);
    Tensor want = oracle::conv3d(x, w, b, stride, {1, 1, 1});
    REQUIRE(got.shape() == want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-10);
  }
}

TEST_CASE("conv3d backward matches finite differences") {
  std::mt19937_64 rng(4);
  for (const auto& s : kSmallVolumes) {
    for (auto stride : {std::array<std::size_t, 3>{1, 1, 1}, std::array<std::size_t, 3>{2, 2, 2}}) {
      ConvSpec spec{stride, {1, 1, 1}};
      Tensor x = random_tensor(s, rng);
      Tensor w = random_tensor({2, s[1], 3, 3, 3}, rng);
      Tensor b = random_tensor({2}, rng);
      Tensor r = random_tensor(conv3d(x, w, b, spec).shape(), rng);
      Conv3dGrads g = conv3d_backward(x, w, spec, r);
      CHECK(mixed_error(g.input, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, conv3d(t, w, b, spec)); }, x)) < kGradTol);
      CHECK(mixed_error(g.weight, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, conv3d(x, t, b, spec)); }, w)) < kGradTol);
      CHECK(mixed_error(g.bias, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, conv3d(x, w, t, spec)); }, b)) < kGradTol);
    }
  }
}

TEST_CASE("stride-1 pad-1 k=3 convolution preserves spatial shape") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> d(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    Shape s{1, 2, d(rng), d(rng), d(rng)};
    Tensor out = conv3d(Tensor(s), Tensor({3, 2, 3, 3, 3}), Tensor({3}), ConvSpec{});
    CHECK(out.dim(2) == s[2]);
    CHECK(out.dim(3) == s[3]);
    CHECK(out.dim(4) == s[4]);
  }
}

TEST_CASE("instance norm statistics and constant slices") {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 3, 4, 5, 6}, rng, -5, 9);
  Tensor y = instance_norm3d(x, Tensor({3}, 1.0), Tensor({3}, 0.0));
  const std::size_t m = 4 * 5 * 6;
  for (std::size_t s = 0; s < 6; ++s) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += y[s * m + i];
    mean /= m;
    for (std::size_t i = 0; i < m; ++i) var += (y[s * m + i] - mean) * (y[s * m + i] - mean);
    var /= m;
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 10 * kDefaultNormEps);
  }
  Tensor c = instance_norm3d(Tensor({1, 2, 2, 2, 2}, 7.0), Tensor({2}, 1.0), Tensor({2}, 0.0));
  CHECK(c == Tensor({1, 2, 2, 2, 2}, 0.0));
  CHECK_THROWS_AS(instance_norm3d(Tensor({1, 2, 1, 1, 1}), Tensor({2}, 1.0), Tensor({2})),
                  DegenerateInputError);
}

TEST_CASE("instance norm backward matches finite differences") {
  std::mt19937_64 rng(7);
  for (const auto& s : kSmallVolumes) {
    Tensor x = random_tensor(s, rng, -2, 2);
    Tensor scale = random_tensor({s[1]}, rng, 0.5, 1.5);
    Tensor shift = random_tensor({s[1]}, rng);
    Tensor r = random_tensor(s, rng);
    InstanceNormCache cache;
    instance_norm3d(x, scale, shift, kDefaultNormEps, &cache);
    InstanceNormGrads g = instance_norm3d_backward(cache, scale, r);
    auto f_x = [&](const Tensor& t) { return oracle::dot(r, instance_norm3d(t, scale, shift)); };
    auto f_s = [&](const Tensor& t) { return oracle::dot(r, instance_norm3d(x, t, shift)); };
    auto f_b = [&](const Tensor& t) { return oracle::dot(r, instance_norm3d(x, scale, t)); };
    CHECK(mixed_error(g.input, numeric_gradient(f_x, x)) < kGradTol);
    CHECK(mixed_error(g.scale, numeric_gradient(f_s, scale)) < kGradTol);
    CHECK(mixed_error(g.shift, numeric_gradient(f_b, shift)) < kGradTol);
  }
}

TEST_CASE("activation definitions") {
  CHECK(activate(-1.0, Activation::leaky_relu(0.01)) == doctest::Approx(-0.01));
  CHECK(activate(2.0, Activation::relu()) == 2.0);
  CHECK(activate(-3.0, Activation::relu()) == 0.0);
  CHECK(activate(0.0, Activation::sigmoid()) == 0.5);
  CHECK(activate(3.0, Activation::leaky_relu()) == 3.0);
}

TEST_CASE("activation backward matches finite differences away from kinks") {
  std::mt19937_64 rng(8);
  const std::array<Shape, 3> shapes{Shape{3, 4}, Shape{2, 3, 5}, Shape{1, 2, 2, 3, 3}};
  for (const auto& act : {Activation::leaky_relu(), Activation::relu(), Activation::sigmoid()}) {
    for (const auto& s : shapes) {
      Tensor x = random_tensor(s, rng, -2, 2);
      for (auto& v : x.mutable_data())
        if (std::abs(v) < 1e-3) v = 0.5;
      Tensor r = random_tensor(s, rng);
      Tensor y = activation(x, act);
      Tensor g = activation_backward(x, y, act, r);
      auto f = [&](const Tensor& t) { return oracle::dot(r, activation(t, act)); };
      CHECK(mixed_error(g, numeric_gradient(f, x)) < kGradTol);
    }
  }
}

TEST_CASE("linear examples and gradients") {
  Tensor x = Tensor::matrix({{1, 2}});
  CHECK(linear(x, Tensor::matrix({{1, 0}, {0, 1}}), Tensor::vector({0, 0})) == x);
  CHECK(linear(x, Tensor::matrix({{1, 1}, {0, 1}}), Tensor::vector({1, 0})) == Tensor::matrix({{4, 2}}));
  CHECK_THROWS_AS(linear(Tensor::matrix({{1, 2, 3}}), Tensor::matrix({{1, 1}}), Tensor::vector({0})),
                  ShapeError);
  std::mt19937_64 rng(9);
  for (auto [n, in, out] : {std::array<std::size_t, 3>{1, 3, 2}, {4, 5, 3}, {3, 2, 6}}) {
    Tensor xx = random_tensor({n, in}, rng);
    Tensor w = random_tensor({out, in}, rng);
    Tensor b = random_tensor({out}, rng);
    Tensor r = random_tensor({n, out}, rng);
    LinearGrads g = linear_backward(xx, w, r);
    CHECK(mixed_error(g.input, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, linear(t, w, b)); }, xx)) < kGradTol);
    CHECK(mixed_error(g.weight, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, linear(xx, t, b)); }, w)) < kGradTol);
    CHECK(mixed_error(g.bias, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, linear(xx, w, t)); }, b)) < kGradTol);
  }
}

TEST_CASE("dropout contracts") {
  std::mt19937_64 rng(10);
  Tensor x = random_tensor({4, 8}, rng);
  Dropout none(0.0);
  CHECK(none.forward(x, true, rng) == x);
  CHECK(none.forward(x, false, rng) == x);
  Dropout half(0.5);
  CHECK(half.forward(x, false, rng) == x);
  CHECK_THROWS_AS(Dropout(1.0), ParameterError);
  CHECK_THROWS_AS(Dropout(-0.1), ParameterError);
}

TEST_CASE("dropout keeps about 1-rate of elements and preserves the mean") {
  Tensor ones({100000}, 1.0);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    Dropout d(0.5);
    Tensor y = d.forward(ones, true, rng);
    std::size_t kept = 0;
    double sum = 0.0;
    for (double v : y.data()) {
      kept += v != 0.0;
      sum += v;
    }
    CHECK(std::abs(static_cast<double>(kept) / 1e5 - 0.5) < 0.01);
    CHECK(std::abs(sum / 1e5 - 1.0) < 0.02);
    Tensor g = d.backward(ones);
    CHECK(g == y);  // same mask reused
  }
}

TEST_CASE("softmax contracts") {
  Tensor p = softmax(Tensor::matrix({{0, 0}}));
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.5);
  Tensor big = softmax(Tensor::matrix({{1000, 0}}));
  CHECK(big.all_finite());
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  std::mt19937_64 rng(11);
  Tensor x = random_tensor({6, 7}, rng, -20, 20);
  Tensor y = softmax(x);
  Tensor shifted = softmax(add(x, Tensor({6, 1}, 123.0)));
  for (std::size_t i = 0; i < 6; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      s += y.at({i, c});
      CHECK(y.at({i, c}) > 0.0);
      CHECK(y.at({i, c}) < 1.0);
      CHECK(std::abs(shifted.at({i, c}) - y.at({i, c})) < 1e-12);
    }
    CHECK(std::abs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax backward matches finite differences") {
  std::mt19937_64 rng(12);
  for (const auto& s : {Shape{1, 2}, Shape{3, 7}, Shape{4, 5}}) {
    Tensor x = random_tensor(s, rng, -3, 3);
    Tensor r = random_tensor(s, rng);
    Tensor g = softmax_backward(softmax(x), r);
    CHECK(mixed_error(g, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, softmax(t)); }, x)) < kGradTol);
  }
}

TEST_CASE("global average pooling") {
  Tensor c({1, 3, 2, 3, 4}, 7.0);
  CHECK(global_avg_pool(c) == Tensor({1, 3}, 7.0));
  Tensor x({1, 2, 2, 2, 2}, 0.0);
  for (std::size_t i = 0; i < 8; ++i) x[i] = static_cast<double>(i);
  CHECK(global_avg_pool(x).at({0, 0}) == 3.5);
  std::mt19937_64 rng(13);
  for (const auto& s : kSmallVolumes) {
    Tensor in = random_tensor(s, rng);
    Tensor r = random_tensor({s[0], s[1]}, rng);
    Tensor g = global_avg_pool_backward(s, r);
    CHECK(mixed_error(g, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, global_avg_pool(t)); }, in)) < kGradTol);
  }
}

TEST_CASE("cSE with zero weights halves the input and never grows magnitudes") {
  std::mt19937_64 rng(14);
  Tensor x = random_tensor({2, 4, 2, 3, 3}, rng);
  Tensor w1({2, 4}), b1({2}), w2({4, 2}), b2({4});
  Tensor y = cse_block(x, {w1, b1, w2, b2});
  CHECK(y == scale(x, 0.5));
  Tensor rw1 = random_tensor({2, 4}, rng, -3, 3), rb1 = random_tensor({2}, rng);
  Tensor rw2 = random_tensor({4, 2}, rng, -3, 3), rb2 = random_tensor({4}, rng);
  Tensor z = cse_block(x, {rw1, rb1, rw2, rb2});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z[i]) <= std::abs(x[i]));
  CHECK(cse_hidden_width(64, 2) == 32);
  CHECK(cse_hidden_width(5, 2) == 3);
  CHECK(cse_hidden_width(1, 16) == 1);
}

TEST_CASE("cSE backward matches finite differences") {
  std::mt19937_64 rng(15);
  for (const auto& s : kSmallVolumes) {
    const std::size_t c = s[1];
    const std::size_t h = cse_hidden_width(c, 2);
    Tensor x = random_tensor(s, rng);
    Tensor w1 = random_tensor({h, c}, rng), b1 = random_tensor({h}, rng, 0.2, 1.0);
    Tensor w2 = random_tensor({c, h}, rng), b2 = random_tensor({c}, rng);
    Tensor r = random_tensor(s, rng);
    CseCache cache;
    cse_block(x, {w1, b1, w2, b2}, &cache);
    CseGrads g = cse_block_backward(x, {w1, b1, w2, b2}, cache, r);
    CHECK(mixed_error(g.input, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, cse_block(t, {w1, b1, w2, b2})); }, x)) < kGradTol);
    CHECK(mixed_error(g.squeeze_weight, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, cse_block(x, {t, b1, w2, b2})); }, w1)) < kGradTol);
    CHECK(mixed_error(g.squeeze_bias, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, cse_block(x, {w1, t, w2, b2})); }, b1)) < kGradTol);
    CHECK(mixed_error(g.excite_weight, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, cse_block(x, {w1, b1, t, b2})); }, w2)) < kGradTol);
    CHECK(mixed_error(g.excite_bias, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, cse_block(x, {w1, b1, w2, t})); }, b2)) < kGradTol);
  }
}

TEST_CASE("sSE with zero weights halves the input and never grows magnitudes") {
  std::mt19937_64 rng(16);
  Tensor x = random_tensor({2, 3, 2, 3, 3}, rng);
  CHECK(sse_block(x, Tensor({1, 3, 1, 1, 1}), Tensor({1})) == scale(x, 0.5));
  Tensor z = sse_block(x, random_tensor({1, 3, 1, 1, 1}, rng, -4, 4), random_tensor({1}, rng));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(z[i]) <= std::abs(x[i]));
}

TEST_CASE("sSE backward matches finite differences") {
  std::mt19937_64 rng(17);
  for (const auto& s : kSmallVolumes) {
    Tensor x = random_tensor(s, rng);
    Tensor w = random_tensor({1, s[1], 1, 1, 1}, rng);
    Tensor b = random_tensor({1}, rng);
    Tensor r = random_tensor(s, rng);
    SseCache cache;
    sse_block(x, w, b, &cache);
    SseGrads g = sse_block_backward(x, w, cache, r);
    CHECK(mixed_error(g.input, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, sse_block(t, w, b)); }, x)) < kGradTol);
    CHECK(mixed_error(g.weight, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, sse_block(x, t, b)); }, w)) < kGradTol);
    CHECK(mixed_error(g.bias, numeric_gradient([&](const Tensor& t) { return oracle::dot(r, sse_block(x, w, t)); }, b)) < kGradTol);
  }
}

TEST_CASE("he_normal has fan-in variance and is seed-deterministic") {
  std::mt19937_64 a(1), b(1);
  Tensor w = he_normal({200, 50}, 50, a);
  CHECK(w == he_normal({200, 50}, 50, b));
  double var = 0.0;
  for (double v : w.data()) var += v * v;
  var /= static_cast<double>(w.size());
  CHECK(var == doctest::Approx(2.0 / 50.0).epsilon(0.05));
  CHECK_THROWS_AS(he_normal({2}, 0, a), ParameterError);
}

TEST_CASE("derived seeds are stable and distinct") {
  CHECK(derive_seed(1, 2, 3) == derive_seed(1, 2, 3));
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
}
