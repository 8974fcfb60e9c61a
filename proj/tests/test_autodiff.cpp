#include <catch2/catch_amalgamated.hpp>

#include "glyphstyle/core/autodiff.hpp"
#include "glyphstyle/core/rng.hpp"
#include "test_helpers.hpp"

using namespace glyphstyle;
using gstest::gradcheck;
using gstest::leafd;
using gstest::rand_offzero;

namespace {
constexpr double kGradTol = 1e-4;
}

TEST_CASE("elementwise forward values") {
  auto a = constant(Tensor<double>({2, 2}, {1.0, -2.0, 3.0, -4.0}));
  auto b = constant(Tensor<double>({2, 2}, {0.5, 0.5, 0.5, 0.5}));
  auto s = add(a, b);
  CHECK(s->value[0] == Catch::Approx(1.5));
  CHECK(s->value[1] == Catch::Approx(-1.5));
  auto m = mul(a, b);
  CHECK(m->value[3] == Catch::Approx(-2.0));
  auto q = square(a);
  CHECK(q->value[1] == Catch::Approx(4.0));
  auto v = abs_val(a);
  CHECK(v->value[3] == Catch::Approx(4.0));
  auto t = tanh_act(constant(Tensor<double>::scalar(0.0)));
  CHECK(t->value[0] == Catch::Approx(0.0));
  auto sp = softplus(constant(Tensor<double>::scalar(0.0)));
  CHECK(sp->value[0] == Catch::Approx(std::log(2.0)));
  // stability at large magnitudes
  auto sp_hi = softplus(constant(Tensor<double>::scalar(500.0)));
  CHECK(sp_hi->value[0] == Catch::Approx(500.0));
  auto sp_lo = softplus(constant(Tensor<double>::scalar(-500.0)));
  CHECK(sp_lo->value[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("gradcheck: elementwise and reductions") {
  Rng rng(11);
  auto a = leafd(rand_offzero({3, 4}, rng));
  auto b = leafd(rand_offzero({3, 4}, rng));

  CHECK(gradcheck({a, b}, [&] { return sum_all(mul(a, b)); }) < kGradTol);
  CHECK(gradcheck({a, b}, [&] { return mean_all(square(sub(a, b))); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(abs_val(a)); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(tanh_act(a)); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(softplus(a)); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(leaky_relu(a, 0.2)); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(relu(a)); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return mean_all(scale(add_scalar(a, 0.7), 3.0)); }) < kGradTol);

  auto pos = leafd(rng.uniform_tensor<double>({2, 5}, 0.3, 2.0));
  CHECK(gradcheck({pos}, [&] { return sum_all(log_val(pos)); }) < kGradTol);
}

TEST_CASE("gradcheck: structure ops") {
  Rng rng(12);
  auto a = leafd(rand_offzero({2, 3, 4, 4}, rng));
  auto b = leafd(rand_offzero({2, 2, 4, 4}, rng));
  CHECK(gradcheck({a, b}, [&] {
          return mean_all(square(concat_channels(a, b)));
        }) < kGradTol);

  auto z = leafd(rand_offzero({2, 5}, rng));
  CHECK(gradcheck({z}, [&] { return mean_all(square(tile_spatial(z, 3, 3))); }) < kGradTol);
  CHECK(gradcheck({z}, [&] { return sum_all(square(slice_cols(z, 1, 3))); }) < kGradTol);
  CHECK(gradcheck({a}, [&] { return sum_all(square(reshape(a, {4, 24}))); }) < kGradTol);
}

TEST_CASE("gradcheck: linear") {
  Rng rng(13);
  auto x = leafd(rand_offzero({3, 5}, rng));
  auto w = leafd(rand_offzero({4, 5}, rng));
  auto b = leafd(rand_offzero({4}, rng));
  CHECK(gradcheck({x, w, b}, [&] { return mean_all(square(linear(x, w, b))); }) < kGradTol);
}

TEST_CASE("gradcheck: conv2d stride 1 and 2") {
  Rng rng(14);
  auto x = leafd(rand_offzero({2, 3, 6, 6}, rng));
  auto w1 = leafd(rand_offzero({4, 3, 3, 3}, rng));
  auto b1 = leafd(rand_offzero({4}, rng));
  CHECK(gradcheck({x, w1, b1}, [&] {
          return mean_all(square(conv2d(x, w1, b1, 1, 1)));
        }) < kGradTol);

  auto w2 = leafd(rand_offzero({4, 3, 4, 4}, rng));
  auto b2 = leafd(rand_offzero({4}, rng));
  CHECK(gradcheck({x, w2, b2}, [&] {
          return mean_all(square(conv2d(x, w2, b2, 2, 1)));
        }) < kGradTol);
}

TEST_CASE("conv2d known value and shape errors") {
  // 1x1 input channel, 3x3 image, 2x2 kernel of ones, stride 1, no padding:
  // each output tap is the sum of its 2x2 window.
  auto x = constant(Tensor<double>({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  auto w = constant(Tensor<double>({1, 1, 2, 2}, {1, 1, 1, 1}));
  auto b = constant(Tensor<double>({1}, std::vector<double>{0.5}));
  auto y = conv2d(x, w, b, 1, 0);
  REQUIRE(y->value.shape() == std::vector<int>{1, 1, 2, 2});
  CHECK(y->value[0] == Catch::Approx(12.5));
  CHECK(y->value[3] == Catch::Approx(28.5));

  auto wbad = constant(Tensor<double>({1, 2, 2, 2}));
  CHECK_THROWS_AS(conv2d(x, wbad, b, 1, 0), std::invalid_argument);
}

TEST_CASE("gradcheck: conv_transpose2d") {
  Rng rng(15);
  auto x = leafd(rand_offzero({2, 3, 3, 3}, rng));
  auto w = leafd(rand_offzero({3, 4, 4, 4}, rng));
  auto b = leafd(rand_offzero({4}, rng));
  auto y = conv_transpose2d(x, w, b, 2, 1);
  REQUIRE(y->value.shape() == std::vector<int>{2, 4, 6, 6});
  CHECK(gradcheck({x, w, b}, [&] {
          return mean_all(square(conv_transpose2d(x, w, b, 2, 1)));
        }) < kGradTol);
}

TEST_CASE("conv_transpose2d doubles spatial size at stride 2") {
  Rng rng(16);
  auto x = constant(rng.normal_tensor<double>({1, 2, 8, 8}));
  auto w = constant(rng.normal_tensor<double>({2, 3, 4, 4}));
  auto b = constant(Tensor<double>({3}));
  auto y = conv_transpose2d(x, w, b, 2, 1);
  CHECK(y->value.shape() == std::vector<int>{1, 3, 16, 16});
}

TEST_CASE("gradcheck: instance_norm") {
  Rng rng(17);
  auto x = leafd(rand_offzero({2, 3, 4, 4}, rng));
  auto g = leafd(rand_offzero({3}, rng));
  auto b = leafd(rand_offzero({3}, rng));
  CHECK(gradcheck({x, g, b}, [&] {
          return mean_all(square(instance_norm(x, g, b)));
        }, 1e-6) < kGradTol);
}

TEST_CASE("instance_norm normalizes per sample and channel") {
  Rng rng(18);
  auto x = constant(rng.normal_tensor<double>({2, 2, 5, 5}, 3.0, 2.0));
  auto g = constant(Tensor<double>({2}, 1.0));
  auto b = constant(Tensor<double>({2}));
  auto y = instance_norm(x, g, b);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c) {
      double mu = 0, var = 0;
      const double* p = y->value.data() + (n * 2 + c) * 25;
      for (int i = 0; i < 25; ++i) mu += p[i];
      mu /= 25;
      for (int i = 0; i < 25; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= 25;
      CHECK(std::abs(mu) < 1e-9);
      CHECK(var == Catch::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("gradcheck: softmax cross entropy") {
  Rng rng(19);
  auto logits = leafd(rand_offzero({4, 5}, rng));
  std::vector<int> labels{0, 2, 4, 1};
  CHECK(gradcheck({logits}, [&] {
          return softmax_cross_entropy(logits, labels);
        }) < kGradTol);
}

TEST_CASE("detach stops gradients") {
  auto a = leafd(Tensor<double>({3}, {1.0, 2.0, 3.0}));
  auto loss = sum_all(square(detach(a)));
  backward(loss);
  CHECK_FALSE(a->has_grad);
}

TEST_CASE("fan-out accumulates gradients once per path") {
  auto a = leafd(Tensor<double>({1}, std::vector<double>{3.0}));
  // f = a*a + 2a ; df/da = 2a + 2 = 8
  auto loss = add(mul(a, a), scale(a, 2.0));
  backward(loss);
  REQUIRE(a->has_grad);
  CHECK(a->grad[0] == Catch::Approx(8.0));
}

TEST_CASE("backward is deterministic") {
  Rng rng(20);
  Tensor<double> xd = rng.normal_tensor<double>({2, 3, 6, 6});
  Tensor<double> wd = rng.normal_tensor<double>({4, 3, 3, 3});
  auto run = [&] {
    auto x = glyphstyle::make_leaf(xd, true);
    auto w = glyphstyle::make_leaf(wd, true);
    auto b = glyphstyle::make_leaf(Tensor<double>({4}), true);
    auto loss = mean_all(square(conv2d(x, w, b, 1, 1)));
    backward(loss);
    return w->grad;
  };
  auto g1 = run(), g2 = run();
  for (std::int64_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}
