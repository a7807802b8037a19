#include <cmath>
#include <numbers>

#include "doctest.h"
#include "gradcheck.hpp"
#include "gvit/adam.hpp"
#include "gvit/errors.hpp"
#include "gvit/ops.hpp"
#include "gvit/train.hpp"

using namespace gvit;
using gvit::testing::check_gradients;
using gvit::testing::random_tensor;
using gvit::testing::readout_weights;

namespace {

void require_values(const Tensor& t, const std::vector<double>& expected, double tol = 1e-12) {
  REQUIRE(t.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(t[i] == doctest::Approx(expected[i]).epsilon(tol));
}

// Weighted-sum readout so every output entry contributes to the loss.
Tensor readout(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

TEST_CASE("tensor construction validates shape and finiteness") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor({0, 2}, {}), DimensionError);
  CHECK_THROWS_AS(Tensor({1}, {std::nan("")}), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {INFINITY}), NumericError);
  const auto t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0);
}

TEST_CASE("matmul") {
  SUBCASE("identity") {
    const auto i2 = Tensor::from_rows({{1, 0}, {0, 1}});
    const auto b = Tensor::from_rows({{2, 3}, {4, 5}});
    require_values(matmul(i2, b), {2, 3, 4, 5});
  }
  SUBCASE("row times column") { require_values(matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})), {11}); }
  SUBCASE("zero annihilates") {
    Rng rng(3);
    const auto z = Tensor::zeros({3, 4});
    const auto out = matmul(z, random_tensor(rng, {4, 5}));
    for (double v : out.values()) CHECK(v == 0.0);
  }
  SUBCASE("shape mismatch names both shapes") {
    try {
      matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }
}

TEST_CASE("activations") {
  const auto x = Tensor({2}, {-1.0, 2.0});
  require_values(relu(x), {0.0, 2.0});
  CHECK(gelu_value(0.0) == 0.0);
  // tanh-form GELU at 3, evaluated at 40 digits with mpmath.
  CHECK(gelu_value(3.0) == doctest::Approx(2.99636260791822698).epsilon(1e-14));
  CHECK(gelu_value(1.0) == doctest::Approx(0.84119199060827670).epsilon(1e-14));
  require_values(activation(x, Activation::gelu), {gelu_value(-1.0), gelu_value(2.0)});
}

TEST_CASE("softmax_rows") {
  const auto y = softmax_rows(Tensor::from_rows({{0, 0, 0}, {1000, 1000, 1000}}));
  require_values(y, {1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0 / 3});
  require_values(softmax_rows(Tensor::from_rows({{1000, 1000}})), {0.5, 0.5});
  require_values(softmax_rows(Tensor::from_rows({{0.0, std::log(3.0)}})), {0.25, 0.75});

  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const auto m = 1 + rng.below(6), n = 1 + rng.below(6);
    auto x = random_tensor(rng, {m, n}, -20, 20, false);
    const auto shift = rng.uniform(-50, 50);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) shifted[r * n + c] += shift * static_cast<double>(r + 1);
    }
    const auto a = softmax_rows(x);
    const auto b = softmax_rows(Tensor({m, n}, shifted));
    for (std::size_t r = 0; r < m; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        CHECK(a.at(r, c) >= 0.0);
        CHECK(std::abs(a.at(r, c) - b.at(r, c)) <= 1e-9);
        total += a.at(r, c);
      }
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("layer_norm_rows") {
  const auto ones = Tensor::full({2}, 1.0);
  const auto zeros = Tensor::zeros({2});
  require_values(layer_norm_rows(Tensor::from_rows({{4, 4}}), ones, zeros), {0.0, 0.0});
  const auto y = layer_norm_rows(Tensor::from_rows({{1, 3}}), ones, zeros, 1e-12);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-9));
  const auto bias = Tensor({2}, {0.7, -0.3});
  require_values(layer_norm_rows(Tensor::from_rows({{1, 3}, {-2, 8}}), Tensor::zeros({2}), bias), {0.7, -0.3, 0.7, -0.3});
  CHECK_THROWS_AS(layer_norm_rows(Tensor::from_rows({{1, 3}}), ones, zeros, 0.0), DomainError);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = 2 + rng.below(5);
    const auto g = Tensor::full({n}, 1.0);
    const auto b = Tensor::zeros({n});
    auto x = random_tensor(rng, {1, n}, -3, 3, false);
    const double a = rng.uniform(-10, 10);
    std::vector<double> shifted(x.values().begin(), x.values().end());
    for (auto& v : shifted) v += a;
    const auto y1 = layer_norm_rows(x, g, b);
    const auto y2 = layer_norm_rows(Tensor({1, n}, shifted), g, b);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(y1[i] - y2[i]) <= 1e-6);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum of a 2x2 parameter has unit gradient") {
    const auto w = Tensor::from_rows({{1, 2}, {3, 4}}, true);
    backward(sum(w));
    for (double g : w.grad()) CHECK(g == 1.0);
  }
  SUBCASE("rmse at its minimum has zero gradient") {
    const auto p = Tensor::from_rows({{0.2, 0.4}}, true);
    const auto t = Tensor::from_rows({{0.2, 0.4}});
    backward(rmse_loss(p, t));
    for (double g : p.grad()) CHECK(g == 0.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    const auto w = Tensor::from_rows({{1, 2}}, true);
    CHECK_THROWS_AS(backward(w), DimensionError);
  }
  SUBCASE("repeated calls do not accumulate") {
    const auto w = Tensor::from_rows({{1, 2}}, true);
    const auto loss = sum(scale(w, 3.0));
    backward(loss);
    backward(loss);
    for (double g : w.grad()) CHECK(g == 3.0);
  }
  SUBCASE("no-grad scope records nothing") {
    const auto w = Tensor::from_rows({{1, 2}}, true);
    NoGradGuard guard;
    CHECK_FALSE(scale(w, 2.0).requires_grad());
  }
}

TEST_CASE("gradients of every op match central differences") {
  // 10 randomized trials per op, extents up to 6, rel. err <= 1e-4.
  Rng rng(2024);
  constexpr double kTol = 1e-4;
  auto extent = [&] { return static_cast<std::size_t>(1 + rng.below(6)); };
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = extent(), k = extent(), n = extent();
    CAPTURE(trial);
    {
      auto a = random_tensor(rng, {m, k});
      auto b = random_tensor(rng, {k, n});
      const auto w = readout_weights(rng, {m, n});
      CHECK(check_gradients([&] { return readout(matmul(a, b), w); }, {a, b}).max_relative_error <= kTol);
    }
    {
      auto a = random_tensor(rng, {m, n});
      const auto w = readout_weights(rng, {n, m});
      CHECK(check_gradients([&] { return readout(transpose(a), w); }, {a}).max_relative_error <= kTol);
    }
    {
      auto a = random_tensor(rng, {m, n});
      auto b = random_tensor(rng, {m, n});
      const auto w = readout_weights(rng, {m, n});
      CHECK(check_gradients([&] { return readout(add(a, b), w); }, {a, b}).max_relative_error <= kTol);
      CHECK(check_gradients([&] { return readout(sub(a, b), w); }, {a, b}).max_relative_error <= kTol);
      CHECK(check_gradients([&] { return readout(mul(a, b), w); }, {a, b}).max_relative_error <= kTol);
      CHECK(check_gradients([&] { return readout(scale(a, -1.7), w); }, {a}).max_relative_error <= kTol);
    }
    {
      auto x = random_tensor(rng, {m, n});
      auto bias = random_tensor(rng, {n});
      const auto w = readout_weights(rng, {m, n});
      CHECK(check_gradients([&] { return readout(add_row_vector(x, bias), w); }, {x, bias}).max_relative_error <= kTol);
      std::vector<double> factors(n);
      for (auto& f : factors) f = rng.uniform(-2, 2);
      CHECK(check_gradients([&] { return readout(scale_columns(x, factors), w); }, {x}).max_relative_error <= kTol);
    }
    {
      // Keep ReLU inputs away from the kink so the difference quotient is smooth.
      std::vector<double> v(m * n);
      for (auto& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 2.0);
      auto x = Tensor({m, n}, v, true);
      const auto w = readout_weights(rng, {m, n});
      CHECK(check_gradients([&] { return readout(relu(x), w); }, {x}).max_relative_error <= kTol);
      CHECK(check_gradients([&] { return readout(gelu(x), w); }, {x}).max_relative_error <= kTol);
    }
    {
      auto x = random_tensor(rng, {m, n}, -3, 3);
      const auto w = readout_weights(rng, {m, n});
      CHECK(check_gradients([&] { return readout(softmax_rows(x), w); }, {x}).max_relative_error <= kTol);
    }
    {
      const auto width = 2 + rng.below(5);
      auto x = random_tensor(rng, {m, width}, -2, 2);
      auto g = random_tensor(rng, {width}, 0.5, 1.5);
      auto b = random_tensor(rng, {width});
      const auto w = readout_weights(rng, {m, width});
      CHECK(check_gradients([&] { return readout(layer_norm_rows(x, g, b), w); }, {x, g, b}).max_relative_error <= kTol);
    }
    {
      auto a = random_tensor(rng, {m, k});
      auto b = random_tensor(rng, {m, n});
      const auto w = readout_weights(rng, {m, k + n});
      CHECK(check_gradients([&] { return readout(concat_cols({a, b}), w); }, {a, b}).max_relative_error <= kTol);
      auto c = random_tensor(rng, {n, k});
      const auto w2 = readout_weights(rng, {m + n, k});
      CHECK(check_gradients([&] { return readout(concat_rows({a, c}), w2); }, {a, c}).max_relative_error <= kTol);
      const auto begin = rng.below(k);
      const auto count = 1 + rng.below(k - begin);
      const auto w3 = readout_weights(rng, {m, count});
      CHECK(check_gradients([&] { return readout(slice_cols(a, begin, count), w3); }, {a}).max_relative_error <= kTol);
      const auto rb = rng.below(m);
      const auto rc = 1 + rng.below(m - rb);
      const auto w4 = readout_weights(rng, {rc, k});
      CHECK(check_gradients([&] { return readout(slice_rows(a, rb, rc), w4); }, {a}).max_relative_error <= kTol);
    }
    {
      auto p = random_tensor(rng, {m, 2});
      auto t = random_tensor(rng, {m, 2}, 0, 1);
      CHECK(check_gradients([&] { return rmse_loss(p, t); }, {p, t}).max_relative_error <= kTol);
    }
  }
}

TEST_CASE("composite graph gradient") {
  Rng rng(99);
  auto x = random_tensor(rng, {4, 6});
  auto w1 = random_tensor(rng, {6, 5});
  auto b1 = random_tensor(rng, {5});
  auto g = random_tensor(rng, {5}, 0.5, 1.5);
  auto beta = random_tensor(rng, {5});
  auto w2 = random_tensor(rng, {5, 3});
  const auto t = random_tensor(rng, {4, 3}, 0, 1, false);
  auto build = [&] {
    auto h = gelu(add_row_vector(matmul(x, w1), b1));
    h = layer_norm_rows(h, g, beta);
    auto attn = softmax_rows(matmul(h, transpose(h)));
    return sum(mul(matmul(matmul(attn, h), w2), t));
  };
  CHECK(check_gradients(build, {x, w1, b1, g, beta, w2}).max_relative_error <= 1e-4);
}

TEST_CASE("adam_step") {
  SUBCASE("zero gradient leaves parameters bit-identical") {
    std::vector<Tensor> params{Tensor::from_rows({{0.3, -1.2}, {2.5, 0.0}}, true)};
    const std::vector<double> before(params[0].values().begin(), params[0].values().end());
    AdamState state;
    adam_step(params, std::vector<std::vector<double>>{{0, 0, 0, 0}}, state, {});
    CHECK(std::vector<double>(params[0].values().begin(), params[0].values().end()) == before);
    CHECK(state.step == 1);
  }
  SUBCASE("first step moves each coordinate by about lr") {
    std::vector<Tensor> params{Tensor({3}, {1.0, 1.0, 1.0}, true)};
    AdamState state;
    AdamConfig cfg;
    cfg.lr = 1e-3;
    adam_step(params, std::vector<std::vector<double>>{{0.5, -3.0, 1e-2}}, state, cfg);
    // Bias-corrected first step: update = lr·g/(|g| + eps) ≈ lr·sign(g).
    CHECK(params[0][0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
    CHECK(params[0][1] == doctest::Approx(1.0 + 1e-3).epsilon(1e-7));
    CHECK(params[0][2] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
  }
  SUBCASE("symmetry is preserved") {
    std::vector<Tensor> params{Tensor({2}, {0.7, 0.7}, true)};
    AdamState state;
    for (int i = 0; i < 2; ++i) {
      const double g = 2.0 * params[0][0];  // d/dx of x² + y² at the symmetric point
      adam_step(params, std::vector<std::vector<double>>{{g, g}}, state, {});
    }
    CHECK(params[0][0] == params[0][1]);
    CHECK(state.step == 2);
  }
  SUBCASE("shape and learning-rate errors") {
    std::vector<Tensor> params{Tensor({2}, {0.0, 0.0}, true)};
    AdamState state;
    CHECK_THROWS_AS(adam_step(params, std::vector<std::vector<double>>{{1.0}}, state, {}), DimensionError);
    AdamConfig bad;
    bad.lr = 0.0;
    CHECK_THROWS_AS(adam_step(params, std::vector<std::vector<double>>{{1.0, 1.0}}, state, bad), DomainError);
  }
  SUBCASE("clip_grad_norm") {
    std::vector<std::vector<double>> grads{{3.0}, {4.0}};
    CHECK(clip_grad_norm(grads, 1.0) == doctest::Approx(5.0));
    CHECK(global_grad_norm(grads) == doctest::Approx(1.0));
  }
}

TEST_CASE("determinism: identical inputs give bit-identical outputs") {
  auto run = [] {
    Rng rng(7);
    auto x = random_tensor(rng, {5, 6});
    auto w = random_tensor(rng, {6, 6});
    const auto g = Tensor::full({6}, 1.0);
    const auto b = Tensor::zeros({6});
    auto y = softmax_rows(layer_norm_rows(gelu(matmul(x, w)), g, b));
    backward(sum(mul(y, y)));
    std::vector<double> out(y.values().begin(), y.values().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  CHECK(run() == run());
}
