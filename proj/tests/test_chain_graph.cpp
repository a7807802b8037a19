#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "gvit/chain_graph.hpp"
#include "gvit/errors.hpp"
#include "gvit/ops.hpp"

using namespace gvit;
using gvit::testing::random_tensor;

namespace {

// Brute-force dense oracle: D̃^{-1/2}(A + Aᵀ + I)D̃^{-1/2} or D̃^{-1}(A + I).
std::vector<double> dense_oracle(std::size_t n, AdjacencyMode mode) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    a[i * n + i + 1] = 1.0;
    if (mode == AdjacencyMode::symmetric) a[(i + 1) * n + i] = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] += 1.0;
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) degree[i] += a[i * n + j];
  }
  std::vector<double> out(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out[i * n + j] = mode == AdjacencyMode::symmetric ? a[i * n + j] / std::sqrt(degree[i] * degree[j])
                                                        : a[i * n + j] / degree[i];
    }
  }
  return out;
}

std::vector<double> dense_product(const std::vector<double>& p, const Tensor& x) {
  const auto n = x.rows(), c = x.cols();
  std::vector<double> out(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < c; ++k) out[i * c + k] += p[i * n + j] * x.values()[j * c + k];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("build_chain_adjacency") {
  const auto three = build_chain_adjacency(3).dense();
  CHECK(three == std::vector<double>{0, 1, 0, 0, 0, 1, 0, 0, 0});
  CHECK(build_chain_adjacency(1).dense() == std::vector<double>{0});
  CHECK(build_chain_adjacency(1).edge_count() == 0);
  const auto five = build_chain_adjacency(5);
  CHECK(five.edge_count() == 4);
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  CHECK(five.edges() == expected);
  CHECK_THROWS_AS(build_chain_adjacency(0), DomainError);
}

TEST_CASE("normalize_adjacency closed forms") {
  const auto p1 = normalize_adjacency(build_chain_adjacency(1), AdjacencyMode::symmetric).dense();
  CHECK(p1 == std::vector<double>{1.0});
  const auto p2 = normalize_adjacency(build_chain_adjacency(2), AdjacencyMode::symmetric).dense();
  for (double v : p2) CHECK(std::abs(v - 0.5) <= 1e-12);
  const auto p3 = normalize_adjacency(build_chain_adjacency(3), AdjacencyMode::symmetric).dense();
  const double s = 1.0 / std::sqrt(6.0);
  const std::vector<double> expected{0.5, s, 0.0, s, 1.0 / 3.0, s, 0.0, s, 0.5};
  for (std::size_t i = 0; i < 9; ++i) CHECK(std::abs(p3[i] - expected[i]) <= 1e-12);

  const auto row = normalize_adjacency(build_chain_adjacency(3), AdjacencyMode::row).dense();
  const std::vector<double> row_expected{0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 1.0};
  CHECK(row == row_expected);
}

TEST_CASE("propagation matches the dense oracle for N <= 12") {
  Rng rng(17);
  for (auto mode : {AdjacencyMode::symmetric, AdjacencyMode::row}) {
    for (std::size_t n = 1; n <= 12; ++n) {
      const auto prop = normalize_adjacency(build_chain_adjacency(n), mode);
      const auto oracle = dense_oracle(n, mode);
      const auto dense = prop.dense();
      for (std::size_t i = 0; i < n * n; ++i) CHECK(std::abs(dense[i] - oracle[i]) <= 1e-12);
      const auto x = random_tensor(rng, {n, 3}, -1, 1, false);
      const auto fast = prop.apply(x);
      const auto slow = dense_product(oracle, x);
      for (std::size_t i = 0; i < slow.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) <= 1e-12);
    }
  }
}

TEST_CASE("symmetric propagation of the constant vector") {
  // Â·1 = 1 exactly iff the self-looped chain is regular (N <= 2). Entrywise
  // Â·1 <= 1 does not hold in general (middle node of N = 3 gives
  // 1/3 + 2/sqrt(6)); the sound bound is spectral: Â fixes D̃^{1/2}·1 and
  // no vector grows under it.
  Rng rng(3);
  for (std::size_t n : {1u, 2u, 3u, 10u}) {
    const auto prop = normalize_adjacency(build_chain_adjacency(n), AdjacencyMode::symmetric);
    const auto y = prop.apply(Tensor::full({n, 1}, 1.0));
    bool all_one = true;
    for (double v : y.values()) all_one = all_one && std::abs(v - 1.0) <= 1e-12;
    CHECK(all_one == (n <= 2));

    std::vector<double> sqrt_degree(n);
    for (std::size_t i = 0; i < n; ++i) {
      sqrt_degree[i] = std::sqrt(1.0 + (i > 0 ? 1.0 : 0.0) + (i + 1 < n ? 1.0 : 0.0));
    }
    const auto fixed = prop.apply(Tensor({n, 1}, sqrt_degree));
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(fixed[i] - sqrt_degree[i]) <= 1e-12);

    for (int trial = 0; trial < 10; ++trial) {
      const auto v = random_tensor(rng, {n, 1}, -1, 1, false);
      const auto pv = prop.apply(v);
      double nv = 0.0, npv = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        nv += v[i] * v[i];
        npv += pv[i] * pv[i];
      }
      CHECK(npv <= nv * (1.0 + 1e-12));
    }
  }
  for (std::size_t n : {1u, 2u, 3u, 10u}) {
    const auto row = normalize_adjacency(build_chain_adjacency(n), AdjacencyMode::row);
    const auto ones = row.apply(Tensor::full({n, 1}, 1.0));
    for (double v : ones.values()) CHECK(std::abs(v - 1.0) <= 1e-12);
  }
}

TEST_CASE("chain reversal symmetry") {
  Rng rng(23);
  const std::size_t n = 9;
  const auto prop = normalize_adjacency(build_chain_adjacency(n), AdjacencyMode::symmetric);
  const auto x = random_tensor(rng, {n, 4}, -1, 1, false);
  std::vector<double> reversed(n * 4);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 4; ++c) reversed[(n - 1 - r) * 4 + c] = x.values()[r * 4 + c];
  }
  const auto y = prop.apply(x);
  const auto y_rev = prop.apply(Tensor({n, 4}, reversed));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(y_rev.at(n - 1 - r, c) - y.at(r, c)) <= 1e-12);
  }
}

TEST_CASE("propagation gradient") {
  Rng rng(31);
  for (auto mode : {AdjacencyMode::symmetric, AdjacencyMode::row}) {
    for (std::size_t n : {1u, 2u, 5u}) {
      const auto prop = normalize_adjacency(build_chain_adjacency(n), mode);
      auto x = random_tensor(rng, {n, 3});
      const auto w = random_tensor(rng, {n, 3}, -1, 1, false);
      const auto res = testing::check_gradients([&] { return sum(mul(prop.apply(x), w)); }, {x});
      CHECK(res.max_relative_error <= 1e-4);
    }
  }
}

TEST_CASE("gcn_layer") {
  const auto prop = normalize_adjacency(build_chain_adjacency(2), AdjacencyMode::symmetric);
  const auto i2 = Tensor::from_rows({{1, 0}, {0, 1}});
  const auto y = gcn_layer(i2, prop, i2);
  for (double v : y.values()) CHECK(std::abs(v - 0.5) <= 1e-12);
  const auto zeroed = gcn_layer(i2, prop, Tensor::zeros({2, 2}));
  for (double v : zeroed.values()) CHECK(v == 0.0);
  const auto negative = gcn_layer(i2, prop, Tensor::from_rows({{-1, 0}, {0, -1}}));
  for (double v : negative.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(gcn_layer(i2, prop, Tensor::zeros({3, 2})), DimensionError);
}

TEST_CASE("gcn_stack shapes and config") {
  Rng rng(41);
  SensorGraph g;
  g.n_nodes = 5;
  g.node_features.resize(5 * kSensorChannels);
  for (auto& v : g.node_features) v = rng.uniform(-1, 1);

  std::vector<Tensor> three{random_tensor(rng, {16, 16}), random_tensor(rng, {16, 16}), random_tensor(rng, {16, 16})};
  const auto out = gcn_stack(g, three, 48);
  CHECK(out.shape() == Shape{5, 48});

  std::vector<Tensor> one{random_tensor(rng, {16, 48})};
  CHECK(gcn_stack(g, one, 48).shape() == Shape{5, 48});

  std::vector<Tensor> zero{Tensor::zeros({16, 16}), Tensor::zeros({16, 16}), Tensor::zeros({16, 16})};
  const auto stacked = gcn_stack(g, zero, 48);
  for (double v : stacked.values()) CHECK(v == 0.0);

  CHECK_THROWS_AS(gcn_stack(g, three, 32), ConfigError);

  for (std::size_t n : {1u, 7u, 300u}) {
    g.n_nodes = n;
    g.node_features.assign(n * kSensorChannels, 0.5);
    CHECK(gcn_stack(g, three, 48).shape() == Shape{n, 48});
  }
}
