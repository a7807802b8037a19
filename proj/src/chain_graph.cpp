#include "gvit/chain_graph.hpp"

#include <cmath>
#include <memory>

#include "gvit/errors.hpp"
#include "gvit/ops.hpp"

namespace gvit {

std::string to_string(GasGroup group) {
  return group == GasGroup::co_ethylene ? "co_ethylene" : "methane_ethylene";
}

GasGroup parse_gas_group(const std::string& text) {
  if (text == "co_ethylene") return GasGroup::co_ethylene;
  if (text == "methane_ethylene") return GasGroup::methane_ethylene;
  throw ConfigError("unknown gas group '" + text + "' (expected co_ethylene or methane_ethylene)");
}

std::string gas_name(GasGroup group, std::size_t gas) {
  if (gas == 1) return "ethylene";
  return group == GasGroup::co_ethylene ? "CO" : "methane";
}

std::string composition_label(GasGroup group, Composition c) {
  switch (c) {
    case Composition::a: return gas_name(group, 0);
    case Composition::b: return gas_name(group, 1);
    case Composition::ab: return gas_name(group, 0) + "+" + gas_name(group, 1);
    case Composition::none: break;
  }
  return "none";
}

std::string to_string(Composition c) {
  switch (c) {
    case Composition::a: return "A";
    case Composition::b: return "B";
    case Composition::ab: return "A+B";
    case Composition::none: break;
  }
  return "none";
}

Composition parse_composition(const std::string& text) {
  if (text == "A") return Composition::a;
  if (text == "B") return Composition::b;
  if (text == "A+B") return Composition::ab;
  if (text == "none") return Composition::none;
  throw ParseError("unknown composition '" + text + "'", 0);
}

Composition composition_from_targets(const std::array<double, 2>& targets) {
  const bool has_a = targets[0] > 0.0;
  const bool has_b = targets[1] > 0.0;
  if (has_a && has_b) return Composition::ab;
  if (has_a) return Composition::a;
  if (has_b) return Composition::b;
  return Composition::none;
}

void SensorGraph::validate() const {
  if (n_nodes == 0) throw DomainError("sensor graph has no nodes");
  if (node_features.size() != n_nodes * kSensorChannels) {
    throw DimensionError("sensor graph: expected " + std::to_string(n_nodes) + "x16 features, got " +
                         std::to_string(node_features.size()) + " values");
  }
  check_finite(node_features, "sensor graph features");
  for (double t : targets) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("sensor graph target outside [0, 1]");
  }
  if (composition != composition_from_targets(targets)) {
    throw DomainError("sensor graph composition label disagrees with its targets");
  }
}

Tensor SensorGraph::features() const {
  if (n_nodes == 0) throw DomainError("sensor graph has no nodes");
  return Tensor({n_nodes, kSensorChannels}, node_features);
}

std::string to_string(AdjacencyMode mode) {
  return mode == AdjacencyMode::symmetric ? "symmetric" : "row";
}

AdjacencyMode parse_adjacency_mode(const std::string& text) {
  if (text == "symmetric") return AdjacencyMode::symmetric;
  if (text == "row") return AdjacencyMode::row;
  throw ConfigError("unknown adjacency mode '" + text + "' (expected symmetric or row)");
}

std::vector<std::pair<std::size_t, std::size_t>> ChainAdjacency::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < n_nodes; ++i) out.emplace_back(i, i + 1);
  return out;
}

std::vector<double> ChainAdjacency::dense() const {
  std::vector<double> out(n_nodes * n_nodes, 0.0);
  for (std::size_t i = 0; i + 1 < n_nodes; ++i) out[i * n_nodes + i + 1] = 1.0;
  return out;
}

ChainAdjacency build_chain_adjacency(std::size_t n_nodes) {
  if (n_nodes == 0) throw DomainError("chain adjacency needs at least one node");
  return ChainAdjacency{n_nodes};
}

std::vector<double> Propagation::dense() const {
  const auto n = n_nodes;
  std::vector<double> out(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    out[i * n + i] = diag[i];
    if (i + 1 < n) {
      out[i * n + i + 1] = upper[i];
      out[(i + 1) * n + i] = lower[i];
    }
  }
  return out;
}

Tensor Propagation::apply(const Tensor& x) const {
  if (x.rank() != 2 || x.rows() != n_nodes) {
    throw DimensionError("propagation over " + std::to_string(n_nodes) + " nodes cannot apply to " +
                         shape_string(x.shape()));
  }
  const auto n = n_nodes, c = x.cols();
  const auto in = x.values();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i) {
    double* dst = out.data() + i * c;
    const double* self_row = in.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] = diag[i] * self_row[k];
    if (i + 1 < n && upper[i] != 0.0) {
      const double* next = self_row + c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += upper[i] * next[k];
    }
    if (i > 0 && lower[i - 1] != 0.0) {
      const double* prev = self_row - c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += lower[i - 1] * prev[k];
    }
  }
  // The closure keeps its own copy of the coefficients; graphs may outlive this object.
  auto coeffs = std::make_shared<Propagation>(*this);
  return make_result({n, c}, std::move(out), {x}, [coeffs, c](detail::Node& self) {
    auto& px = *self.parents[0];
    const auto n_rows = coeffs->n_nodes;
    // dX = Pᵀ dY
    for (std::size_t j = 0; j < n_rows; ++j) {
      double* dst = px.grad.data() + j * c;
      const double* dy = self.grad.data() + j * c;
      for (std::size_t k = 0; k < c; ++k) dst[k] += coeffs->diag[j] * dy[k];
      if (j > 0 && coeffs->upper[j - 1] != 0.0) {
        const double* dy_prev = dy - c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += coeffs->upper[j - 1] * dy_prev[k];
      }
      if (j + 1 < n_rows && coeffs->lower[j] != 0.0) {
        const double* dy_next = dy + c;
        for (std::size_t k = 0; k < c; ++k) dst[k] += coeffs->lower[j] * dy_next[k];
      }
    }
  });
}

Propagation normalize_adjacency(const ChainAdjacency& adjacency, AdjacencyMode mode) {
  const auto n = adjacency.n_nodes;
  if (n == 0) throw DomainError("cannot normalize an empty chain");
  Propagation p;
  p.n_nodes = n;
  p.diag.assign(n, 0.0);
  p.lower.assign(n > 0 ? n - 1 : 0, 0.0);
  p.upper.assign(n > 0 ? n - 1 : 0, 0.0);
  if (mode == AdjacencyMode::symmetric) {
    // Degree of the self-looped undirected chain: 2 at the ends, 3 inside.
    std::vector<double> inv_sqrt_degree(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double degree = 1.0 + (i > 0 ? 1.0 : 0.0) + (i + 1 < n ? 1.0 : 0.0);
      inv_sqrt_degree[i] = 1.0 / std::sqrt(degree);
    }
    for (std::size_t i = 0; i < n; ++i) {
      p.diag[i] = inv_sqrt_degree[i] * inv_sqrt_degree[i];
      if (i + 1 < n) {
        p.upper[i] = inv_sqrt_degree[i] * inv_sqrt_degree[i + 1];
        p.lower[i] = p.upper[i];
      }
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double degree = i + 1 < n ? 2.0 : 1.0;
      p.diag[i] = 1.0 / degree;
      if (i + 1 < n) p.upper[i] = 1.0 / degree;
    }
  }
  return p;
}

Tensor gcn_layer(const Tensor& x, const Propagation& propagation, const Tensor& w) {
  // P·(X·W) keeps the dense product at N×C×C'.
  return relu(propagation.apply(matmul(x, w)));
}

Tensor gcn_stack(const Tensor& x, const Propagation& propagation, std::span<const Tensor> weights,
                 std::size_t d_model) {
  if (weights.empty()) throw ConfigError("gcn_stack: no GCN layers configured");
  std::size_t width = 0;
  for (const auto& w : weights) width += w.cols();
  if (width != d_model) {
    throw ConfigError("gcn_stack: layers x filters = " + std::to_string(width) +
                      " but d_model = " + std::to_string(d_model));
  }
  std::vector<Tensor> outputs;
  outputs.reserve(weights.size());
  Tensor h = x;
  for (const auto& w : weights) {
    h = gcn_layer(h, propagation, w);
    outputs.push_back(h);
  }
  return outputs.size() == 1 ? outputs.front() : concat_cols(outputs);
}

Tensor gcn_stack(const SensorGraph& graph, std::span<const Tensor> weights, std::size_t d_model,
                 AdjacencyMode mode) {
  const auto propagation = normalize_adjacency(build_chain_adjacency(graph.n_nodes), mode);
  return gcn_stack(graph.features(), propagation, weights, d_model);
}

}  // namespace gvit
