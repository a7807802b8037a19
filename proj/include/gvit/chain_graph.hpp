#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gvit/tensor.hpp"

namespace gvit {

inline constexpr std::size_t kSensorChannels = 16;

/// Which gas pair a recording belongs to. Gas A is CO or methane; gas B is
/// always ethylene.
enum class GasGroup { co_ethylene, methane_ethylene };

enum class Composition { a, b, ab, none };

std::string to_string(GasGroup group);
GasGroup parse_gas_group(const std::string& text);
std::string gas_name(GasGroup group, std::size_t gas);
/// Human-readable label, e.g. "CO", "ethylene", "CO+ethylene", "none".
std::string composition_label(GasGroup group, Composition c);
/// Short stable token: "A", "B", "A+B", "none".
std::string to_string(Composition c);
Composition parse_composition(const std::string& text);
/// A present iff target > 0, likewise B.
Composition composition_from_targets(const std::array<double, 2>& targets);

struct GraphMeta {
  std::string source;
  std::size_t begin_row = 0;  // inclusive, in the downsampled stream
  std::size_t end_row = 0;    // exclusive
};

/// One segmented sample: N time points × 16 sensor channels on a chain.
struct SensorGraph {
  std::vector<double> node_features;  // row-major N×16
  std::size_t n_nodes = 0;
  std::array<double, 2> targets{0.0, 0.0};
  Composition composition = Composition::none;
  GasGroup group = GasGroup::co_ethylene;
  GraphMeta meta;

  /// Checks shape, target range and label consistency.
  void validate() const;
  Tensor features() const;
};

enum class AdjacencyMode { symmetric, row };

std::string to_string(AdjacencyMode mode);
AdjacencyMode parse_adjacency_mode(const std::string& text);

/// Directed chain i → i+1 over N nodes, stored implicitly.
struct ChainAdjacency {
  std::size_t n_nodes = 0;

  std::size_t edge_count() const { return n_nodes - 1; }
  std::vector<std::pair<std::size_t, std::size_t>> edges() const;
  /// Dense N×N form: ones on the first superdiagonal.
  std::vector<double> dense() const;
};

ChainAdjacency build_chain_adjacency(std::size_t n_nodes);

/// Renormalized chain propagation matrix in tridiagonal storage.
/// lower[i] = P(i+1, i), upper[i] = P(i, i+1).
struct Propagation {
  std::size_t n_nodes = 0;
  std::vector<double> lower;
  std::vector<double> diag;
  std::vector<double> upper;

  std::vector<double> dense() const;
  /// P·X for X of shape N×C; differentiable in X. Cost O(N·C).
  Tensor apply(const Tensor& x) const;
};

/// symmetric: D̃^{-1/2}(A + Aᵀ + I)D̃^{-1/2}; row: D̃^{-1}(A + I) on the
/// directed chain.
Propagation normalize_adjacency(const ChainAdjacency& adjacency, AdjacencyMode mode);

/// ReLU(P·X·W).
Tensor gcn_layer(const Tensor& x, const Propagation& propagation, const Tensor& w);

/// Runs the GCN layers in sequence and concatenates every layer output along
/// the feature axis. Throws ConfigError unless the total width equals d_model.
Tensor gcn_stack(const Tensor& x, const Propagation& propagation,
                 std::span<const Tensor> weights, std::size_t d_model);
Tensor gcn_stack(const SensorGraph& graph, std::span<const Tensor> weights,
                 std::size_t d_model, AdjacencyMode mode = AdjacencyMode::symmetric);

}  // namespace gvit
