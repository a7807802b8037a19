#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gvit/chain_graph.hpp"
#include "gvit/model.hpp"

namespace gvit {

/// Coefficient of determination 1 − SS_res / SS_tot. Empty when fewer than
/// two samples or the truths are constant (not applicable).
std::optional<double> r_squared(const std::vector<double>& preds, const std::vector<double>& truths);

/// Which R² bucket a test graph falls into for one gas.
enum class GasCondition { mixed, pure, absent };
GasCondition gas_condition(Composition truth, std::size_t gas);

struct PredictionRow {
  std::size_t index = 0;  // position in the dataset graph list
  std::string source;
  std::size_t begin_row = 0, end_row = 0, n_nodes = 0;
  std::array<double, 2> truth{};
  std::array<double, 2> pred{};  // clamped to [0, 1]
  Composition true_composition = Composition::none;
  Composition pred_composition = Composition::none;

  bool operator==(const PredictionRow&) const = default;
};

/// Class order for the confusion matrix: A, B, A+B.
inline constexpr std::array<Composition, 3> kConfusionClasses{Composition::a, Composition::b, Composition::ab};

struct MetricsReport {
  std::string model_name = "gvit";
  GasGroup group = GasGroup::co_ethylene;
  double threshold = 0.01;
  std::size_t total = 0;
  double accuracy = 0.0;  // correct / total; "none" predictions count as wrong
  /// confusion[true][pred] over {A, B, A+B}.
  std::array<std::array<std::size_t, 3>, 3> confusion{};
  /// Per true class, predictions that fell below threshold for both gases.
  std::array<std::size_t, 3> anomalies{};
  /// r2[gas][0] mixed, r2[gas][1] pure; empty when not applicable.
  std::array<std::array<std::optional<double>, 2>, 2> r2{};
  std::array<std::array<std::size_t, 2>, 2> r2_counts{};
  double rmse = 0.0;
  std::vector<PredictionRow> rows;

  std::size_t class_count(std::size_t cls) const;
  std::size_t confusion_total() const;
  /// Throws DomainError if an internal invariant does not hold.
  void check_invariants() const;
  bool operator==(const MetricsReport&) const = default;
};

/// Builds a report from per-graph predictions (used by both evaluators).
MetricsReport summarize(std::vector<PredictionRow> rows, GasGroup group, double threshold,
                        const std::string& model_name);

/// Runs the model on each test graph. Throws DomainError on an empty test set
/// or when a graph's group differs from `group`.
MetricsReport evaluate(const GViTModel& model, const std::vector<SensorGraph>& graphs,
                       const std::vector<std::size_t>& test, GasGroup group, double threshold = 0.01);

/// Last `window` nodes flattened (window·16 values), mean target of the k
/// nearest training vectors by Euclidean distance, ties broken by index.
std::array<double, 2> knn_predict(const std::vector<std::vector<double>>& train_vectors,
                                  const std::vector<std::array<double, 2>>& train_targets,
                                  const std::vector<double>& query, std::size_t k);
std::vector<double> steady_state_vector(const SensorGraph& graph, std::size_t window);

MetricsReport knn_baseline(const std::vector<SensorGraph>& graphs, const std::vector<std::size_t>& train,
                           const std::vector<std::size_t>& test, GasGroup group, std::size_t k,
                           std::size_t window = 5, double threshold = 0.01);

/// Writes <stem>.json (structured report) and <stem>.csv (one row per test graph).
void emit_report(const MetricsReport& report, const std::filesystem::path& dir, const std::string& stem);
MetricsReport read_report(const std::filesystem::path& json_path);
/// Parses the per-graph table written by emit_report.
std::vector<PredictionRow> read_prediction_table(const std::filesystem::path& csv_path);

}  // namespace gvit
