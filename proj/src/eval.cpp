#include "gvit/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "gvit/errors.hpp"
#include "gvit/train.hpp"
#include "json.hpp"

namespace gvit {

namespace fs = std::filesystem;
using nlohmann::json;

std::optional<double> r_squared(const std::vector<double>& preds, const std::vector<double>& truths) {
  if (preds.size() != truths.size()) throw DimensionError("r_squared: prediction/truth count mismatch");
  if (truths.size() < 2) return std::nullopt;
  const double mean = std::accumulate(truths.begin(), truths.end(), 0.0) / static_cast<double>(truths.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    ss_res += (preds[i] - truths[i]) * (preds[i] - truths[i]);
    ss_tot += (truths[i] - mean) * (truths[i] - mean);
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

GasCondition gas_condition(Composition truth, std::size_t gas) {
  if (truth == Composition::ab) return GasCondition::mixed;
  if ((gas == 0 && truth == Composition::a) || (gas == 1 && truth == Composition::b)) return GasCondition::pure;
  return GasCondition::absent;
}

namespace {

std::optional<std::size_t> confusion_index(Composition c) {
  for (std::size_t i = 0; i < kConfusionClasses.size(); ++i) {
    if (kConfusionClasses[i] == c) return i;
  }
  return std::nullopt;
}

}  // namespace

std::size_t MetricsReport::class_count(std::size_t cls) const {
  return std::accumulate(confusion[cls].begin(), confusion[cls].end(), std::size_t{0}) + anomalies[cls];
}

std::size_t MetricsReport::confusion_total() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < 3; ++i) n += class_count(i);
  return n;
}

void MetricsReport::check_invariants() const {
  if (confusion_total() != total) throw DomainError("report: confusion matrix plus anomalies != test size");
  if (rows.size() != total) throw DomainError("report: per-graph rows != test size");
  std::size_t trace = 0;
  for (std::size_t i = 0; i < 3; ++i) trace += confusion[i][i];
  if (total > 0 && accuracy != static_cast<double>(trace) / static_cast<double>(total)) {
    throw DomainError("report: accuracy != trace / total");
  }
  for (const auto& per_gas : r2) {
    for (const auto& v : per_gas) {
      if (v && *v > 1.0) throw DomainError("report: R^2 above 1");
    }
  }
  std::array<std::size_t, 3> per_class{};
  for (const auto& r : rows) {
    if (auto idx = confusion_index(r.true_composition)) ++per_class[*idx];
  }
  for (std::size_t i = 0; i < 3; ++i) {
    if (per_class[i] != class_count(i)) throw DomainError("report: row sums disagree with per-class counts");
  }
}

MetricsReport summarize(std::vector<PredictionRow> rows, GasGroup group, double threshold,
                        const std::string& model_name) {
  if (rows.empty()) throw DomainError("evaluation needs a non-empty test set");
  MetricsReport report;
  report.model_name = model_name;
  report.group = group;
  report.threshold = threshold;
  report.total = rows.size();
  std::size_t correct = 0;
  std::array<std::array<std::vector<double>, 2>, 2> preds, truths;
  std::vector<std::array<double, 2>> all_preds, all_truths;
  for (auto& row : rows) {
    row.pred_composition = predict_composition(row.pred, threshold);
    const auto t = confusion_index(row.true_composition);
    if (!t) throw DomainError("evaluation: test graph has no gas (air sample)");
    if (const auto p = confusion_index(row.pred_composition)) {
      ++report.confusion[*t][*p];
    } else {
      ++report.anomalies[*t];
    }
    if (row.pred_composition == row.true_composition) ++correct;
    for (std::size_t gas = 0; gas < 2; ++gas) {
      const auto cond = gas_condition(row.true_composition, gas);
      if (cond == GasCondition::absent) continue;
      const auto slot = cond == GasCondition::mixed ? 0 : 1;
      preds[gas][slot].push_back(row.pred[gas]);
      truths[gas][slot].push_back(row.truth[gas]);
    }
    all_preds.push_back(row.pred);
    all_truths.push_back(row.truth);
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
  for (std::size_t gas = 0; gas < 2; ++gas) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      report.r2[gas][slot] = r_squared(preds[gas][slot], truths[gas][slot]);
      report.r2_counts[gas][slot] = truths[gas][slot].size();
    }
  }
  report.rmse = rmse_value(all_preds, all_truths);
  report.rows = std::move(rows);
  return report;
}

namespace {

PredictionRow base_row(const SensorGraph& g, std::size_t index) {
  PredictionRow row;
  row.index = index;
  row.source = g.meta.source;
  row.begin_row = g.meta.begin_row;
  row.end_row = g.meta.end_row;
  row.n_nodes = g.n_nodes;
  row.truth = g.targets;
  row.true_composition = g.composition;
  return row;
}

void check_group(const SensorGraph& g, GasGroup group) {
  if (g.group != group) {
    throw DomainError("graph from group " + to_string(g.group) + " evaluated with a " + to_string(group) + " model");
  }
}

}  // namespace

MetricsReport evaluate(const GViTModel& model, const std::vector<SensorGraph>& graphs,
                       const std::vector<std::size_t>& test, GasGroup group, double threshold) {
  if (test.empty()) throw DomainError("evaluate: empty test set");
  std::vector<PredictionRow> rows;
  rows.reserve(test.size());
  for (auto idx : test) {
    const auto& g = graphs.at(idx);
    check_group(g, group);
    auto row = base_row(g, idx);
    row.pred = model.predict(g);
    rows.push_back(std::move(row));
  }
  return summarize(std::move(rows), group, threshold, "gvit");
}

std::vector<double> steady_state_vector(const SensorGraph& graph, std::size_t window) {
  if (window == 0) throw DomainError("steady-state window must be positive");
  if (graph.n_nodes < window) {
    throw DomainError("graph with " + std::to_string(graph.n_nodes) + " nodes is shorter than the " +
                      std::to_string(window) + "-node window");
  }
  const auto begin = graph.node_features.end() - static_cast<long>(window * kSensorChannels);
  return {begin, graph.node_features.end()};
}

std::array<double, 2> knn_predict(const std::vector<std::vector<double>>& train_vectors,
                                  const std::vector<std::array<double, 2>>& train_targets,
                                  const std::vector<double>& query, std::size_t k) {
  if (k == 0 || k > train_vectors.size()) {
    throw DomainError("knn: k = " + std::to_string(k) + " outside [1, " + std::to_string(train_vectors.size()) + "]");
  }
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(train_vectors.size());
  for (std::size_t i = 0; i < train_vectors.size(); ++i) {
    if (train_vectors[i].size() != query.size()) throw DimensionError("knn: vector length mismatch");
    double d = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) d += (train_vectors[i][j] - query[j]) * (train_vectors[i][j] - query[j]);
    dist.emplace_back(d, i);
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end());
  std::array<double, 2> out{0.0, 0.0};
  for (std::size_t i = 0; i < k; ++i) {
    out[0] += train_targets[dist[i].second][0];
    out[1] += train_targets[dist[i].second][1];
  }
  out[0] /= static_cast<double>(k);
  out[1] /= static_cast<double>(k);
  return out;
}

MetricsReport knn_baseline(const std::vector<SensorGraph>& graphs, const std::vector<std::size_t>& train,
                           const std::vector<std::size_t>& test, GasGroup group, std::size_t k, std::size_t window,
                           double threshold) {
  if (test.empty()) throw DomainError("knn_baseline: empty test set");
  if (k == 0 || k > train.size()) {
    throw DomainError("knn_baseline: k = " + std::to_string(k) + " exceeds the training size " +
                      std::to_string(train.size()));
  }
  std::vector<std::vector<double>> vectors;
  std::vector<std::array<double, 2>> targets;
  for (auto idx : train) {
    check_group(graphs.at(idx), group);
    vectors.push_back(steady_state_vector(graphs[idx], window));
    targets.push_back(graphs[idx].targets);
  }
  std::vector<PredictionRow> rows;
  for (auto idx : test) {
    const auto& g = graphs.at(idx);
    check_group(g, group);
    auto row = base_row(g, idx);
    const auto raw = knn_predict(vectors, targets, steady_state_vector(g, window), k);
    row.pred = {std::clamp(raw[0], 0.0, 1.0), std::clamp(raw[1], 0.0, 1.0)};
    rows.push_back(std::move(row));
  }
  return summarize(std::move(rows), group, threshold, "knn");
}

namespace {

const char* kCsvHeader =
    "index,source,begin_row,end_row,n_nodes,true_a,true_b,pred_a,pred_b,true_composition,pred_composition";

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

}  // namespace

void emit_report(const MetricsReport& report, const fs::path& dir, const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());

  json r2 = json::object(), r2_counts = json::object();
  for (std::size_t gas = 0; gas < 2; ++gas) {
    const auto key = gas == 0 ? "gas_a" : "gas_b";
    r2[key] = {{"mixed", optional_json(report.r2[gas][0])}, {"pure", optional_json(report.r2[gas][1])}};
    r2_counts[key] = {{"mixed", report.r2_counts[gas][0]}, {"pure", report.r2_counts[gas][1]}};
  }
  const json doc = {{"format", "gvit-report"},
                    {"version", 1},
                    {"model", report.model_name},
                    {"group", to_string(report.group)},
                    {"gas_names", {gas_name(report.group, 0), gas_name(report.group, 1)}},
                    {"threshold", report.threshold},
                    {"total", report.total},
                    {"accuracy", report.accuracy},
                    {"confusion_classes", {"A", "B", "A+B"}},
                    {"confusion", report.confusion},
                    {"anomalies", report.anomalies},
                    {"r2", r2},
                    {"r2_counts", r2_counts},
                    {"rmse", report.rmse},
                    {"table", stem + ".csv"}};
  {
    std::ofstream out(dir / (stem + ".json"));
    if (!out) throw IoError("cannot write report " + (dir / (stem + ".json")).string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("failed writing report");
  }
  std::ofstream csv(dir / (stem + ".csv"));
  if (!csv) throw IoError("cannot write table " + (dir / (stem + ".csv")).string());
  csv << kCsvHeader << '\n';
  for (const auto& r : report.rows) {
    csv << r.index << ',' << csv_field(r.source.empty() ? std::string("-") : r.source) << ',' << r.begin_row << ',' << r.end_row << ',' << r.n_nodes << ','
        << fmt(r.truth[0]) << ',' << fmt(r.truth[1]) << ',' << fmt(r.pred[0]) << ',' << fmt(r.pred[1]) << ','
        << to_string(r.true_composition) << ',' << to_string(r.pred_composition) << '\n';
  }
  if (!csv) throw IoError("failed writing table");
}

std::vector<PredictionRow> read_prediction_table(const fs::path& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw IoError("cannot open table " + csv_path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw ParseError(csv_path.string() + ": unexpected header", 1);
  std::vector<PredictionRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 11) throw ParseError(csv_path.string() + ": expected 11 fields", line_no);
    try {
      PredictionRow r;
      r.index = std::stoul(f[0]);
      r.source = f[1] == "-" ? "" : f[1];
      r.begin_row = std::stoul(f[2]);
      r.end_row = std::stoul(f[3]);
      r.n_nodes = std::stoul(f[4]);
      r.truth = {std::stod(f[5]), std::stod(f[6])};
      r.pred = {std::stod(f[7]), std::stod(f[8])};
      r.true_composition = parse_composition(f[9]);
      r.pred_composition = parse_composition(f[10]);
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError(csv_path.string() + ": malformed field", line_no);
    }
  }
  return rows;
}

MetricsReport read_report(const fs::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open report " + json_path.string());
  MetricsReport report;
  try {
    const auto doc = json::parse(in);
    if (doc.at("format") != "gvit-report") throw ParseError(json_path.string() + ": not a gvit report", 0);
    report.model_name = doc.at("model").get<std::string>();
    report.group = parse_gas_group(doc.at("group").get<std::string>());
    report.threshold = doc.at("threshold").get<double>();
    report.total = doc.at("total").get<std::size_t>();
    report.accuracy = doc.at("accuracy").get<double>();
    report.confusion = doc.at("confusion").get<std::array<std::array<std::size_t, 3>, 3>>();
    report.anomalies = doc.at("anomalies").get<std::array<std::size_t, 3>>();
    for (std::size_t gas = 0; gas < 2; ++gas) {
      const auto key = gas == 0 ? "gas_a" : "gas_b";
      report.r2[gas][0] = optional_from(doc.at("r2").at(key).at("mixed"));
      report.r2[gas][1] = optional_from(doc.at("r2").at(key).at("pure"));
      report.r2_counts[gas][0] = doc.at("r2_counts").at(key).at("mixed").get<std::size_t>();
      report.r2_counts[gas][1] = doc.at("r2_counts").at(key).at("pure").get<std::size_t>();
    }
    report.rmse = doc.at("rmse").get<double>();
    report.rows = read_prediction_table(json_path.parent_path() / doc.at("table").get<std::string>());
  } catch (const json::exception& e) {
    throw ParseError(json_path.string() + ": " + e.what(), 0);
  }
  return report;
}

}  // namespace gvit
