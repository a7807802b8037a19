#include "gvit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include "gvit/errors.hpp"
#include "gvit/ops.hpp"
#include "gvit/random.hpp"
#include "json.hpp"

namespace gvit {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor rmse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("rmse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (pred.size() == 0) throw DomainError("rmse_loss: empty batch");
  const auto p = pred.values();
  const auto t = target.values();
  const double count = static_cast<double>(p.size());  // s samples × 2 gases
  double sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sq += (p[i] - t[i]) * (p[i] - t[i]);
  const double value = std::sqrt(sq / count);
  return make_result({1}, {value}, {pred, target}, [count](detail::Node& self) {
    const double r = self.value[0];
    if (r == 0.0) return;  // subgradient 0 at the minimum
    auto& pp = *self.parents[0];
    auto& pt = *self.parents[1];
    const double coeff = self.grad[0] / (count * r);
    for (std::size_t i = 0; i < pp.value.size(); ++i) {
      const double d = coeff * (pp.value[i] - pt.value[i]);
      if (pp.requires_grad) pp.grad[i] += d;
      if (pt.requires_grad) pt.grad[i] -= d;
    }
  });
}

Tensor absent_clamped_rmse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("absent_clamped_rmse_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                         shape_string(target.shape()));
  }
  if (pred.size() == 0) throw DomainError("absent_clamped_rmse_loss: empty batch");
  const auto p = pred.values();
  const auto t = target.values();
  std::vector<double> residual(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) residual[i] = t[i] == 0.0 ? std::max(p[i], 0.0) : p[i] - t[i];
  double sq = 0.0;
  for (double r : residual) sq += r * r;
  const double count = static_cast<double>(p.size());
  const double value = std::sqrt(sq / count);
  return make_result({1}, {value}, {pred}, [count, residual = std::move(residual)](detail::Node& self) {
    const double r = self.value[0];
    if (r == 0.0) return;
    auto& pp = *self.parents[0];
    const double coeff = self.grad[0] / (count * r);
    for (std::size_t i = 0; i < residual.size(); ++i) pp.grad[i] += coeff * residual[i];
  });
}

double rmse_value(const std::vector<std::array<double, 2>>& preds,
                  const std::vector<std::array<double, 2>>& targets) {
  if (preds.size() != targets.size()) throw DimensionError("rmse: prediction/target count mismatch");
  if (preds.empty()) throw DomainError("rmse: empty sample set");
  double sq = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (std::size_t g = 0; g < 2; ++g) sq += (preds[i][g] - targets[i][g]) * (preds[i][g] - targets[i][g]);
  }
  return std::sqrt(sq / (2.0 * static_cast<double>(preds.size())));
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!(adam.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (accumulation < 1) throw ConfigError("accumulation must be at least 1");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("Adam eps must be positive");
}

std::size_t TrainHistory::select(const std::vector<EpochRecord>& epochs) {
  if (epochs.empty()) throw DomainError("cannot select from an empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < epochs.size(); ++i) {
    if (epochs[i].validation_rmse < epochs[best].validation_rmse) best = i;
  }
  return best;
}

double validation_rmse(const GViTModel& model, const std::vector<const SensorGraph*>& graphs) {
  if (graphs.empty()) throw DomainError("validation set is empty");
  std::vector<std::array<double, 2>> preds, targets;
  preds.reserve(graphs.size());
  targets.reserve(graphs.size());
  for (const auto* g : graphs) {
    preds.push_back(model.predict(*g));
    targets.push_back(g->targets);
  }
  return rmse_value(preds, targets);
}

std::vector<double> feature_scale(const std::vector<const SensorGraph*>& graphs) {
  std::vector<double> mean(kSensorChannels, 0.0), sq(kSensorChannels, 0.0);
  double n = 0.0;
  for (const auto* g : graphs) {
    for (std::size_t r = 0; r < g->n_nodes; ++r) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) mean[c] += g->node_features[r * kSensorChannels + c];
    }
    n += static_cast<double>(g->n_nodes);
  }
  std::vector<double> scale(kSensorChannels, 1.0);
  if (n < 2.0) return scale;
  for (auto& m : mean) m /= n;
  for (const auto* g : graphs) {
    for (std::size_t r = 0; r < g->n_nodes; ++r) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) {
        const double d = g->node_features[r * kSensorChannels + c] - mean[c];
        sq[c] += d * d;
      }
    }
  }
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    const double sd = std::sqrt(sq[c] / n);
    if (sd > 1e-12) scale[c] = 1.0 / sd;
  }
  return scale;
}

std::pair<GViTModel, TrainHistory> train_fold(const GViTModel& initial,
                                              const std::vector<const SensorGraph*>& train,
                                              const std::vector<const SensorGraph*>& validation,
                                              const TrainConfig& config, std::size_t fold_index,
                                              const EpochCallback& on_epoch) {
  config.validate();
  if (train.empty()) throw DomainError("train_fold: training set is empty");
  if (validation.empty()) throw DomainError("train_fold: validation set is empty");
  for (const auto* v : validation) {
    if (std::find(train.begin(), train.end(), v) != train.end()) {
      throw DomainError("train_fold: training and validation sets overlap");
    }
  }

  GViTModel model = initial.clone();
  if (config.fit_input_scale) model.set_input_scale(feature_scale(train));
  auto params = model.parameters();
  AdamState state;
  TrainHistory history;
  std::vector<std::vector<double>> best = model.snapshot();
  double best_rmse = INFINITY;
  std::vector<std::size_t> order(train.size());
  std::vector<std::vector<double>> grads(params.size());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, fold_index * 1000003ULL + epoch));
    rng.shuffle(std::span(order));

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.accumulation) {
      const auto end = std::min(start + config.accumulation, order.size());
      std::vector<Tensor> outputs;
      std::vector<double> target_values;
      Tensor loss;
      try {
        for (auto k = start; k < end; ++k) {
          outputs.push_back(model.forward(*train[order[k]]));
          target_values.push_back(train[order[k]]->targets[0]);
          target_values.push_back(train[order[k]]->targets[1]);
        }
        const auto preds = concat_rows(outputs);
        Tensor targets({end - start, 2}, std::move(target_values));
        loss = config.clamp_absent ? absent_clamped_rmse_loss(preds, targets) : rmse_loss(preds, targets);
        backward(loss);
      } catch (const NumericError& e) {
        std::string names;
        for (auto k = start; k < end; ++k) {
          const auto& m = train[order[k]]->meta;
          names += (names.empty() ? "" : ", ") + m.source + "[" + std::to_string(m.begin_row) + ":" +
                   std::to_string(m.end_row) + ")";
        }
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + " on graph(s) " + names +
                           ": " + e.what());
      }
      for (std::size_t p = 0; p < params.size(); ++p) {
        const auto g = params[p].grad();
        if (g.empty()) {
          grads[p].assign(params[p].size(), 0.0);
        } else {
          grads[p].assign(g.begin(), g.end());
        }
      }
      if (config.clip_norm > 0.0) clip_grad_norm(grads, config.clip_norm);
      adam_step(params, grads, state, config.adam);
      loss_sum += loss.item();
      ++steps;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(steps);
    record.validation_rmse = validation_rmse(model, validation);
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (record.validation_rmse < best_rmse) {
      best_rmse = record.validation_rmse;
      best = model.snapshot();
    }
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(fold_index, record);
  }
  history.selected_epoch = TrainHistory::select(history.epochs);
  model.restore(best);
  return {std::move(model), std::move(history)};
}

CrossValidationReport train_cv(const GViTConfig& model_config, const std::vector<SensorGraph>& graphs,
                               const std::vector<std::vector<std::size_t>>& folds, const TrainConfig& config,
                               const CheckpointMeta& meta_template, const EpochCallback& on_epoch) {
  config.validate();
  if (folds.size() < 2) throw DomainError("train_cv: need at least two folds");
  if (config.fold && *config.fold >= folds.size()) {
    throw ConfigError("fold " + std::to_string(*config.fold) + " out of range (have " +
                      std::to_string(folds.size()) + ")");
  }
  if (!config.checkpoint_dir.empty()) {
    std::error_code ec;
    fs::create_directories(config.checkpoint_dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + config.checkpoint_dir.string());
  }
  const GViTModel initial(model_config);
  CrossValidationReport report;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    if (config.fold && *config.fold != f) continue;
    std::vector<const SensorGraph*> train, validation;
    for (std::size_t other = 0; other < folds.size(); ++other) {
      for (auto idx : folds[other]) (other == f ? validation : train).push_back(&graphs.at(idx));
    }
    auto [model, history] = train_fold(initial, train, validation, config, f, on_epoch);
    FoldResult result{f, std::move(model), std::move(history), {}};
    if (!config.checkpoint_dir.empty()) {
      CheckpointMeta meta = meta_template;
      meta.fold = static_cast<int>(f);
      meta.selected_epoch = result.history.selected_epoch;
      meta.best_validation_rmse = result.history.epochs[result.history.selected_epoch].validation_rmse;
      result.checkpoint = config.checkpoint_dir / ("fold_" + std::to_string(f) + ".ckpt.json");
      save_checkpoint(result.checkpoint, result.model, meta);
      write_history(config.checkpoint_dir / ("fold_" + std::to_string(f) + ".history.jsonl"), result.history);
    }
    report.folds.push_back(std::move(result));
  }

  double sum = 0.0;
  for (const auto& r : report.folds) sum += r.history.epochs[r.history.selected_epoch].validation_rmse;
  const double n = static_cast<double>(report.folds.size());
  report.mean_validation_rmse = sum / n;
  double var = 0.0;
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    const auto& r = report.folds[i];
    const double v = r.history.epochs[r.history.selected_epoch].validation_rmse;
    var += (v - report.mean_validation_rmse) * (v - report.mean_validation_rmse);
    const auto& best = report.folds[report.best_fold].history;
    if (v < best.epochs[best.selected_epoch].validation_rmse) report.best_fold = i;
  }
  report.std_validation_rmse = std::sqrt(var / n);
  return report;
}

void write_history(const fs::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history " + path.string());
  for (const auto& e : history.epochs) {
    out << json{{"epoch", e.epoch},
                {"train_loss", e.train_loss},
                {"validation_rmse", e.validation_rmse},
                {"seconds", e.seconds},
                {"selected", e.epoch == history.epochs[history.selected_epoch].epoch}}
               .dump()
        << '\n';
  }
  if (!out) throw IoError("failed writing history " + path.string());
}

TrainHistory read_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open history " + path.string());
  TrainHistory history;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = json::parse(line);
      history.epochs.push_back({j.at("epoch").get<std::size_t>(), j.at("train_loss").get<double>(),
                                j.at("validation_rmse").get<double>(), j.at("seconds").get<double>()});
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  history.selected_epoch = TrainHistory::select(history.epochs);
  return history;
}

}  // namespace gvit
