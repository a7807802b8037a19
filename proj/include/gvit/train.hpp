#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gvit/adam.hpp"
#include "gvit/chain_graph.hpp"
#include "gvit/model.hpp"
#include "gvit/tensor.hpp"

namespace gvit {

/// sqrt( Σ (pred − target)² / (2s) ) over s×2 inputs. At the exact minimum the
/// subgradient 0 is propagated.
Tensor rmse_loss(const Tensor& pred, const Tensor& target);

/// Eq.-style RMSE of plain numbers, shared by validation and evaluation.
/// RMSE where a gas with target 0 contributes max(pred, 0) instead of pred:
/// negative outputs for an absent gas clamp to the right answer and are not
/// penalized. Never smaller than the RMSE of predictions clamped at 0.
Tensor absent_clamped_rmse_loss(const Tensor& pred, const Tensor& target);

double rmse_value(const std::vector<std::array<double, 2>>& preds,
                  const std::vector<std::array<double, 2>>& targets);

struct TrainConfig {
  std::size_t epochs = 30;
  AdamConfig adam{};
  std::size_t accumulation = 8;  // graphs per optimizer step
  double clip_norm = 1.0;        // <= 0 disables clipping
  bool fit_input_scale = true;   // set the model's input scale from the training graphs
  bool clamp_absent = false;     // train with absent_clamped_rmse_loss
  std::uint64_t seed = 0;
  std::optional<std::size_t> fold;  // empty: all folds
  std::filesystem::path checkpoint_dir;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch RMSE
  double validation_rmse = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t selected_epoch = 0;  // index into epochs

  /// argmin of validation RMSE, earliest on ties.
  static std::size_t select(const std::vector<EpochRecord>& epochs);
};

/// Validation RMSE of clamped predictions over a set of graphs.
double validation_rmse(const GViTModel& model, const std::vector<const SensorGraph*>& graphs);

/// Per-channel 1/std of node features over the training graphs (1 where a
/// channel is constant).
std::vector<double> feature_scale(const std::vector<const SensorGraph*>& graphs);

using EpochCallback = std::function<void(std::size_t fold, const EpochRecord&)>;

/// Trains on `train`, selects the epoch with the lowest validation RMSE and
/// returns the model restored to that snapshot.
///
/// Each epoch shuffles the training order with a seeded generator, takes
/// `accumulation` graphs per optimizer step, computes one RMSE over that
/// mini-batch, clips the global gradient norm and applies Adam.
std::pair<GViTModel, TrainHistory> train_fold(const GViTModel& initial,
                                              const std::vector<const SensorGraph*>& train,
                                              const std::vector<const SensorGraph*>& validation,
                                              const TrainConfig& config, std::size_t fold_index = 0,
                                              const EpochCallback& on_epoch = {});

struct FoldResult {
  std::size_t fold = 0;
  GViTModel model;
  TrainHistory history;
  std::filesystem::path checkpoint;
};

struct CrossValidationReport {
  std::vector<FoldResult> folds;
  double mean_validation_rmse = 0.0;
  double std_validation_rmse = 0.0;
  std::size_t best_fold = 0;
};

/// Runs train_fold for every fold (or only cfg.fold). Fold f validates on
/// folds[f] and trains on the rest. Checkpoints and histories are written to
/// cfg.checkpoint_dir when it is non-empty.
CrossValidationReport train_cv(const GViTConfig& model_config, const std::vector<SensorGraph>& graphs,
                               const std::vector<std::vector<std::size_t>>& folds, const TrainConfig& config,
                               const CheckpointMeta& meta_template = {}, const EpochCallback& on_epoch = {});

/// One JSON object per line per epoch.
void write_history(const std::filesystem::path& path, const TrainHistory& history);
TrainHistory read_history(const std::filesystem::path& path);

}  // namespace gvit
