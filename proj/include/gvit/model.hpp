#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gvit/chain_graph.hpp"
#include "gvit/tensor.hpp"

namespace gvit {

enum class NormPlacement { pre, post };

std::string to_string(NormPlacement placement);
NormPlacement parse_norm_placement(const std::string& text);

struct GViTConfig {
  std::size_t in_features = kSensorChannels;
  std::size_t gcn_layers = 3;
  std::size_t gcn_filters = 16;
  std::size_t d_model = 48;
  std::size_t pooled_nodes = 300;
  std::size_t encoder_blocks = 18;
  std::size_t attention_heads = 4;
  std::size_t mlp_hidden = 192;
  std::size_t out_gases = 2;
  bool positional_embedding = true;
  AdjacencyMode adjacency = AdjacencyMode::symmetric;
  NormPlacement norm_placement = NormPlacement::pre;
  std::uint64_t seed = 0;

  /// Token count after pooling plus the class token.
  std::size_t tokens() const { return pooled_nodes + 1; }
  /// Throws ConfigError naming the first violated field.
  void validate() const;
  bool operator==(const GViTConfig&) const = default;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct EncoderBlockWeights {
  Tensor norm1_gain, norm1_bias;
  AttentionWeights attention;
  Tensor norm2_gain, norm2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

/// Row j averages input rows [floor(jN/M), max(floor((j+1)N/M), floor(jN/M)+1)).
Tensor uniform_pool(const Tensor& x, std::size_t pooled_nodes);
/// Index ranges used by uniform_pool, exposed for testing and inspection.
std::vector<std::pair<std::size_t, std::size_t>> pool_ranges(std::size_t n_nodes,
                                                             std::size_t pooled_nodes);

Tensor prepend_class_token(const Tensor& pooled, const Tensor& class_token);

/// Multi-head self-attention without masking. When `attention_out` is given
/// it receives each head's T×T attention matrix.
Tensor mha(const Tensor& x, const AttentionWeights& weights, std::size_t heads,
           std::vector<Tensor>* attention_out = nullptr);

Tensor encoder_block(const Tensor& x, const EncoderBlockWeights& block, std::size_t heads,
                     NormPlacement placement = NormPlacement::pre);

/// Composition from two normalized concentrations: gas present iff >= threshold.
Composition predict_composition(const std::array<double, 2>& concentrations,
                                double threshold = 0.01);

class GViTModel {
 public:
  /// Seeded initialization; identical configs give identical parameters.
  explicit GViTModel(const GViTConfig& config);

  const GViTConfig& config() const { return config_; }

  /// Raw 1×2 head output with gradients recorded when enabled.
  Tensor forward(const SensorGraph& graph) const;
  /// Same as forward() starting from an N×16 feature tensor.
  Tensor forward_features(const Tensor& features) const;
  /// Inference: forward without tape, clamped to [0, 1].
  std::array<double, 2> predict(const SensorGraph& graph) const;

  /// Stable, ordered (name, tensor) list of every trainable parameter.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
  /// FNV-1a hash over all parameter bytes.
  std::uint64_t parameter_hash() const;

  /// Deep copies of all parameter values, in named_parameters() order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);
  GViTModel clone() const;

  /// Fixed per-channel multiplier applied to raw node features. Not trained.
  const std::vector<double>& input_scale() const { return input_scale_; }
  void set_input_scale(std::vector<double> scale);

  std::vector<Tensor>& gcn_weights() { return gcn_weights_; }
  std::vector<EncoderBlockWeights>& blocks() { return blocks_; }
  Tensor& class_token() { return class_token_; }
  Tensor& positional_embedding() { return positional_embedding_; }
  Tensor& head_weight() { return head_weight_; }
  Tensor& head_bias() { return head_bias_; }

 private:
  GViTConfig config_;
  std::vector<double> input_scale_;
  std::vector<Tensor> gcn_weights_;
  Tensor class_token_;
  Tensor positional_embedding_;  // undefined when disabled
  std::vector<EncoderBlockWeights> blocks_;
  Tensor final_norm_gain_, final_norm_bias_;
  Tensor head_weight_, head_bias_;
};

/// Data-side facts a checkpoint needs to serve predictions in ppm.
struct CheckpointMeta {
  GasGroup group = GasGroup::co_ethylene;
  std::array<double, 2> max_ppm{1.0, 1.0};
  std::vector<double> air_baseline;  // per channel, empty when unknown
  std::size_t downsample_factor = 1;
  double best_validation_rmse = 0.0;
  std::size_t selected_epoch = 0;
  int fold = -1;
};

/// Writes config, metadata and every parameter array (with shape) as JSON.
void save_checkpoint(const std::filesystem::path& path, const GViTModel& model,
                     const CheckpointMeta& meta);
/// Reads a checkpoint, validating the config and every parameter shape.
std::pair<GViTModel, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace gvit
