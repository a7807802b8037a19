#include "gvit/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gvit/errors.hpp"
#include "gvit/ops.hpp"
#include "gvit/random.hpp"
#include "json.hpp"

namespace gvit {

using nlohmann::json;

std::string to_string(NormPlacement placement) {
  return placement == NormPlacement::pre ? "pre" : "post";
}

NormPlacement parse_norm_placement(const std::string& text) {
  if (text == "pre") return NormPlacement::pre;
  if (text == "post") return NormPlacement::post;
  throw ConfigError("unknown norm placement '" + text + "' (expected pre or post)");
}

void GViTConfig::validate() const {
  if (in_features == 0) throw ConfigError("in_features must be positive");
  if (gcn_layers == 0 || gcn_filters == 0) throw ConfigError("gcn_layers and gcn_filters must be positive");
  if (gcn_layers * gcn_filters != d_model) {
    throw ConfigError("gcn_layers x gcn_filters (" + std::to_string(gcn_layers) + " x " +
                      std::to_string(gcn_filters) + ") must equal d_model (" +
                      std::to_string(d_model) + ")");
  }
  if (attention_heads == 0 || d_model % attention_heads != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) + ") must be divisible by attention_heads (" +
                      std::to_string(attention_heads) + ")");
  }
  if (pooled_nodes == 0) throw ConfigError("pooled_nodes must be at least 1");
  if (encoder_blocks == 0) throw ConfigError("encoder_blocks must be at least 1");
  if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be positive");
  if (out_gases != 2) throw ConfigError("out_gases must be 2");
}

std::vector<std::pair<std::size_t, std::size_t>> pool_ranges(std::size_t n_nodes,
                                                             std::size_t pooled_nodes) {
  if (pooled_nodes == 0) throw DomainError("uniform_pool: pooled node count must be positive");
  if (n_nodes == 0) throw DomainError("uniform_pool: input has no nodes");
  std::vector<std::pair<std::size_t, std::size_t>> ranges(pooled_nodes);
  for (std::size_t j = 0; j < pooled_nodes; ++j) {
    auto begin = j * n_nodes / pooled_nodes;
    auto end = std::max((j + 1) * n_nodes / pooled_nodes, begin + 1);
    begin = std::min(begin, n_nodes - 1);
    end = std::min(end, n_nodes);
    ranges[j] = {begin, end};
  }
  return ranges;
}

Tensor uniform_pool(const Tensor& x, std::size_t pooled_nodes) {
  if (x.rank() != 2) throw DimensionError("uniform_pool: expected a matrix, got " + shape_string(x.shape()));
  const auto n = x.rows(), d = x.cols();
  auto ranges = pool_ranges(n, pooled_nodes);
  const auto in = x.values();
  std::vector<double> out(pooled_nodes * d, 0.0);
  for (std::size_t j = 0; j < pooled_nodes; ++j) {
    const auto [begin, end] = ranges[j];
    double* dst = out.data() + j * d;
    for (auto r = begin; r < end; ++r) {
      for (std::size_t c = 0; c < d; ++c) dst[c] += in[r * d + c];
    }
    const double inv = 1.0 / static_cast<double>(end - begin);
    for (std::size_t c = 0; c < d; ++c) dst[c] *= inv;
  }
  return make_result({pooled_nodes, d}, std::move(out), {x},
                     [ranges = std::move(ranges), d](detail::Node& self) {
                       auto& px = *self.parents[0];
                       for (std::size_t j = 0; j < ranges.size(); ++j) {
                         const auto [begin, end] = ranges[j];
                         const double inv = 1.0 / static_cast<double>(end - begin);
                         const double* dy = self.grad.data() + j * d;
                         for (auto r = begin; r < end; ++r) {
                           for (std::size_t c = 0; c < d; ++c) px.grad[r * d + c] += inv * dy[c];
                         }
                       }
                     });
}

Tensor prepend_class_token(const Tensor& pooled, const Tensor& class_token) {
  if (class_token.size() != pooled.cols()) {
    throw DimensionError("prepend_class_token: token " + shape_string(class_token.shape()) +
                         " does not match width of " + shape_string(pooled.shape()));
  }
  const Tensor token = class_token.rank() == 2 ? class_token
                                               : make_result({1, class_token.size()},
                                                             {class_token.values().begin(),
                                                              class_token.values().end()},
                                                             {class_token}, [](detail::Node& self) {
                                                               auto& p = *self.parents[0];
                                                               for (std::size_t i = 0; i < self.grad.size(); ++i)
                                                                 p.grad[i] += self.grad[i];
                                                             });
  return concat_rows({token, pooled});
}

Tensor mha(const Tensor& x, const AttentionWeights& w, std::size_t heads,
           std::vector<Tensor>* attention_out) {
  const auto d = x.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("mha: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  const auto head_dim = d / heads;
  const auto q = add_row_vector(matmul(x, w.wq), w.bq);
  const auto k = add_row_vector(matmul(x, w.wk), w.bk);
  const auto v = add_row_vector(matmul(x, w.wv), w.bv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  if (attention_out) attention_out->clear();
  for (std::size_t h = 0; h < heads; ++h) {
    const auto qh = slice_cols(q, h * head_dim, head_dim);
    const auto kh = slice_cols(k, h * head_dim, head_dim);
    const auto vh = slice_cols(v, h * head_dim, head_dim);
    auto attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    outputs.push_back(matmul(attn, vh));
    if (attention_out) attention_out->push_back(attn);
  }
  const auto merged = heads == 1 ? outputs.front() : concat_cols(outputs);
  return add_row_vector(matmul(merged, w.wo), w.bo);
}

namespace {

Tensor mlp(const Tensor& x, const EncoderBlockWeights& b) {
  const auto hidden = gelu(add_row_vector(matmul(x, b.mlp_w1), b.mlp_b1));
  return add_row_vector(matmul(hidden, b.mlp_w2), b.mlp_b2);
}

}  // namespace

Tensor encoder_block(const Tensor& x, const EncoderBlockWeights& b, std::size_t heads,
                     NormPlacement placement) {
  if (placement == NormPlacement::pre) {
    auto h = add(x, mha(layer_norm_rows(x, b.norm1_gain, b.norm1_bias), b.attention, heads));
    return add(h, mlp(layer_norm_rows(h, b.norm2_gain, b.norm2_bias), b));
  }
  auto h = layer_norm_rows(add(x, mha(x, b.attention, heads)), b.norm1_gain, b.norm1_bias);
  return layer_norm_rows(add(h, mlp(h, b)), b.norm2_gain, b.norm2_bias);
}

Composition predict_composition(const std::array<double, 2>& c, double threshold) {
  const bool has_a = c[0] >= threshold;
  const bool has_b = c[1] >= threshold;
  if (has_a && has_b) return Composition::ab;
  if (has_a) return Composition::a;
  if (has_b) return Composition::b;
  return Composition::none;
}

namespace {

Tensor xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor({fan_in, fan_out}, std::move(v), true);
}

Tensor gaussian(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor zeros_param(std::size_t n) { return Tensor::zeros({n}, true); }
Tensor ones_param(std::size_t n) { return Tensor::full({n}, 1.0, true); }

}  // namespace

GViTModel::GViTModel(const GViTConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const auto d = config_.d_model;
  input_scale_.assign(config_.in_features, 1.0);
  std::size_t fan_in = config_.in_features;
  for (std::size_t l = 0; l < config_.gcn_layers; ++l) {
    gcn_weights_.push_back(xavier(rng, fan_in, config_.gcn_filters));
    fan_in = config_.gcn_filters;
  }
  class_token_ = gaussian(rng, {1, d}, 0.02);
  if (config_.positional_embedding) positional_embedding_ = gaussian(rng, {config_.tokens(), d}, 0.02);
  for (std::size_t b = 0; b < config_.encoder_blocks; ++b) {
    EncoderBlockWeights block;
    block.norm1_gain = ones_param(d);
    block.norm1_bias = zeros_param(d);
    block.attention.wq = xavier(rng, d, d);
    block.attention.bq = zeros_param(d);
    block.attention.wk = xavier(rng, d, d);
    block.attention.bk = zeros_param(d);
    block.attention.wv = xavier(rng, d, d);
    block.attention.bv = zeros_param(d);
    block.attention.wo = xavier(rng, d, d);
    block.attention.bo = zeros_param(d);
    block.norm2_gain = ones_param(d);
    block.norm2_bias = zeros_param(d);
    block.mlp_w1 = xavier(rng, d, config_.mlp_hidden);
    block.mlp_b1 = zeros_param(config_.mlp_hidden);
    block.mlp_w2 = xavier(rng, config_.mlp_hidden, d);
    block.mlp_b2 = zeros_param(d);
    blocks_.push_back(std::move(block));
  }
  if (config_.norm_placement == NormPlacement::pre) {
    final_norm_gain_ = ones_param(d);
    final_norm_bias_ = zeros_param(d);
  }
  head_weight_ = xavier(rng, d, config_.out_gases);
  head_bias_ = zeros_param(config_.out_gases);
}

void GViTModel::set_input_scale(std::vector<double> scale) {
  if (scale.size() != config_.in_features) {
    throw DimensionError("input scale needs " + std::to_string(config_.in_features) + " entries");
  }
  check_finite(scale, "input scale");
  input_scale_ = std::move(scale);
}

Tensor GViTModel::forward_features(const Tensor& features) const {
  if (features.rank() != 2 || features.cols() != config_.in_features) {
    throw DimensionError("forward: expected Nx" + std::to_string(config_.in_features) + " features, got " +
                         shape_string(features.shape()));
  }
  const auto propagation = normalize_adjacency(build_chain_adjacency(features.rows()), config_.adjacency);
  const auto scaled = scale_columns(features, input_scale_);
  const auto graph_matrix = gcn_stack(scaled, propagation, gcn_weights_, config_.d_model);
  const auto pooled = uniform_pool(graph_matrix, config_.pooled_nodes);
  auto tokens = prepend_class_token(pooled, class_token_);
  if (config_.positional_embedding) tokens = add(tokens, positional_embedding_);
  for (const auto& block : blocks_) {
    tokens = encoder_block(tokens, block, config_.attention_heads, config_.norm_placement);
  }
  auto cls = slice_rows(tokens, 0, 1);
  if (config_.norm_placement == NormPlacement::pre) cls = layer_norm_rows(cls, final_norm_gain_, final_norm_bias_);
  return add_row_vector(matmul(cls, head_weight_), head_bias_);
}

Tensor GViTModel::forward(const SensorGraph& graph) const {
  if (graph.n_nodes == 0) throw DomainError("forward: graph has no nodes");
  return forward_features(graph.features());
}

std::array<double, 2> GViTModel::predict(const SensorGraph& graph) const {
  NoGradGuard no_grad;
  const auto y = forward(graph);
  const auto out = y.values();
  return {std::clamp(out[0], 0.0, 1.0), std::clamp(out[1], 0.0, 1.0)};
}

std::vector<std::pair<std::string, Tensor>> GViTModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::size_t l = 0; l < gcn_weights_.size(); ++l) out.emplace_back("gcn." + std::to_string(l) + ".weight", gcn_weights_[l]);
  out.emplace_back("class_token", class_token_);
  if (config_.positional_embedding) out.emplace_back("positional_embedding", positional_embedding_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const auto p = "blocks." + std::to_string(b) + ".";
    const auto& blk = blocks_[b];
    out.emplace_back(p + "norm1.gain", blk.norm1_gain);
    out.emplace_back(p + "norm1.bias", blk.norm1_bias);
    out.emplace_back(p + "attn.wq", blk.attention.wq);
    out.emplace_back(p + "attn.bq", blk.attention.bq);
    out.emplace_back(p + "attn.wk", blk.attention.wk);
    out.emplace_back(p + "attn.bk", blk.attention.bk);
    out.emplace_back(p + "attn.wv", blk.attention.wv);
    out.emplace_back(p + "attn.bv", blk.attention.bv);
    out.emplace_back(p + "attn.wo", blk.attention.wo);
    out.emplace_back(p + "attn.bo", blk.attention.bo);
    out.emplace_back(p + "norm2.gain", blk.norm2_gain);
    out.emplace_back(p + "norm2.bias", blk.norm2_bias);
    out.emplace_back(p + "mlp.w1", blk.mlp_w1);
    out.emplace_back(p + "mlp.b1", blk.mlp_b1);
    out.emplace_back(p + "mlp.w2", blk.mlp_w2);
    out.emplace_back(p + "mlp.b2", blk.mlp_b2);
  }
  if (config_.norm_placement == NormPlacement::pre) {
    out.emplace_back("final_norm.gain", final_norm_gain_);
    out.emplace_back("final_norm.bias", final_norm_bias_);
  }
  out.emplace_back("head.weight", head_weight_);
  out.emplace_back("head.bias", head_bias_);
  return out;
}

std::vector<Tensor> GViTModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t GViTModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

std::uint64_t GViTModel::parameter_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_parameters()) {
    for (double v : t.values()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (auto byte : bytes) {
        h ^= byte;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

std::vector<std::vector<double>> GViTModel::snapshot() const {
  std::vector<std::vector<double>> out;
  for (const auto& [name, t] : named_parameters()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

void GViTModel::restore(const std::vector<std::vector<double>>& values) {
  auto params = parameters();
  if (values.size() != params.size()) throw DimensionError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].size() != params[i].size()) {
      throw DimensionError("restore: size mismatch for parameter " + std::to_string(i));
    }
    check_finite(values[i], "restore");
    std::copy(values[i].begin(), values[i].end(), params[i].mutable_values().begin());
  }
}

GViTModel GViTModel::clone() const {
  GViTModel copy(config_);
  copy.input_scale_ = input_scale_;
  copy.restore(snapshot());
  return copy;
}

namespace {

json config_to_json(const GViTConfig& c) {
  return {{"in_features", c.in_features},
          {"gcn_layers", c.gcn_layers},
          {"gcn_filters", c.gcn_filters},
          {"d_model", c.d_model},
          {"pooled_nodes", c.pooled_nodes},
          {"encoder_blocks", c.encoder_blocks},
          {"attention_heads", c.attention_heads},
          {"mlp_hidden", c.mlp_hidden},
          {"out_gases", c.out_gases},
          {"positional_embedding", c.positional_embedding},
          {"adjacency", to_string(c.adjacency)},
          {"norm_placement", to_string(c.norm_placement)},
          {"seed", c.seed}};
}

GViTConfig config_from_json(const json& j) {
  GViTConfig c;
  c.in_features = j.at("in_features").get<std::size_t>();
  c.gcn_layers = j.at("gcn_layers").get<std::size_t>();
  c.gcn_filters = j.at("gcn_filters").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.pooled_nodes = j.at("pooled_nodes").get<std::size_t>();
  c.encoder_blocks = j.at("encoder_blocks").get<std::size_t>();
  c.attention_heads = j.at("attention_heads").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.out_gases = j.at("out_gases").get<std::size_t>();
  c.positional_embedding = j.at("positional_embedding").get<bool>();
  c.adjacency = parse_adjacency_mode(j.at("adjacency").get<std::string>());
  c.norm_placement = parse_norm_placement(j.at("norm_placement").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GViTModel& model,
                     const CheckpointMeta& meta) {
  json params = json::array();
  for (const auto& [name, t] : model.named_parameters()) {
    params.push_back({{"name", name},
                      {"shape", t.shape()},
                      {"values", std::vector<double>(t.values().begin(), t.values().end())}});
  }
  json doc = {{"format", "gvit-checkpoint"},
              {"version", 1},
              {"config", config_to_json(model.config())},
              {"meta",
               {{"group", to_string(meta.group)},
                {"max_ppm", meta.max_ppm},
                {"air_baseline", meta.air_baseline},
                {"downsample_factor", meta.downsample_factor},
                {"best_validation_rmse", meta.best_validation_rmse},
                {"selected_epoch", meta.selected_epoch},
                {"fold", meta.fold}}},
              {"input_scale", model.input_scale()},
              {"parameters", std::move(params)}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::pair<GViTModel, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what(), 0);
  }
  try {
    if (doc.at("format") != "gvit-checkpoint") throw ParseError("not a gvit checkpoint: " + path.string(), 0);
    auto config = config_from_json(doc.at("config"));
    config.validate();
    GViTModel model(config);
    model.set_input_scale(doc.at("input_scale").get<std::vector<double>>());

    const auto& stored = doc.at("parameters");
    auto named = model.named_parameters();
    if (stored.size() != named.size()) {
      throw ParseError("checkpoint holds " + std::to_string(stored.size()) + " parameters, config implies " +
                       std::to_string(named.size()), 0);
    }
    for (std::size_t i = 0; i < named.size(); ++i) {
      auto& [name, tensor] = named[i];
      const auto& entry = stored[i];
      if (entry.at("name") != name) throw ParseError("checkpoint parameter order: expected " + name, 0);
      if (entry.at("shape").get<Shape>() != tensor.shape()) {
        throw DimensionError("checkpoint parameter " + name + " has shape " +
                             shape_string(entry.at("shape").get<Shape>()) + ", expected " +
                             shape_string(tensor.shape()));
      }
      const auto values = entry.at("values").get<std::vector<double>>();
      if (values.size() != tensor.size()) throw DimensionError("checkpoint parameter " + name + " size mismatch");
      check_finite(values, "checkpoint");
      std::copy(values.begin(), values.end(), tensor.mutable_values().begin());
    }

    CheckpointMeta meta;
    const auto& m = doc.at("meta");
    meta.group = parse_gas_group(m.at("group").get<std::string>());
    meta.max_ppm = m.at("max_ppm").get<std::array<double, 2>>();
    meta.air_baseline = m.at("air_baseline").get<std::vector<double>>();
    meta.downsample_factor = m.at("downsample_factor").get<std::size_t>();
    meta.best_validation_rmse = m.at("best_validation_rmse").get<double>();
    meta.selected_epoch = m.at("selected_epoch").get<std::size_t>();
    meta.fold = m.at("fold").get<int>();
    return {std::move(model), std::move(meta)};
  } catch (const json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what(), 0);
  }
}

}  // namespace gvit
