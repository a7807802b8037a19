// gvit: synth | ingest | train | eval | predict
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage or configuration,
// 3 file I/O, 4 numeric failure, 5 malformed or unusable data,
// 6 output already exists (rerun with --overwrite).

#include <Eigen/Core>
#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gvit/errors.hpp"
#include "gvit/eval.hpp"
#include "gvit/ingest.hpp"
#include "gvit/model.hpp"
#include "gvit/train.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gvit;

namespace {

constexpr const char* kVersion = "0.1.0";

enum ExitCode { kOk = 0, kUnexpected = 1, kConfig = 2, kIo = 3, kNumeric = 4, kData = 5, kExists = 6 };

struct OutputExists : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string group = "co_ethylene";
  fs::path out = "run";
  std::optional<std::size_t> fold;
  bool with_knn = false;
  bool overwrite = false;

  // synth
  std::string schedule;  // "a,b,seconds; ..." or empty for a random schedule
  std::size_t exposures_per_class = 20;
  double min_exposure_s = 1.0;
  double max_exposure_s = 60.0;
  double air_s = 10.0;
  std::size_t concentration_levels = 8;
  double sample_rate_hz = 10.0;
  double noise = 0.02;

  // ingest
  fs::path streams;  // manifest; defaults to <out>/streams.txt
  std::size_t downsample_factor = 2;
  std::string downsample_mode = "decimate";
  bool reference_maxima = true;
  double test_ratio = 0.16;
  std::size_t folds = 5;

  // model
  GViTConfig model;
  std::string adjacency = "symmetric";
  std::string norm_placement = "pre";

  // train
  TrainConfig train;

  // eval
  double threshold = 0.01;
  std::size_t knn_k = 3;
  std::size_t knn_window = 5;

  // predict
  fs::path input;
  fs::path air;
  fs::path checkpoint;
};

void add_options(CLI::App& app, RunConfig& c) {
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "INI config file; command-line flags override it");
  app.add_option("--seed", c.seed, "Base seed for data, split and training");
  app.add_option("--fold", c.fold, "Train or evaluate a single fold");
  app.add_flag("--with-knn", c.with_knn, "Also evaluate the KNN comparator");
  app.add_flag("--overwrite", c.overwrite, "Replace existing outputs");
  app.add_option("--out", c.out, "Working directory for all outputs");
  app.add_option("--group", c.group, "co_ethylene or methane_ethylene")
      ->check(CLI::IsMember({"co_ethylene", "methane_ethylene"}));

  auto* g = "Synthetic data";
  app.add_option("--schedule", c.schedule, "Explicit phases 'a,b,seconds; ...' in ppm")->group(g);
  app.add_option("--exposures-per-class", c.exposures_per_class)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--min-exposure-s", c.min_exposure_s)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--max-exposure-s", c.max_exposure_s)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--air-s", c.air_s)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--concentration-levels", c.concentration_levels)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--sample-rate-hz", c.sample_rate_hz)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--noise", c.noise)->check(CLI::NonNegativeNumber)->group(g);

  g = "Ingest";
  app.add_option("--streams", c.streams, "Manifest of 'path group' lines")->group(g);
  app.add_option("--downsample-factor", c.downsample_factor)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--downsample-mode", c.downsample_mode)->check(CLI::IsMember({"decimate", "average"}))->group(g);
  app.add_option("--reference-maxima", c.reference_maxima, "Normalize by the published gas maxima")->group(g);
  app.add_option("--test-ratio", c.test_ratio)->check(CLI::Range(0.0, 1.0))->group(g);
  app.add_option("--folds", c.folds)->check(CLI::Range(2, 100))->group(g);

  g = "Model";
  app.add_option("--gcn-layers", c.model.gcn_layers)->group(g);
  app.add_option("--gcn-filters", c.model.gcn_filters)->group(g);
  app.add_option("--d-model", c.model.d_model)->group(g);
  app.add_option("--pooled-nodes", c.model.pooled_nodes)->group(g);
  app.add_option("--encoder-blocks", c.model.encoder_blocks)->group(g);
  app.add_option("--attention-heads", c.model.attention_heads)->group(g);
  app.add_option("--mlp-hidden", c.model.mlp_hidden)->group(g);
  app.add_option("--positional-embedding", c.model.positional_embedding)->group(g);
  app.add_option("--adjacency", c.adjacency)->check(CLI::IsMember({"symmetric", "row"}))->group(g);
  app.add_option("--norm-placement", c.norm_placement)->check(CLI::IsMember({"pre", "post"}))->group(g);

  g = "Training";
  app.add_option("--epochs", c.train.epochs)->group(g);
  app.add_option("--lr", c.train.adam.lr)->group(g);
  app.add_option("--beta1", c.train.adam.beta1)->group(g);
  app.add_option("--beta2", c.train.adam.beta2)->group(g);
  app.add_option("--adam-eps", c.train.adam.eps)->group(g);
  app.add_option("--accumulation", c.train.accumulation)->group(g);
  app.add_option("--clip-norm", c.train.clip_norm, "<= 0 disables clipping")->group(g);
  app.add_option("--clamp-absent", c.train.clamp_absent, "Do not penalize negative outputs for absent gases")->group(g);
  app.add_option("--fit-input-scale", c.train.fit_input_scale)->group(g);

  g = "Evaluation";
  app.add_option("--threshold", c.threshold)->check(CLI::NonNegativeNumber)->group(g);
  app.add_option("--knn-k", c.knn_k)->check(CLI::PositiveNumber)->group(g);
  app.add_option("--knn-window", c.knn_window)->check(CLI::PositiveNumber)->group(g);

  g = "Prediction";
  app.add_option("--input", c.input, "Recording slice (19-column text)")->group(g);
  app.add_option("--air", c.air, "Air reference recording for baseline correction")->group(g);
  app.add_option("--checkpoint", c.checkpoint, "Checkpoint file; default is the best trained fold")->group(g);
}

// ---------------------------------------------------------------------------
// Helpers

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_json(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what(), 0);
  }
}

/// Refuses to reuse an existing non-empty output unless --overwrite was given.
void claim_output(const fs::path& path, bool overwrite) {
  const bool occupied = fs::is_directory(path) ? !fs::is_empty(path) : fs::exists(path);
  if (!occupied) return;
  if (!overwrite) throw OutputExists(path.string() + " already exists; pass --overwrite to replace it");
  fs::remove_all(path);
}

void write_provenance(const RunConfig& c, const std::string& command, const std::string& effective_config,
                      const json& details) {
  json doc = {{"command", command},
              {"gvit_version", kVersion},
              {"compiler", __VERSION__},
              {"eigen_version", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
              {"seed", c.seed},
              {"config_hash", hex(fnv1a(effective_config))},
              {"config", effective_config},
              {"details", details}};
  write_json(c.out / "provenance" / (command + ".json"), doc);
}

std::vector<SchedulePhase> parse_schedule(const std::string& text) {
  std::vector<SchedulePhase> phases;
  std::stringstream all(text);
  std::string item;
  while (std::getline(all, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    std::stringstream fields(item);
    std::string a, b, d;
    if (!std::getline(fields, a, ',') || !std::getline(fields, b, ',') || !std::getline(fields, d, ',')) {
      throw ConfigError("schedule: expected 'a,b,seconds' but got '" + item + "'");
    }
    try {
      phases.push_back({std::stod(a), std::stod(b), std::stod(d)});
    } catch (const std::logic_error&) {
      throw ConfigError("schedule: non-numeric field in '" + item + "'");
    }
    const auto& p = phases.back();
    if (p.conc_a < 0 || p.conc_b < 0 || !(p.duration_s > 0)) {
      throw ConfigError("schedule: concentrations must be >= 0 and durations > 0 in '" + item + "'");
    }
  }
  if (phases.empty()) throw ConfigError("schedule: no phases given");
  return phases;
}

GViTConfig model_config(const RunConfig& c) {
  GViTConfig m = c.model;
  m.adjacency = parse_adjacency_mode(c.adjacency);
  m.norm_placement = parse_norm_placement(c.norm_placement);
  m.seed = c.seed;
  m.validate();
  return m;
}

fs::path dataset_dir(const RunConfig& c) { return c.out / "dataset"; }
fs::path checkpoint_dir(const RunConfig& c) { return c.out / "checkpoints"; }

std::vector<std::size_t> of_group(const Dataset& d, const std::vector<std::size_t>& idx, GasGroup group) {
  std::vector<std::size_t> out;
  for (auto i : idx) {
    if (d.graphs.at(i).group == group) out.push_back(i);
  }
  return out;
}

/// The fold checkpoint to use: --checkpoint, then --fold, then the best fold
/// recorded by `gvit train`.
fs::path pick_checkpoint(const RunConfig& c) {
  if (!c.checkpoint.empty()) return c.checkpoint;
  if (c.fold) return checkpoint_dir(c) / ("fold_" + std::to_string(*c.fold) + ".ckpt.json");
  const auto summary = read_json(checkpoint_dir(c) / "summary.json");
  return checkpoint_dir(c) / summary.at("best_checkpoint").get<std::string>();
}

// ---------------------------------------------------------------------------
// Commands

json cmd_synth(const RunConfig& c) {
  const auto group = parse_gas_group(c.group);
  std::vector<SchedulePhase> schedule;
  if (!c.schedule.empty()) {
    schedule = parse_schedule(c.schedule);
  } else {
    ScheduleOptions so;
    so.exposures_per_class = c.exposures_per_class;
    so.min_exposure_s = c.min_exposure_s;
    so.max_exposure_s = c.max_exposure_s;
    so.air_s = c.air_s;
    so.concentration_levels = c.concentration_levels;
    so.seed = c.seed;
    schedule = random_schedule(group, so);
  }
  const auto params = SensorParams::from_seed(c.seed, group);
  SynthOptions opt;
  opt.sample_rate_hz = c.sample_rate_hz;
  opt.noise = c.noise;
  opt.seed = c.seed;
  opt.group = group;
  const auto stream = synth_stream(schedule, params, opt);

  const auto recording = c.out / "recording.txt";
  claim_output(recording, c.overwrite);
  fs::create_directories(c.out);
  write_stream(recording, stream);
  {
    std::ofstream manifest(c.out / "streams.txt");
    manifest << "# recording group\nrecording.txt " << to_string(group) << '\n';
    if (!manifest) throw IoError("cannot write " + (c.out / "streams.txt").string());
  }
  json phases = json::array();
  std::size_t exposures = 0;
  for (const auto& p : schedule) {
    phases.push_back({p.conc_a, p.conc_b, p.duration_s});
    if (p.conc_a > 0 || p.conc_b > 0) ++exposures;
  }
  json sensors = json::array();
  for (std::size_t ch = 0; ch < kSensorChannels; ++ch) {
    sensors.push_back({{"base", params.base[ch]},
                       {"sensitivity", params.sensitivity[ch]},
                       {"time_constant_s", params.time_constant_s[ch]}});
  }
  write_json(c.out / "synth_manifest.json", {{"seed", c.seed},
                                             {"group", to_string(group)},
                                             {"sample_rate_hz", c.sample_rate_hz},
                                             {"noise", c.noise},
                                             {"rows", stream.rows()},
                                             {"schedule", phases},
                                             {"sensors", sensors}});
  std::printf("synth: %zu rows, %zu phases (%zu exposures) -> %s\n", stream.rows(), schedule.size(), exposures,
              recording.string().c_str());
  return {{"rows", stream.rows()}, {"phases", schedule.size()}, {"exposures", exposures}};
}

json cmd_ingest(const RunConfig& c) {
  const auto manifest = c.streams.empty() ? c.out / "streams.txt" : c.streams;
  const auto entries = read_stream_manifest(manifest);
  if (entries.empty()) throw DomainError("manifest " + manifest.string() + " lists no recordings");
  std::vector<RawStream> streams;
  for (const auto& [path, group] : entries) streams.push_back(parse_stream(path, group));

  IngestOptions io;
  io.downsample_factor = c.downsample_factor;
  io.downsample_mode = c.downsample_mode == "average" ? DownsampleMode::average : DownsampleMode::decimate;
  io.use_reference_maxima = c.reference_maxima;
  io.test_ratio = c.test_ratio;
  io.folds = c.folds;
  io.seed = c.seed;
  const auto result = run_ingest(streams, io);

  claim_output(dataset_dir(c), c.overwrite);
  write_dataset(dataset_dir(c), result, c.downsample_factor);

  for (const auto& p : result.provenance) {
    std::printf("%-18s %9zu  %s\n", p.stage.c_str(), p.count, p.detail.c_str());
  }
  std::printf("\n%-18s %-18s %7s %10s %6s\n", "group", "composition", "total", "train-val", "test");
  std::vector<bool> in_test(result.graphs.size(), false);
  for (auto i : result.split.test) in_test[i] = true;
  json classes = json::array();
  for (auto group : {GasGroup::co_ethylene, GasGroup::methane_ethylene}) {
    for (auto cls : kConfusionClasses) {
      std::size_t total = 0, test = 0;
      for (std::size_t i = 0; i < result.graphs.size(); ++i) {
        if (result.graphs[i].group != group || result.graphs[i].composition != cls) continue;
        ++total;
        test += in_test[i] ? 1 : 0;
      }
      if (total == 0) continue;
      std::printf("%-18s %-18s %7zu %10zu %6zu\n", to_string(group).c_str(), composition_label(group, cls).c_str(),
                  total, total - test, test);
      classes.push_back({{"group", to_string(group)}, {"composition", to_string(cls)}, {"total", total}, {"test", test}});
    }
  }
  std::printf("%-37s %7zu %10zu %6zu\n", "all", result.graphs.size(), result.split.trainval.size(),
              result.split.test.size());
  for (const auto& w : result.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  return {{"manifest", manifest.string()},
          {"graphs", result.graphs.size()},
          {"test", result.split.test.size()},
          {"trainval", result.split.trainval.size()},
          {"classes", classes}};
}

json cmd_train(const RunConfig& c) {
  const auto group = parse_gas_group(c.group);
  const auto data = read_dataset(dataset_dir(c));
  std::vector<std::vector<std::size_t>> folds;
  for (const auto& f : data.split.folds) folds.push_back(of_group(data, f, group));
  for (const auto& f : folds) {
    if (f.empty()) throw DomainError("dataset has no " + to_string(group) + " graphs in some fold");
  }
  auto tc = c.train;
  tc.seed = c.seed;
  tc.fold = c.fold;
  tc.checkpoint_dir = checkpoint_dir(c);
  tc.validate();
  const auto mc = model_config(c);
  claim_output(tc.checkpoint_dir, c.overwrite);

  CheckpointMeta meta;
  meta.group = group;
  if (!data.maxima.count(group)) throw DomainError("dataset has no maxima for " + to_string(group));
  meta.max_ppm = data.maxima.at(group).ppm;
  if (data.air_baseline.count(group)) meta.air_baseline = data.air_baseline.at(group);
  meta.downsample_factor = data.downsample_factor;

  const auto report = train_cv(mc, data.graphs, folds, tc, meta, [&](std::size_t fold, const EpochRecord& e) {
    std::printf("fold %zu epoch %3zu  train %.5f  val %.5f  (%.1f s)\n", fold, e.epoch, e.train_loss,
                e.validation_rmse, e.seconds);
    std::fflush(stdout);
  });

  json fold_docs = json::array();
  for (const auto& f : report.folds) {
    const auto& sel = f.history.epochs[f.history.selected_epoch];
    std::printf("fold %zu: selected epoch %zu, validation RMSE %.6f -> %s\n", f.fold, sel.epoch, sel.validation_rmse,
                f.checkpoint.filename().string().c_str());
    fold_docs.push_back({{"fold", f.fold},
                         {"selected_epoch", sel.epoch},
                         {"best_validation_rmse", sel.validation_rmse},
                         {"checkpoint", f.checkpoint.filename().string()},
                         {"parameter_hash", hex(f.model.parameter_hash())}});
  }
  const auto& best = report.folds[report.best_fold];
  std::printf("validation RMSE %.6f +/- %.6f over %zu fold(s); best fold %zu\n", report.mean_validation_rmse,
              report.std_validation_rmse, report.folds.size(), best.fold);
  const json summary = {{"group", to_string(group)},
                        {"folds", fold_docs},
                        {"mean_validation_rmse", report.mean_validation_rmse},
                        {"std_validation_rmse", report.std_validation_rmse},
                        {"best_fold", best.fold},
                        {"best_checkpoint", best.checkpoint.filename().string()},
                        {"parameter_count", best.model.parameter_count()}};
  write_json(tc.checkpoint_dir / "summary.json", summary);
  return summary;
}

void print_report(const MetricsReport& r) {
  std::printf("%s: accuracy %.4f over %zu test graphs, RMSE %.5f\n", r.model_name.c_str(), r.accuracy, r.total, r.rmse);
  for (std::size_t gas = 0; gas < 2; ++gas) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const auto& v = r.r2[gas][slot];
      std::printf("  R2 %-9s %-5s %s (n=%zu)\n", gas_name(r.group, gas).c_str(), slot == 0 ? "mixed" : "pure",
                  v ? std::to_string(*v).c_str() : "n/a", r.r2_counts[gas][slot]);
    }
  }
  std::printf("  confusion (rows true A, B, A+B; cols predicted):\n");
  for (std::size_t i = 0; i < 3; ++i) {
    std::printf("    %4zu %4zu %4zu   none %zu\n", r.confusion[i][0], r.confusion[i][1], r.confusion[i][2],
                r.anomalies[i]);
  }
}

json report_json(const MetricsReport& r, const std::string& stem) {
  json r2 = json::object();
  for (std::size_t gas = 0; gas < 2; ++gas) {
    for (std::size_t slot = 0; slot < 2; ++slot) {
      const auto key = gas_name(r.group, gas) + (slot == 0 ? "_mixed" : "_pure");
      r2[key] = r.r2[gas][slot] ? json(*r.r2[gas][slot]) : json(nullptr);
    }
  }
  return {{"accuracy", r.accuracy}, {"rmse", r.rmse}, {"r2", r2}, {"total", r.total}, {"report", stem + ".json"}};
}

json cmd_eval(const RunConfig& c) {
  const auto ckpt = pick_checkpoint(c);
  const auto [model, meta] = load_checkpoint(ckpt);
  const auto group = meta.group;
  if (group != parse_gas_group(c.group)) {
    throw DomainError("checkpoint was trained on " + to_string(group) + " but --group is " + c.group);
  }
  const auto data = read_dataset(dataset_dir(c));
  const auto test = of_group(data, data.split.test, group);
  if (test.empty()) throw DomainError("dataset has no " + to_string(group) + " test graphs");

  const auto reports = c.out / "reports";
  claim_output(reports, c.overwrite);
  const auto report = evaluate(model, data.graphs, test, group, c.threshold);
  report.check_invariants();
  emit_report(report, reports, "gvit");
  print_report(report);
  json summary = {{"checkpoint", ckpt.string()}, {"group", to_string(group)}, {"model", report_json(report, "gvit")}};

  if (meta.fold >= 0 && static_cast<std::size_t>(meta.fold) < data.split.folds.size()) {
    std::vector<const SensorGraph*> val;
    for (auto i : of_group(data, data.split.folds[meta.fold], group)) val.push_back(&data.graphs[i]);
    if (!val.empty()) {
      const double again = validation_rmse(model, val);
      std::printf("fold %d validation RMSE %.9f (stored %.9f)\n", meta.fold, again, meta.best_validation_rmse);
      summary["validation_check"] = {{"fold", meta.fold}, {"stored", meta.best_validation_rmse}, {"recomputed", again}};
    }
  }
  if (c.with_knn) {
    const auto train = of_group(data, data.split.trainval, group);
    const auto knn = knn_baseline(data.graphs, train, test, group, c.knn_k, c.knn_window, c.threshold);
    knn.check_invariants();
    emit_report(knn, reports, "knn");
    print_report(knn);
    summary["baseline"] = report_json(knn, "knn");
  }
  write_json(reports / "summary.json", summary);
  return summary;
}

json cmd_predict(const RunConfig& c) {
  if (c.input.empty()) throw ConfigError("predict needs --input <recording slice>");
  const auto ckpt = pick_checkpoint(c);
  const auto [model, meta] = load_checkpoint(ckpt);
  const auto slice = downsample(parse_stream(c.input, meta.group), meta.downsample_factor);
  if (slice.rows() == 0) throw DomainError("slice has no rows after downsampling");

  std::vector<double> baseline;
  std::string baseline_source;
  const auto air_runs = air_phases(slice);
  if (!c.air.empty()) {
    const auto air = downsample(parse_stream(c.air, meta.group), meta.downsample_factor);
    baseline = channel_mean(air, 0, air.rows());
    baseline_source = c.air.string();
  } else if (!air_runs.empty()) {
    baseline = channel_mean(slice, air_runs.back().first, air_runs.back().second);
    baseline_source = "air rows of the slice";
  } else if (!meta.air_baseline.empty()) {
    baseline = meta.air_baseline;
    baseline_source = "checkpoint";
  } else {
    throw DomainError("no air reference: pass --air or use a checkpoint with an embedded baseline");
  }

  SensorGraph g;
  g.group = meta.group;
  g.meta.source = c.input.string();
  for (std::size_t r = 0; r < slice.rows(); ++r) {
    if (!air_runs.empty() && slice.is_air(r)) continue;
    for (std::size_t ch = 0; ch < kSensorChannels; ++ch) g.node_features.push_back(slice.sensor_row(r)[ch] - baseline[ch]);
    ++g.n_nodes;
  }

  std::array<double, 2> conc{0.0, 0.0};
  Composition comp = Composition::none;
  if (g.n_nodes > 0) {
    conc = model.predict(g);
    comp = predict_composition(conc, c.threshold);
  }
  const std::array<double, 2> ppm{conc[0] * meta.max_ppm[0], conc[1] * meta.max_ppm[1]};
  std::printf("composition: %s\n", composition_label(meta.group, comp).c_str());
  for (std::size_t gas = 0; gas < 2; ++gas) {
    std::printf("%s: %.4f ppm (normalized %.6f)\n", gas_name(meta.group, gas).c_str(), ppm[gas], conc[gas]);
  }
  std::printf("nodes: %zu, baseline: %s\n", g.n_nodes, baseline_source.c_str());
  return {{"input", c.input.string()},     {"checkpoint", ckpt.string()},
          {"nodes", g.n_nodes},            {"composition", to_string(comp)},
          {"normalized", conc},            {"ppm", ppm},
          {"baseline", baseline_source}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GViT: chain-graph GCN + transformer for gas-sensor time series"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  RunConfig cfg;
  add_options(app, cfg);

  std::string command;
  for (const auto* name : {"synth", "ingest", "train", "eval", "predict"}) {
    static const std::map<std::string, std::string> help{
        {"synth", "Generate a synthetic recording and its manifest"},
        {"ingest", "Downsample, baseline-correct, segment and split recordings"},
        {"train", "Cross-validated training with per-epoch model selection"},
        {"eval", "Accuracy, confusion matrix, R2 and RMSE on the test split"},
        {"predict", "Composition and ppm for one recording slice"}};
    app.add_subcommand(name, help.at(name))->fallthrough()->callback([&command, name] { command = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    const auto effective = app.config_to_str(true, false);
    json details;
    if (command == "synth") details = cmd_synth(cfg);
    if (command == "ingest") details = cmd_ingest(cfg);
    if (command == "train") details = cmd_train(cfg);
    if (command == "eval") details = cmd_eval(cfg);
    if (command == "predict") details = cmd_predict(cfg);
    write_provenance(cfg, command, effective, details);
    return kOk;
  } catch (const OutputExists& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExists;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "I/O error: %s\n", e.what());
    return kIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumeric;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUnexpected;
  }
}
