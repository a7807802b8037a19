#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "gvit/errors.hpp"
#include "gvit/eval.hpp"
#include "gvit/ingest.hpp"
#include "gvit/model.hpp"
#include "gvit/train.hpp"

namespace py = pybind11;
using namespace gvit;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array rows_to_array(const std::vector<double>& flat, std::size_t rows) {
  Array out({rows, kSensorChannels});
  if (!flat.empty()) std::memcpy(out.mutable_data(), flat.data(), flat.size() * sizeof(double));
  return out;
}

std::vector<double> array_to_rows(const Array& a) {
  if (a.ndim() != 2 || static_cast<std::size_t>(a.shape(1)) != kSensorChannels) {
    throw DimensionError("expected an array of shape (N, 16)");
  }
  return {a.data(), a.data() + a.size()};
}

SensorGraph make_graph(const Array& features, std::array<double, 2> targets, GasGroup group) {
  SensorGraph g;
  g.node_features = array_to_rows(features);
  g.n_nodes = static_cast<std::size_t>(features.shape(0));
  g.targets = targets;
  g.composition = composition_from_targets(targets);
  g.group = group;
  return g;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Chain-graph GCN + transformer regressor for gas-sensor recordings";
  m.attr("SENSOR_CHANNELS") = kSensorChannels;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<GasGroup>(m, "GasGroup")
      .value("co_ethylene", GasGroup::co_ethylene)
      .value("methane_ethylene", GasGroup::methane_ethylene);
  py::enum_<Composition>(m, "Composition")
      .value("a", Composition::a)
      .value("b", Composition::b)
      .value("ab", Composition::ab)
      .value("none", Composition::none);
  py::enum_<AdjacencyMode>(m, "AdjacencyMode")
      .value("symmetric", AdjacencyMode::symmetric)
      .value("row", AdjacencyMode::row);
  py::enum_<NormPlacement>(m, "NormPlacement").value("pre", NormPlacement::pre).value("post", NormPlacement::post);
  py::enum_<DownsampleMode>(m, "DownsampleMode")
      .value("decimate", DownsampleMode::decimate)
      .value("average", DownsampleMode::average);

  m.def("composition_label", &composition_label, py::arg("group"), py::arg("composition"));
  m.def("composition_from_targets", &composition_from_targets, py::arg("targets"));
  m.def("predict_composition", &predict_composition, py::arg("concentrations"), py::arg("threshold") = 0.01);

  // Graphs and streams

  py::class_<SensorGraph>(m, "SensorGraph")
      .def(py::init(&make_graph), py::arg("features"), py::arg("targets") = std::array<double, 2>{0.0, 0.0},
           py::arg("group") = GasGroup::co_ethylene)
      .def_property_readonly("features", [](const SensorGraph& g) { return rows_to_array(g.node_features, g.n_nodes); })
      .def_readonly("n_nodes", &SensorGraph::n_nodes)
      .def_readwrite("targets", &SensorGraph::targets)
      .def_readwrite("composition", &SensorGraph::composition)
      .def_readwrite("group", &SensorGraph::group)
      .def_property_readonly("source", [](const SensorGraph& g) { return g.meta.source; })
      .def("validate", &SensorGraph::validate);

  py::class_<RawStream>(m, "RawStream")
      .def_property_readonly("rows", &RawStream::rows)
      .def_readonly("time", &RawStream::time)
      .def_readonly("setpoints", &RawStream::setpoints)
      .def_property_readonly("sensors", [](const RawStream& s) { return rows_to_array(s.sensors, s.rows()); })
      .def_readonly("group", &RawStream::group)
      .def_readonly("source", &RawStream::source);

  m.def("parse_stream", &parse_stream, py::arg("path"), py::arg("group"));
  m.def("write_stream", &write_stream, py::arg("path"), py::arg("stream"));
  m.def("downsample", &downsample, py::arg("stream"), py::arg("factor"),
        py::arg("mode") = DownsampleMode::decimate);

  py::class_<SchedulePhase>(m, "SchedulePhase")
      .def(py::init([](double a, double b, double d) { return SchedulePhase{a, b, d}; }), py::arg("conc_a"),
           py::arg("conc_b"), py::arg("duration_s"))
      .def_readwrite("conc_a", &SchedulePhase::conc_a)
      .def_readwrite("conc_b", &SchedulePhase::conc_b)
      .def_readwrite("duration_s", &SchedulePhase::duration_s);

  py::class_<ScheduleOptions>(m, "ScheduleOptions")
      .def(py::init<>())
      .def_readwrite("exposures_per_class", &ScheduleOptions::exposures_per_class)
      .def_readwrite("min_exposure_s", &ScheduleOptions::min_exposure_s)
      .def_readwrite("max_exposure_s", &ScheduleOptions::max_exposure_s)
      .def_readwrite("air_s", &ScheduleOptions::air_s)
      .def_readwrite("concentration_levels", &ScheduleOptions::concentration_levels)
      .def_readwrite("seed", &ScheduleOptions::seed);
  m.def("random_schedule", &random_schedule, py::arg("group"), py::arg("options"));

  m.def(
      "synth_stream",
      [](const std::vector<SchedulePhase>& schedule, GasGroup group, std::uint64_t seed, double sample_rate_hz,
         double noise) {
        SynthOptions o;
        o.sample_rate_hz = sample_rate_hz;
        o.noise = noise;
        o.seed = seed;
        o.group = group;
        return synth_stream(schedule, SensorParams::from_seed(seed, group), o);
      },
      py::arg("schedule"), py::arg("group") = GasGroup::co_ethylene, py::arg("seed") = 0,
      py::arg("sample_rate_hz") = 10.0, py::arg("noise") = 0.0);

  // Ingest

  py::class_<DatasetSplit>(m, "DatasetSplit")
      .def_readonly("trainval", &DatasetSplit::trainval)
      .def_readonly("test", &DatasetSplit::test)
      .def_readonly("folds", &DatasetSplit::folds);

  py::class_<IngestOptions>(m, "IngestOptions")
      .def(py::init<>())
      .def_readwrite("downsample_factor", &IngestOptions::downsample_factor)
      .def_readwrite("downsample_mode", &IngestOptions::downsample_mode)
      .def_readwrite("use_reference_maxima", &IngestOptions::use_reference_maxima)
      .def_readwrite("test_ratio", &IngestOptions::test_ratio)
      .def_readwrite("folds", &IngestOptions::folds)
      .def_readwrite("seed", &IngestOptions::seed);

  py::class_<IngestResult>(m, "IngestResult")
      .def_readonly("graphs", &IngestResult::graphs)
      .def_readonly("split", &IngestResult::split)
      .def_readonly("air_baseline", &IngestResult::air_baseline)
      .def_readonly("warnings", &IngestResult::warnings)
      .def_property_readonly("max_ppm", [](const IngestResult& r) {
        std::map<GasGroup, std::array<double, 2>> out;
        for (const auto& [g, m] : r.maxima) out[g] = m.ppm;
        return out;
      });
  m.def("run_ingest", &run_ingest, py::arg("streams"), py::arg("options"));
  m.def("test_count_for_class", &test_count_for_class, py::arg("class_count"), py::arg("test_ratio"));

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("graphs", &Dataset::graphs)
      .def_readonly("split", &Dataset::split)
      .def_readonly("downsample_factor", &Dataset::downsample_factor);
  m.def("read_dataset", &read_dataset, py::arg("dir"));

  // Model

  py::class_<GViTConfig>(m, "GViTConfig")
      .def(py::init<>())
      .def_readwrite("gcn_layers", &GViTConfig::gcn_layers)
      .def_readwrite("gcn_filters", &GViTConfig::gcn_filters)
      .def_readwrite("d_model", &GViTConfig::d_model)
      .def_readwrite("pooled_nodes", &GViTConfig::pooled_nodes)
      .def_readwrite("encoder_blocks", &GViTConfig::encoder_blocks)
      .def_readwrite("attention_heads", &GViTConfig::attention_heads)
      .def_readwrite("mlp_hidden", &GViTConfig::mlp_hidden)
      .def_readwrite("positional_embedding", &GViTConfig::positional_embedding)
      .def_readwrite("adjacency", &GViTConfig::adjacency)
      .def_readwrite("norm_placement", &GViTConfig::norm_placement)
      .def_readwrite("seed", &GViTConfig::seed)
      .def("validate", &GViTConfig::validate)
      .def("__eq__", [](const GViTConfig& a, const GViTConfig& b) { return a == b; });

  py::class_<GViTModel>(m, "GViTModel")
      .def(py::init<const GViTConfig&>(), py::arg("config"))
      .def_property_readonly("config", &GViTModel::config)
      .def("predict", &GViTModel::predict, py::arg("graph"))
      .def(
          "predict_features",
          [](const GViTModel& model, const Array& features) {
            return model.predict(make_graph(features, {0.0, 0.0}, GasGroup::co_ethylene));
          },
          py::arg("features"))
      .def("raw_output",
           [](const GViTModel& model, const SensorGraph& g) {
             const auto y = model.forward(g);
             const auto v = y.values();
             return std::vector<double>(v.begin(), v.end());
           })
      .def_property_readonly("parameter_count", &GViTModel::parameter_count)
      .def_property_readonly("parameter_hash", &GViTModel::parameter_hash)
      .def_property_readonly("input_scale", &GViTModel::input_scale);

  py::class_<CheckpointMeta>(m, "CheckpointMeta")
      .def(py::init<>())
      .def_readwrite("group", &CheckpointMeta::group)
      .def_readwrite("max_ppm", &CheckpointMeta::max_ppm)
      .def_readwrite("air_baseline", &CheckpointMeta::air_baseline)
      .def_readwrite("downsample_factor", &CheckpointMeta::downsample_factor)
      .def_readwrite("best_validation_rmse", &CheckpointMeta::best_validation_rmse)
      .def_readwrite("selected_epoch", &CheckpointMeta::selected_epoch)
      .def_readwrite("fold", &CheckpointMeta::fold);
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("model"), py::arg("meta") = CheckpointMeta{});
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));

  // Training

  py::class_<AdamConfig>(m, "AdamConfig")
      .def(py::init<>())
      .def_readwrite("lr", &AdamConfig::lr)
      .def_readwrite("beta1", &AdamConfig::beta1)
      .def_readwrite("beta2", &AdamConfig::beta2)
      .def_readwrite("eps", &AdamConfig::eps);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("adam", &TrainConfig::adam)
      .def_readwrite("accumulation", &TrainConfig::accumulation)
      .def_readwrite("clip_norm", &TrainConfig::clip_norm)
      .def_readwrite("fit_input_scale", &TrainConfig::fit_input_scale)
      .def_readwrite("clamp_absent", &TrainConfig::clamp_absent)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("fold", &TrainConfig::fold)
      .def_readwrite("checkpoint_dir", &TrainConfig::checkpoint_dir)
      .def("validate", &TrainConfig::validate);

  py::class_<EpochRecord>(m, "EpochRecord")
      .def_readonly("epoch", &EpochRecord::epoch)
      .def_readonly("train_loss", &EpochRecord::train_loss)
      .def_readonly("validation_rmse", &EpochRecord::validation_rmse);

  py::class_<TrainHistory>(m, "TrainHistory")
      .def_readonly("epochs", &TrainHistory::epochs)
      .def_readonly("selected_epoch", &TrainHistory::selected_epoch);

  py::class_<FoldResult>(m, "FoldResult")
      .def_readonly("fold", &FoldResult::fold)
      .def_readonly("model", &FoldResult::model)
      .def_readonly("history", &FoldResult::history)
      .def_readonly("checkpoint", &FoldResult::checkpoint);

  py::class_<CrossValidationReport>(m, "CrossValidationReport")
      .def_readonly("folds", &CrossValidationReport::folds)
      .def_readonly("mean_validation_rmse", &CrossValidationReport::mean_validation_rmse)
      .def_readonly("std_validation_rmse", &CrossValidationReport::std_validation_rmse)
      .def_readonly("best_fold", &CrossValidationReport::best_fold);

  m.def(
      "train_cv",
      [](const GViTConfig& model_config, const std::vector<SensorGraph>& graphs,
         const std::vector<std::vector<std::size_t>>& folds, const TrainConfig& config, const CheckpointMeta& meta) {
        py::gil_scoped_release release;
        return train_cv(model_config, graphs, folds, config, meta);
      },
      py::arg("model_config"), py::arg("graphs"), py::arg("folds"), py::arg("config"),
      py::arg("meta") = CheckpointMeta{});
  m.def(
      "validation_rmse",
      [](const GViTModel& model, const std::vector<SensorGraph>& graphs) {
        std::vector<const SensorGraph*> ptrs;
        for (const auto& g : graphs) ptrs.push_back(&g);
        return validation_rmse(model, ptrs);
      },
      py::arg("model"), py::arg("graphs"));
  m.def("rmse_value", &rmse_value, py::arg("preds"), py::arg("targets"));

  // Evaluation

  py::class_<PredictionRow>(m, "PredictionRow")
      .def_readonly("index", &PredictionRow::index)
      .def_readonly("source", &PredictionRow::source)
      .def_readonly("truth", &PredictionRow::truth)
      .def_readonly("pred", &PredictionRow::pred)
      .def_readonly("true_composition", &PredictionRow::true_composition)
      .def_readonly("pred_composition", &PredictionRow::pred_composition);

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("model_name", &MetricsReport::model_name)
      .def_readonly("group", &MetricsReport::group)
      .def_readonly("threshold", &MetricsReport::threshold)
      .def_readonly("total", &MetricsReport::total)
      .def_readonly("accuracy", &MetricsReport::accuracy)
      .def_readonly("confusion", &MetricsReport::confusion)
      .def_readonly("anomalies", &MetricsReport::anomalies)
      .def_readonly("r2", &MetricsReport::r2)
      .def_readonly("rmse", &MetricsReport::rmse)
      .def_readonly("rows", &MetricsReport::rows)
      .def("check_invariants", &MetricsReport::check_invariants)
      .def("__eq__", [](const MetricsReport& a, const MetricsReport& b) { return a == b; });

  m.def("r_squared", &r_squared, py::arg("preds"), py::arg("truths"));
  m.def("evaluate", &evaluate, py::arg("model"), py::arg("graphs"), py::arg("test"), py::arg("group"),
        py::arg("threshold") = 0.01);
  m.def("knn_baseline", &knn_baseline, py::arg("graphs"), py::arg("train"), py::arg("test"), py::arg("group"),
        py::arg("k") = 3, py::arg("window") = 5, py::arg("threshold") = 0.01);
  m.def("emit_report", &emit_report, py::arg("report"), py::arg("dir"), py::arg("stem"));
  m.def("read_report", &read_report, py::arg("path"));
}
