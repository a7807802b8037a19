#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gvit/chain_graph.hpp"

namespace gvit {

/// Continuous recording: time, two ppm setpoints and 16 channel readings per row.
struct RawStream {
  std::vector<double> time;
  std::vector<std::array<double, 2>> setpoints;  // (gas A, ethylene) in ppm
  std::vector<double> sensors;                    // row-major rows×16
  GasGroup group = GasGroup::co_ethylene;
  std::string source;

  std::size_t rows() const { return time.size(); }
  const double* sensor_row(std::size_t r) const { return sensors.data() + r * kSensorChannels; }
  bool is_air(std::size_t r) const { return setpoints[r][0] == 0.0 && setpoints[r][1] == 0.0; }
  void append(double t, std::array<double, 2> setpoint, const double* channels);
  /// Checks non-decreasing times, non-negative setpoints and finite readings.
  void validate() const;
};

/// Label-homogeneous slice of a stream. Row indices refer to the stream the
/// segment was cut from.
struct Segment {
  std::size_t begin_row = 0;
  std::size_t end_row = 0;
  std::array<double, 2> setpoint_ppm{0.0, 0.0};
  std::vector<double> sensors;  // rows×16, baseline corrected
  GasGroup group = GasGroup::co_ethylene;
  std::string source;

  std::size_t length() const { return end_row - begin_row; }
};

/// Reads a whitespace-delimited 19-column recording. A non-numeric first
/// line is treated as a header and skipped.
RawStream parse_stream(const std::filesystem::path& path, GasGroup group);
RawStream parse_stream_text(const std::string& text, GasGroup group, const std::string& source = "<text>");
void write_stream(const std::filesystem::path& path, const RawStream& stream);

enum class DownsampleMode { decimate, average };

/// Keeps rows 0, f, 2f, ... (decimate) or averages each block of f rows
/// anchored at those indices (average).
RawStream downsample(const RawStream& stream, std::size_t factor,
                     DownsampleMode mode = DownsampleMode::decimate);

/// Maximal runs of air rows as [begin, end) row ranges.
std::vector<std::pair<std::size_t, std::size_t>> air_phases(const RawStream& stream);

/// Per-channel mean over a run of rows.
std::vector<double> channel_mean(const RawStream& stream, std::size_t begin, std::size_t end);

/// Subtracts from each row the mean of the most recent preceding air phase
/// (its own phase for air rows). Rows before the first air phase use the first
/// air phase. Throws DomainError when the stream has no air phase.
RawStream baseline_correct(const RawStream& stream);

/// Splits at every setpoint change and drops air runs.
std::vector<Segment> segment(const RawStream& stream);

struct GasMaxima {
  std::array<double, 2> ppm{1.0, 1.0};
};

/// Published per-gas maxima: CO 533.33, methane 296.67, ethylene 20 ppm.
GasMaxima reference_maxima(GasGroup group);
/// Largest setpoint per gas over the segments.
GasMaxima dataset_maxima(const std::vector<Segment>& segments);

/// y / max(y) per gas, producing labelled graphs.
std::vector<SensorGraph> normalize_targets(const std::vector<Segment>& segments, const GasMaxima& maxima);
SensorGraph to_graph(const Segment& segment, const GasMaxima& maxima);

struct DatasetSplit {
  std::vector<std::size_t> trainval;            // indices into the graph list
  std::vector<std::size_t> test;
  std::vector<std::vector<std::size_t>> folds;  // indices into the graph list
  std::uint64_t seed = 0;
  double test_ratio = 0.16;
};

/// Test count for one composition class: ceil(ratio·count), with a 1e-9 slack
/// so exact products such as 0.16·100 are not bumped up by rounding noise.
std::size_t test_count_for_class(std::size_t class_count, double test_ratio);

/// Per (group, composition) class, test_count_for_class() samples go to test.
/// Throws DomainError if a class has fewer than two samples.
DatasetSplit stratified_split(const std::vector<SensorGraph>& graphs, double test_ratio, std::uint64_t seed);

/// Stratified partition of `members` into k folds. Within each class, members
/// are shuffled and dealt round-robin continuing from the previous class, so
/// fold sizes differ by at most one.
std::vector<std::vector<std::size_t>> kfold(const std::vector<SensorGraph>& graphs,
                                            const std::vector<std::size_t>& members, std::size_t k,
                                            std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

/// One exposure phase of a synthetic schedule.
struct SchedulePhase {
  double conc_a = 0.0;
  double conc_b = 0.0;
  double duration_s = 1.0;
};

/// Per-channel first-order sensor model used by the synthetic generator.
struct SensorParams {
  std::array<double, kSensorChannels> base{};
  std::array<std::array<double, 2>, kSensorChannels> sensitivity{};  // response per ppm
  std::array<double, kSensorChannels> time_constant_s{};

  /// Deterministic draw from a seed; sensitivities scale with the group's
  /// reference maxima so both gases produce comparable responses.
  static SensorParams from_seed(std::uint64_t seed, GasGroup group);
};

struct SynthOptions {
  double sample_rate_hz = 100.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  GasGroup group = GasGroup::co_ethylene;
};

/// Simulates first-order sensor dynamics: every channel relaxes toward
/// base + Σ_g S·conc_g with its own time constant, plus gaussian noise.
/// Setpoint columns carry the exact schedule.
RawStream synth_stream(const std::vector<SchedulePhase>& schedule, const SensorParams& params,
                       const SynthOptions& options);

/// Options for random_schedule().
struct ScheduleOptions {
  std::size_t exposures_per_class = 80;
  double min_exposure_s = 1.0;
  double max_exposure_s = 120.0;
  double air_s = 30.0;
  std::size_t concentration_levels = 8;
  std::uint64_t seed = 0;
};

/// Alternating air / exposure schedule with the same number of exposures for
/// each composition class, in shuffled order. Concentrations are drawn from
/// evenly spaced levels up to the group's reference maxima.
std::vector<SchedulePhase> random_schedule(GasGroup group, const ScheduleOptions& options);

/// Stage counters recorded while running the ingest chain.
struct ProvenanceEntry {
  std::string stage;
  std::size_t count = 0;
  std::string detail;
};

struct IngestOptions {
  std::size_t downsample_factor = 20;
  DownsampleMode downsample_mode = DownsampleMode::decimate;
  bool use_reference_maxima = true;
  double test_ratio = 0.16;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

struct IngestResult {
  std::vector<SensorGraph> graphs;
  DatasetSplit split;
  std::map<GasGroup, GasMaxima> maxima;
  std::map<GasGroup, std::vector<double>> air_baseline;  // first air phase mean per group
  std::vector<ProvenanceEntry> provenance;
  std::vector<std::string> warnings;
};

/// Fixed-order pipeline: downsample → baseline_correct → segment →
/// normalize_targets → split. Streams are expected already parsed.
IngestResult run_ingest(const std::vector<RawStream>& streams, const IngestOptions& options);

/// Reads a manifest mapping recording files to groups: one "path group" pair
/// per line, '#' comments allowed; relative paths resolve against the
/// manifest's directory.
std::vector<std::pair<std::filesystem::path, GasGroup>> read_stream_manifest(const std::filesystem::path& path);

/// Dataset directory layout: graphs/graph_NNNNN.txt per graph, dataset.json
/// (maxima, baselines, provenance), split.json (test/trainval/folds, seed).
void write_dataset(const std::filesystem::path& dir, const IngestResult& result, std::size_t downsample_factor);

struct Dataset {
  std::vector<SensorGraph> graphs;
  DatasetSplit split;
  std::map<GasGroup, GasMaxima> maxima;
  std::map<GasGroup, std::vector<double>> air_baseline;
  std::size_t downsample_factor = 1;
};

Dataset read_dataset(const std::filesystem::path& dir);

void write_graph(const std::filesystem::path& path, const SensorGraph& graph);
SensorGraph read_graph(const std::filesystem::path& path);

}  // namespace gvit
