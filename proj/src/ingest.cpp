#include "gvit/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "gvit/errors.hpp"
#include "gvit/random.hpp"
#include "json.hpp"

namespace gvit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kStreamColumns = 3 + kSensorChannels;

bool parse_double(std::string_view token, double& out) {
  // from_chars for double is available in libstdc++ 11.
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    const auto start = i;
    while (i < line.size() && !(line[i] == ' ' || line[i] == '\t' || line[i] == '\r' || line[i] == ',')) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int class_index(GasGroup group, Composition c) {
  return static_cast<int>(group) * 4 + static_cast<int>(c);
}

}  // namespace

void RawStream::append(double t, std::array<double, 2> setpoint, const double* channels) {
  time.push_back(t);
  setpoints.push_back(setpoint);
  sensors.insert(sensors.end(), channels, channels + kSensorChannels);
}

void RawStream::validate() const {
  if (setpoints.size() != time.size() || sensors.size() != time.size() * kSensorChannels) {
    throw DimensionError("raw stream columns have inconsistent lengths");
  }
  for (std::size_t r = 0; r < rows(); ++r) {
    if (r > 0 && time[r] < time[r - 1]) {
      throw DomainError("raw stream times decrease at row " + std::to_string(r));
    }
    if (setpoints[r][0] < 0.0 || setpoints[r][1] < 0.0) {
      throw DomainError("raw stream has a negative setpoint at row " + std::to_string(r));
    }
  }
  check_finite(sensors, "raw stream sensors");
}

RawStream parse_stream_text(const std::string& text, GasGroup group, const std::string& source) {
  RawStream stream;
  stream.group = group;
  stream.source = source;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool seen_data = false;
  double values[kStreamColumns];
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    double probe;
    if (!seen_data && !parse_double(tokens.front(), probe)) continue;  // header
    if (tokens.size() != kStreamColumns) {
      throw ParseError(source + ": expected 19 columns, found " + std::to_string(tokens.size()), line_no);
    }
    for (std::size_t c = 0; c < kStreamColumns; ++c) {
      if (!parse_double(tokens[c], values[c])) {
        throw ParseError(source + ": non-numeric field '" + std::string(tokens[c]) + "' in column " +
                             std::to_string(c + 1),
                         line_no);
      }
    }
    seen_data = true;
    stream.append(values[0], {values[1], values[2]}, values + 3);
  }
  if (stream.rows() == 0) throw ParseError(source + ": no data rows", 0);
  stream.validate();
  return stream;
}

RawStream parse_stream(const fs::path& path, GasGroup group) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open recording " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_stream_text(buffer.str(), group, path.filename().string());
}

void write_stream(const fs::path& path, const RawStream& stream) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write recording " + path.string());
  out << "Time(s) GasA(ppm) Ethylene(ppm)";
  for (std::size_t c = 0; c < kSensorChannels; ++c) out << " S" << c + 1;
  out << '\n';
  char buf[64];
  for (std::size_t r = 0; r < stream.rows(); ++r) {
    std::snprintf(buf, sizeof buf, "%.2f %.2f %.2f", stream.time[r], stream.setpoints[r][0],
                  stream.setpoints[r][1]);
    out << buf;
    const double* row = stream.sensor_row(r);
    for (std::size_t c = 0; c < kSensorChannels; ++c) {
      std::snprintf(buf, sizeof buf, " %.6f", row[c]);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing recording " + path.string());
}

RawStream downsample(const RawStream& stream, std::size_t factor, DownsampleMode mode) {
  if (factor == 0) throw DomainError("downsample factor must be at least 1");
  RawStream out;
  out.group = stream.group;
  out.source = stream.source;
  double mean[kSensorChannels];
  for (std::size_t r = 0; r < stream.rows(); r += factor) {
    if (mode == DownsampleMode::decimate || factor == 1) {
      out.append(stream.time[r], stream.setpoints[r], stream.sensor_row(r));
      continue;
    }
    const auto end = std::min(r + factor, stream.rows());
    std::fill(std::begin(mean), std::end(mean), 0.0);
    for (auto i = r; i < end; ++i) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) mean[c] += stream.sensor_row(i)[c];
    }
    for (auto& m : mean) m /= static_cast<double>(end - r);
    out.append(stream.time[r], stream.setpoints[r], mean);
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> air_phases(const RawStream& stream) {
  std::vector<std::pair<std::size_t, std::size_t>> phases;
  std::size_t r = 0;
  while (r < stream.rows()) {
    if (!stream.is_air(r)) {
      ++r;
      continue;
    }
    const auto begin = r;
    while (r < stream.rows() && stream.is_air(r)) ++r;
    phases.emplace_back(begin, r);
  }
  return phases;
}

std::vector<double> channel_mean(const RawStream& stream, std::size_t begin, std::size_t end) {
  if (end <= begin || end > stream.rows()) throw DomainError("channel_mean: empty or out-of-range row span");
  std::vector<double> mean(kSensorChannels, 0.0);
  for (auto r = begin; r < end; ++r) {
    for (std::size_t c = 0; c < kSensorChannels; ++c) mean[c] += stream.sensor_row(r)[c];
  }
  for (auto& m : mean) m /= static_cast<double>(end - begin);
  return mean;
}

RawStream baseline_correct(const RawStream& stream) {
  const auto phases = air_phases(stream);
  if (phases.empty()) {
    throw DomainError("baseline_correct: " + stream.source + " has no air phase to take a base value from");
  }
  std::vector<std::vector<double>> means;
  means.reserve(phases.size());
  for (const auto& [b, e] : phases) means.push_back(channel_mean(stream, b, e));

  RawStream out = stream;
  std::size_t phase = 0;
  for (std::size_t r = 0; r < stream.rows(); ++r) {
    while (phase + 1 < phases.size() && phases[phase + 1].first <= r) ++phase;
    const auto& base = means[phase];
    double* row = out.sensors.data() + r * kSensorChannels;
    for (std::size_t c = 0; c < kSensorChannels; ++c) row[c] -= base[c];
  }
  return out;
}

std::vector<Segment> segment(const RawStream& stream) {
  std::vector<Segment> out;
  std::size_t r = 0;
  while (r < stream.rows()) {
    const auto begin = r;
    const auto setpoint = stream.setpoints[r];
    while (r < stream.rows() && stream.setpoints[r] == setpoint) ++r;
    if (setpoint[0] == 0.0 && setpoint[1] == 0.0) continue;
    Segment seg;
    seg.begin_row = begin;
    seg.end_row = r;
    seg.setpoint_ppm = setpoint;
    seg.sensors.assign(stream.sensor_row(begin), stream.sensor_row(begin) + (r - begin) * kSensorChannels);
    seg.group = stream.group;
    seg.source = stream.source;
    out.push_back(std::move(seg));
  }
  return out;
}

GasMaxima reference_maxima(GasGroup group) {
  return group == GasGroup::co_ethylene ? GasMaxima{{533.33, 20.0}} : GasMaxima{{296.67, 20.0}};
}

GasMaxima dataset_maxima(const std::vector<Segment>& segments) {
  GasMaxima m{{0.0, 0.0}};
  for (const auto& s : segments) {
    m.ppm[0] = std::max(m.ppm[0], s.setpoint_ppm[0]);
    m.ppm[1] = std::max(m.ppm[1], s.setpoint_ppm[1]);
  }
  return m;
}

SensorGraph to_graph(const Segment& seg, const GasMaxima& maxima) {
  if (!(maxima.ppm[0] > 0.0) || !(maxima.ppm[1] > 0.0)) {
    throw DomainError("normalize_targets: per-gas maximum must be positive");
  }
  SensorGraph g;
  g.node_features = seg.sensors;
  g.n_nodes = seg.length();
  for (std::size_t k = 0; k < 2; ++k) {
    g.targets[k] = seg.setpoint_ppm[k] / maxima.ppm[k];
    if (g.targets[k] > 1.0) {
      throw DomainError("normalize_targets: " + format_double(seg.setpoint_ppm[k]) + " ppm exceeds the maximum " +
                        format_double(maxima.ppm[k]));
    }
  }
  g.composition = composition_from_targets(g.targets);
  g.group = seg.group;
  g.meta = {seg.source, seg.begin_row, seg.end_row};
  return g;
}

std::vector<SensorGraph> normalize_targets(const std::vector<Segment>& segments, const GasMaxima& maxima) {
  std::vector<SensorGraph> out;
  out.reserve(segments.size());
  for (const auto& s : segments) out.push_back(to_graph(s, maxima));
  return out;
}

std::size_t test_count_for_class(std::size_t class_count, double test_ratio) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0)) throw DomainError("test ratio must lie in (0, 1)");
  const double exact = test_ratio * static_cast<double>(class_count);
  auto n = static_cast<std::size_t>(std::ceil(exact - 1e-9));
  return std::min(n, class_count - 1);
}

DatasetSplit stratified_split(const std::vector<SensorGraph>& graphs, double test_ratio, std::uint64_t seed) {
  if (!(test_ratio > 0.0 && test_ratio < 1.0)) throw DomainError("test ratio must lie in (0, 1)");
  std::map<int, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    classes[class_index(graphs[i].group, graphs[i].composition)].push_back(i);
  }
  DatasetSplit split;
  split.seed = seed;
  split.test_ratio = test_ratio;
  for (auto& [cls, members] : classes) {
    const auto& first = graphs[members.front()];
    if (members.size() < 2) {
      throw DomainError("stratified_split: class " + to_string(first.group) + "/" +
                        composition_label(first.group, first.composition) + " has fewer than 2 samples");
    }
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(cls)));
    rng.shuffle(std::span(members));
    const auto n_test = test_count_for_class(members.size(), test_ratio);
    split.test.insert(split.test.end(), members.begin(), members.begin() + static_cast<long>(n_test));
    split.trainval.insert(split.trainval.end(), members.begin() + static_cast<long>(n_test), members.end());
  }
  std::sort(split.test.begin(), split.test.end());
  std::sort(split.trainval.begin(), split.trainval.end());
  return split;
}

std::vector<std::vector<std::size_t>> kfold(const std::vector<SensorGraph>& graphs,
                                            const std::vector<std::size_t>& members, std::size_t k,
                                            std::uint64_t seed, std::vector<std::string>* warnings) {
  if (k < 2) throw DomainError("kfold: k must be at least 2");
  if (k > members.size()) {
    throw DomainError("kfold: k = " + std::to_string(k) + " exceeds " + std::to_string(members.size()) +
                      " samples");
  }
  std::map<int, std::vector<std::size_t>> classes;
  for (auto idx : members) classes[class_index(graphs.at(idx).group, graphs.at(idx).composition)].push_back(idx);

  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t counter = 0;
  for (auto& [cls, list] : classes) {
    if (list.size() < k && warnings) {
      const auto& g = graphs[list.front()];
      warnings->push_back("kfold: class " + to_string(g.group) + "/" + composition_label(g.group, g.composition) +
                          " has " + std::to_string(list.size()) + " < " + std::to_string(k) +
                          " members; stratification is best-effort");
    }
    Rng rng(derive_seed(seed ^ 0x6b666f6c64ULL, static_cast<std::uint64_t>(cls)));
    rng.shuffle(std::span(list));
    for (auto idx : list) folds[counter++ % k].push_back(idx);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

SensorParams SensorParams::from_seed(std::uint64_t seed, GasGroup group) {
  Rng rng(derive_seed(seed, 0x73656e73ULL));
  const auto maxima = reference_maxima(group);
  SensorParams p;
  for (std::size_t c = 0; c < kSensorChannels; ++c) {
    p.base[c] = rng.uniform(1.0, 5.0);
    // Channel selectivity spreads over the quarter circle so the two gases
    // are linearly separable from the array response.
    const double angle = rng.uniform(0.0, std::numbers::pi / 2.0);
    const double gain = rng.uniform(0.5, 2.0);
    p.sensitivity[c][0] = gain * std::cos(angle) / maxima.ppm[0];
    p.sensitivity[c][1] = gain * std::sin(angle) / maxima.ppm[1];
    p.time_constant_s[c] = rng.uniform(0.5, 4.0);
  }
  return p;
}

RawStream synth_stream(const std::vector<SchedulePhase>& schedule, const SensorParams& params,
                       const SynthOptions& options) {
  if (!(options.sample_rate_hz > 0.0)) throw DomainError("synth_stream: sample rate must be positive");
  RawStream stream;
  stream.group = options.group;
  stream.source = "synthetic";
  Rng rng(derive_seed(options.seed, 0x6e6f697365ULL));
  const double dt = 1.0 / options.sample_rate_hz;
  std::array<double, kSensorChannels> state = params.base;
  std::array<double, kSensorChannels> decay{};
  for (std::size_t c = 0; c < kSensorChannels; ++c) decay[c] = std::exp(-dt / params.time_constant_s[c]);

  std::size_t row = 0;
  double reading[kSensorChannels];
  for (const auto& phase : schedule) {
    if (!(phase.duration_s > 0.0)) throw DomainError("synth_stream: phase durations must be positive");
    if (phase.conc_a < 0.0 || phase.conc_b < 0.0) throw DomainError("synth_stream: negative concentration");
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(phase.duration_s * options.sample_rate_hz)));
    std::array<double, kSensorChannels> target{};
    for (std::size_t c = 0; c < kSensorChannels; ++c) {
      target[c] = params.base[c] + params.sensitivity[c][0] * phase.conc_a + params.sensitivity[c][1] * phase.conc_b;
    }
    for (std::size_t i = 0; i < n; ++i, ++row) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) {
        state[c] = target[c] + (state[c] - target[c]) * decay[c];
        reading[c] = state[c] + (options.noise > 0.0 ? options.noise * rng.normal() : 0.0);
      }
      stream.append(static_cast<double>(row) * dt, {phase.conc_a, phase.conc_b}, reading);
    }
  }
  return stream;
}

std::vector<SchedulePhase> random_schedule(GasGroup group, const ScheduleOptions& o) {
  if (o.concentration_levels == 0) throw DomainError("random_schedule: need at least one concentration level");
  if (!(o.min_exposure_s > 0.0) || o.max_exposure_s < o.min_exposure_s || !(o.air_s > 0.0)) {
    throw DomainError("random_schedule: invalid durations");
  }
  Rng rng(derive_seed(o.seed, 0x7363686564ULL));
  const auto maxima = reference_maxima(group);
  auto level = [&](std::size_t gas) {
    const auto k = 1 + rng.below(o.concentration_levels);
    return std::round(100.0 * maxima.ppm[gas] * static_cast<double>(k) /
                      static_cast<double>(o.concentration_levels)) / 100.0;
  };
  std::vector<SchedulePhase> exposures;
  for (std::size_t cls = 0; cls < 3; ++cls) {
    for (std::size_t i = 0; i < o.exposures_per_class; ++i) {
      SchedulePhase p;
      if (cls != 1) p.conc_a = level(0);
      if (cls != 0) p.conc_b = level(1);
      // Log-uniform durations give a spread of short and long graphs.
      const double u = rng.uniform();
      p.duration_s = o.min_exposure_s * std::pow(o.max_exposure_s / o.min_exposure_s, u);
      exposures.push_back(p);
    }
  }
  rng.shuffle(std::span(exposures));
  std::vector<SchedulePhase> schedule;
  schedule.push_back({0.0, 0.0, o.air_s});
  for (const auto& e : exposures) {
    schedule.push_back(e);
    schedule.push_back({0.0, 0.0, o.air_s});
  }
  return schedule;
}

IngestResult run_ingest(const std::vector<RawStream>& streams, const IngestOptions& options) {
  if (streams.empty()) throw DomainError("ingest: no recordings given");
  IngestResult result;
  std::map<GasGroup, std::vector<Segment>> by_group;
  std::size_t raw_rows = 0, kept_rows = 0;
  for (const auto& stream : streams) {
    stream.validate();
    raw_rows += stream.rows();
    const auto reduced = downsample(stream, options.downsample_factor, options.downsample_mode);
    kept_rows += reduced.rows();
    const auto phases = air_phases(reduced);
    if (!phases.empty() && !result.air_baseline.count(stream.group)) {
      result.air_baseline[stream.group] = channel_mean(reduced, phases.front().first, phases.front().second);
    }
    const auto corrected = baseline_correct(reduced);
    auto segs = segment(corrected);
    result.provenance.push_back({"segment", segs.size(), stream.source});
    auto& dst = by_group[stream.group];
    std::move(segs.begin(), segs.end(), std::back_inserter(dst));
  }
  result.provenance.insert(result.provenance.begin(),
                           {{"parse", raw_rows, "rows"}, {"downsample", kept_rows, "rows kept"}});

  for (auto& [group, segs] : by_group) {
    const auto maxima = options.use_reference_maxima ? reference_maxima(group) : dataset_maxima(segs);
    result.maxima[group] = maxima;
    auto graphs = normalize_targets(segs, maxima);
    result.provenance.push_back({"normalize_targets", graphs.size(), to_string(group)});
    std::move(graphs.begin(), graphs.end(), std::back_inserter(result.graphs));
  }

  if (result.graphs.empty()) {
    result.warnings.push_back("ingest: no non-air segments found");
    return result;
  }
  result.split = stratified_split(result.graphs, options.test_ratio, options.seed);
  result.split.folds = kfold(result.graphs, result.split.trainval, options.folds, options.seed, &result.warnings);
  result.provenance.push_back({"split", result.split.test.size(), "test graphs"});
  result.provenance.push_back({"split", result.split.trainval.size(), "train-val graphs"});
  return result;
}

std::vector<std::pair<fs::path, GasGroup>> read_stream_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::vector<std::pair<fs::path, GasGroup>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string file, group;
    if (!(fields >> file)) continue;
    if (!(fields >> group)) throw ParseError("manifest entry lacks a group", line_no);
    fs::path p(file);
    if (p.is_relative()) p = path.parent_path() / p;
    try {
      out.emplace_back(p, parse_gas_group(group));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  if (out.empty()) throw ParseError("manifest " + path.string() + " lists no recordings", 0);
  return out;
}

void write_graph(const fs::path& path, const SensorGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph " + path.string());
  out << "# gvit-graph v1\n"
      << "nodes " << g.n_nodes << "\n"
      << "channels " << kSensorChannels << "\n"
      << "group " << to_string(g.group) << "\n"
      << "targets " << format_double(g.targets[0]) << ' ' << format_double(g.targets[1]) << "\n"
      << "composition " << to_string(g.composition) << "\n"
      << "source " << (g.meta.source.empty() ? "-" : g.meta.source) << "\n"
      << "rows " << g.meta.begin_row << ' ' << g.meta.end_row << "\n";
  for (std::size_t r = 0; r < g.n_nodes; ++r) {
    for (std::size_t c = 0; c < kSensorChannels; ++c) {
      out << (c ? " " : "") << format_double(g.node_features[r * kSensorChannels + c]);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing graph " + path.string());
}

SensorGraph read_graph(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph " + path.string());
  SensorGraph g;
  std::string line, key;
  std::size_t line_no = 0, channels = 0;
  auto expect = [&](const char* name) -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError(path.string() + ": truncated header", line_no + 1);
    ++line_no;
    std::istringstream fields(line);
    fields >> key;
    if (key != name) throw ParseError(path.string() + ": expected '" + name + "'", line_no);
    return fields;
  };
  if (!std::getline(in, line) || line.rfind("# gvit-graph", 0) != 0) {
    throw ParseError(path.string() + ": missing gvit-graph header", 1);
  }
  ++line_no;
  expect("nodes") >> g.n_nodes;
  expect("channels") >> channels;
  if (channels != kSensorChannels) throw ParseError(path.string() + ": expected 16 channels", line_no);
  std::string text;
  expect("group") >> text;
  g.group = parse_gas_group(text);
  expect("targets") >> g.targets[0] >> g.targets[1];
  expect("composition") >> text;
  g.composition = parse_composition(text);
  expect("source") >> g.meta.source;
  expect("rows") >> g.meta.begin_row >> g.meta.end_row;
  g.node_features.reserve(g.n_nodes * kSensorChannels);
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() != kSensorChannels) throw ParseError(path.string() + ": expected 16 values", line_no);
    for (auto tok : tokens) {
      double v;
      if (!parse_double(tok, v)) throw ParseError(path.string() + ": non-numeric value", line_no);
      g.node_features.push_back(v);
    }
  }
  g.validate();
  return g;
}

namespace {

json split_to_json(const DatasetSplit& s) {
  return {{"seed", s.seed}, {"test_ratio", s.test_ratio}, {"test", s.test}, {"trainval", s.trainval},
          {"folds", s.folds}};
}

std::string graph_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "graph_%05zu.txt", i);
  return buf;
}

}  // namespace

void write_dataset(const fs::path& dir, const IngestResult& result, std::size_t downsample_factor) {
  std::error_code ec;
  fs::create_directories(dir / "graphs", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  for (std::size_t i = 0; i < result.graphs.size(); ++i) {
    write_graph(dir / "graphs" / graph_filename(i), result.graphs[i]);
  }
  json maxima = json::object(), baselines = json::object(), provenance = json::array();
  for (const auto& [g, m] : result.maxima) maxima[to_string(g)] = m.ppm;
  for (const auto& [g, b] : result.air_baseline) baselines[to_string(g)] = b;
  for (const auto& p : result.provenance) provenance.push_back({{"stage", p.stage}, {"count", p.count}, {"detail", p.detail}});
  json graphs = json::array();
  for (std::size_t i = 0; i < result.graphs.size(); ++i) graphs.push_back(graph_filename(i));
  const json dataset = {{"format", "gvit-dataset"},
                        {"version", 1},
                        {"graph_count", result.graphs.size()},
                        {"graphs", graphs},
                        {"downsample_factor", downsample_factor},
                        {"max_ppm", maxima},
                        {"air_baseline", baselines},
                        {"provenance", provenance},
                        {"warnings", result.warnings}};
  for (const auto& [name, doc] : {std::pair{"dataset.json", dataset}, std::pair{"split.json", split_to_json(result.split)}}) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    out << doc.dump(2) << '\n';
  }
}

Dataset read_dataset(const fs::path& dir) {
  auto load = [&](const char* name) {
    std::ifstream in(dir / name);
    if (!in) throw IoError("cannot open " + (dir / name).string());
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError((dir / name).string() + ": " + e.what(), 0);
    }
  };
  const auto meta = load("dataset.json");
  const auto split = load("split.json");
  Dataset ds;
  try {
    for (const auto& name : meta.at("graphs")) ds.graphs.push_back(read_graph(dir / "graphs" / name.get<std::string>()));
    ds.downsample_factor = meta.at("downsample_factor").get<std::size_t>();
    for (const auto& [g, m] : meta.at("max_ppm").items()) ds.maxima[parse_gas_group(g)] = {m.get<std::array<double, 2>>()};
    for (const auto& [g, b] : meta.at("air_baseline").items()) ds.air_baseline[parse_gas_group(g)] = b.get<std::vector<double>>();
    ds.split.seed = split.at("seed").get<std::uint64_t>();
    ds.split.test_ratio = split.at("test_ratio").get<double>();
    ds.split.test = split.at("test").get<std::vector<std::size_t>>();
    ds.split.trainval = split.at("trainval").get<std::vector<std::size_t>>();
    ds.split.folds = split.at("folds").get<std::vector<std::vector<std::size_t>>>();
  } catch (const json::exception& e) {
    throw ParseError(dir.string() + ": " + e.what(), 0);
  }
  auto check = [&](const std::vector<std::size_t>& idx) {
    for (auto i : idx) {
      if (i >= ds.graphs.size()) throw ParseError(dir.string() + ": split references missing graph " + std::to_string(i), 0);
    }
  };
  check(ds.split.test);
  check(ds.split.trainval);
  for (const auto& f : ds.split.folds) check(f);
  return ds;
}

}  // namespace gvit
