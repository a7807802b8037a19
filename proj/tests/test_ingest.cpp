#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "gvit/errors.hpp"
#include "gvit/ingest.hpp"

using namespace gvit;
namespace fs = std::filesystem;

namespace {

struct Block {
  double a, b;
  std::size_t rows;
  double level;  // every channel reads this value
};

RawStream stream_of(const std::vector<Block>& blocks, GasGroup group = GasGroup::co_ethylene) {
  RawStream s;
  s.group = group;
  s.source = "test";
  std::size_t row = 0;
  for (const auto& blk : blocks) {
    std::vector<double> ch(kSensorChannels, blk.level);
    for (std::size_t i = 0; i < blk.rows; ++i, ++row) {
      ch[0] = blk.level + static_cast<double>(row);  // channel 0 tracks the row index
      s.append(static_cast<double>(row) * 0.01, {blk.a, blk.b}, ch.data());
    }
  }
  return s;
}

SensorGraph labelled(Composition c, GasGroup group, std::size_t id) {
  SensorGraph g;
  g.n_nodes = 1;
  g.node_features.assign(kSensorChannels, static_cast<double>(id));
  g.group = group;
  g.composition = c;
  g.targets = {c == Composition::b ? 0.0 : 0.5, c == Composition::a ? 0.0 : 0.5};
  return g;
}

// Published class sizes: (CO, ethylene, CO+ethylene) then (methane, ethylene, methane+ethylene).
std::vector<SensorGraph> published_corpus() {
  const std::size_t sizes[2][3] = {{71, 111, 100}, {76, 89, 86}};
  const Composition classes[3] = {Composition::a, Composition::b, Composition::ab};
  std::vector<SensorGraph> out;
  for (int g = 0; g < 2; ++g) {
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < sizes[g][c]; ++i) {
        out.push_back(labelled(classes[c], g == 0 ? GasGroup::co_ethylene : GasGroup::methane_ethylene, out.size()));
      }
    }
  }
  return out;
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("gvit_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string row_text(double t, double a, double b, double v) {
  std::string line = std::to_string(t) + " " + std::to_string(a) + " " + std::to_string(b);
  for (std::size_t c = 0; c < kSensorChannels; ++c) line += " " + std::to_string(v + static_cast<double>(c));
  return line + "\n";
}

}  // namespace

TEST_CASE("parse_stream_text") {
  SUBCASE("three well-formed rows") {
    const auto s = parse_stream_text(row_text(0, 0, 0, 1) + row_text(0.01, 5, 0, 2) + row_text(0.02, 5, 10, 3),
                                     GasGroup::co_ethylene);
    CHECK(s.rows() == 3);
    CHECK(s.setpoints[2][1] == 10.0);
    CHECK(s.sensor_row(1)[15] == 17.0);
  }
  SUBCASE("header line is skipped") {
    const auto s = parse_stream_text("Time (seconds), CO conc (ppm), Ethylene conc (ppm), sensor readings (16 channels)\n" +
                                         row_text(0, 0, 0, 1),
                                     GasGroup::co_ethylene);
    CHECK(s.rows() == 1);
  }
  SUBCASE("short row reports its line") {
    auto bad = row_text(0.01, 0, 0, 2);
    bad = bad.substr(0, bad.rfind(' ')) + "\n";
    try {
      parse_stream_text(row_text(0, 0, 0, 1) + bad, GasGroup::co_ethylene);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 2);
    }
  }
  SUBCASE("non-numeric field") {
    CHECK_THROWS_AS(parse_stream_text(row_text(0, 0, 0, 1) + "0.5 x 0" + std::string(16 * 2, ' ') + "\n",
                                      GasGroup::co_ethylene),
                    ParseError);
  }
  SUBCASE("empty input") { CHECK_THROWS(parse_stream_text("", GasGroup::co_ethylene)); }
  SUBCASE("file round trip") {
    const auto dir = scratch_dir("parse");
    const auto s = stream_of({{0, 0, 4, 1.5}, {5, 2.5, 3, 7.25}});
    write_stream(dir / "rec.txt", s);
    const auto back = parse_stream(dir / "rec.txt", GasGroup::co_ethylene);
    CHECK(back.rows() == 7);
    CHECK(back.setpoints[6] == std::array<double, 2>{5, 2.5});
    for (std::size_t i = 0; i < s.sensors.size(); ++i) CHECK(std::abs(back.sensors[i] - s.sensors[i]) <= 1e-6);
    CHECK_THROWS_AS(parse_stream(dir / "missing.txt", GasGroup::co_ethylene), IoError);
  }
}

TEST_CASE("downsample") {
  const auto s = stream_of({{0, 0, 100, 0}});
  const auto d = downsample(s, 20);
  REQUIRE(d.rows() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(d.sensor_row(i)[0] == static_cast<double>(20 * i));

  const auto same = downsample(s, 1);
  CHECK(same.sensors == s.sensors);
  CHECK(same.time == s.time);
  CHECK_THROWS_AS(downsample(s, 0), DomainError);

  for (std::size_t n : {1u, 19u, 20u, 21u, 997u}) {
    for (std::size_t a : {1u, 2u, 3u, 5u}) {
      for (std::size_t b : {1u, 4u, 7u}) {
        const auto x = stream_of({{0, 0, n, 0}});
        CHECK(downsample(x, a * b).sensors == downsample(downsample(x, a), b).sensors);
      }
    }
    CHECK(downsample(stream_of({{0, 0, n, 0}}), 20).rows() == (n + 19) / 20);
  }
  // Row count arithmetic for the full recording.
  const std::size_t total = 8'387'665;
  CHECK((total + 19) / 20 == 419'384);

  const auto avg = downsample(stream_of({{0, 0, 5, 0}}), 2, DownsampleMode::average);
  REQUIRE(avg.rows() == 3);
  CHECK(avg.sensor_row(0)[0] == 0.5);
  CHECK(avg.sensor_row(2)[0] == 4.0);
}

TEST_CASE("baseline_correct") {
  SUBCASE("subtracts the preceding air mean") {
    RawStream s;
    std::vector<double> ch(kSensorChannels, 0.0);
    for (double v : {9.0, 11.0}) {
      ch[3] = v;
      s.append(0, {0, 0}, ch.data());
    }
    ch[3] = 14.5;
    s.append(1, {5, 0}, ch.data());
    const auto out = baseline_correct(s);
    CHECK(out.sensor_row(2)[3] == doctest::Approx(4.5).epsilon(1e-12));
  }
  SUBCASE("all-air stream corrects to zero") {
    const auto out = baseline_correct(stream_of({{0, 0, 50, 3.0}}));
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 1; c < kSensorChannels; ++c) CHECK(std::abs(out.sensor_row(r)[c]) <= 1e-12);
    }
    double sum0 = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r) sum0 += out.sensor_row(r)[0];
    CHECK(std::abs(sum0) <= 1e-9);
  }
  SUBCASE("second exposure uses the second air phase") {
    const auto out = baseline_correct(stream_of({{0, 0, 3, 1.0}, {5, 0, 2, 10.0}, {0, 0, 3, 4.0}, {0, 5, 2, 10.0}}));
    CHECK(out.sensor_row(3)[5] == doctest::Approx(9.0));
    CHECK(out.sensor_row(8)[5] == doctest::Approx(6.0));
    CHECK(out.sensor_row(9)[5] == doctest::Approx(6.0));
  }
  SUBCASE("exposure before the first air phase uses the first air phase") {
    const auto out = baseline_correct(stream_of({{5, 0, 2, 10.0}, {0, 0, 3, 2.0}}));
    CHECK(out.sensor_row(0)[7] == doctest::Approx(8.0));
  }
  SUBCASE("no air phase") { CHECK_THROWS_AS(baseline_correct(stream_of({{5, 0, 4, 1.0}})), DomainError); }
}

TEST_CASE("segment") {
  const auto segs = segment(stream_of({{0, 0, 100, 0}, {5, 0, 200, 0}, {5, 10, 150, 0}, {0, 0, 50, 0}}));
  REQUIRE(segs.size() == 2);
  CHECK(segs[0].length() == 200);
  CHECK(segs[0].begin_row == 100);
  CHECK(segs[0].setpoint_ppm == std::array<double, 2>{5, 0});
  CHECK(segs[1].length() == 150);
  CHECK(segs[1].sensors.size() == 150 * kSensorChannels);

  const auto one = segment(stream_of({{3, 4, 37, 0}}));
  REQUIRE(one.size() == 1);
  CHECK(one[0].length() == 37);

  CHECK(segment(stream_of({{0, 0, 10, 0}})).empty());

  // Adjacent exposures with different setpoints split even without air between them.
  CHECK(segment(stream_of({{1, 0, 3, 0}, {2, 0, 3, 0}, {2, 0, 1, 0}})).size() == 2);
}

TEST_CASE("normalize_targets") {
  const auto ref = reference_maxima(GasGroup::co_ethylene);
  CHECK(ref.ppm[0] == doctest::Approx(533.33));
  CHECK(ref.ppm[1] == 20.0);
  CHECK(reference_maxima(GasGroup::methane_ethylene).ppm[0] == doctest::Approx(296.67));

  Segment s;
  s.begin_row = 0;
  s.end_row = 1;
  s.sensors.assign(kSensorChannels, 0.0);
  s.setpoint_ppm = {0.0, 20.0};
  auto g = to_graph(s, ref);
  CHECK(g.targets[0] == 0.0);
  CHECK(g.targets[1] == 1.0);
  CHECK(g.composition == Composition::b);
  s.setpoint_ppm = {533.33, 10.0};
  g = to_graph(s, ref);
  CHECK(g.targets[1] == 0.5);
  CHECK(g.targets[0] == doctest::Approx(1.0));
  CHECK(g.composition == Composition::ab);

  GasMaxima zero;
  zero.ppm = {0.0, 20.0};
  CHECK_THROWS_AS(to_graph(s, zero), DomainError);
}

TEST_CASE("stratified_split on the published class sizes") {
  const auto graphs = published_corpus();
  REQUIRE(graphs.size() == 533);
  const auto split = stratified_split(graphs, 0.16, 7);
  CHECK(split.test.size() == 88);
  CHECK(split.trainval.size() == 445);

  const std::size_t expected[6] = {12, 18, 16, 13, 15, 14};
  const std::size_t sizes[6] = {71, 111, 100, 76, 89, 86};
  for (int i = 0; i < 6; ++i) CHECK(test_count_for_class(sizes[i], 0.16) == expected[i]);
  CHECK(test_count_for_class(100, 0.16) == 16);

  std::set<std::size_t> test(split.test.begin(), split.test.end());
  std::set<std::size_t> trainval(split.trainval.begin(), split.trainval.end());
  CHECK(test.size() == 88);
  for (auto i : test) CHECK(trainval.count(i) == 0);
  CHECK(test.size() + trainval.size() == 533);

  const auto again = stratified_split(graphs, 0.16, 7);
  CHECK(again.test == split.test);
  CHECK(again.trainval == split.trainval);
  CHECK(stratified_split(graphs, 0.16, 8).test != split.test);

  std::vector<SensorGraph> tiny{labelled(Composition::a, GasGroup::co_ethylene, 0),
                                labelled(Composition::b, GasGroup::co_ethylene, 1),
                                labelled(Composition::b, GasGroup::co_ethylene, 2)};
  CHECK_THROWS_AS(stratified_split(tiny, 0.16, 0), DomainError);
  CHECK_THROWS_AS(stratified_split(graphs, 0.0, 0), DomainError);
  CHECK_THROWS_AS(stratified_split(graphs, 1.0, 0), DomainError);
}

TEST_CASE("kfold") {
  const auto graphs = published_corpus();
  const auto split = stratified_split(graphs, 0.16, 3);
  const auto folds = kfold(graphs, split.trainval, 5, 3);
  REQUIRE(folds.size() == 5);
  std::vector<std::size_t> all;
  for (const auto& f : folds) {
    CHECK(f.size() == 89);
    all.insert(all.end(), f.begin(), f.end());
  }
  std::sort(all.begin(), all.end());
  auto expected = split.trainval;
  std::sort(expected.begin(), expected.end());
  CHECK(all == expected);

  // Per-class balance: each class spreads across folds within one sample.
  for (auto cls : {Composition::a, Composition::b, Composition::ab}) {
    std::vector<std::size_t> per_fold;
    for (const auto& f : folds) {
      per_fold.push_back(static_cast<std::size_t>(std::count_if(f.begin(), f.end(), [&](std::size_t i) {
        return graphs[i].composition == cls && graphs[i].group == GasGroup::co_ethylene;
      })));
    }
    const auto [lo, hi] = std::minmax_element(per_fold.begin(), per_fold.end());
    CHECK(*hi - *lo <= 1);
  }

  std::vector<SensorGraph> four{labelled(Composition::a, GasGroup::co_ethylene, 0),
                                labelled(Composition::a, GasGroup::co_ethylene, 1),
                                labelled(Composition::b, GasGroup::co_ethylene, 2),
                                labelled(Composition::b, GasGroup::co_ethylene, 3)};
  const auto two = kfold(four, {0, 1, 2, 3}, 2, 11);
  REQUIRE(two.size() == 2);
  for (const auto& f : two) {
    REQUIRE(f.size() == 2);
    CHECK(four[f[0]].composition != four[f[1]].composition);
  }

  std::vector<std::string> warnings;
  kfold(four, {0, 1, 2, 3}, 3, 11, &warnings);
  CHECK(!warnings.empty());
  CHECK_THROWS_AS(kfold(four, {0, 1, 2, 3}, 5, 11), DomainError);
  CHECK_THROWS_AS(kfold(four, {0, 1, 2, 3}, 1, 11), DomainError);
}

TEST_CASE("synth_stream") {
  const auto params = SensorParams::from_seed(5, GasGroup::co_ethylene);
  SynthOptions opt;
  opt.sample_rate_hz = 10;
  SUBCASE("plateau reaches base + S*conc") {
    const auto s = synth_stream({{100.0, 0.0, 60.0}}, params, opt);
    const auto last = s.sensor_row(s.rows() - 1);
    for (std::size_t c = 0; c < kSensorChannels; ++c) {
      const double plateau = params.base[c] + params.sensitivity[c][0] * 100.0;
      CHECK(std::abs(last[c] - plateau) <= 0.01 * std::abs(plateau));
    }
  }
  SUBCASE("zero concentration stays at base") {
    const auto s = synth_stream({{0.0, 0.0, 5.0}}, params, opt);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      for (std::size_t c = 0; c < kSensorChannels; ++c) CHECK(s.sensor_row(r)[c] == doctest::Approx(params.base[c]));
    }
  }
  SUBCASE("deterministic in the seed") {
    opt.noise = 0.05;
    opt.seed = 9;
    const std::vector<SchedulePhase> sched{{0, 0, 3}, {50, 5, 4}, {0, 0, 3}};
    CHECK(synth_stream(sched, params, opt).sensors == synth_stream(sched, params, opt).sensors);
    auto other = opt;
    other.seed = 10;
    CHECK(synth_stream(sched, params, opt).sensors != synth_stream(sched, params, other).sensors);
    CHECK(SensorParams::from_seed(5, GasGroup::co_ethylene).base == params.base);
  }
  SUBCASE("segments recover the schedule") {
    ScheduleOptions so;
    so.exposures_per_class = 4;
    so.max_exposure_s = 10;
    so.air_s = 2;
    so.seed = 1;
    const auto sched = random_schedule(GasGroup::co_ethylene, so);
    CHECK(sched.size() == 2 * 12 + 1);
    opt.noise = 0.01;
    const auto stream = synth_stream(sched, params, opt);
    const auto segs = segment(baseline_correct(stream));
    REQUIRE(segs.size() == 12);
    std::size_t row = 0, k = 0;
    for (const auto& phase : sched) {
      const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(phase.duration_s * 10)));
      if (phase.conc_a > 0 || phase.conc_b > 0) {
        CHECK(segs[k].begin_row == row);
        CHECK(segs[k].end_row == row + n);
        ++k;
      }
      row += n;
    }
  }
}

TEST_CASE("run_ingest and dataset files") {
  const auto params = SensorParams::from_seed(2, GasGroup::co_ethylene);
  ScheduleOptions so;
  so.exposures_per_class = 10;
  so.max_exposure_s = 6;
  so.air_s = 2;
  SynthOptions opt;
  opt.sample_rate_hz = 10;
  opt.noise = 0.01;
  const auto stream = synth_stream(random_schedule(GasGroup::co_ethylene, so), params, opt);
  IngestOptions io;
  io.downsample_factor = 2;
  io.seed = 4;
  const auto result = run_ingest({stream}, io);
  CHECK(result.graphs.size() == 30);
  CHECK(result.split.test.size() == 3 * test_count_for_class(10, 0.16));
  CHECK(result.split.folds.size() == 5);
  CHECK(result.provenance.front().stage == "parse");
  CHECK(result.provenance.front().count == stream.rows());
  for (const auto& g : result.graphs) CHECK_NOTHROW(g.validate());

  const auto dir = scratch_dir("dataset");
  write_dataset(dir, result, 2);
  const auto back = read_dataset(dir);
  REQUIRE(back.graphs.size() == result.graphs.size());
  CHECK(back.downsample_factor == 2);
  CHECK(back.split.test == result.split.test);
  CHECK(back.split.folds == result.split.folds);
  for (std::size_t i = 0; i < back.graphs.size(); ++i) {
    CHECK(back.graphs[i].node_features == result.graphs[i].node_features);
    CHECK(back.graphs[i].targets == result.graphs[i].targets);
    CHECK(back.graphs[i].composition == result.graphs[i].composition);
    CHECK(back.graphs[i].meta.begin_row == result.graphs[i].meta.begin_row);
  }
  CHECK(back.maxima.at(GasGroup::co_ethylene).ppm == result.maxima.at(GasGroup::co_ethylene).ppm);
  CHECK(back.air_baseline.at(GasGroup::co_ethylene) == result.air_baseline.at(GasGroup::co_ethylene));

  {
    std::ofstream corrupt(dir / "graphs" / "graph_00000.txt", std::ios::app);
    corrupt << "1 2 3\n";
  }
  CHECK_THROWS(read_dataset(dir));
  CHECK_THROWS_AS(read_dataset(dir / "nope"), IoError);
}

TEST_CASE("read_stream_manifest") {
  const auto dir = scratch_dir("manifest");
  {
    std::ofstream out(dir / "streams.txt");
    out << "# recordings\nrec_a.txt co_ethylene\n\n/abs/rec_b.txt methane_ethylene  # trailing\n";
  }
  const auto m = read_stream_manifest(dir / "streams.txt");
  REQUIRE(m.size() == 2);
  CHECK(m[0].first == dir / "rec_a.txt");
  CHECK(m[0].second == GasGroup::co_ethylene);
  CHECK(m[1].first == fs::path("/abs/rec_b.txt"));
  CHECK(m[1].second == GasGroup::methane_ethylene);
  {
    std::ofstream out(dir / "bad.txt");
    out << "rec.txt argon\n";
  }
  CHECK_THROWS(read_stream_manifest(dir / "bad.txt"));
}
