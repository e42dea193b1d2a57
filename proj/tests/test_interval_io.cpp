#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "borelog/interval_io.hpp"

using namespace borelog;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("borelog_io_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  void write(const std::string& file, const std::string& text) const { std::ofstream(path / file) << text; }
};

WellDataset synthetic_well(std::size_t rows, std::size_t cols = 4) {
  WellDataset ds;
  ds.well_id = "w";
  ds.image = Field(rows, cols);
  Rng rng(5);
  for (double& v : ds.image.data) v = rng.uniform(-10, 10);
  for (std::size_t r = 0; r < rows; ++r) ds.image_depths.push_back(1000.0 + 0.01 * static_cast<double>(r));
  ds.channel_names = {"GR", "DEN"};
  ds.log_values.assign(2, {});
  for (std::size_t i = 0; i * 5 < rows; ++i) {
    ds.log_depths.push_back(1000.0 + 0.05 * static_cast<double>(i));
    ds.log_values[0].push_back(50.0 + static_cast<double>(i % 7));
    ds.log_values[1].push_back(2.0 + 0.01 * static_cast<double>(i));
  }
  return ds;
}

}  // namespace

TEST(LoadWell, ParsesSevenChannels) {
  TempDir d("ok");
  d.write("image.csv", "1,2,3\n4,,6\n");
  d.write("depth.csv", "10.0\n10.1\n");
  d.write("logs.csv", "depth,CAL,GR,DEN,NEU,DTC,PE,RES90\n10.0,1,2,3,4,5,6,7\n10.2,1,2,,4,5,6,7\n");
  const WellDataset ds = load_well(d.path);
  EXPECT_EQ(ds.channel_names.size(), 7u);
  EXPECT_EQ(ds.image.rows, 2u);
  EXPECT_TRUE(std::isnan(ds.image(1, 1)));
  EXPECT_TRUE(std::isnan(ds.log_values[2][1]));
  EXPECT_EQ(ds.well_id, "borelog_io_ok");
}

TEST(LoadWell, EmptyLogsHaveNoChannels) {
  TempDir d("empty");
  d.write("image.csv", "1,2\n");
  d.write("depth.csv", "1\n");
  d.write("logs.csv", "");
  try {
    load_well(d.path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no log channels"), std::string::npos);
  }
}

TEST(LoadWell, RepeatedDepthIsRejectedWithLine) {
  TempDir d("mono");
  d.write("image.csv", "1,2\n3,4\n5,6\n");
  d.write("depth.csv", "1.0\n1.1\n1.1\n");
  d.write("logs.csv", "depth,GR\n1,2\n2,3\n");
  try {
    load_well(d.path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}

TEST(LoadWell, UnknownChannelAndMalformedCell) {
  TempDir d("bad");
  d.write("image.csv", "1,2\n");
  d.write("depth.csv", "1\n");
  d.write("logs.csv", "depth,FOO\n1,2\n");
  EXPECT_THROW(load_well(d.path), Error);
  d.write("logs.csv", "depth,GR\n1,2\n");
  d.write("image.csv", "1,x\n");
  try {
    load_well(d.path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("image.csv:1"), std::string::npos) << e.what();
  }
}

TEST(PlanIntervals, BroadStartsAtMultiplesOfStep) {
  SliceConfig cfg;
  const auto specs = plan_intervals("w", 24600, cfg);
  ASSERT_EQ(specs.size(), 3u);
  EXPECT_EQ(specs[0].start_row, 0u);
  EXPECT_EQ(specs[1].start_row, 12000u);
  EXPECT_EQ(specs[2].start_row, 24000u);
  EXPECT_EQ(specs[2].height(), 600u);
}

TEST(PlanIntervals, TruncatedSliceKeptAboveMinimum) {
  SliceConfig cfg;
  auto specs = plan_intervals("w", 500, cfg);
  ASSERT_EQ(specs.size(), 1u);
  EXPECT_EQ(specs[0].height(), 500u);
  EXPECT_TRUE(plan_intervals("w", 299, cfg).empty());
  // trailing 12000 + 250 rows is below the minimum and dropped
  EXPECT_EQ(plan_intervals("w", 12250, cfg).size(), 1u);
}

TEST(PlanIntervals, HeavyVerbatimAndRangeChecked) {
  SliceConfig cfg;
  cfg.heavy = {{"w", 100, 1300}, {"other", 0, 600}};
  auto specs = plan_intervals("w", 2000, cfg);
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[1], (IntervalSpec{"w", 100, 1300, IntervalKind::kHeavy}));
  cfg.heavy = {{"w", 100, 2100}};
  EXPECT_THROW(plan_intervals("w", 2000, cfg), Error);
}

TEST(FillMissing, Examples) {
  Field f(1, 3);
  f.data = {1, csv::kMissing, 3};
  EXPECT_EQ(fill_missing_image(f).data, (std::vector<double>{1, 2, 3}));
  Field g(1, 3);
  g.data = {4, 5, 6};
  EXPECT_EQ(fill_missing_image(g), g);
  Field c(2, 2);
  c.data = {5, csv::kMissing, csv::kMissing, 5};
  EXPECT_EQ(fill_missing_image(c).data, (std::vector<double>(4, 5.0)));
  Field m(1, 2);
  m.data = {csv::kMissing, csv::kMissing};
  EXPECT_THROW(fill_missing_image(m), Error);
}

TEST(Normalize, ClosedFormValues) {
  const NormStats s{2.0, 0.5};
  Field f(1, 2);
  f.data = {2.0, 3.5};
  const Field x = normalize_image(f, s);
  EXPECT_DOUBLE_EQ(x.data[0], 0.5);
  EXPECT_NEAR(x.data[1], 0.5 * (1.0 + std::tanh(1.0)), 1e-15);
  EXPECT_NEAR(x.data[1], 0.88080, 1e-5);
  Field back(1, 1);
  back.data = {0.88080};
  EXPECT_NEAR(denormalize_image(back, {0.0, 1.0}).image_db.data[0], 3.0, 1e-3);
  back.data = {0.5};
  EXPECT_DOUBLE_EQ(denormalize_image(back, {7.0, 2.0}).image_db.data[0], 7.0);
}

TEST(Normalize, RoundTripWithinTolerance) {
  Rng rng(11);
  const NormStats s{-40.0, 6.0};
  Field f(30, 20);
  for (double& v : f.data) v = s.mean + s.stddev * rng.uniform(-9.0, 9.0);
  const auto back = denormalize_image(normalize_image(f, s), s);
  EXPECT_EQ(back.clamped, 0u);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(back.image_db.data[i], f.data[i], 1e-9);
}

TEST(Normalize, DegenerateAndSaturated) {
  Field c(2, 2, 3.0);
  EXPECT_THROW(image_stats(c), Error);
  Field sat(1, 2);
  sat.data = {0.0, 1.0};
  const auto d = denormalize_image(sat, {0.0, 1.0});
  EXPECT_EQ(d.clamped, 2u);
  EXPECT_TRUE(std::isfinite(d.image_db.data[0]) && std::isfinite(d.image_db.data[1]));
  EXPECT_LT(d.image_db.data[0], 0.0);
}

TEST(AlignLogs, OnGridPassThroughAndRamp) {
  WellDataset ds;
  ds.well_id = "w";
  ds.channel_names = {"GR", "CAL"};
  std::vector<double> grid;
  for (int i = 0; i < 101; ++i) grid.push_back(100.0 + i);
  ds.log_depths = grid;
  ds.log_values = {{}, {}};
  for (int i = 0; i < 101; ++i) {
    ds.log_values[0].push_back(static_cast<double>(i));  // ramp: p1 = 1, p99 = 99
    ds.log_values[1].push_back(4.0);
  }
  const Field a = align_logs(ds, grid, {"GR", "CAL"});
  for (int i = 0; i < 101; ++i) {
    EXPECT_NEAR(a(i, 0), std::clamp((i - 1.0) / 98.0, 0.0, 1.0), 1e-12);
    EXPECT_EQ(a(i, 1), 0.5);
  }
  // away from the clipped tails a half-step grid stays linear
  std::vector<double> half;
  for (int i = 10; i < 90; ++i) half.push_back(100.5 + i);
  const Field b = align_logs(ds, half, {"GR"});
  for (std::size_t i = 2; i + 2 < half.size(); ++i) EXPECT_NEAR(b(i + 1, 0) - b(i, 0), b(i, 0) - b(i - 1, 0), 1e-12);
}

TEST(AlignLogs, MissingFillExtrapolationAndErrors) {
  WellDataset ds;
  ds.well_id = "w";
  ds.channel_names = {"GR"};
  ds.log_depths = {0, 1, 2, 3};
  ds.log_values = {{0.0, csv::kMissing, 4.0, 8.0}};
  const Field a = align_logs(ds, {-5.0, 1.0, 10.0}, {"GR"});
  for (double v : a.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(a(0, 0), 0.0);
  EXPECT_EQ(a(2, 0), 1.0);
  ds.log_values = {{1.0, csv::kMissing, csv::kMissing, csv::kMissing}};
  EXPECT_THROW(align_logs(ds, {1.0}, {"GR"}), Error);
  EXPECT_THROW(align_logs(ds, {1.0}, {"PE"}), Error);
}

TEST(ReplicateLogs, ConstantAcrossAzimuth) {
  Field a(2, 1);
  a.data = {0.1, 0.9};
  const Tensor t = replicate_logs(a, 3);
  EXPECT_EQ(t.shape(), (Shape{1, 2, 3}));
  EXPECT_EQ(t.storage(), (std::vector<double>{0.1, 0.1, 0.1, 0.9, 0.9, 0.9}));
}

TEST(ExtractIntervals, PureAndValid) {
  const WellDataset ds = synthetic_well(1400);
  SliceConfig cfg;
  cfg.broad_step = 700;
  cfg.heavy = {{"w", 50, 400}};
  const auto a = extract_intervals(ds, cfg, {"GR", "DEN"});
  const auto b = extract_intervals(ds, cfg, {"GR", "DEN"});
  ASSERT_EQ(a.intervals.size(), 3u);
  for (std::size_t i = 0; i < a.intervals.size(); ++i) {
    const auto& x = a.intervals[i];
    EXPECT_EQ(x.spec, b.intervals[i].spec);
    EXPECT_EQ(x.image_db, b.intervals[i].image_db);
    EXPECT_GE(x.height(), cfg.min_valid_height);
    EXPECT_GT(x.norm.stddev, 0.0);
    EXPECT_EQ(x.depth_grid.size(), x.height());
    for (double v : x.logs_aligned.data) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  }
  EXPECT_EQ(a.intervals[2].spec.kind, IntervalKind::kHeavy);
}

TEST(ExtractIntervals, DegenerateImageRejected) {
  WellDataset ds = synthetic_well(600);
  std::fill(ds.image.data.begin(), ds.image.data.end(), 1.0);
  const auto r = extract_intervals(ds, SliceConfig{}, {"GR"});
  EXPECT_TRUE(r.intervals.empty());
  ASSERT_EQ(r.rejected.size(), 1u);
}

TEST(Manifest, RoundTrip) {
  TempDir d("manifest");
  const std::vector<IntervalSpec> specs{{"a", 0, 600, IntervalKind::kBroad}, {"b", 10, 900, IntervalKind::kHeavy}};
  {
    csv::Writer w(d.path / "m.csv");
    w.comment("borelog config_hash=0 seed=42");
    write_manifest(w, specs);
  }
  EXPECT_EQ(read_manifest(d.path / "m.csv"), specs);
}
