#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "borelog/pipeline.hpp"

using namespace borelog;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = stats::mean(a), mb = stats::mean(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<double> row_class_mean(const LabelMap& y) {
  std::vector<double> m(y.rows, 0.0);
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) m[r] += y(r, c);
  return m;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("borelog_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Synth, NoiseFreeBandsAreRecoveredByRawOtsu) {
  SyntheticSpec s;
  s.bands = 4;
  s.noise_db = 0.0;
  const SyntheticWell w = generate_synthetic(s);
  IntervalBundle b;
  b.image_db = w.image_db;
  EXPECT_EQ(perm_agreement(raw_otsu_baseline(b).labels, w.truth).acc, 1.0);
  for (auto regime : {SynthRegime::kColumnar, SynthRegime::kLocalizedAnomaly}) {
    s.regime = regime;
    const SyntheticWell v = generate_synthetic(s);
    b.image_db = v.image_db;
    EXPECT_EQ(perm_agreement(raw_otsu_baseline(b).labels, v.truth).acc, 1.0) << to_string(regime);
  }
}

TEST(Synth, LogCorrelationFollowsTheCoefficient) {
  SyntheticSpec s;
  s.log_correlation = 0.0;
  const SyntheticWell w0 = generate_synthetic(s);
  const auto signal = row_class_mean(w0.truth);
  for (std::size_t c = 0; c < w0.logs.cols; ++c) {
    std::vector<double> log(w0.logs.rows);
    for (std::size_t r = 0; r < log.size(); ++r) log[r] = w0.logs(r, c);
    EXPECT_LT(std::fabs(correlation(log, signal)), 0.1) << w0.channel_names[c];
  }
  s.log_correlation = 0.8;
  const SyntheticWell w8 = generate_synthetic(s);
  for (std::size_t c = 0; c + 1 < w8.logs.cols; ++c) {  // RES90 is log-scaled
    std::vector<double> log(w8.logs.rows);
    for (std::size_t r = 0; r < log.size(); ++r) log[r] = w8.logs(r, c);
    EXPECT_NEAR(std::fabs(correlation(log, row_class_mean(w8.truth))), 0.8, 0.06) << w8.channel_names[c];
  }
}

TEST(Synth, SameSeedWritesIdenticalFilesThatLoad) {
  const fs::path a = scratch("synth_a"), b = scratch("synth_b");
  SyntheticSpec s;
  s.regime = SynthRegime::kLocalizedAnomaly;
  write_synthetic(generate_synthetic(s), a / "w");
  write_synthetic(generate_synthetic(s), b / "w");
  for (const char* f : {"image.csv", "depth.csv", "logs.csv", "ground_truth.csv"}) EXPECT_EQ(slurp(a / "w" / f), slurp(b / "w" / f)) << f;
  const WellDataset ds = load_well(a / "w");
  EXPECT_EQ(ds.image.rows, 600u);
  EXPECT_EQ(ds.channel_names, default_channels());
  s.seed = 7;
  write_synthetic(generate_synthetic(s), b / "w");
  EXPECT_NE(slurp(a / "w" / "image.csv"), slurp(b / "w" / "image.csv"));
}

TEST(Config, ParsingAndErrors) {
  const RunConfig c = parse_config_string(
      "# comment\n"
      "seed = 7\n"
      "methods = raw_otsu, cgdca\n"
      "heavy = w1:100:700, w2:0:300\n"
      "epochs_override = 30/60  # trailing comment\n"
      "channels = gr,den\n");
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.slice.seed, 7u);
  EXPECT_EQ(c.methods, (std::vector<std::string>{"raw_otsu", "cgdca"}));
  ASSERT_EQ(c.slice.heavy.size(), 2u);
  EXPECT_EQ(c.slice.heavy[1].end_row, 300u);
  ASSERT_TRUE(c.epochs_override);
  EXPECT_EQ(c.ae_epochs(120), 30u);
  EXPECT_EQ(c.refiner_epochs(1000), 60u);
  EXPECT_EQ(c.channels, (std::vector<std::string>{"GR", "DEN"}));
  EXPECT_EQ(parse_epoch_override("5").refiner, 5u);
  EXPECT_EQ(RunConfig{}.refiner_epochs(1000), 1000u);

  try {
    parse_config_string("seed = 1\nbogus = 2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("config:2"), std::string::npos);
  }
  EXPECT_THROW(parse_config_string("seed = 1\nseed = 2\n"), Error);
  EXPECT_THROW(parse_config_string("precision = float32\n"), Error);
  EXPECT_THROW(parse_config_string("epochs_override = 3/x\n"), Error);
  EXPECT_THROW(parse_config_string("methods = nonsense\n").validate(), Error);
}

TEST(Config, HashIgnoresMethodsAndOutput) {
  const RunConfig base = parse_config_string("seed = 42\n");
  EXPECT_EQ(base.hash().size(), 16u);
  EXPECT_EQ(base.hash(), parse_config_string("seed = 42\nmethods = cgdca\nout = elsewhere\n").hash());
  EXPECT_NE(base.hash(), parse_config_string("seed = 43\n").hash());
  EXPECT_NE(base.hash(), parse_config_string("seed = 42\nepochs_override = 3\n").hash());
  EXPECT_EQ(base.header(), "borelog config_hash=" + base.hash() + " seed=42");
}

class PipelineTest : public ::testing::Test {
 protected:
  fs::path root;
  RunConfig cfg;

  void SetUp() override {
    root = scratch("pipeline");
    cfg = parse_config_string(
        "slice_height = 96\n"
        "broad_step = 96\n"
        "min_valid_height = 64\n"
        "epochs_override = 2\n"
        "methods = raw_otsu,ae_otsu,ae_kmeans,image_only,concat\n"
        "synth.rows = 200\n"
        "synth.cols = 40\n");
    cfg.data_root = (root / "data").string();
    cfg.out = (root / "out").string();
    RunConfig synth = cfg;
    synth.out = cfg.data_root;
    pipeline::Context sctx(synth);
    sctx.log = nullptr;
    pipeline::cmd_synth(sctx);
  }

  pipeline::Context context(bool force = false) const {
    pipeline::Context ctx(cfg, force);
    ctx.log = nullptr;
    return ctx;
  }
};

TEST_F(PipelineTest, StagesAreOrderedResumableAndDeterministic) {
  const auto ctx = context();
  try {
    pipeline::cmd_denoise(ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run extract first"), std::string::npos);
  }
  pipeline::cmd_extract(ctx);
  // 200 rows in slices of 96 stepped by 96: the 8-row tail is below the minimum height
  const auto plan = pipeline::load_plan(ctx);
  ASSERT_EQ(plan.size(), 2u);
  EXPECT_EQ(plan[1].id(), "synthetic_96_192");
  EXPECT_TRUE(fs::exists(pipeline::interval_dir(ctx, plan[0]) / "truth.csv"));
  pipeline::cmd_denoise(ctx);
  pipeline::cmd_pseudolabel(ctx);
  const fs::path pseudo = pipeline::interval_dir(ctx, plan[0]) / "pseudo.csv";
  const std::string first = slurp(pseudo);
  EXPECT_EQ(first.rfind("# borelog config_hash=" + cfg.hash() + " seed=42\n", 0), 0u);
  pipeline::cmd_pseudolabel(context(true));
  EXPECT_EQ(slurp(pseudo), first);

  try {
    pipeline::cmd_evaluate(ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run train first"), std::string::npos);
  }
  pipeline::cmd_train(ctx);
  const fs::path model = pipeline::interval_dir(ctx, plan[1]) / "model_concat.ckpt";
  const auto stamp_time = fs::last_write_time(pipeline::stamp_path(pipeline::interval_dir(ctx, plan[1]), "train_concat"));
  pipeline::cmd_train(ctx);  // finished work is skipped
  EXPECT_EQ(fs::last_write_time(pipeline::stamp_path(pipeline::interval_dir(ctx, plan[1]), "train_concat")), stamp_time);
  const std::string ckpt = slurp(model);
  pipeline::cmd_train(context(true));
  EXPECT_EQ(slurp(model), ckpt);

  pipeline::cmd_evaluate(ctx);
  pipeline::cmd_report(ctx);
  const std::string eval = slurp(ctx.out / "evaluation.csv"), table = slurp(ctx.out / "report" / "crosswell.csv");
  EXPECT_NE(eval.find(",image_only,acc_truth,"), std::string::npos);
  EXPECT_NE(eval.find(",ae_otsu,low_conf_change_frac,"), std::string::npos);
  pipeline::cmd_evaluate(ctx);
  pipeline::cmd_report(ctx);
  EXPECT_EQ(slurp(ctx.out / "evaluation.csv"), eval);
  EXPECT_EQ(slurp(ctx.out / "report" / "crosswell.csv"), table);
  EXPECT_TRUE(fs::exists(ctx.out / "report" / "plots" / plan[0].id() / "seg_concat.ppm"));
  EXPECT_NE(slurp(ctx.out / "manifest.csv").find("train,intervals/" + plan[0].id() + "/pred_concat.csv," + cfg.hash() + ",42,2"),
            std::string::npos);

  // a changed configuration invalidates upstream artifacts
  cfg.set_seed(43);
  try {
    pipeline::cmd_train(context());
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("run extract first"), std::string::npos);
  }
}

TEST_F(PipelineTest, AblationRowsAndReportHashGuard) {
  cfg.ablation_intervals = {"synthetic_0_96"};
  cfg.methods = {"raw_otsu", "cgdca"};
  cfg.epochs_override = EpochOverride{1, 1};
  const auto ctx = context();
  for (const char* stage : {"extract", "denoise", "pseudolabel", "train", "evaluate", "ablate"}) pipeline::run_stage(ctx, stage);
  const csv::Table t = csv::read_table(ctx.out / "ablation.csv");
  ASSERT_EQ(t.rows.size(), 1u + 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(t.rows[i + 1][3], ablation_variant_names()[i]);
  pipeline::cmd_report(ctx);
  const csv::Table abl = csv::read_table(ctx.out / "report" / "ablation_table.csv");
  EXPECT_EQ(abl.rows.front(), (std::vector<std::string>{"variant", "overall_mean", "std", "broad_mean", "heavy_mean", "delta_vs_full",
                                                        "full_wins", "full_win_rate"}));
  EXPECT_EQ(abl.rows.size(), 7u);
  EXPECT_TRUE(fs::exists(ctx.out / "report" / "plots" / "synthetic_0_96" / "gate_cgdca.ppm"));

  // splice in an ablation table from another configuration
  std::string text = slurp(ctx.out / "ablation.csv");
  text.replace(text.find(cfg.hash()), 16, "0123456789abcdef");
  std::ofstream(ctx.out / "ablation.csv", std::ios::binary | std::ios::trunc) << text;
  EXPECT_THROW(pipeline::cmd_report(ctx), Error);
  EXPECT_NO_THROW(pipeline::cmd_report(context(true)));
}

TEST(Plot, RastersHaveLegendAndHeader) {
  const fs::path dir = scratch("plot");
  LabelMap y(10, 6, 2);
  const plot::Image img = plot::class_raster(y);
  EXPECT_EQ(img.width, 6 + plot::kBarGap + plot::kBarWidth);
  plot::write_ppm(img, dir / "a.ppm", "borelog config_hash=x seed=1");
  const std::string bytes = slurp(dir / "a.ppm");
  EXPECT_EQ(bytes.rfind("P6\n# borelog config_hash=x seed=1\n22 10\n255\n", 0), 0u);
  EXPECT_EQ(bytes.size(), std::string("P6\n# borelog config_hash=x seed=1\n22 10\n255\n").size() + 22 * 10 * 3);
  EXPECT_EQ(plot::ramp(0.0), (plot::Rgb{68, 1, 84}));
  EXPECT_EQ(plot::ramp(1.0), (plot::Rgb{253, 231, 37}));
}
