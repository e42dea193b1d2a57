#pragma once
// Stage commands over an output directory:
//
//   <out>/manifest.csv                  stage, artifact, config hash, seed, epoch override
//   <out>/intervals.csv                 accepted intervals (extract)
//   <out>/intervals/<id>/...            per-interval artifacts, one <stage>.done stamp per stage
//   <out>/evaluation.csv, confusion.csv evaluate
//   <out>/ablation.csv                  ablate
//   <out>/report/...                    report
//
// Every text artifact starts with "# borelog config_hash=<hex> seed=<n>". A
// stage skips work whose stamp matches the current configuration.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "borelog/baselines.hpp"
#include "borelog/config.hpp"
#include "borelog/csv.hpp"
#include "borelog/dca.hpp"
#include "borelog/denoiser.hpp"
#include "borelog/evaluation.hpp"
#include "borelog/interval_io.hpp"
#include "borelog/params.hpp"
#include "borelog/plot.hpp"
#include "borelog/pseudo.hpp"
#include "borelog/synth.hpp"

namespace borelog::pipeline {

namespace fs = std::filesystem;

struct Context {
  RunConfig cfg;
  fs::path out;
  bool force = false;
  std::ostream* log = &std::cerr;

  explicit Context(RunConfig c, bool force_ = false) : cfg(std::move(c)), out(cfg.out), force(force_) { cfg.validate(); }

  std::string header() const { return cfg.header(); }
  void note(const std::string& msg) const {
    if (log) *log << msg << std::endl;
  }
};

// ---------------------------------------------------------------------------
// Artifact helpers.

/// The "# ..." first line of a text artifact, without the marker.
inline std::optional<std::string> read_header(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line) || line.rfind("# ", 0) != 0) return std::nullopt;
  return line.substr(2);
}

inline std::string hash_of(const std::string& header) {
  const auto pos = header.find("config_hash=");
  if (pos == std::string::npos) return {};
  return header.substr(pos + 12, header.find(' ', pos) - pos - 12);
}

inline fs::path stamp_path(const fs::path& dir, const std::string& stage) { return dir / (stage + ".done"); }

inline bool is_done(const Context& ctx, const fs::path& dir, const std::string& stage) {
  return !ctx.force && read_header(stamp_path(dir, stage)) == ctx.header();
}

inline void stamp(const Context& ctx, const fs::path& dir, const std::string& stage) {
  csv::Writer w(stamp_path(dir, stage));
  w.comment(ctx.header());
}

/// Throws unless `stage` finished under the current configuration.
inline void require_stage(const Context& ctx, const fs::path& dir, const std::string& stage, const std::string& command) {
  const auto h = read_header(stamp_path(dir, stage));
  if (!h) throw Error(dir.string() + ": no " + stage + " artifacts; run " + command + " first");
  if (*h != ctx.header())
    throw Error(dir.string() + ": " + stage + " artifacts come from config hash " + hash_of(*h) + ", current is " + ctx.cfg.hash() +
                "; run " + command + " first");
}

template <typename T>
void write_grid(const Context& ctx, const fs::path& path, const Grid<T>& g) {
  csv::Writer w(path);
  w.comment(ctx.header());
  w.grid(g);
}

inline void write_loss(const Context& ctx, const fs::path& path, const nn::TrainingLog& log) {
  csv::Writer w(path);
  w.comment(ctx.header());
  w.row({"epoch", "loss"});
  for (std::size_t e = 0; e < log.losses.size(); ++e) w.row({std::to_string(e + 1), csv::format_number(log.losses[e])});
}

inline void save_model(const Context& ctx, ParameterStore params, const fs::path& path) {
  params.metadata()["config_hash"] = ctx.cfg.hash();
  params.metadata()["seed"] = std::to_string(ctx.cfg.seed);
  if (ctx.cfg.epochs_override) params.metadata()["epochs_override"] = ctx.cfg.epochs_override->str();
  save_checkpoint(params, path);
}

inline int stage_rank(const std::string& stage) {
  static const std::vector<std::string> order{"synth", "extract", "denoise", "pseudolabel", "train", "evaluate", "ablate", "report"};
  const auto it = std::find(order.begin(), order.end(), stage);
  return static_cast<int>(it - order.begin());
}

/// Replaces the manifest rows of the given artifacts, keeping the file sorted.
inline void record_artifacts(const Context& ctx, const std::string& stage, const std::vector<fs::path>& artifacts) {
  const fs::path path = ctx.out / "manifest.csv";
  std::map<std::pair<int, std::string>, std::vector<std::string>> rows;
  if (fs::exists(path)) {
    const csv::Table t = csv::read_table(path);
    for (std::size_t r = 1; r < t.rows.size(); ++r)
      if (t.rows[r].size() == 5) rows[{stage_rank(t.rows[r][0]), t.rows[r][1]}] = t.rows[r];
  }
  const std::string override_str = ctx.cfg.epochs_override ? ctx.cfg.epochs_override->str() : "";
  for (const auto& a : artifacts) {
    const std::string rel = fs::relative(a, ctx.out).generic_string();
    for (auto it = rows.begin(); it != rows.end();) it = it->first.second == rel ? rows.erase(it) : std::next(it);
    rows[{stage_rank(stage), rel}] = {stage, rel, ctx.cfg.hash(), std::to_string(ctx.cfg.seed), override_str};
  }
  csv::Writer w(path);
  w.comment("borelog manifest");
  w.row({"stage", "artifact", "config_hash", "seed", "epochs_override"});
  for (const auto& [_, row] : rows) w.row(row);
}

// ---------------------------------------------------------------------------
// Interval state.

inline fs::path interval_dir(const Context& ctx, const IntervalSpec& s) { return ctx.out / "intervals" / s.id(); }

inline std::vector<IntervalSpec> load_plan(const Context& ctx) {
  const fs::path path = ctx.out / "intervals.csv";
  const auto h = read_header(path);
  if (!h) throw Error(path.string() + " not found; run extract first");
  if (*h != ctx.header())
    throw Error(path.string() + " comes from config hash " + hash_of(*h) + ", current is " + ctx.cfg.hash() + "; run extract first");
  return read_manifest(path);
}

inline IntervalBundle load_bundle(const Context& ctx, const IntervalSpec& spec) {
  const fs::path dir = interval_dir(ctx, spec);
  require_stage(ctx, dir, "extract", "extract");
  IntervalBundle b;
  b.spec = spec;
  b.image_db = csv::read_matrix(dir / "image_db.csv");
  b.depth_grid = csv::read_matrix(dir / "depth.csv").data;
  const csv::Table logs = csv::read_table(dir / "logs.csv");
  if (logs.rows.empty()) throw Error((dir / "logs.csv").string() + ": missing header");
  b.channels = logs.rows.front();
  b.logs_aligned = Field(logs.rows.size() - 1, b.channels.size());
  for (std::size_t r = 1; r < logs.rows.size(); ++r)
    for (std::size_t c = 0; c < b.channels.size(); ++c)
      b.logs_aligned(r - 1, c) = csv::parse_cell(logs.rows[r].at(c), (dir / "logs.csv").string());
  b.norm = image_stats(b.image_db);
  return b;
}

struct IntervalState {
  IntervalBundle bundle;
  Field x01_hat;
  Field image_db_hat;
  PseudoSupervision ps;  // pseudo, confidence, weights and ae_otsu are loaded
  LabelMap raw_otsu;
  std::optional<LabelMap> truth;
};

inline IntervalState load_state(const Context& ctx, const IntervalSpec& spec) {
  const fs::path dir = interval_dir(ctx, spec);
  IntervalState s;
  s.bundle = load_bundle(ctx, spec);
  require_stage(ctx, dir, "denoise", "denoise");
  require_stage(ctx, dir, "pseudolabel", "pseudolabel");
  s.x01_hat = csv::read_matrix(dir / "x01_hat.csv");
  s.image_db_hat = csv::read_matrix(dir / "image_db_hat.csv");
  s.ps.pseudo = csv::read_labels(dir / "pseudo.csv");
  s.ps.ae_otsu = csv::read_labels(dir / "ae_otsu.csv");
  s.ps.confidence = csv::read_matrix(dir / "confidence.csv");
  s.ps.weights = csv::read_matrix(dir / "weights.csv");
  s.raw_otsu = csv::read_labels(dir / "raw_otsu.csv");
  if (fs::exists(dir / "truth.csv")) s.truth = csv::read_labels(dir / "truth.csv");
  return s;
}

inline DcaInputs dca_inputs(const IntervalState& s) {
  return make_dca_inputs(s.x01_hat, s.bundle.logs_aligned, s.ps, s.bundle.spec.kind);
}

// ---------------------------------------------------------------------------
// Stages.

inline std::vector<std::string> resolve_wells(const Context& ctx) {
  if (ctx.cfg.data_root.empty()) throw Error("no data root: set data_root in the config or BORELOG_DATA_ROOT");
  const fs::path root(ctx.cfg.data_root);
  if (!fs::is_directory(root)) throw Error("data root " + root.string() + " is not a directory");
  if (!ctx.cfg.wells.empty()) return ctx.cfg.wells;
  std::vector<std::string> wells;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "image.csv")) wells.push_back(e.path().filename().string());
  std::sort(wells.begin(), wells.end());
  if (wells.empty()) throw Error("no well directories with image.csv under " + root.string());
  return wells;
}

inline void cmd_extract(const Context& ctx) {
  fs::create_directories(ctx.out);
  std::vector<IntervalSpec> accepted;
  std::vector<std::pair<IntervalSpec, std::string>> rejected;
  std::vector<fs::path> artifacts;
  for (const auto& well : resolve_wells(ctx)) {
    const fs::path wdir = fs::path(ctx.cfg.data_root) / well;
    const WellDataset ds = load_well(wdir);
    ExtractionResult res = extract_intervals(ds, ctx.cfg.slice, ctx.cfg.channels);
    const bool has_truth = fs::exists(wdir / "ground_truth.csv");
    const LabelMap truth = has_truth ? csv::read_labels(wdir / "ground_truth.csv") : LabelMap{};
    if (has_truth && (truth.rows != ds.image.rows || truth.cols != ds.image.cols))
      throw Error((wdir / "ground_truth.csv").string() + ": shape differs from image.csv");
    for (const auto& b : res.intervals) {
      accepted.push_back(b.spec);
      const fs::path dir = interval_dir(ctx, b.spec);
      if (is_done(ctx, dir, "extract")) continue;
      fs::create_directories(dir);
      write_grid(ctx, dir / "image_db.csv", b.image_db);
      {
        csv::Writer w(dir / "depth.csv");
        w.comment(ctx.header());
        for (double d : b.depth_grid) w.row({csv::format_number(d)});
      }
      {
        csv::Writer w(dir / "logs.csv");
        w.comment(ctx.header());
        w.row(b.channels);
        for (std::size_t r = 0; r < b.logs_aligned.rows; ++r) {
          std::vector<std::string> row;
          for (std::size_t c = 0; c < b.logs_aligned.cols; ++c) row.push_back(csv::format_number(b.logs_aligned(r, c)));
          w.row(row);
        }
      }
      if (has_truth) {
        LabelMap t(b.spec.height(), truth.cols);
        std::copy_n(truth.data.begin() + static_cast<long>(b.spec.start_row * truth.cols), t.size(), t.data.begin());
        write_grid(ctx, dir / "truth.csv", t);
      }
      stamp(ctx, dir, "extract");
      ctx.note("[extract] " + b.spec.id() + " " + std::to_string(b.height()) + "x" + std::to_string(b.width()));
    }
    for (auto& r : res.rejected) {
      ctx.note("[extract] rejected " + r.first.id() + ": " + r.second);
      rejected.push_back(std::move(r));
    }
  }
  if (accepted.empty()) throw Error("extract: no valid intervals");
  {
    csv::Writer w(ctx.out / "intervals.csv");
    w.comment(ctx.header());
    write_manifest(w, accepted);
  }
  {
    csv::Writer w(ctx.out / "rejected.csv");
    w.comment(ctx.header());
    w.row({"interval", "reason"});
    for (const auto& [spec, reason] : rejected) {
      std::string r = reason;
      std::replace(r.begin(), r.end(), ',', ';');
      w.row({spec.id(), r});
    }
  }
  artifacts = {ctx.out / "intervals.csv", ctx.out / "rejected.csv"};
  for (const auto& s : accepted) artifacts.push_back(interval_dir(ctx, s));
  record_artifacts(ctx, "extract", artifacts);
}

inline AeConfig ae_config(const Context& ctx) {
  AeConfig ae;
  ae.epochs_broad = ctx.cfg.ae_epochs(ae.epochs_broad);
  ae.epochs_heavy = ctx.cfg.ae_epochs(ae.epochs_heavy);
  return ae;
}

inline void cmd_denoise(const Context& ctx) {
  std::vector<fs::path> artifacts;
  for (const auto& spec : load_plan(ctx)) {
    const fs::path dir = interval_dir(ctx, spec);
    const IntervalBundle b = load_bundle(ctx, spec);
    artifacts.push_back(dir / "ae.ckpt");
    if (is_done(ctx, dir, "denoise")) continue;
    const AeConfig ae = ae_config(ctx);
    const AeModel model = train_interval_ae(b, ctx.cfg.seed, ae);
    const DenoiseOutput d = denoise_interval(b, model.params, ae);
    save_model(ctx, model.params, dir / "ae.ckpt");
    write_grid(ctx, dir / "x01_hat.csv", d.x01_hat);
    write_grid(ctx, dir / "image_db_hat.csv", d.image_db_hat);
    write_grid(ctx, dir / "error_log.csv", d.e_log);
    write_loss(ctx, dir / "ae_loss.csv", model.log);
    stamp(ctx, dir, "denoise");
    ctx.note("[denoise] " + spec.id() + " " + std::to_string(model.log.losses.size()) + " epochs, loss " +
             csv::format_number(model.log.final_loss()) + ", " + std::to_string(d.clamped) + " clamped pixels");
  }
  record_artifacts(ctx, "denoise", artifacts);
}

inline void write_thresholds(csv::Writer& w, const std::string& name, const ThresholdSet& t) {
  w.row({name, csv::format_number(t.tau[0]), csv::format_number(t.tau[1]), csv::format_number(t.tau[2]), t.degenerate ? "1" : "0"});
}

inline void cmd_pseudolabel(const Context& ctx) {
  std::vector<fs::path> artifacts;
  for (const auto& spec : load_plan(ctx)) {
    const fs::path dir = interval_dir(ctx, spec);
    require_stage(ctx, dir, "denoise", "denoise");
    artifacts.push_back(dir / "pseudo.csv");
    if (is_done(ctx, dir, "pseudolabel")) continue;
    const IntervalBundle b = load_bundle(ctx, spec);
    const Field hat = csv::read_matrix(dir / "image_db_hat.csv");
    const PseudoSupervision ps = build_pseudo_supervision(hat, {}, ctx.cfg.weighting);
    const ThresholdSegmentation raw = raw_otsu_baseline(b);
    write_grid(ctx, dir / "pseudo.csv", ps.pseudo);
    write_grid(ctx, dir / "ae_otsu.csv", ps.ae_otsu);
    write_grid(ctx, dir / "raw_otsu.csv", raw.labels);
    write_grid(ctx, dir / "confidence.csv", ps.confidence);
    write_grid(ctx, dir / "weights.csv", ps.weights);
    {
      csv::Writer w(dir / "thresholds.csv");
      w.comment(ctx.header());
      w.row({"source", "tau1", "tau2", "tau3", "degenerate"});
      write_thresholds(w, "raw", raw.thresholds);
      write_thresholds(w, "denoised", ps.global);
    }
    stamp(ctx, dir, "pseudolabel");
    ctx.note("[pseudolabel] " + spec.id() + " " + std::to_string(ps.votes.tiles) + " tiles (" +
             std::to_string(ps.votes.degenerate_tiles) + " degenerate)");
  }
  record_artifacts(ctx, "pseudolabel", artifacts);
}

struct TrainedMethod {
  LabelMap prediction;
  std::optional<ParameterStore> params;
  nn::TrainingLog log;
};

inline TrainedMethod train_method(const Context& ctx, const IntervalState& s, const std::string& method) {
  const IntervalKind kind = s.bundle.spec.kind;
  const std::uint64_t seed = ctx.cfg.seed;
  if (method == "raw_otsu") return {s.raw_otsu, std::nullopt, {}};
  if (method == "ae_otsu") return {s.ps.ae_otsu, std::nullopt, {}};
  if (method == "ae_kmeans") {
    const ParameterStore ae = load_checkpoint(interval_dir(ctx, s.bundle.spec) / "ae.ckpt");
    return {ae_kmeans_baseline(denoise_interval(s.bundle, ae), s.bundle, seed), std::nullopt, {}};
  }
  if (method == "image_only" || method == "concat") {
    RefinerSpec spec;
    const bool multimodal = method == "concat";
    spec.in_channels = multimodal ? 1 + s.bundle.logs_aligned.cols : 1;
    const Tensor input = refiner_input(s.x01_hat, multimodal ? &s.bundle.logs_aligned : nullptr);
    RefinerResult r = train_refiner(input, s.ps.pseudo, ctx.cfg.refiner_epochs(spec.epochs_for(kind)), seed, spec);
    return {std::move(r.prediction), std::move(r.params), std::move(r.log)};
  }
  const DcaConfig cfg = dca_config(method);
  DcaResult r = train_dca(dca_inputs(s), cfg, seed, ctx.cfg.refiner_epochs(cfg.epochs_for(kind)));
  return {std::move(r.prediction), std::move(r.params), std::move(r.log)};
}

inline void cmd_train(const Context& ctx) {
  std::vector<fs::path> artifacts;
  for (const auto& spec : load_plan(ctx)) {
    const fs::path dir = interval_dir(ctx, spec);
    std::optional<IntervalState> state;
    for (const auto& method : ctx.cfg.methods) {
      artifacts.push_back(dir / ("pred_" + method + ".csv"));
      if (is_done(ctx, dir, "train_" + method)) continue;
      if (!state) state = load_state(ctx, spec);
      const TrainedMethod t = train_method(ctx, *state, method);
      write_grid(ctx, dir / ("pred_" + method + ".csv"), t.prediction);
      if (t.params) {
        save_model(ctx, *t.params, dir / ("model_" + method + ".ckpt"));
        write_loss(ctx, dir / ("loss_" + method + ".csv"), t.log);
      }
      stamp(ctx, dir, "train_" + method);
      ctx.note("[train] " + spec.id() + " " + method +
               (t.params ? " " + std::to_string(t.log.losses.size()) + " epochs, loss " + csv::format_number(t.log.final_loss()) : ""));
    }
  }
  record_artifacts(ctx, "train", artifacts);
}

inline bool is_threshold_method(const std::string& m) { return m == "raw_otsu" || m == "ae_otsu"; }

inline LabelMap load_prediction(const Context& ctx, const IntervalSpec& spec, const std::string& method) {
  const fs::path dir = interval_dir(ctx, spec);
  require_stage(ctx, dir, "train_" + method, "train");
  return csv::read_labels(dir / ("pred_" + method + ".csv"));
}

inline void add_metric(csv::Writer& w, const MethodEvaluation& e, const std::string& metric, const std::string& value) {
  w.row({e.interval, e.well, to_string(e.kind), e.method, metric, value});
}

inline void cmd_evaluate(const Context& ctx) {
  const auto plan = load_plan(ctx);
  csv::Writer w(ctx.out / "evaluation.csv");
  w.comment(ctx.header());
  w.row({"interval", "well", "kind", "method", "metric", "value"});
  csv::Writer cw(ctx.out / "confusion.csv");
  cw.comment(ctx.header());
  cw.row({"interval", "method", "row", "c0", "c1", "c2", "c3"});
  std::vector<ScoreRecord> scores;
  for (const auto& spec : plan) {
    const IntervalState s = load_state(ctx, spec);
    std::map<std::string, LabelMap> preds;
    for (const auto& m : ctx.cfg.methods) preds[m] = load_prediction(ctx, spec, m);
    std::optional<LabelMap> concat;
    if (preds.count("concat")) concat = canonical_reorder(preds.at("concat"), s.bundle.image_db).labels;
    else if (fs::exists(stamp_path(interval_dir(ctx, spec), "train_concat"))) concat = canonical_reorder(load_prediction(ctx, spec, "concat"), s.bundle.image_db).labels;
    EvaluationContext ec{&s.bundle.image_db, &s.ps.pseudo, &s.ps.ae_otsu, &s.raw_otsu, concat ? &*concat : nullptr, &s.ps.confidence};
    for (const auto& m : ctx.cfg.methods) {
      const MethodEvaluation e = evaluate_method(spec, m, preds.at(m), ec, !is_threshold_method(m));
      scores.push_back({e.well, e.interval, e.kind, e.method, e.acc_pseudo});
      add_metric(w, e, "acc_pseudo", csv::format_number(e.acc_pseudo));
      add_metric(w, e, "acc_ae_otsu", csv::format_number(e.acc_ae_otsu));
      add_metric(w, e, "acc_raw_otsu", csv::format_number(e.acc_raw_otsu));
      if (s.truth) add_metric(w, e, "acc_truth", csv::format_number(perm_agreement(preds.at(m), *s.truth).acc));
      add_metric(w, e, "diag_mass", csv::format_number(e.masses.diag));
      add_metric(w, e, "off_diag_mass", csv::format_number(e.masses.off_diag));
      for (std::size_t k = 0; k < kClasses; ++k) add_metric(w, e, "class_frac_" + std::to_string(k), csv::format_number(e.fractions[k]));
      if (e.change) {
        add_metric(w, e, "changed_frac", csv::format_number(e.change->changed_frac));
        add_metric(w, e, "low_conf_change_frac",
                   e.change->low_conf_change_frac ? csv::format_number(*e.change->low_conf_change_frac) : "");
      }
      add_metric(w, e, "boundary_len", std::to_string(e.boundary));
      add_metric(w, e, "total_components", std::to_string(e.components));
      for (std::size_t i = 0; i < kClasses; ++i) {
        std::vector<std::string> row{e.interval, e.method, std::to_string(i)};
        for (std::size_t j = 0; j < kClasses; ++j) row.push_back(std::to_string(e.aligned[i][j]));
        cw.row(row);
      }
    }
    ctx.note("[evaluate] " + spec.id());
  }
  const CrossWellSummary sum = aggregate_wells(scores);
  nlohmann::json j;
  j["config_hash"] = ctx.cfg.hash();
  j["seed"] = ctx.cfg.seed;
  for (const auto& m : sum.methods)
    j["methods"][m.method] = {{"mean_over_wells", m.over_wells.mean}, {"std_over_wells", m.over_wells.std},
                              {"min_well", m.over_wells.min},         {"max_well", m.over_wells.max},
                              {"range", m.over_wells.range()},        {"wells", m.wells},
                              {"intervals", m.intervals}};
  std::ofstream(ctx.out / "evaluation_summary.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
  record_artifacts(ctx, "evaluate", {ctx.out / "evaluation.csv", ctx.out / "confusion.csv", ctx.out / "evaluation_summary.json"});
}

/// Ablation targets: configured ids, else heavy intervals, else every interval.
inline std::vector<IntervalSpec> ablation_targets(const Context& ctx, const std::vector<IntervalSpec>& plan) {
  std::vector<IntervalSpec> out;
  if (!ctx.cfg.ablation_intervals.empty()) {
    for (const auto& id : ctx.cfg.ablation_intervals) {
      const auto it = std::find_if(plan.begin(), plan.end(), [&](const IntervalSpec& s) { return s.id() == id; });
      if (it == plan.end()) throw Error("ablation interval '" + id + "' is not in intervals.csv");
      out.push_back(*it);
    }
    return out;
  }
  for (const auto& s : plan)
    if (s.kind == IntervalKind::kHeavy) out.push_back(s);
  return out.empty() ? plan : out;
}

inline void cmd_ablate(const Context& ctx) {
  const auto targets = ablation_targets(ctx, load_plan(ctx));
  csv::Writer w(ctx.out / "ablation.csv");
  w.comment(ctx.header());
  w.row({"interval", "well", "kind", "variant", "acc_pseudo", "final_loss"});
  for (const auto& spec : targets) {
    const fs::path dir = interval_dir(ctx, spec) / "ablation";
    fs::create_directories(dir);
    std::optional<IntervalState> state;
    for (const auto& variant : ablation_variant_names()) {
      if (!is_done(ctx, dir, variant)) {
        if (!state) state = load_state(ctx, spec);
        const TrainedMethod t = train_method(ctx, *state, variant);
        write_grid(ctx, dir / ("pred_" + variant + ".csv"), t.prediction);
        save_model(ctx, *t.params, dir / ("model_" + variant + ".ckpt"));
        write_loss(ctx, dir / ("loss_" + variant + ".csv"), t.log);
        stamp(ctx, dir, variant);
        ctx.note("[ablate] " + spec.id() + " " + variant + " loss " + csv::format_number(t.log.final_loss()));
      }
      const IntervalBundle b = load_bundle(ctx, spec);
      const LabelMap pseudo = csv::read_labels(interval_dir(ctx, spec) / "pseudo.csv");
      const LabelMap pred = canonical_reorder(csv::read_labels(dir / ("pred_" + variant + ".csv")), b.image_db).labels;
      const csv::Table loss = csv::read_table(dir / ("loss_" + variant + ".csv"));
      w.row({spec.id(), spec.well_id, to_string(spec.kind), variant, csv::format_number(perm_agreement(pred, pseudo).acc),
             loss.rows.size() > 1 ? loss.rows.back().at(1) : ""});
    }
  }
  record_artifacts(ctx, "ablate", {ctx.out / "ablation.csv"});
}

// ---------------------------------------------------------------------------
// Report.

struct LongRow {
  std::string interval, well, kind, method, metric, value;
};

inline std::vector<LongRow> read_long(const fs::path& path) {
  const csv::Table t = csv::read_table(path);
  std::vector<LongRow> out;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != 6) throw Error(path.string() + ": row " + std::to_string(r + 1) + ": expected 6 columns");
    out.push_back({row[0], row[1], row[2], row[3], row[4], row[5]});
  }
  return out;
}

/// Ablation rows as long rows carrying the agreement score.
inline std::vector<LongRow> read_ablation(const fs::path& path) {
  std::vector<LongRow> out;
  for (auto r : read_long(path)) {
    r.value = r.metric;
    r.metric = "acc_pseudo";
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ScoreRecord> score_records(const std::vector<LongRow>& rows) {
  std::vector<ScoreRecord> out;
  for (const auto& r : rows)
    if (r.metric == "acc_pseudo") out.push_back({r.well, r.interval, parse_interval_kind(r.kind), r.method, csv::parse_cell(r.value, r.interval)});
  return out;
}

inline void report_plots(const Context& ctx, const fs::path& plots, const std::string& header, const std::vector<std::string>& intervals,
                         const std::vector<std::string>& methods) {
  std::vector<IntervalSpec> plan = read_manifest(ctx.out / "intervals.csv");
  for (const auto& id : intervals) {
    const auto it = std::find_if(plan.begin(), plan.end(), [&](const IntervalSpec& s) { return s.id() == id; });
    if (it == plan.end()) continue;
    const fs::path dir = interval_dir(ctx, *it), pdir = plots / id;
    fs::create_directories(pdir);
    const Field image = csv::read_matrix(dir / "image_db.csv");
    plot::write_ppm(plot::scalar_raster(image), pdir / "image_db.ppm", header);
    if (fs::exists(dir / "confidence.csv"))
      plot::write_ppm(plot::scalar_raster(csv::read_matrix(dir / "confidence.csv"), 0.0, 1.0), pdir / "confidence.ppm", header);
    if (fs::exists(dir / "pseudo.csv")) plot::write_ppm(plot::class_raster(csv::read_labels(dir / "pseudo.csv")), pdir / "pseudo.ppm", header);
    for (const auto& m : methods) {
      const fs::path pred = dir / ("pred_" + m + ".csv");
      if (!fs::exists(pred)) continue;
      LabelMap y = csv::read_labels(pred);
      if (!is_threshold_method(m)) y = canonical_reorder(y, image).labels;
      plot::write_ppm(plot::class_raster(y), pdir / ("seg_" + m + ".ppm"), header);
      const fs::path model = dir / ("model_" + m + ".ckpt");
      if (!fs::exists(model)) continue;
      const ParameterStore params = load_checkpoint(model);
      const auto v = params.metadata().find("variant");
      if (v == params.metadata().end()) continue;
      const DcaConfig dc = dca_config(v->second);
      if (!dc.fusion || !dc.gate) continue;
      const IntervalState s = [&] {
        IntervalState st;
        st.bundle.image_db = image;
        const csv::Table logs = csv::read_table(dir / "logs.csv");
        st.bundle.logs_aligned = Field(logs.rows.size() - 1, logs.rows.front().size());
        for (std::size_t r = 1; r < logs.rows.size(); ++r)
          for (std::size_t c = 0; c < logs.rows.front().size(); ++c) st.bundle.logs_aligned(r - 1, c) = csv::parse_cell(logs.rows[r][c], id);
        st.bundle.spec = *it;
        st.x01_hat = csv::read_matrix(dir / "x01_hat.csv");
        st.ps.pseudo = csv::read_labels(dir / "pseudo.csv");
        st.ps.confidence = csv::read_matrix(dir / "confidence.csv");
        st.ps.weights = csv::read_matrix(dir / "weights.csv");
        return st;
      }();
      const GateMaps g = gate_maps(params, dca_inputs(s));
      plot::write_ppm(plot::scalar_raster(g.gate, 0.0, 1.0), pdir / ("gate_" + m + ".ppm"), header);
      if (g.effective) plot::write_ppm(plot::scalar_raster(*g.effective, 0.0, 1.0), pdir / ("gate_effective_" + m + ".ppm"), header);
    }
  }
}

inline void cmd_report(const Context& ctx) {
  const fs::path eval_path = ctx.out / "evaluation.csv", abl_path = ctx.out / "ablation.csv";
  const auto eval_header = read_header(eval_path);
  const auto abl_header = read_header(abl_path);
  if (!eval_header && !abl_header) throw Error("no results in " + ctx.out.string() + "; run evaluate first");
  if (eval_header && abl_header && hash_of(*eval_header) != hash_of(*abl_header) && !ctx.force)
    throw Error("evaluation.csv (config hash " + hash_of(*eval_header) + ") and ablation.csv (config hash " + hash_of(*abl_header) +
                ") come from different configurations; pass --force to combine them");
  const std::string header = eval_header ? *eval_header : *abl_header;
  const fs::path rdir = ctx.out / "report";
  fs::create_directories(rdir);
  std::vector<fs::path> artifacts;
  nlohmann::json j;
  j["config_hash"] = hash_of(header);

  if (eval_header) {
    const auto rows = read_long(eval_path);
    const auto scores = score_records(rows);
    if (scores.empty()) throw Error(eval_path.string() + ": no agreement scores");
    const CrossWellSummary sum = aggregate_wells(scores);
    {
      csv::Writer w(rdir / "crosswell.csv");
      w.comment(header);
      w.row({"method", "mean_over_wells", "std_over_wells", "min_well", "max_well", "range", "wells", "intervals"});
      for (const auto& m : sum.methods) {
        const auto& o = m.over_wells;
        w.row({m.method, csv::format_number(o.mean), csv::format_number(o.std), csv::format_number(o.min), csv::format_number(o.max),
               csv::format_number(o.range()), std::to_string(m.wells), std::to_string(m.intervals)});
        j["crosswell"][m.method] = {{"mean", o.mean}, {"std", o.std}, {"min", o.min}, {"max", o.max}, {"range", o.range()}};
      }
    }
    {
      csv::Writer w(rdir / "pairwise_wins.csv");
      w.comment(header);
      w.row({"method_a", "method_b", "wins_a", "compared"});
      for (const auto& [pair, n] : sum.compared) {
        const auto it = sum.wins.find(pair);
        w.row({pair.first, pair.second, std::to_string(it == sum.wins.end() ? 0 : it->second), std::to_string(n)});
      }
    }
    artifacts.push_back(rdir / "crosswell.csv");
    artifacts.push_back(rdir / "pairwise_wins.csv");
    std::vector<std::string> intervals, methods;
    for (const auto& s : scores) {
      if (std::find(intervals.begin(), intervals.end(), s.interval) == intervals.end()) intervals.push_back(s.interval);
      if (std::find(methods.begin(), methods.end(), s.method) == methods.end()) methods.push_back(s.method);
    }
    report_plots(ctx, rdir / "plots", header, intervals, methods);
    artifacts.push_back(rdir / "plots");
  }

  if (abl_header) {
    const auto scores = score_records(read_ablation(abl_path));
    if (!scores.empty()) {
      csv::Writer w(rdir / "ablation_table.csv");
      w.comment(header);
      w.row({"variant", "overall_mean", "std", "broad_mean", "heavy_mean", "delta_vs_full", "full_wins", "full_win_rate"});
      for (const auto& r : ablation_summary(scores)) {
        const bool full = r.variant == "cgdca";
        w.row({r.variant, csv::format_number(r.overall_mean), csv::format_number(r.std),
               r.broad_mean ? csv::format_number(*r.broad_mean) : "", r.heavy_mean ? csv::format_number(*r.heavy_mean) : "",
               csv::format_number(r.delta_vs_full),
               full ? "" : std::to_string(r.full_wins) + "/" + std::to_string(r.comparisons),
               full || r.comparisons == 0 ? "" : csv::format_number(static_cast<double>(r.full_wins) / static_cast<double>(r.comparisons))});
        j["ablation"][r.variant] = {{"overall_mean", r.overall_mean}, {"delta_vs_full", r.delta_vs_full}};
      }
      artifacts.push_back(rdir / "ablation_table.csv");
    }
  }
  std::ofstream(rdir / "summary.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
  artifacts.push_back(rdir / "summary.json");
  record_artifacts(ctx, "report", artifacts);
  ctx.note("[report] wrote " + rdir.string());
}

/// Writes a synthetic well to <out>/<synth.well>.
inline fs::path cmd_synth(const Context& ctx) {
  const fs::path dir = ctx.out / ctx.cfg.synth_well;
  write_synthetic(generate_synthetic(ctx.cfg.synth), dir, ctx.header());
  ctx.note("[synth] " + to_string(ctx.cfg.synth.regime) + " well at " + dir.string());
  return dir;
}

inline void run_stage(const Context& ctx, const std::string& command) {
  if (command == "extract") cmd_extract(ctx);
  else if (command == "denoise") cmd_denoise(ctx);
  else if (command == "pseudolabel") cmd_pseudolabel(ctx);
  else if (command == "train") cmd_train(ctx);
  else if (command == "evaluate") cmd_evaluate(ctx);
  else if (command == "ablate") cmd_ablate(ctx);
  else if (command == "report") cmd_report(ctx);
  else if (command == "synth") cmd_synth(ctx);
  else throw Error("unknown command '" + command + "'");
}

}  // namespace borelog::pipeline
