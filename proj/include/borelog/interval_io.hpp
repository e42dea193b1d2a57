#pragma once
// Well ingestion, benchmark interval extraction, image normalization and
// depth alignment of conventional logs onto the image grid.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "borelog/core.hpp"
#include "borelog/csv.hpp"
#include "borelog/stats.hpp"

namespace borelog {

/// Channel order used throughout the multimodal models.
inline const std::vector<std::string>& default_channels() {
  static const std::vector<std::string> c{"CAL", "GR", "DEN", "NEU", "DTC", "PE", "RES90"};
  return c;
}

struct WellDataset {
  std::string well_id;
  Field image;                      // rows x azimuth; NaN marks a missing cell
  std::vector<double> image_depths;  // meters, strictly increasing
  std::vector<std::string> channel_names;
  std::vector<double> log_depths;                 // strictly increasing
  std::vector<std::vector<double>> log_values;    // [channel][sample]; NaN = missing

  std::size_t channel_index(const std::string& name) const {
    auto it = std::find(channel_names.begin(), channel_names.end(), name);
    if (it == channel_names.end()) throw Error("well " + well_id + " has no log channel '" + name + "'");
    return static_cast<std::size_t>(it - channel_names.begin());
  }
};

enum class IntervalKind { kBroad, kHeavy };

inline std::string to_string(IntervalKind k) { return k == IntervalKind::kBroad ? "broad" : "heavy"; }

inline IntervalKind parse_interval_kind(std::string_view s) {
  if (s == "broad") return IntervalKind::kBroad;
  if (s == "heavy") return IntervalKind::kHeavy;
  throw Error("unknown interval kind '" + std::string(s) + "'");
}

/// Rows [start_row, end_row) of one well.
struct IntervalSpec {
  std::string well_id;
  std::size_t start_row = 0;
  std::size_t end_row = 0;
  IntervalKind kind = IntervalKind::kBroad;

  std::size_t height() const { return end_row - start_row; }
  std::string id() const { return well_id + "_" + std::to_string(start_row) + "_" + std::to_string(end_row); }
  friend bool operator==(const IntervalSpec&, const IntervalSpec&) = default;
};

struct HeavyInterval {
  std::string well_id;
  std::size_t start_row = 0;
  std::size_t end_row = 0;
};

struct SliceConfig {
  std::size_t slice_height = 600;
  std::size_t broad_step = 12000;
  std::size_t min_valid_height = 300;
  std::uint64_t seed = 42;
  std::vector<HeavyInterval> heavy;

  void validate() const {
    if (slice_height == 0 || broad_step == 0 || min_valid_height == 0)
      throw Error("slice config extents must be positive");
    for (const auto& h : heavy)
      if (h.end_row <= h.start_row) throw Error("heavy interval for " + h.well_id + " has an empty row range");
  }
};

struct NormStats {
  double mean = 0.0;
  double stddev = 1.0;
};

struct IntervalBundle {
  IntervalSpec spec;
  Field image_db;                  // H x W, missing cells already filled
  std::vector<double> depth_grid;  // H physical depths
  Field logs_aligned;              // H x C, values in [0, 1]
  std::vector<std::string> channels;
  NormStats norm;

  std::size_t height() const { return image_db.rows; }
  std::size_t width() const { return image_db.cols; }
};

// ---------------------------------------------------------------------------
// Loading.

namespace detail {

inline void require_strictly_increasing(const std::vector<double>& v, const std::string& what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) throw Error(what + ": missing depth at line " + std::to_string(i + 1));
    if (i > 0 && !(v[i] > v[i - 1]))
      throw Error(what + ": depth not strictly increasing at line " + std::to_string(i + 1) + " (" +
                  csv::format_number(v[i - 1]) + " then " + csv::format_number(v[i]) + ")");
  }
}

inline std::string upper(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

/// Reads `image.csv`, `depth.csv` and `logs.csv` from a well directory.
inline WellDataset load_well(const std::filesystem::path& dir) {
  WellDataset ds;
  ds.well_id = dir.filename().string();
  if (ds.well_id.empty()) ds.well_id = dir.parent_path().filename().string();

  ds.image = csv::read_matrix(dir / "image.csv");
  if (ds.image.rows == 0) throw Error((dir / "image.csv").string() + ": empty image");

  const Field depth = csv::read_matrix(dir / "depth.csv");
  if (depth.cols != 1) throw Error((dir / "depth.csv").string() + ": expected one value per line");
  ds.image_depths = depth.data;
  if (ds.image_depths.size() != ds.image.rows)
    throw Error((dir / "depth.csv").string() + ": " + std::to_string(ds.image_depths.size()) + " depths for " +
                std::to_string(ds.image.rows) + " image rows");
  detail::require_strictly_increasing(ds.image_depths, (dir / "depth.csv").string());

  const auto logs_path = dir / "logs.csv";
  const csv::Table logs = csv::read_table(logs_path);
  if (logs.rows.empty() || logs.rows.front().size() < 2) throw Error(logs_path.string() + ": no log channels");
  const auto& header = logs.rows.front();
  if (detail::upper(header.front()) != "DEPTH") throw Error(logs_path.string() + ":1: first column must be 'depth'");
  std::set<std::string> known(default_channels().begin(), default_channels().end());
  for (std::size_t c = 1; c < header.size(); ++c) {
    const std::string name = detail::upper(header[c]);
    if (!known.count(name)) throw Error(logs_path.string() + ":1: unknown channel name '" + header[c] + "'");
    if (std::find(ds.channel_names.begin(), ds.channel_names.end(), name) != ds.channel_names.end())
      throw Error(logs_path.string() + ":1: duplicate channel '" + name + "'");
    ds.channel_names.push_back(name);
  }
  ds.log_values.assign(ds.channel_names.size(), {});
  for (std::size_t r = 1; r < logs.rows.size(); ++r) {
    const auto& row = logs.rows[r];
    const std::string ctx = logs_path.string() + ":" + std::to_string(r + 1);
    if (row.size() != header.size())
      throw Error(ctx + ": expected " + std::to_string(header.size()) + " columns, found " + std::to_string(row.size()));
    ds.log_depths.push_back(csv::parse_cell(row[0], ctx));
    for (std::size_t c = 1; c < row.size(); ++c) ds.log_values[c - 1].push_back(csv::parse_cell(row[c], ctx));
  }
  if (ds.log_depths.empty()) throw Error(logs_path.string() + ": no log samples");
  detail::require_strictly_increasing(ds.log_depths, logs_path.string());
  return ds;
}

// ---------------------------------------------------------------------------
// Interval planning.

/// Broad slices start at multiples of the step; a trailing slice shorter than
/// the nominal height is kept when it reaches the minimum valid height. Heavy
/// intervals for this well follow in configuration order.
inline std::vector<IntervalSpec> plan_intervals(const std::string& well_id, std::size_t rows, const SliceConfig& cfg) {
  cfg.validate();
  std::vector<IntervalSpec> out;
  for (std::size_t start = 0; start < rows; start += cfg.broad_step) {
    const std::size_t height = std::min(cfg.slice_height, rows - start);
    if (height >= cfg.min_valid_height) out.push_back({well_id, start, start + height, IntervalKind::kBroad});
  }
  for (const auto& h : cfg.heavy) {
    if (h.well_id != well_id) continue;
    if (h.end_row > rows)
      throw Error("heavy interval " + well_id + " rows " + std::to_string(h.start_row) + "-" + std::to_string(h.end_row) +
                  " outside dataset of " + std::to_string(rows) + " rows");
    out.push_back({well_id, h.start_row, h.end_row, IntervalKind::kHeavy});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image preprocessing.

/// Replaces missing pixels with the median of the present ones.
inline Field fill_missing_image(Field image) {
  const auto present = stats::finite_values(image.data);
  if (present.empty()) throw Error("image interval has no valid pixels");
  if (present.size() == image.size()) return image;
  const double med = stats::median(present);
  for (double& v : image.data)
    if (!std::isfinite(v)) v = med;
  return image;
}

inline NormStats image_stats(const Field& image_db) {
  NormStats s{stats::mean(image_db.data), stats::stddev(image_db.data)};
  if (!(s.stddev > 0.0)) throw Error("degenerate interval: image standard deviation is zero");
  return s;
}

/// X01 = (1 + tanh(((X - mean) / sd) / 3)) / 2.
inline Field normalize_image(const Field& image_db, const NormStats& s) {
  if (!(s.stddev > 0.0)) throw Error("degenerate interval: image standard deviation is zero");
  Field out(image_db.rows, image_db.cols);
  for (std::size_t i = 0; i < image_db.size(); ++i) {
    const double z = (image_db.data[i] - s.mean) / s.stddev;
    out.data[i] = 0.5 * (1.0 + std::tanh(z / 3.0));
  }
  return out;
}

inline Field normalize_image(const IntervalBundle& b) { return normalize_image(b.image_db, b.norm); }

inline constexpr double kSaturationEps = 1e-6;

struct Denormalized {
  Field image_db;
  std::size_t clamped = 0;  // values moved into (eps, 1 - eps) before inversion
};

/// Inverse of normalize_image: 3 sd atanh(2 X01 - 1) + mean.
inline Denormalized denormalize_image(const Field& x01, const NormStats& s) {
  Denormalized out{Field(x01.rows, x01.cols), 0};
  for (std::size_t i = 0; i < x01.size(); ++i) {
    double v = x01.data[i];
    if (v <= kSaturationEps || v >= 1.0 - kSaturationEps) {
      v = std::clamp(v, kSaturationEps, 1.0 - kSaturationEps);
      ++out.clamped;
    }
    out.image_db.data[i] = 3.0 * s.stddev * std::atanh(2.0 * v - 1.0) + s.mean;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Log alignment.

namespace detail {

inline double interpolate(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
  if (x <= xs.front()) return ys.front();
  if (x >= xs.back()) return ys.back();
  const auto hi = static_cast<std::size_t>(std::upper_bound(xs.begin(), xs.end(), x) - xs.begin());
  const std::size_t lo = hi - 1;
  const double t = (x - xs[lo]) / (xs[hi] - xs[lo]);
  return ys[lo] + t * (ys[hi] - ys[lo]);
}

}  // namespace detail

/// Aligned H x C log matrix on the image depth grid. Per channel, using the
/// log samples covering the interval plus one bracketing sample on each side:
/// median-fill missing samples, clip to [p1, p99], rescale that range to
/// [0, 1] (a degenerate range maps to 0.5), then interpolate linearly with
/// constant extension beyond the covered depths.
inline Field align_logs(const WellDataset& ds, const std::vector<double>& depth_grid, const std::vector<std::string>& channels) {
  if (depth_grid.empty()) throw Error("align_logs: empty depth grid");
  const double top = depth_grid.front(), bottom = depth_grid.back();
  const auto& d = ds.log_depths;
  auto first = static_cast<std::size_t>(std::lower_bound(d.begin(), d.end(), top) - d.begin());
  auto last = static_cast<std::size_t>(std::upper_bound(d.begin(), d.end(), bottom) - d.begin());  // exclusive
  if (first > 0) --first;
  if (last < d.size()) ++last;

  Field out(depth_grid.size(), channels.size());
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto& series = ds.log_values[ds.channel_index(channels[c])];
    std::vector<double> xs(d.begin() + static_cast<long>(first), d.begin() + static_cast<long>(last));
    std::vector<double> ys(series.begin() + static_cast<long>(first), series.begin() + static_cast<long>(last));
    const auto valid = stats::finite_values(ys);
    if (valid.size() < 2)
      throw Error("align_logs: channel " + channels[c] + " has fewer than 2 valid samples in interval " +
                  csv::format_number(top) + "-" + csv::format_number(bottom));
    const double fill = stats::median(valid);
    for (double& y : ys)
      if (!std::isfinite(y)) y = fill;
    const double p1 = stats::percentile(ys, 1.0), p99 = stats::percentile(ys, 99.0);
    for (double& y : ys) y = (p99 > p1) ? (std::clamp(y, p1, p99) - p1) / (p99 - p1) : 0.5;
    for (std::size_t h = 0; h < depth_grid.size(); ++h) out(h, c) = detail::interpolate(xs, ys, depth_grid[h]);
  }
  return out;
}

/// Channel-major [C, H, W] copy of the aligned logs, constant across azimuth.
inline Tensor replicate_logs(const Field& aligned, std::size_t width) {
  const std::size_t H = aligned.rows, C = aligned.cols;
  Tensor out({C, H, width});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h) std::fill_n(out.data() + (c * H + h) * width, width, aligned(h, c));
  return out;
}

// ---------------------------------------------------------------------------
// Extraction.

struct ExtractionResult {
  std::vector<IntervalBundle> intervals;
  std::vector<std::pair<IntervalSpec, std::string>> rejected;
};

inline IntervalBundle build_bundle(const WellDataset& ds, const IntervalSpec& spec, const std::vector<std::string>& channels) {
  IntervalBundle b;
  b.spec = spec;
  b.channels = channels;
  const std::size_t W = ds.image.cols;
  Field img(spec.height(), W);
  std::copy_n(ds.image.data.begin() + static_cast<long>(spec.start_row * W), spec.height() * W, img.data.begin());
  b.image_db = fill_missing_image(std::move(img));
  b.depth_grid.assign(ds.image_depths.begin() + static_cast<long>(spec.start_row),
                      ds.image_depths.begin() + static_cast<long>(spec.end_row));
  b.norm = image_stats(b.image_db);
  b.logs_aligned = align_logs(ds, b.depth_grid, channels);
  return b;
}

/// Plans and materializes every interval of a well. Intervals below the
/// minimum valid height or with a degenerate image are rejected with a reason.
inline ExtractionResult extract_intervals(const WellDataset& ds, const SliceConfig& cfg,
                                          const std::vector<std::string>& channels = default_channels()) {
  ExtractionResult out;
  for (const auto& spec : plan_intervals(ds.well_id, ds.image.rows, cfg)) {
    if (spec.height() < cfg.min_valid_height) {
      out.rejected.emplace_back(spec, "height below minimum valid height");
      continue;
    }
    try {
      out.intervals.push_back(build_bundle(ds, spec, channels));
    } catch (const Error& e) {
      if (std::string_view(e.what()).find("degenerate") == std::string_view::npos &&
          std::string_view(e.what()).find("no valid pixels") == std::string_view::npos)
        throw;
      out.rejected.emplace_back(spec, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Interval manifest: well_id,start_row,end_row,kind.

inline void write_manifest(csv::Writer& w, const std::vector<IntervalSpec>& specs) {
  w.row({"well_id", "start_row", "end_row", "kind"});
  for (const auto& s : specs) w.row({s.well_id, std::to_string(s.start_row), std::to_string(s.end_row), to_string(s.kind)});
}

inline std::vector<IntervalSpec> read_manifest(const std::filesystem::path& path) {
  const csv::Table t = csv::read_table(path);
  if (t.rows.empty() || t.rows.front() != std::vector<std::string>{"well_id", "start_row", "end_row", "kind"})
    throw Error(path.string() + ": missing manifest header");
  std::vector<IntervalSpec> out;
  for (std::size_t r = 1; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string ctx = path.string() + ":" + std::to_string(r + 1);
    if (row.size() != 4) throw Error(ctx + ": expected 4 columns");
    const double a = csv::parse_cell(row[1], ctx), b = csv::parse_cell(row[2], ctx);
    if (!(a >= 0 && b > a) || a != std::floor(a) || b != std::floor(b)) throw Error(ctx + ": invalid row range");
    out.push_back({row[0], static_cast<std::size_t>(a), static_cast<std::size_t>(b), parse_interval_kind(row[3])});
  }
  return out;
}

}  // namespace borelog
