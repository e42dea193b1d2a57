#pragma once
// Synthetic wells with a known class map: banded, columnar and
// localized-anomaly morphologies plus depth logs tied to the row-mean class
// signal at a chosen correlation.

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "borelog/csv.hpp"
#include "borelog/interval_io.hpp"
#include "borelog/stats.hpp"

namespace borelog {

enum class SynthRegime { kBanded, kColumnar, kLocalizedAnomaly };

inline std::string to_string(SynthRegime r) {
  switch (r) {
    case SynthRegime::kBanded: return "banded";
    case SynthRegime::kColumnar: return "columnar";
    case SynthRegime::kLocalizedAnomaly: return "localized-anomaly";
  }
  return "?";
}

inline SynthRegime parse_regime(const std::string& s) {
  if (s == "banded") return SynthRegime::kBanded;
  if (s == "columnar") return SynthRegime::kColumnar;
  if (s == "localized-anomaly" || s == "localized_anomaly") return SynthRegime::kLocalizedAnomaly;
  throw Error("unknown synthetic regime '" + s + "' (banded, columnar, localized-anomaly)");
}

struct SyntheticSpec {
  SynthRegime regime = SynthRegime::kBanded;
  std::size_t rows = 600;
  std::size_t cols = 144;
  std::size_t channels = 7;
  double base_db = -30.0;
  double contrast_db = 6.0;  // level spacing between adjacent classes
  double noise_db = 4.0;
  double log_correlation = 0.8;
  std::size_t bands = 0;     // banded regime: 0 draws random thicknesses, otherwise equal bands
  double dip_rows = 6.0;     // banded regime: sinusoid amplitude of dipping boundaries
  double depth_top = 1000.0;
  double depth_step = 0.0025;
  std::uint64_t seed = 42;

  void validate() const {
    if (rows < 8 || cols < 8) throw Error("synthetic image must be at least 8 x 8");
    if (channels == 0 || channels > default_channels().size())
      throw Error("synthetic channel count must be in [1, " + std::to_string(default_channels().size()) + "]");
    if (log_correlation < -1.0 || log_correlation > 1.0) throw Error("log correlation must lie in [-1, 1]");
    if (noise_db < 0.0 || contrast_db <= 0.0) throw Error("noise must be >= 0 and contrast > 0");
    if (depth_step <= 0.0) throw Error("depth step must be positive");
  }
};

struct SyntheticWell {
  LabelMap truth;
  Field image_db;
  std::vector<double> depths;
  std::vector<std::string> channel_names;
  Field logs;  // rows x channels, sampled at the image depths
};

namespace detail {

inline LabelMap banded_truth(const SyntheticSpec& s, Rng& rng) {
  // boundaries between layers, in rows, at column zero
  std::vector<double> tops{0.0};
  std::vector<int> cls;
  if (s.bands > 0) {
    for (std::size_t b = 0; b < s.bands; ++b) {
      tops.push_back(static_cast<double>((b + 1) * s.rows) / static_cast<double>(s.bands));
      cls.push_back(static_cast<int>(b % kNumClasses));
    }
  } else {
    std::vector<int> first{0, 1, 2, 3};
    for (std::size_t i = 3; i > 0; --i) std::swap(first[i], first[rng.below(i + 1)]);
    const double lo = static_cast<double>(s.rows) / 16.0, hi = static_cast<double>(s.rows) / 6.0;
    while (tops.back() < static_cast<double>(s.rows) + s.dip_rows) {
      tops.push_back(tops.back() + rng.uniform(lo, hi));
      int k = cls.size() < 4 ? first[cls.size()] : static_cast<int>(rng.below(4));
      if (!cls.empty() && k == cls.back()) k = (k + 1 + static_cast<int>(rng.below(3))) % 4;
      cls.push_back(k);
    }
  }
  const double phase = s.bands > 0 ? 0.0 : rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double dip = s.bands > 0 ? 0.0 : s.dip_rows;
  LabelMap y(s.rows, s.cols);
  for (std::size_t c = 0; c < s.cols; ++c) {
    const double shift = dip * std::sin(2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(s.cols) + phase);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const double d = static_cast<double>(r) + 0.5 + shift;
      std::size_t b = 0;
      while (b + 1 < cls.size() && d >= tops[b + 1]) ++b;
      y(r, c) = cls[b];
    }
  }
  return y;
}

inline LabelMap columnar_truth(const SyntheticSpec& s, Rng& rng) {
  LabelMap y(s.rows, s.cols);
  std::size_t r0 = 0;
  while (r0 < s.rows) {
    const std::size_t len = std::min(s.rows - r0, s.rows / 4 + rng.below(s.rows / 4 + 1));
    std::size_t c0 = 0;
    int prev = -1;
    while (c0 < s.cols) {
      const std::size_t width = std::min(s.cols - c0, s.cols / 10 + rng.below(s.cols / 6 + 1));
      int k = static_cast<int>(rng.below(4));
      if (k == prev) k = (k + 1) % 4;
      prev = k;
      for (std::size_t r = r0; r < r0 + len; ++r)
        for (std::size_t c = c0; c < c0 + width; ++c) y(r, c) = k;
      c0 += width;
    }
    r0 += len;
  }
  return y;
}

inline LabelMap anomaly_truth(const SyntheticSpec& s, Rng& rng) {
  LabelMap y(s.rows, s.cols);
  // two-class layered background
  std::size_t r0 = 0;
  int k = 1;
  while (r0 < s.rows) {
    const std::size_t len = std::min(s.rows - r0, s.rows / 8 + rng.below(s.rows / 5 + 1));
    for (std::size_t r = r0; r < r0 + len; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) y(r, c) = k;
    k = 3 - k;
    r0 += len;
  }
  // elliptical anomalies of the darkest and brightest classes, wrapping in azimuth
  const std::size_t count = std::max<std::size_t>(4, s.rows / 100);
  for (std::size_t a = 0; a < count; ++a) {
    const double cr = rng.uniform(0.0, static_cast<double>(s.rows)), cc = rng.uniform(0.0, static_cast<double>(s.cols));
    const double rr = rng.uniform(6.0, 24.0), rc = rng.uniform(5.0, static_cast<double>(s.cols) / 6.0);
    const int cls = a % 2 == 0 ? 0 : 3;
    for (std::size_t r = 0; r < s.rows; ++r)
      for (std::size_t c = 0; c < s.cols; ++c) {
        double dc = std::fabs(static_cast<double>(c) - cc);
        dc = std::min(dc, static_cast<double>(s.cols) - dc);
        const double dr = static_cast<double>(r) - cr;
        if ((dr * dr) / (rr * rr) + (dc * dc) / (rc * rc) <= 1.0) y(r, c) = cls;
      }
  }
  return y;
}

struct ChannelShape {
  double center;
  double scale;
  double sign;
  bool log10;
};

inline ChannelShape channel_shape(const std::string& name) {
  if (name == "CAL") return {8.5, 0.4, -1.0, false};
  if (name == "GR") return {75.0, 25.0, -1.0, false};
  if (name == "DEN") return {2.45, 0.12, 1.0, false};
  if (name == "NEU") return {0.20, 0.06, -1.0, false};
  if (name == "DTC") return {85.0, 12.0, -1.0, false};
  if (name == "PE") return {3.2, 0.8, 1.0, false};
  return {1.0, 0.4, 1.0, true};  // RES90, log10 ohm-m
}

}  // namespace detail

inline SyntheticWell generate_synthetic(const SyntheticSpec& s) {
  s.validate();
  SyntheticWell w;
  Rng layout = Rng::stream(s.seed, "synth.layout");
  switch (s.regime) {
    case SynthRegime::kBanded: w.truth = detail::banded_truth(s, layout); break;
    case SynthRegime::kColumnar: w.truth = detail::columnar_truth(s, layout); break;
    case SynthRegime::kLocalizedAnomaly: w.truth = detail::anomaly_truth(s, layout); break;
  }
  Rng noise = Rng::stream(s.seed, "synth.image");
  w.image_db = Field(s.rows, s.cols);
  for (std::size_t i = 0; i < w.truth.size(); ++i)
    w.image_db.data[i] = s.base_db + s.contrast_db * w.truth.data[i] + s.noise_db * noise.normal();

  w.depths.resize(s.rows);
  for (std::size_t r = 0; r < s.rows; ++r) w.depths[r] = s.depth_top + s.depth_step * static_cast<double>(r);

  // standardized row-mean class level
  std::vector<double> signal(s.rows, 0.0);
  for (std::size_t r = 0; r < s.rows; ++r) {
    for (std::size_t c = 0; c < s.cols; ++c) signal[r] += w.truth(r, c);
    signal[r] /= static_cast<double>(s.cols);
  }
  const double m = stats::mean(signal), sd = stats::stddev(signal);
  for (double& v : signal) v = sd > 0.0 ? (v - m) / sd : 0.0;

  const auto& names = default_channels();
  w.channel_names.assign(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(s.channels));
  w.logs = Field(s.rows, s.channels);
  const double rho = s.log_correlation, keep = std::sqrt(1.0 - rho * rho);
  for (std::size_t ch = 0; ch < s.channels; ++ch) {
    Rng lr = Rng::stream(s.seed, "synth.log." + w.channel_names[ch]);
    const auto shape = detail::channel_shape(w.channel_names[ch]);
    for (std::size_t r = 0; r < s.rows; ++r) {
      const double z = rho * signal[r] + keep * lr.normal();
      const double v = shape.center + shape.sign * shape.scale * z;
      w.logs(r, ch) = shape.log10 ? std::pow(10.0, v) : v;
    }
  }
  return w;
}

/// Writes image.csv, depth.csv, logs.csv and ground_truth.csv.
inline void write_synthetic(const SyntheticWell& w, const std::filesystem::path& dir, const std::string& header_comment = {}) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    csv::Writer out(dir / name);
    if (!header_comment.empty()) out.comment(header_comment);
    return out;
  };
  {
    auto out = open("image.csv");
    out.grid(w.image_db);
  }
  {
    auto out = open("depth.csv");
    for (double d : w.depths) out.row({csv::format_number(d)});
  }
  {
    auto out = open("logs.csv");
    std::vector<std::string> head{"depth"};
    head.insert(head.end(), w.channel_names.begin(), w.channel_names.end());
    out.row(head);
    for (std::size_t r = 0; r < w.depths.size(); ++r) {
      std::vector<std::string> row{csv::format_number(w.depths[r])};
      for (std::size_t c = 0; c < w.logs.cols; ++c) row.push_back(csv::format_number(w.logs(r, c)));
      out.row(row);
    }
  }
  {
    auto out = open("ground_truth.csv");
    out.grid(w.truth);
  }
}

}  // namespace borelog
