#pragma once
// Threshold-guided weak supervision: Multi-Otsu (global and tiled), vote
// aggregation, median-regularized pseudo-labels and confidence weighting.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "borelog/core.hpp"
#include "borelog/stats.hpp"

namespace borelog {

inline constexpr std::size_t kOtsuBins = 256;

struct ThresholdSet {
  std::array<double, kNumClasses - 1> tau{};
  bool degenerate = false;  // constant input: every value falls in class 0
};

/// Histogram of a value range. Bin j covers [edge(j), edge(j + 1)); the
/// maximum lands in the last bin.
struct Histogram {
  double lo = 0.0, hi = 0.0;
  std::vector<double> counts = std::vector<double>(kOtsuBins, 0.0);

  double width() const { return (hi - lo) / static_cast<double>(kOtsuBins); }
  double edge(std::size_t j) const { return j == kOtsuBins ? hi : lo + static_cast<double>(j) * width(); }
  double center(std::size_t j) const { return lo + (static_cast<double>(j) + 0.5) * width(); }

  /// Bin index consistent with edge(): the number of edges <= x, minus one.
  std::size_t bin(double x) const {
    std::size_t a = 0, b = kOtsuBins + 1;  // search over edges 0..kOtsuBins
    while (a < b) {
      const std::size_t m = (a + b) / 2;
      if (edge(m) <= x)
        a = m + 1;
      else
        b = m;
    }
    return std::min(a == 0 ? 0 : a - 1, kOtsuBins - 1);
  }
};

inline Histogram make_histogram(std::span<const double> values) {
  if (values.empty()) throw Error("multi_otsu: empty input");
  Histogram h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  for (double v : values) h.counts[h.bin(v)] += 1.0;
  return h;
}

/// Four-class Multi-Otsu over a 256-bin histogram. Maximizes the sum of
/// S_k^2 / P_k over classes of contiguous bins (Liao's lookup table); the
/// threshold of class k is the lower edge of its first bin. Ties keep the
/// lexicographically lowest bin triple.
inline ThresholdSet multi_otsu(std::span<const double> values) {
  const Histogram h = make_histogram(values);
  ThresholdSet out;
  if (!(h.hi > h.lo)) {
    out.degenerate = true;
    for (std::size_t m = 0; m < out.tau.size(); ++m) out.tau[m] = h.lo + static_cast<double>(m + 1);
    return out;
  }
  constexpr std::size_t L = kOtsuBins;
  std::vector<double> P(L + 1, 0.0), S(L + 1, 0.0);
  for (std::size_t j = 0; j < L; ++j) {
    P[j + 1] = P[j] + h.counts[j];
    S[j + 1] = S[j] + h.counts[j] * h.center(j);
  }
  // table[u * L + v]: contribution of bins [u, v] (inclusive).
  std::vector<double> table(L * L, 0.0);
  for (std::size_t u = 0; u < L; ++u)
    for (std::size_t v = u; v < L; ++v) {
      const double p = P[v + 1] - P[u], s = S[v + 1] - S[u];
      table[u * L + v] = p > 0.0 ? s * s / p : 0.0;
    }
  double best = -1.0;
  std::array<std::size_t, 3> arg{1, 2, 3};
  for (std::size_t t1 = 1; t1 + 2 < L; ++t1) {
    const double a = table[t1 - 1];
    for (std::size_t t2 = t1 + 1; t2 + 1 < L; ++t2) {
      const double ab = a + table[t1 * L + t2 - 1];
      for (std::size_t t3 = t2 + 1; t3 < L; ++t3) {
        const double obj = ab + table[t2 * L + t3 - 1] + table[t3 * L + L - 1];
        if (obj > best) {
          best = obj;
          arg = {t1, t2, t3};
        }
      }
    }
  }
  for (std::size_t m = 0; m < 3; ++m) out.tau[m] = h.edge(arg[m]);
  return out;
}

inline ThresholdSet multi_otsu(const Field& f) { return multi_otsu(std::span<const double>(f.data)); }

/// Class = number of thresholds <= x, so a value equal to a threshold goes up.
inline int quantize_value(double x, const ThresholdSet& t) {
  int k = 0;
  for (double tau : t.tau) k += (tau <= x) ? 1 : 0;
  return k;
}

inline LabelMap quantize(const Field& f, const ThresholdSet& t) {
  LabelMap out(f.rows, f.cols);
  for (std::size_t i = 0; i < f.size(); ++i) out.data[i] = quantize_value(f.data[i], t);
  return out;
}

// ---------------------------------------------------------------------------
// Local Multi-Otsu votes.

struct LocalOtsuConfig {
  std::size_t window_h = 128, window_w = 64;
  std::size_t step_h = 96, step_w = 48;  // window minus overlap (32 x 16)
};

/// Tile origins along one axis; an extent no larger than the window gives a
/// single tile covering it.
inline std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t window, std::size_t step) {
  if (step == 0) throw Error("tile step must be positive");
  std::vector<std::size_t> out{0};
  if (extent <= window) return out;
  while (out.back() + window < extent) out.push_back(std::min(out.back() + step, extent - window));
  return out;
}

struct VoteCounts {
  std::size_t rows = 0, cols = 0;
  std::vector<int> counts;  // [(r * cols + c) * K + k]
  std::size_t tiles = 0;
  std::size_t degenerate_tiles = 0;

  int operator()(std::size_t r, std::size_t c, std::size_t k) const { return counts[(r * cols + c) * kNumClasses + k]; }
  int total(std::size_t r, std::size_t c) const {
    int s = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) s += (*this)(r, c, k);
    return s;
  }
};

inline VoteCounts local_multi_otsu(const Field& image, const LocalOtsuConfig& cfg = {}) {
  VoteCounts v;
  v.rows = image.rows;
  v.cols = image.cols;
  v.counts.assign(image.size() * kNumClasses, 0);
  const std::size_t th = std::min(cfg.window_h, image.rows), tw = std::min(cfg.window_w, image.cols);
  std::vector<double> tile(th * tw);
  for (std::size_t r0 : tile_origins(image.rows, cfg.window_h, cfg.step_h))
    for (std::size_t c0 : tile_origins(image.cols, cfg.window_w, cfg.step_w)) {
      for (std::size_t r = 0; r < th; ++r) std::copy_n(&image(r0 + r, c0), tw, &tile[r * tw]);
      const ThresholdSet t = multi_otsu(tile);
      ++v.tiles;
      if (t.degenerate) ++v.degenerate_tiles;
      for (std::size_t r = 0; r < th; ++r)
        for (std::size_t c = 0; c < tw; ++c) {
          const int k = quantize_value(tile[r * tw + c], t);
          ++v.counts[((r0 + r) * v.cols + c0 + c) * kNumClasses + static_cast<std::size_t>(k)];
        }
    }
  return v;
}

/// Per-pixel winning class; ties go to the lower class.
inline LabelMap vote_argmax(const VoteCounts& v) {
  LabelMap out(v.rows, v.cols);
  for (std::size_t r = 0; r < v.rows; ++r)
    for (std::size_t c = 0; c < v.cols; ++c) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < kNumClasses; ++k)
        if (v(r, c, k) > v(r, c, best)) best = k;
      out(r, c) = static_cast<int>(best);
    }
  return out;
}

/// 3x3 median with half-sample symmetric padding (edge value repeated).
inline LabelMap median3x3(const LabelMap& in) {
  LabelMap out(in.rows, in.cols);
  auto reflect = [](long i, std::size_t n) -> std::size_t {
    if (n == 1) return 0;
    if (i < 0) return static_cast<std::size_t>(-i - 1);
    if (i >= static_cast<long>(n)) return static_cast<std::size_t>(2 * static_cast<long>(n) - i - 1);
    return static_cast<std::size_t>(i);
  };
  std::array<int, 9> window{};
  for (std::size_t r = 0; r < in.rows; ++r)
    for (std::size_t c = 0; c < in.cols; ++c) {
      std::size_t n = 0;
      for (long dr = -1; dr <= 1; ++dr)
        for (long dc = -1; dc <= 1; ++dc)
          window[n++] = in(reflect(static_cast<long>(r) + dr, in.rows), reflect(static_cast<long>(c) + dc, in.cols));
      std::nth_element(window.begin(), window.begin() + 4, window.end());
      out(r, c) = window[4];
    }
  return out;
}

inline LabelMap pseudo_labels(const VoteCounts& v) { return median3x3(vote_argmax(v)); }

// ---------------------------------------------------------------------------
// Confidence.

inline constexpr double kConfidenceEps = 1e-8;

inline Field confidence_map(const Field& denoised_db, const ThresholdSet& global, const VoteCounts& votes,
                            double eps = kConfidenceEps) {
  if (votes.rows != denoised_db.rows || votes.cols != denoised_db.cols) throw Error("confidence_map: vote grid shape mismatch");
  const double scale = 0.25 * stats::stddev(denoised_db.data) + eps;
  Field out(denoised_db.rows, denoised_db.cols);
  for (std::size_t r = 0; r < out.rows; ++r)
    for (std::size_t c = 0; c < out.cols; ++c) {
      double cg = 0.0;
      if (!global.degenerate) {
        double d = std::numeric_limits<double>::infinity();
        for (double tau : global.tau) d = std::min(d, std::abs(denoised_db(r, c) - tau));
        cg = std::clamp(d / scale, 0.0, 1.0);
      }
      std::array<int, kNumClasses> v{};
      for (std::size_t k = 0; k < kNumClasses; ++k) v[k] = votes(r, c, k);
      std::partial_sort(v.begin(), v.begin() + 2, v.end(), std::greater<>());
      const double cl = (v[0] - v[1]) / (v[0] + eps);
      out(r, c) = std::clamp(0.5 * cg + 0.5 * cl, 0.0, 1.0);
    }
  return out;
}

struct ConfidenceWeighting {
  double floor = 0.15;  // lambda
  double gamma = 1.0;
};

/// W = lambda + (1 - lambda) C^gamma.
inline Field confidence_weights(const Field& confidence, const ConfidenceWeighting& cw = {}) {
  Field out(confidence.rows, confidence.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = cw.floor + (1.0 - cw.floor) * std::pow(confidence.data[i], cw.gamma);
  return out;
}

// ---------------------------------------------------------------------------

struct PseudoSupervision {
  ThresholdSet global;
  LabelMap ae_otsu;  // global quantization of the denoised image
  VoteCounts votes;
  LabelMap pseudo;
  Field confidence;
  Field weights;
};

inline PseudoSupervision build_pseudo_supervision(const Field& denoised_db, const LocalOtsuConfig& local = {},
                                                  const ConfidenceWeighting& cw = {}) {
  PseudoSupervision ps;
  ps.global = multi_otsu(denoised_db);
  ps.ae_otsu = quantize(denoised_db, ps.global);
  ps.votes = local_multi_otsu(denoised_db, local);
  ps.pseudo = pseudo_labels(ps.votes);
  ps.confidence = confidence_map(denoised_db, ps.global, ps.votes);
  ps.weights = confidence_weights(ps.confidence, cw);
  return ps;
}

}  // namespace borelog
