#pragma once
// Reference segmenters: threshold baselines, latent K-means clustering and
// the shallow convolutional refiners trained on pseudo-labels.

#include <limits>
#include <string>
#include <vector>

#include "borelog/denoiser.hpp"
#include "borelog/pseudo.hpp"

namespace borelog {

struct ThresholdSegmentation {
  ThresholdSet thresholds;
  LabelMap labels;
};

inline ThresholdSegmentation otsu_segmentation(const Field& amplitude) {
  ThresholdSegmentation s;
  s.thresholds = multi_otsu(amplitude);
  s.labels = quantize(amplitude, s.thresholds);
  return s;
}

inline ThresholdSegmentation raw_otsu_baseline(const IntervalBundle& interval) { return otsu_segmentation(interval.image_db); }

inline ThresholdSegmentation ae_otsu_baseline(const DenoiseOutput& d) { return otsu_segmentation(d.image_db_hat); }

// ---------------------------------------------------------------------------
// K-means.

struct KMeansConfig {
  std::size_t k = kNumClasses;
  std::size_t restarts = 10;
  std::size_t max_iterations = 300;
  std::uint64_t seed = 42;
};

struct KMeansResult {
  std::vector<int> labels;
  std::vector<double> centers;  // k x d
  double inertia = 0.0;
  std::size_t best_restart = 0;
  std::vector<double> inertia_trace;  // inertia after each Lloyd iteration of the chosen restart
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

/// Lloyd iterations from the given centers until assignments stop changing.
inline KMeansResult lloyd(const std::vector<double>& x, std::size_t n, std::size_t d, std::vector<double> centers,
                          std::size_t k, std::size_t max_iterations) {
  KMeansResult r;
  r.labels.assign(n, -1);
  std::vector<double> dist(n);
  for (std::size_t it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dd = sq_dist(&x[i * d], &centers[c * d], d);
        if (dd < bd) {
          bd = dd;
          best = static_cast<int>(c);
        }
      }
      changed = changed || r.labels[i] != best;
      r.labels[i] = best;
      dist[i] = bd;
      inertia += bd;
    }
    r.inertia_trace.push_back(inertia);
    r.inertia = inertia;
    if (!changed && it > 0) break;
    std::vector<double> sum(k * d, 0.0);
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(r.labels[i]);
      ++count[c];
      for (std::size_t j = 0; j < d; ++j) sum[c * d + j] += x[i * d + j];
    }
    std::vector<bool> taken(n, false);
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] > 0) {
        for (std::size_t j = 0; j < d; ++j) centers[c * d + j] = sum[c * d + j] / static_cast<double>(count[c]);
        continue;
      }
      // empty cluster: move to the point farthest from its current center
      std::size_t far = 0;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!taken[i] && dist[i] > fd) {
          fd = dist[i];
          far = i;
        }
      taken[far] = true;
      dist[far] = 0.0;
      std::copy_n(&x[far * d], d, &centers[c * d]);
    }
  }
  r.centers = std::move(centers);
  return r;
}

}  // namespace detail

/// K-means over n x d row-major points with seeded random distinct-point
/// initialization per restart; the lowest inertia wins, earliest restart on ties.
inline KMeansResult kmeans(const std::vector<double>& x, std::size_t n, std::size_t d, const KMeansConfig& cfg = {}) {
  if (x.size() != n * d) throw Error("kmeans: data size does not match n x d");
  if (n < cfg.k) throw Error("kmeans: " + std::to_string(n) + " points for " + std::to_string(cfg.k) + " clusters");
  Rng rng = Rng::stream(cfg.seed, "kmeans");
  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < cfg.restarts; ++restart) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    // partial Fisher-Yates: first k entries are a uniform sample of distinct points
    for (std::size_t i = 0; i < cfg.k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
    std::vector<double> centers(cfg.k * d);
    for (std::size_t c = 0; c < cfg.k; ++c) std::copy_n(&x[idx[c] * d], d, &centers[c * d]);
    KMeansResult r = detail::lloyd(x, n, d, std::move(centers), cfg.k, cfg.max_iterations);
    if (r.inertia < best.inertia) {
      best = std::move(r);
      best.best_restart = restart;
    }
  }
  return best;
}

/// Per-patch descriptors: latent vector plus mean patch amplitude of the
/// original image, each feature standardized over the interval's patches.
inline std::vector<double> latent_descriptors(const DenoiseOutput& d, const Field& image_db) {
  const std::size_t n = d.grid.count(), z = d.latents.dim(1), dim = z + 1, S = d.grid.size;
  std::vector<double> x(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(d.latents.data() + i * z, z, &x[i * dim]);
    const auto [r0, c0] = d.grid.origins[i];
    double s = 0.0;
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) s += image_db(r0 + r, c0 + c);
    x[i * dim + z] = s / static_cast<double>(S * S);
  }
  for (std::size_t j = 0; j < dim; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < n; ++i) m += x[i * dim + j];
    m /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) v += (x[i * dim + j] - m) * (x[i * dim + j] - m);
    const double sd = std::sqrt(v / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) x[i * dim + j] = sd > 0.0 ? (x[i * dim + j] - m) / sd : 0.0;
  }
  return x;
}

/// Projects patch cluster ids to pixels: each patch adds its Hann weight to
/// its class at every covered pixel; the heaviest class wins (lowest on ties).
inline LabelMap project_patch_labels(const std::vector<int>& patch_labels, const PatchGrid& grid, double floor = 0.05) {
  if (patch_labels.size() != grid.count()) throw Error("project_patch_labels: one label per patch required");
  const std::size_t S = grid.size;
  const auto window = hann_window_2d(S, floor);
  std::vector<double> acc(grid.rows * grid.cols * kNumClasses, 0.0);
  for (std::size_t n = 0; n < grid.count(); ++n) {
    const auto [r0, c0] = grid.origins[n];
    const auto k = static_cast<std::size_t>(patch_labels[n]);
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c) acc[((r0 + r) * grid.cols + c0 + c) * kNumClasses + k] += window[r * S + c];
  }
  LabelMap out(grid.rows, grid.cols);
  for (std::size_t p = 0; p < out.size(); ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < kNumClasses; ++k)
      if (acc[p * kNumClasses + k] > acc[p * kNumClasses + best]) best = k;
    out.data[p] = static_cast<int>(best);
  }
  return out;
}

inline LabelMap ae_kmeans_baseline(const DenoiseOutput& d, const IntervalBundle& interval, std::uint64_t seed = 42,
                                   double hann_floor = 0.05) {
  const std::size_t dim = d.latents.dim(1) + 1;
  KMeansConfig cfg;
  cfg.seed = seed;
  const KMeansResult km = kmeans(latent_descriptors(d, interval.image_db), d.grid.count(), dim, cfg);
  return project_patch_labels(km.labels, d.grid, hann_floor);
}

// ---------------------------------------------------------------------------
// Convolutional refiners.

struct RefinerSpec {
  std::size_t in_channels = 1;
  std::size_t epochs_broad = 80;
  std::size_t epochs_heavy = 140;
  AdamConfig adam{};

  std::size_t epochs_for(IntervalKind k) const { return k == IntervalKind::kHeavy ? epochs_heavy : epochs_broad; }
};

inline void declare_refiner(ParameterStore& s, std::size_t in_channels) {
  nn::declare_conv(s, "refiner.conv1", in_channels, 32, 3, 3);
  nn::declare_conv(s, "refiner.conv2", 32, 64, 3, 3);
  nn::declare_conv(s, "refiner.conv3", 64, 64, 3, 3);
  nn::declare_conv(s, "refiner.cls", 64, kNumClasses, 1, 1);
}

inline Var refiner_logits(Graph& g, const ParameterStore& s, Var x) {
  Var h = ops::relu(nn::conv_same(g, s, "refiner.conv1", x));
  h = ops::relu(nn::conv_same(g, s, "refiner.conv2", h));
  h = ops::relu(nn::conv_same(g, s, "refiner.conv3", h));
  return nn::conv(g, s, "refiner.cls", h);
}

/// Refiner input: the denoised image alone, or followed by replicated logs.
inline Tensor refiner_input(const Field& x01_hat, const Field* logs_aligned = nullptr) {
  const std::size_t H = x01_hat.rows, W = x01_hat.cols, C = logs_aligned ? logs_aligned->cols : 0;
  Tensor t({1, 1 + C, H, W});
  std::copy(x01_hat.data.begin(), x01_hat.data.end(), t.data());
  if (logs_aligned) {
    if (logs_aligned->rows != H) throw Error("refiner_input: log rows do not match image height");
    const Tensor rep = replicate_logs(*logs_aligned, W);
    std::copy_n(rep.data(), rep.size(), t.data() + H * W);
  }
  return t;
}

struct RefinerResult {
  ParameterStore params;
  nn::TrainingLog log;
  LabelMap prediction;
};

inline LabelMap refiner_predict(const ParameterStore& params, const Tensor& input) {
  Graph g;
  return nn::argmax_classes(refiner_logits(g, params, g.constant(input)).value());
}

/// Full-interval cross-entropy training against the pseudo-labels.
inline RefinerResult train_refiner(const Tensor& input, const LabelMap& pseudo, std::size_t epochs, std::uint64_t seed,
                                   const RefinerSpec& spec = {}) {
  if (input.rank() != 4 || input.dim(1) != spec.in_channels)
    throw Error("train_refiner: expected " + std::to_string(spec.in_channels) + " input channels, got " + shape_str(input.shape()));
  if (input.dim(2) != pseudo.rows || input.dim(3) != pseudo.cols) throw Error("train_refiner: pseudo-label shape mismatch");
  RefinerResult r{ParameterStore(seed), {}, {}};
  declare_refiner(r.params, spec.in_channels);
  r.params.metadata()["model"] = spec.in_channels == 1 ? "image_only" : "concat";
  r.log = nn::train_full_batch(
      r.params,
      [&](Graph& g, const ParameterStore& p) { return ops::cross_entropy(refiner_logits(g, p, g.constant(input)), pseudo.data); },
      epochs, spec.adam, "refiner");
  r.prediction = refiner_predict(r.params, input);
  return r;
}

}  // namespace borelog
