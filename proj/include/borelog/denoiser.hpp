#pragma once
// Interval-wise convolutional denoising autoencoder on overlapping patches,
// Hann-weighted patch merging and reconstruction-error maps.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "borelog/interval_io.hpp"
#include "borelog/nn.hpp"

namespace borelog {

/// Patch origins along one axis: stride steps, with the last origin
/// clamped so the final patch ends on the boundary.
inline std::vector<std::size_t> patch_origins(std::size_t extent, std::size_t size, std::size_t stride) {
  if (extent < size) throw Error("interval extent " + std::to_string(extent) + " smaller than one patch of " + std::to_string(size));
  if (stride == 0) throw Error("patch stride must be positive");
  std::vector<std::size_t> out{0};
  while (out.back() + size < extent) out.push_back(std::min(out.back() + stride, extent - size));
  return out;
}

struct PatchGrid {
  std::size_t size = 32;
  std::size_t stride = 8;
  std::size_t rows = 0, cols = 0;  // image extent
  std::vector<std::pair<std::size_t, std::size_t>> origins;  // row-major
  Tensor patches;  // [N, 1, size, size]

  std::size_t count() const { return origins.size(); }
};

inline PatchGrid extract_patches(const Field& x01, std::size_t size = 32, std::size_t stride = 8) {
  PatchGrid g;
  g.size = size;
  g.stride = stride;
  g.rows = x01.rows;
  g.cols = x01.cols;
  for (std::size_t r : patch_origins(x01.rows, size, stride))
    for (std::size_t c : patch_origins(x01.cols, size, stride)) g.origins.emplace_back(r, c);
  g.patches = Tensor({g.count(), 1, size, size});
  double* dst = g.patches.data();
  for (const auto& [r0, c0] : g.origins)
    for (std::size_t r = 0; r < size; ++r, dst += size) std::copy_n(&x01(r0 + r, c0), size, dst);
  return g;
}

struct AeConfig {
  std::size_t latent = 64;
  double noise = 0.05;
  std::size_t batch = 128;
  std::size_t epochs_broad = 60;
  std::size_t epochs_heavy = 120;
  double hann_floor = 0.05;
  AdamConfig adam{};

  std::size_t epochs_for(IntervalKind k) const { return k == IntervalKind::kHeavy ? epochs_heavy : epochs_broad; }
};

// ---------------------------------------------------------------------------
// Model. Encoder: three stride-2 3x3 convs (1->16->32->64), flatten, dense to
// the latent. Decoder mirrors it with transposed convs and a sigmoid output.

inline constexpr std::size_t kAePatch = 32;

inline void declare_ae(ParameterStore& s, const AeConfig& cfg = {}) {
  nn::declare_conv(s, "ae.enc.conv1", 1, 16, 3, 3);
  nn::declare_conv(s, "ae.enc.conv2", 16, 32, 3, 3);
  nn::declare_conv(s, "ae.enc.conv3", 32, 64, 3, 3);
  nn::declare_dense(s, "ae.enc.fc", 64 * 4 * 4, cfg.latent);
  nn::declare_dense(s, "ae.dec.fc", cfg.latent, 64 * 4 * 4);
  nn::declare_conv_transpose(s, "ae.dec.deconv1", 64, 32, 3);
  nn::declare_conv_transpose(s, "ae.dec.deconv2", 32, 16, 3);
  nn::declare_conv_transpose(s, "ae.dec.deconv3", 16, 1, 3);
}

inline constexpr ops::Conv2dOptions kStride2{2, 2, 1, 1};

inline Var ae_encode(Graph& g, const ParameterStore& s, Var x) {
  const std::size_t n = x.dim(0);
  Var h = ops::relu(nn::conv(g, s, "ae.enc.conv1", x, kStride2));
  h = ops::relu(nn::conv(g, s, "ae.enc.conv2", h, kStride2));
  h = ops::relu(nn::conv(g, s, "ae.enc.conv3", h, kStride2));
  return nn::dense(g, s, "ae.enc.fc", ops::reshape(h, {n, 64 * 4 * 4}));
}

inline Var ae_decode(Graph& g, const ParameterStore& s, Var z) {
  const std::size_t n = z.dim(0);
  Var h = ops::relu(nn::dense(g, s, "ae.dec.fc", z));
  h = ops::reshape(h, {n, 64, 4, 4});
  h = ops::relu(nn::conv_transpose(g, s, "ae.dec.deconv1", h, kStride2, 1));
  h = ops::relu(nn::conv_transpose(g, s, "ae.dec.deconv2", h, kStride2, 1));
  return ops::sigmoid(nn::conv_transpose(g, s, "ae.dec.deconv3", h, kStride2, 1));
}

namespace detail {

inline Tensor gather_patches(const Tensor& patches, const std::vector<std::size_t>& index, std::size_t begin, std::size_t end) {
  const std::size_t per = patches.size() / patches.dim(0);
  Tensor out({end - begin, 1, patches.dim(2), patches.dim(3)});
  for (std::size_t i = begin; i < end; ++i) std::copy_n(patches.data() + index[i] * per, per, out.data() + (i - begin) * per);
  return out;
}

}  // namespace detail

struct AeModel {
  ParameterStore params;
  nn::TrainingLog log;  // mean per-patch loss of each epoch
};

/// Minibatch Adam on noise-corrupted patches. The patch order is reshuffled
/// every epoch from the seed; the last partial batch is kept.
inline AeModel train_ae(const PatchGrid& grid, std::size_t epochs, std::uint64_t seed, const AeConfig& cfg = {}) {
  if (grid.count() == 0) throw Error("train_ae: no patches");
  if (grid.size != kAePatch) throw Error("train_ae: autoencoder expects 32x32 patches");
  AeModel model{ParameterStore(seed), {}};
  declare_ae(model.params, cfg);
  model.params.metadata()["model"] = "ae";
  OptimizerState state{cfg.adam, 0, {}, {}};
  Rng order_rng = Rng::stream(seed, "ae.shuffle");
  Rng noise_rng = Rng::stream(seed, "ae.noise");
  const std::size_t N = grid.count();
  std::vector<std::size_t> order(N);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = 0; i < N; ++i) order[i] = i;
    order_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t b = 0; b < N; b += cfg.batch) {
      const std::size_t e = std::min(N, b + cfg.batch);
      const Tensor clean = detail::gather_patches(grid.patches, order, b, e);
      Tensor noisy = clean;
      if (cfg.noise > 0.0)
        for (double& v : noisy.values()) v += cfg.noise * noise_rng.normal();
      try {
        Graph g;
        Var loss = ops::batch_squared_error(ae_decode(g, model.params, ae_encode(g, model.params, g.constant(std::move(noisy)))), clean);
        total += loss.value().item() * static_cast<double>(e - b);
        g.backward(loss);
        adam_step(model.params, g.parameter_gradients(), state);
      } catch (const Error& err) {
        throw Error("autoencoder training aborted at epoch " + std::to_string(epoch) + ", batch starting " + std::to_string(b) +
                    ": " + err.what());
      }
    }
    model.log.losses.push_back(total / static_cast<double>(N));
  }
  model.params.metadata()["epochs"] = std::to_string(epochs);
  return model;
}

struct AeForward {
  Tensor reconstructions;  // [N, 1, 32, 32]
  Tensor latents;          // [N, latent]
};

/// Noiseless forward pass over all patches in fixed-size chunks.
inline AeForward ae_forward(const ParameterStore& params, const Tensor& patches, std::size_t chunk = 128) {
  const std::size_t N = patches.dim(0), per = patches.size() / N;
  AeForward out;
  out.reconstructions = Tensor(patches.shape());
  std::vector<std::size_t> identity(N);
  for (std::size_t i = 0; i < N; ++i) identity[i] = i;
  std::size_t latent = 0;
  for (std::size_t b = 0; b < N; b += chunk) {
    const std::size_t e = std::min(N, b + chunk);
    Graph g;
    Var z = ae_encode(g, params, g.constant(detail::gather_patches(patches, identity, b, e)));
    Var y = ae_decode(g, params, z);
    if (b == 0) {
      latent = z.dim(1);
      out.latents = Tensor({N, latent});
    }
    std::copy_n(y.value().data(), (e - b) * per, out.reconstructions.data() + b * per);
    std::copy_n(z.value().data(), (e - b) * latent, out.latents.data() + b * latent);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Merging.

/// Symmetric 2-D Hann window lifted to at least `floor`, row-major size x size.
inline std::vector<double> hann_window_2d(std::size_t size, double floor) {
  std::vector<double> w1(size, 1.0);
  if (size > 1)
    for (std::size_t i = 0; i < size; ++i)
      w1[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(size - 1));
  std::vector<double> w(size * size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) w[r * size + c] = std::max(w1[r] * w1[c], floor);
  return w;
}

/// Weight-normalized average of overlapping patch values.
inline Field hann_merge(const Tensor& patch_values, const PatchGrid& grid, double floor = 0.05) {
  if (patch_values.rank() != 4 || patch_values.dim(0) != grid.count() || patch_values.dim(2) != grid.size ||
      patch_values.dim(3) != grid.size)
    throw Error("hann_merge: expected " + std::to_string(grid.count()) + " patches of " + std::to_string(grid.size) + "x" +
                std::to_string(grid.size) + ", got " + shape_str(patch_values.shape()));
  const std::size_t S = grid.size;
  const auto window = hann_window_2d(S, floor);
  Field acc(grid.rows, grid.cols), wsum(grid.rows, grid.cols);
  const double* src = patch_values.data();
  for (const auto& [r0, c0] : grid.origins)
    for (std::size_t r = 0; r < S; ++r)
      for (std::size_t c = 0; c < S; ++c, ++src) {
        const double w = window[r * S + c];
        acc(r0 + r, c0 + c) += w * *src;
        wsum(r0 + r, c0 + c) += w;
      }
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] /= wsum.data[i];
  return acc;
}

// ---------------------------------------------------------------------------
// Interval denoising.

struct DenoiseOutput {
  PatchGrid grid;
  Field x01_hat;
  Field image_db_hat;
  Tensor latents;  // [N, latent]
  Field e_db2;
  Field e_log;
  std::size_t clamped = 0;
};

/// Squared amplitude residual and its log-compressed form.
inline std::pair<Field, Field> reconstruction_errors(const Field& image_db, const Field& image_db_hat) {
  if (!image_db.same_shape(image_db_hat)) throw Error("reconstruction_errors: shape mismatch");
  Field e2(image_db.rows, image_db.cols), el(image_db.rows, image_db.cols);
  for (std::size_t i = 0; i < e2.size(); ++i) {
    const double d = image_db.data[i] - image_db_hat.data[i];
    e2.data[i] = d * d;
    el.data[i] = std::log1p(e2.data[i]);
  }
  return {std::move(e2), std::move(el)};
}

inline DenoiseOutput denoise_field(const Field& image_db, const NormStats& norm, const ParameterStore& params,
                                   const AeConfig& cfg = {}) {
  DenoiseOutput out;
  out.grid = extract_patches(normalize_image(image_db, norm), kAePatch, 8);
  AeForward fw = ae_forward(params, out.grid.patches);
  out.latents = std::move(fw.latents);
  out.x01_hat = hann_merge(fw.reconstructions, out.grid, cfg.hann_floor);
  auto den = denormalize_image(out.x01_hat, norm);
  out.image_db_hat = std::move(den.image_db);
  out.clamped = den.clamped;
  std::tie(out.e_db2, out.e_log) = reconstruction_errors(image_db, out.image_db_hat);
  return out;
}

inline DenoiseOutput denoise_interval(const IntervalBundle& interval, const ParameterStore& params, const AeConfig& cfg = {}) {
  return denoise_field(interval.image_db, interval.norm, params, cfg);
}

/// Trains the interval's autoencoder with the schedule for its kind.
inline AeModel train_interval_ae(const IntervalBundle& interval, std::uint64_t seed, const AeConfig& cfg = {}) {
  return train_ae(extract_patches(normalize_image(interval), kAePatch, 8), cfg.epochs_for(interval.spec.kind), seed, cfg);
}

}  // namespace borelog
