#pragma once
// Parameter-naming conventions for layers, prediction helpers and the
// full-batch training loop shared by the refiners.

#include <functional>
#include <string>
#include <vector>

#include "borelog/ops.hpp"
#include "borelog/optim.hpp"

namespace borelog::nn {

inline void declare_conv(ParameterStore& s, const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t kh,
                         std::size_t kw, bool bias = true) {
  s.declare(prefix + ".w", {cout, cin, kh, kw}, Init::kFanInUniform, cin * kh * kw);
  if (bias) s.declare(prefix + ".b", {cout}, Init::kZeros);
}

inline Var conv(Graph& g, const ParameterStore& s, const std::string& prefix, Var x, ops::Conv2dOptions opt = {}) {
  std::optional<Var> b;
  if (s.contains(prefix + ".b")) b = g.parameter(s, prefix + ".b");
  return ops::conv2d(x, g.parameter(s, prefix + ".w"), b, opt);
}

/// 3x3 (or kh x kw) convolution with "same" padding.
inline Var conv_same(Graph& g, const ParameterStore& s, const std::string& prefix, Var x) {
  const Tensor& w = s.at(prefix + ".w");
  return conv(g, s, prefix, x, ops::same_padding(w.dim(2), w.dim(3)));
}

inline void declare_conv_transpose(ParameterStore& s, const std::string& prefix, std::size_t cin, std::size_t cout,
                                   std::size_t k) {
  s.declare(prefix + ".w", {cin, cout, k, k}, Init::kFanInUniform, cout * k * k);
  s.declare(prefix + ".b", {cout}, Init::kZeros);
}

inline Var conv_transpose(Graph& g, const ParameterStore& s, const std::string& prefix, Var x, ops::Conv2dOptions opt,
                          std::size_t output_pad) {
  return ops::conv_transpose2d(x, g.parameter(s, prefix + ".w"), g.parameter(s, prefix + ".b"), opt, output_pad);
}

inline void declare_dense(ParameterStore& s, const std::string& prefix, std::size_t in, std::size_t out) {
  s.declare(prefix + ".w", {out, in}, Init::kFanInUniform, in);
  s.declare(prefix + ".b", {out}, Init::kZeros);
}

inline Var dense(Graph& g, const ParameterStore& s, const std::string& prefix, Var x) {
  return ops::dense(x, g.parameter(s, prefix + ".w"), g.parameter(s, prefix + ".b"));
}

inline void declare_norm(ParameterStore& s, const std::string& prefix, std::size_t channels) {
  s.declare(prefix + ".gamma", {channels}, Init::kOnes);
  s.declare(prefix + ".beta", {channels}, Init::kZeros);
}

inline Var group_norm(Graph& g, const ParameterStore& s, const std::string& prefix, Var x, std::size_t groups) {
  return ops::group_norm(x, g.parameter(s, prefix + ".gamma"), g.parameter(s, prefix + ".beta"), groups);
}

inline Var layer_norm(Graph& g, const ParameterStore& s, const std::string& prefix, Var x) {
  return ops::layer_norm_channels(x, g.parameter(s, prefix + ".gamma"), g.parameter(s, prefix + ".beta"));
}

/// Per-pixel argmax over the class axis of [1, K, H, W] logits; ties go to
/// the lowest class index.
inline LabelMap argmax_classes(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(0) != 1) throw Error("argmax_classes: expected [1, K, H, W] logits");
  const std::size_t K = logits.dim(1), H = logits.dim(2), W = logits.dim(3), P = H * W;
  LabelMap out(H, W);
  for (std::size_t p = 0; p < P; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
      if (logits[k * P + p] > logits[best * P + p]) best = k;
    out.data[p] = static_cast<int>(best);
  }
  return out;
}

struct TrainingLog {
  std::vector<double> losses;
  double final_loss() const { return losses.empty() ? 0.0 : losses.back(); }
};

using FullBatchLoss = std::function<Var(Graph&, const ParameterStore&)>;

/// One Adam step per epoch on the whole interval.
inline TrainingLog train_full_batch(ParameterStore& params, const FullBatchLoss& loss_fn, std::size_t epochs,
                                    const AdamConfig& adam, const std::string& what) {
  OptimizerState state{adam, 0, {}, {}};
  TrainingLog log;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    try {
      Graph g;
      Var loss = loss_fn(g, params);
      log.losses.push_back(loss.value().item());
      g.backward(loss);
      adam_step(params, g.parameter_gradients(), state);
    } catch (const Error& e) {
      throw Error(what + ": training aborted at epoch " + std::to_string(epoch) + ": " + e.what());
    }
  }
  return log;
}

/// Image field as a [1, 1, H, W] tensor.
inline Tensor field_tensor(const Field& f) { return Tensor({1, 1, f.rows, f.cols}, f.data); }

}  // namespace borelog::nn
