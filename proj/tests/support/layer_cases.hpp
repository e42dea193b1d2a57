#pragma once
// Small graphs exercising every operator, shared by the unit and acceptance
// suites. Each loss is the operator output projected onto fixed random
// weights so no gradient entry is trivially symmetric.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "borelog/denoiser.hpp"
#include "borelog/gradcheck.hpp"
#include "borelog/nn.hpp"

namespace borelog::fixtures {

struct GradCase {
  std::string name;
  ParameterStore params;
  LossBuilder loss;
};

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline ParameterStore store_with(std::initializer_list<std::pair<std::string, Tensor>> items) {
  ParameterStore s(1);
  for (const auto& [k, v] : items) s.set(k, v);
  return s;
}

/// Wraps an op output into a scalar by projecting on seeded weights.
inline Var project(Var y, std::uint64_t seed) { return ops::dot_constant(y, random_tensor(y.shape(), seed)); }

inline std::vector<GradCase> layer_gradient_cases() {
  std::vector<GradCase> cases;
  auto P = [](Graph& g, const ParameterStore& s, const char* n) { return g.parameter(s, n); };

  cases.push_back({"conv2d 3x3 same", store_with({{"x", random_tensor({2, 3, 5, 4}, 1)},
                                                 {"w", random_tensor({4, 3, 3, 3}, 2)},
                                                 {"b", random_tensor({4}, 3)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::conv2d(P(g, s, "x"), P(g, s, "w"), P(g, s, "b"), ops::same_padding(3, 3)), 4);
                   }});
  cases.push_back({"conv2d stride 2", store_with({{"x", random_tensor({2, 2, 8, 7}, 5)},
                                                 {"w", random_tensor({3, 2, 3, 3}, 6)},
                                                 {"b", random_tensor({3}, 7)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::conv2d(P(g, s, "x"), P(g, s, "w"), P(g, s, "b"), {2, 2, 1, 1}), 8);
                   }});
  cases.push_back({"conv1d k3 (as 3x1)", store_with({{"x", random_tensor({1, 3, 9, 1}, 9)},
                                                    {"w", random_tensor({2, 3, 3, 1}, 10)},
                                                    {"b", random_tensor({2}, 11)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::conv2d(P(g, s, "x"), P(g, s, "w"), P(g, s, "b"), ops::same_padding(3, 1)), 12);
                   }});
  cases.push_back({"conv2d 1x1", store_with({{"x", random_tensor({1, 4, 3, 5}, 13)}, {"w", random_tensor({3, 4, 1, 1}, 14)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::conv2d(P(g, s, "x"), P(g, s, "w"), std::nullopt), 15);
                   }});
  cases.push_back({"conv_transpose2d stride 2", store_with({{"x", random_tensor({2, 3, 4, 3}, 16)},
                                                           {"w", random_tensor({3, 2, 3, 3}, 17)},
                                                           {"b", random_tensor({2}, 18)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::conv_transpose2d(P(g, s, "x"), P(g, s, "w"), P(g, s, "b"), {2, 2, 1, 1}, 1), 19);
                   }});
  cases.push_back({"dense", store_with({{"x", random_tensor({3, 5}, 20)}, {"w", random_tensor({4, 5}, 21)}, {"b", random_tensor({4}, 22)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::dense(P(g, s, "x"), P(g, s, "w"), P(g, s, "b")), 23); }});
  cases.push_back({"relu", store_with({{"x", random_tensor({3, 7}, 24)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::relu(P(g, s, "x")), 25); }});
  cases.push_back({"sigmoid", store_with({{"x", random_tensor({3, 7}, 26, -4, 4)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::sigmoid(P(g, s, "x")), 27); }});
  cases.push_back({"tanh", store_with({{"x", random_tensor({3, 7}, 28, -2, 2)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::tanh(P(g, s, "x")), 29); }});
  cases.push_back({"atanh", store_with({{"x", random_tensor({3, 7}, 30, -0.9, 0.9)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::atanh(P(g, s, "x")), 31); }});
  cases.push_back({"softmax", store_with({{"x", random_tensor({2, 4, 3, 2}, 32, -3, 3)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::softmax_channels(P(g, s, "x")), 33); }});
  cases.push_back({"mul + add", store_with({{"a", random_tensor({2, 6}, 34)}, {"b", random_tensor({2, 6}, 35)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     Var a = P(g, s, "a"), b = P(g, s, "b");
                     return project(ops::add(ops::mul(a, b), a), 36);
                   }});
  cases.push_back({"mul_channel_broadcast", store_with({{"x", random_tensor({1, 3, 4, 5}, 37)}, {"m", random_tensor({1, 1, 4, 5}, 38)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::mul_channel_broadcast(P(g, s, "x"), P(g, s, "m")), 39); }});
  cases.push_back({"concat_channels", store_with({{"a", random_tensor({2, 2, 3, 3}, 40)}, {"b", random_tensor({2, 3, 3, 3}, 41)}}),
                   [P](Graph& g, const ParameterStore& s) { return project(ops::concat_channels(P(g, s, "a"), P(g, s, "b")), 42); }});
  cases.push_back({"layer_norm", store_with({{"x", random_tensor({1, 8, 3, 4}, 43, -2, 2)},
                                            {"gamma", random_tensor({8}, 44, 0.5, 1.5)},
                                            {"beta", random_tensor({8}, 45)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::layer_norm_channels(P(g, s, "x"), P(g, s, "gamma"), P(g, s, "beta")), 46);
                   }});
  cases.push_back({"group_norm", store_with({{"x", random_tensor({2, 8, 3, 4}, 47, -2, 2)},
                                            {"gamma", random_tensor({8}, 48, 0.5, 1.5)},
                                            {"beta", random_tensor({8}, 49)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::group_norm(P(g, s, "x"), P(g, s, "gamma"), P(g, s, "beta"), 4), 50);
                   }});
  cases.push_back({"depth_window_attention r=2", store_with({{"q", random_tensor({1, 8, 6, 3}, 51, -2, 2)},
                                                            {"k", random_tensor({1, 8, 6, 1}, 52, -2, 2)},
                                                            {"v", random_tensor({1, 8, 6, 1}, 53)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return project(ops::depth_window_attention(P(g, s, "q"), P(g, s, "k"), P(g, s, "v"), 2, 2), 54);
                   }});
  cases.push_back({"weighted cross_entropy", store_with({{"x", random_tensor({1, 4, 3, 5}, 55, -2, 2)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     std::vector<int> labels(15);
                     std::vector<double> w(15);
                     for (std::size_t i = 0; i < 15; ++i) {
                       labels[i] = static_cast<int>((i * 7) % 4);
                       w[i] = 0.15 + 0.05 * static_cast<double>(i);
                     }
                     return ops::cross_entropy(P(g, s, "x"), labels, &w);
                   }});
  cases.push_back({"batch_squared_error", store_with({{"x", random_tensor({3, 1, 4, 4}, 56)}}),
                   [P](Graph& g, const ParameterStore& s) {
                     return ops::batch_squared_error(P(g, s, "x"), random_tensor({3, 1, 4, 4}, 57));
                   }});
  return cases;
}

inline constexpr double kAutoencoderGradStep = 1e-5;
inline constexpr double kAutoencoderKinkMargin = 2e-5;

/// Smallest |pre-activation| over every ReLU in the autoencoder.
inline double ae_relu_margin(const ParameterStore& s, const Tensor& x) {
  double m = std::numeric_limits<double>::infinity();
  auto track = [&](Var a) {
    for (double v : a.value().values()) m = std::min(m, std::abs(v));
    return ops::relu(a);
  };
  Graph g;
  const std::size_t n = x.dim(0);
  Var h = track(nn::conv(g, s, "ae.enc.conv1", g.constant(x), kStride2));
  h = track(nn::conv(g, s, "ae.enc.conv2", h, kStride2));
  h = track(nn::conv(g, s, "ae.enc.conv3", h, kStride2));
  Var z = nn::dense(g, s, "ae.enc.fc", ops::reshape(h, {n, 64 * 4 * 4}));
  h = ops::reshape(track(nn::dense(g, s, "ae.dec.fc", z)), {n, 64, 4, 4});
  h = track(nn::conv_transpose(g, s, "ae.dec.deconv1", h, kStride2, 1));
  track(nn::conv_transpose(g, s, "ae.dec.deconv2", h, kStride2, 1));
  return m;
}

/// Full autoencoder on one patch, at a point where it is differentiable well
/// beyond the finite-difference step: biases are redrawn from seeded streams
/// until every ReLU pre-activation clears the kink margin. The target is a
/// small offset of the current reconstruction so summation roundoff in the
/// loss stays below the gradients.
inline GradCase autoencoder_gradient_case() {
  const Tensor x = random_tensor({1, 1, 32, 32}, 6, 0.05, 0.95);
  ParameterStore s(5);
  declare_ae(s);
  std::vector<std::string> biases;
  for (const auto& [name, _] : s.entries())
    if (name.ends_with(".b")) biases.push_back(name);
  for (std::uint64_t attempt = 0;; ++attempt) {
    if (attempt == 1000) throw Error("autoencoder_gradient_case: no kink-free point found");
    for (std::size_t i = 0; i < biases.size(); ++i)
      s.set(biases[i], random_tensor(s.at(biases[i]).shape(), 1000 * attempt + i, -0.1, 0.1));
    if (ae_relu_margin(s, x) > kAutoencoderKinkMargin) break;
  }
  Graph g;
  Tensor target = ae_decode(g, s, ae_encode(g, s, g.constant(x))).value();
  const Tensor offset = random_tensor(target.shape(), 17, -0.01, 0.01);
  for (std::size_t i = 0; i < target.size(); ++i) target[i] += offset[i];
  return {"autoencoder", std::move(s), [x, target](Graph& g, const ParameterStore& p) {
            return ops::batch_squared_error(ae_decode(g, p, ae_encode(g, p, g.constant(x))), target);
          }};
}

}  // namespace borelog::fixtures
