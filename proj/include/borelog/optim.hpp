#pragma once
// Adam optimizer over a ParameterStore.

#include <cmath>
#include <map>
#include <string>

#include "borelog/params.hpp"

namespace borelog {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor> first_moment;
  std::map<std::string, Tensor> second_moment;
};

/// One bias-corrected Adam update. Parameters absent from `grads` are left
/// untouched (their moments are not advanced).
inline void adam_step(ParameterStore& params, const GradientMap& grads, OptimizerState& state) {
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    if (g.shape() != p.shape())
      throw Error("adam_step: gradient for '" + name + "' has shape " + shape_str(g.shape()) + ", parameter " + shape_str(p.shape()));
    auto [m_it, m_new] = state.first_moment.try_emplace(name, p.shape());
    auto [v_it, v_new] = state.second_moment.try_emplace(name, p.shape());
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) throw Error("adam_step: moment shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      p[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace borelog
