#pragma once
// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

#include "borelog/graph.hpp"

namespace borelog {

/// Builds a scalar loss from the parameters. Must be a pure function of them.
using LossBuilder = std::function<Var(Graph&, const ParameterStore&)>;

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_relative_error = 0.0;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckEntry> entries;

  double max_error() const {
    double e = 0.0;
    for (const auto& x : entries) e = std::max(e, x.max_relative_error);
    return e;
  }
  bool passed() const { return max_error() <= tolerance; }
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-6;
  /// Larger tensors are checked on a seeded random subset of this many entries.
  std::size_t max_entries_per_parameter = 48;
  /// Errors are |a - n| / max(|a|, |n|, floor); the floor keeps gradients that
  /// are zero up to rounding from reading as large relative errors.
  double denominator_floor = 1e-6;
  std::uint64_t sample_seed = 7;
};

inline double evaluate_loss(const LossBuilder& build, const ParameterStore& params) {
  Graph g;
  return build(g, params).value().item();
}

inline GradientMap analytic_gradients(const LossBuilder& build, const ParameterStore& params) {
  Graph g;
  Var loss = build(g, params);
  g.backward(loss);
  GradientMap grads = g.parameter_gradients();
  for (const auto& [name, t] : params.entries())
    if (!grads.count(name)) grads.emplace(name, Tensor(t.shape()));
  return grads;
}

/// Compares supplied gradients to central differences of the loss.
inline GradCheckReport compare_gradients(const LossBuilder& build, ParameterStore params, const GradientMap& analytic,
                                         const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng(opt.sample_seed);
  const std::vector<std::string> names = [&] {
    std::vector<std::string> n;
    for (const auto& [name, _] : params.entries()) n.push_back(name);
    return n;
  }();
  for (const auto& name : names) {
    const std::size_t count = params.at(name).size();
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (count > opt.max_entries_per_parameter) {
      rng.shuffle(idx.begin(), idx.end());
      idx.resize(opt.max_entries_per_parameter);
      std::sort(idx.begin(), idx.end());
    }
    GradCheckEntry entry{name, idx.size(), 0.0};
    const Tensor& a = analytic.at(name);
    for (std::size_t i : idx) {
      const double orig = params.at(name)[i];
      params.at(name)[i] = orig + opt.step;
      const double plus = evaluate_loss(build, params);
      params.at(name)[i] = orig - opt.step;
      const double minus = evaluate_loss(build, params);
      params.at(name)[i] = orig;
      const double numeric = (plus - minus) / (2.0 * opt.step);
      const double denom = std::max({std::abs(a[i]), std::abs(numeric), opt.denominator_floor});
      entry.max_relative_error = std::max(entry.max_relative_error, std::abs(a[i] - numeric) / denom);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

inline GradCheckReport gradient_check(const LossBuilder& build, const ParameterStore& params, const GradCheckOptions& opt = {}) {
  return compare_gradients(build, params, analytic_gradients(build, params), opt);
}

}  // namespace borelog
