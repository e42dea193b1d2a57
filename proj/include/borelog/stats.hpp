#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "borelog/core.hpp"

namespace borelog::stats {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw Error("mean of empty sample");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Population standard deviation.
inline double stddev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Percentile q in [0, 100] with linear interpolation between order statistics.
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw Error("percentile of empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + (v[hi] - v[lo]) * frac;
}

inline double median(std::vector<double> v) { return percentile(std::move(v), 50.0); }

inline std::vector<double> finite_values(std::span<const double> v) {
  std::vector<double> out;
  out.reserve(v.size());
  for (double x : v)
    if (std::isfinite(x)) out.push_back(x);
  return out;
}

}  // namespace borelog::stats
