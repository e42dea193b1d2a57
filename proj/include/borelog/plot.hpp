#pragma once
// Binary PPM rasters: class maps with a legend strip and scalar maps with a
// gradient colorbar.

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "borelog/core.hpp"

namespace borelog::plot {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr std::size_t kBarWidth = 12;
inline constexpr std::size_t kBarGap = 4;

inline const std::array<Rgb, 4>& class_palette() {
  static const std::array<Rgb, 4> p{{{38, 70, 83}, {42, 157, 143}, {233, 196, 106}, {231, 111, 81}}};
  return p;
}

/// Piecewise-linear dark-blue to yellow ramp over t in [0, 1].
inline Rgb ramp(double t) {
  static const std::array<Rgb, 5> stops{{{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  Rgb c;
  for (std::size_t k = 0; k < 3; ++k)
    c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] + f * (stops[i + 1][k] - stops[i][k])));
  return c;
}

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> rgb;

  Image(std::size_t w, std::size_t h, Rgb fill = {255, 255, 255}) : width(w), height(h), rgb(w * h * 3) {
    for (std::size_t p = 0; p < w * h; ++p) std::copy(fill.begin(), fill.end(), rgb.begin() + static_cast<long>(p * 3));
  }
  void set(std::size_t x, std::size_t y, Rgb c) { std::copy(c.begin(), c.end(), rgb.begin() + static_cast<long>((y * width + x) * 3)); }
};

inline void write_ppm(const Image& img, const std::filesystem::path& path, const std::string& comment = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "P6\n";
  if (!comment.empty()) out << "# " << comment << '\n';
  out << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
}

/// Class raster; the legend strip shows classes 0..3 from top to bottom.
inline Image class_raster(const LabelMap& y) {
  Image img(y.cols + kBarGap + kBarWidth, y.rows);
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) img.set(c, r, class_palette()[static_cast<std::size_t>(std::clamp(y(r, c), 0, 3))]);
  for (std::size_t r = 0; r < y.rows; ++r) {
    const std::size_t k = std::min<std::size_t>(r * 4 / std::max<std::size_t>(y.rows, 1), 3);
    for (std::size_t c = 0; c < kBarWidth; ++c) img.set(y.cols + kBarGap + c, r, class_palette()[k]);
  }
  return img;
}

/// Scalar raster over [lo, hi]; the colorbar runs from hi at the top to lo.
inline Image scalar_raster(const Field& f, double lo, double hi) {
  Image img(f.cols + kBarGap + kBarWidth, f.rows);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t r = 0; r < f.rows; ++r)
    for (std::size_t c = 0; c < f.cols; ++c) img.set(c, r, ramp((f(r, c) - lo) / span));
  for (std::size_t r = 0; r < f.rows; ++r) {
    const double t = f.rows > 1 ? 1.0 - static_cast<double>(r) / static_cast<double>(f.rows - 1) : 1.0;
    for (std::size_t c = 0; c < kBarWidth; ++c) img.set(f.cols + kBarGap + c, r, ramp(t));
  }
  return img;
}

inline Image scalar_raster(const Field& f) {
  const auto [lo, hi] = std::minmax_element(f.data.begin(), f.data.end());
  return f.data.empty() ? Image(0, 0) : scalar_raster(f, *lo, *hi);
}

}  // namespace borelog::plot
