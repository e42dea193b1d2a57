#pragma once
// Minimal CSV reading/writing. Numbers are written in shortest round-trip form
// so re-reading reproduces the exact doubles and reruns produce identical bytes.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "borelog/core.hpp"

namespace borelog::csv {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

/// Parses a cell; empty or "nan" means missing. Throws with the given context.
inline double parse_cell(std::string_view cell, const std::string& context) {
  if (cell.empty() || cell == "nan" || cell == "NaN" || cell == "NA") return kMissing;
  double v = 0.0;
  const char* end = cell.data() + cell.size();
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) throw Error(context + ": cannot parse '" + std::string(cell) + "' as a number");
  return v;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

struct Table {
  std::vector<std::string> comments;  // lines starting with '#', without the marker
  std::vector<std::vector<std::string>> rows;
};

/// Reads all non-empty lines; '#'-prefixed lines are collected as comments.
inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line)) {
    std::string_view v = trim(line);
    if (v.empty()) continue;
    if (v.front() == '#') {
      t.comments.emplace_back(trim(v.substr(1)));
      continue;
    }
    std::vector<std::string> row;
    for (auto cell : split(v)) row.emplace_back(cell);
    t.rows.push_back(std::move(row));
  }
  return t;
}

/// Reads a headerless numeric matrix. Every row must have the same width.
inline Field read_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  Field f;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto cells = split(v);
    if (f.rows == 0) f.cols = cells.size();
    if (cells.size() != f.cols)
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(f.cols) + " columns, found " +
                  std::to_string(cells.size()));
    for (auto c : cells) f.data.push_back(parse_cell(c, path.string() + ":" + std::to_string(lineno)));
    ++f.rows;
  }
  return f;
}

inline Grid<int> read_labels(const std::filesystem::path& path) {
  const Field f = read_matrix(path);
  Grid<int> out(f.rows, f.cols);
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (std::isnan(f.data[i]) || f.data[i] != std::floor(f.data[i])) throw Error(path.string() + ": non-integer label");
    out.data[i] = static_cast<int>(f.data[i]);
  }
  return out;
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot write " + path.string());
  }
  void comment(const std::string& text) { out_ << "# " << text << '\n'; }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }
  template <typename T>
  void grid(const Grid<T>& g) {
    std::string line;
    for (std::size_t r = 0; r < g.rows; ++r) {
      line.clear();
      for (std::size_t c = 0; c < g.cols; ++c) {
        if (c) line += ',';
        if constexpr (std::is_floating_point_v<T>)
          line += format_number(g(r, c));
        else
          line += std::to_string(g(r, c));
      }
      out_ << line << '\n';
    }
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace borelog::csv
