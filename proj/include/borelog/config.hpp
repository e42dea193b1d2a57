#pragma once
// Run configuration: a plain key = value file, one entry per line, '#'
// comments. Every artifact records the hash of the resolved configuration.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "borelog/csv.hpp"
#include "borelog/dca.hpp"
#include "borelog/interval_io.hpp"
#include "borelog/pseudo.hpp"
#include "borelog/synth.hpp"

namespace borelog {

inline const std::vector<std::string>& main_method_names() {
  static const std::vector<std::string> names{"raw_otsu", "ae_otsu", "ae_kmeans", "image_only", "concat", "dca", "gdca", "cgdca"};
  return names;
}

inline bool is_registered_method(const std::string& m) {
  for (const auto& n : main_method_names())
    if (n == m) return true;
  for (const auto& n : dca_variant_names())
    if (n == m) return true;
  return false;
}

/// Epoch counts replacing the schedules for both interval kinds.
struct EpochOverride {
  std::size_t autoencoder = 0;
  std::size_t refiner = 0;  // image-only, concat and the DCA family

  std::string str() const {
    return autoencoder == refiner ? std::to_string(autoencoder) : std::to_string(autoencoder) + "/" + std::to_string(refiner);
  }
};

namespace detail {

inline std::size_t parse_count(const std::string& s, const std::string& what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error(what + ": expected a non-negative integer, got '" + s + "'");
  return v;
}

inline double parse_real(const std::string& s, const std::string& what) {
  const double v = csv::parse_cell(s, what);
  if (std::isnan(v)) throw Error(what + ": expected a number");
  return v;
}

inline std::vector<std::string> parse_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto item : csv::split(s))
    if (!item.empty()) out.emplace_back(item);
  return out;
}

inline std::string join(const std::vector<std::string>& v, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? std::string(1, sep) : "") + v[i];
  return out;
}

}  // namespace detail

/// Accepts "N" (every model) or "A/B" (autoencoder/refiners).
inline EpochOverride parse_epoch_override(const std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) {
    const std::size_t n = detail::parse_count(s, "epochs override");
    return {n, n};
  }
  return {detail::parse_count(s.substr(0, slash), "epochs override"), detail::parse_count(s.substr(slash + 1), "epochs override")};
}

inline HeavyInterval parse_heavy(const std::string& s) {
  const auto parts = csv::split(s, ':');
  if (parts.size() != 3) throw Error("heavy interval '" + s + "': expected well:start:end");
  HeavyInterval h{std::string(parts[0]), detail::parse_count(std::string(parts[1]), "heavy start"),
                  detail::parse_count(std::string(parts[2]), "heavy end")};
  if (h.end_row <= h.start_row) throw Error("heavy interval '" + s + "': end must exceed start");
  return h;
}

struct RunConfig {
  std::string data_root;
  std::vector<std::string> wells;  // empty: every well directory under data_root
  std::string out = "borelog_run";
  std::uint64_t seed = 42;
  std::vector<std::string> methods = main_method_names();
  SliceConfig slice;
  std::vector<std::string> channels = default_channels();
  std::optional<EpochOverride> epochs_override;
  std::vector<std::string> ablation_intervals;  // empty: heavy intervals, or all intervals when none
  ConfidenceWeighting weighting;
  SyntheticSpec synth;
  std::string synth_well = "synthetic";

  void set_seed(std::uint64_t s) {
    seed = s;
    slice.seed = s;
    synth.seed = s;
  }

  void validate() const {
    slice.validate();
    if (methods.empty()) throw Error("config: no methods selected");
    for (const auto& m : methods)
      if (!is_registered_method(m)) throw Error("config: unknown method '" + m + "'");
    if (channels.empty()) throw Error("config: no log channels selected");
    for (const auto& c : channels)
      if (std::find(default_channels().begin(), default_channels().end(), c) == default_channels().end())
        throw Error("config: unknown channel '" + c + "'");
    if (weighting.floor < 0.0 || weighting.floor > 1.0) throw Error("config: confidence_floor must lie in [0, 1]");
    synth.validate();
  }

  /// Resolved settings that influence results, one per line, sorted by key.
  /// Method selection and the output location do not change any artifact.
  std::string canonical() const {
    std::map<std::string, std::string> kv;
    kv["data_root"] = data_root;
    kv["wells"] = detail::join(wells);
    kv["seed"] = std::to_string(seed);
    kv["slice_height"] = std::to_string(slice.slice_height);
    kv["broad_step"] = std::to_string(slice.broad_step);
    kv["min_valid_height"] = std::to_string(slice.min_valid_height);
    std::vector<std::string> heavy;
    for (const auto& h : slice.heavy) heavy.push_back(h.well_id + ":" + std::to_string(h.start_row) + ":" + std::to_string(h.end_row));
    kv["heavy"] = detail::join(heavy);
    kv["channels"] = detail::join(channels);
    kv["epochs_override"] = epochs_override ? epochs_override->str() : "";
    kv["ablation_intervals"] = detail::join(ablation_intervals);
    kv["confidence_floor"] = csv::format_number(weighting.floor);
    kv["confidence_gamma"] = csv::format_number(weighting.gamma);
    kv["synth.regime"] = to_string(synth.regime);
    kv["synth.rows"] = std::to_string(synth.rows);
    kv["synth.cols"] = std::to_string(synth.cols);
    kv["synth.channels"] = std::to_string(synth.channels);
    kv["synth.base_db"] = csv::format_number(synth.base_db);
    kv["synth.contrast_db"] = csv::format_number(synth.contrast_db);
    kv["synth.noise_db"] = csv::format_number(synth.noise_db);
    kv["synth.log_correlation"] = csv::format_number(synth.log_correlation);
    kv["synth.bands"] = std::to_string(synth.bands);
    kv["synth.dip_rows"] = csv::format_number(synth.dip_rows);
    kv["synth.well"] = synth_well;
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
  }

  std::string hash() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
    return buf;
  }

  std::string header() const { return "borelog config_hash=" + hash() + " seed=" + std::to_string(seed); }

  std::size_t ae_epochs(std::size_t paper_default) const { return epochs_override ? epochs_override->autoencoder : paper_default; }
  std::size_t refiner_epochs(std::size_t paper_default) const { return epochs_override ? epochs_override->refiner : paper_default; }
};

/// Applies one key = value entry; `where` prefixes error messages.
inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value, const std::string& where) {
  const std::string what = where + ": " + key;
  if (key == "data_root") cfg.data_root = value;
  else if (key == "wells") cfg.wells = detail::parse_list(value);
  else if (key == "out") cfg.out = value;
  else if (key == "seed") cfg.seed = detail::parse_count(value, what);
  else if (key == "methods") cfg.methods = detail::parse_list(value);
  else if (key == "slice_height") cfg.slice.slice_height = detail::parse_count(value, what);
  else if (key == "broad_step") cfg.slice.broad_step = detail::parse_count(value, what);
  else if (key == "min_valid_height") cfg.slice.min_valid_height = detail::parse_count(value, what);
  else if (key == "heavy") {
    cfg.slice.heavy.clear();
    for (const auto& h : detail::parse_list(value)) cfg.slice.heavy.push_back(parse_heavy(h));
  } else if (key == "channels") {
    cfg.channels.clear();
    for (const auto& c : detail::parse_list(value)) cfg.channels.push_back(detail::upper(c));
  } else if (key == "epochs_override") {
    if (value.empty()) cfg.epochs_override.reset();
    else cfg.epochs_override = parse_epoch_override(value);
  } else if (key == "ablation_intervals") cfg.ablation_intervals = detail::parse_list(value);
  else if (key == "confidence_floor") cfg.weighting.floor = detail::parse_real(value, what);
  else if (key == "confidence_gamma") cfg.weighting.gamma = detail::parse_real(value, what);
  else if (key == "precision") {
    if (value != "float64") throw Error(what + ": only float64 is supported");
  } else if (key == "synth.regime") cfg.synth.regime = parse_regime(value);
  else if (key == "synth.rows") cfg.synth.rows = detail::parse_count(value, what);
  else if (key == "synth.cols") cfg.synth.cols = detail::parse_count(value, what);
  else if (key == "synth.channels") cfg.synth.channels = detail::parse_count(value, what);
  else if (key == "synth.base_db") cfg.synth.base_db = detail::parse_real(value, what);
  else if (key == "synth.contrast_db") cfg.synth.contrast_db = detail::parse_real(value, what);
  else if (key == "synth.noise_db") cfg.synth.noise_db = detail::parse_real(value, what);
  else if (key == "synth.log_correlation") cfg.synth.log_correlation = detail::parse_real(value, what);
  else if (key == "synth.bands") cfg.synth.bands = detail::parse_count(value, what);
  else if (key == "synth.dip_rows") cfg.synth.dip_rows = detail::parse_real(value, what);
  else if (key == "synth.well") cfg.synth_well = value;
  else throw Error(where + ": unknown key '" + key + "'");
}

inline RunConfig parse_config(std::istream& in, const std::string& name = "config") {
  RunConfig cfg;
  if (const char* root = std::getenv("BORELOG_DATA_ROOT")) cfg.data_root = root;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    std::string_view v = csv::trim(std::string_view(line).substr(0, hash));
    if (v.empty()) continue;
    const std::string where = name + ":" + std::to_string(lineno);
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) throw Error(where + ": expected key = value");
    const std::string key(csv::trim(v.substr(0, eq))), value(csv::trim(v.substr(eq + 1)));
    if (!seen.insert(key).second) throw Error(where + ": duplicate key '" + key + "'");
    apply_setting(cfg, key, value, where);
  }
  cfg.set_seed(cfg.seed);
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  return parse_config(in, path.string());
}

inline RunConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

}  // namespace borelog
