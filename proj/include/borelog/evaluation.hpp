#pragma once
// Permutation-invariant agreement, canonical class ordering and structural
// diagnostics over K = 4 label maps.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "borelog/core.hpp"
#include "borelog/interval_io.hpp"
#include "borelog/stats.hpp"

namespace borelog {

inline constexpr std::size_t kClasses = static_cast<std::size_t>(kNumClasses);

using Permutation = std::array<int, kClasses>;
using ClassMatrix = std::array<std::array<std::size_t, kClasses>, kClasses>;

inline Permutation identity_permutation() { return {0, 1, 2, 3}; }

inline void check_labels(const LabelMap& y, const char* who) {
  for (int v : y.data)
    if (v < 0 || v >= kNumClasses) throw Error(std::string(who) + ": label " + std::to_string(v) + " outside [0, 4)");
}

/// M(i, j) counts pixels with class i in a and class j in b.
inline ClassMatrix contingency(const LabelMap& a, const LabelMap& b) {
  if (!a.same_shape(b)) throw Error("contingency: label maps differ in shape");
  check_labels(a, "contingency");
  check_labels(b, "contingency");
  ClassMatrix m{};
  for (std::size_t p = 0; p < a.size(); ++p) ++m[static_cast<std::size_t>(a.data[p])][static_cast<std::size_t>(b.data[p])];
  return m;
}

inline std::size_t matrix_total(const ClassMatrix& m) {
  std::size_t s = 0;
  for (const auto& row : m)
    for (std::size_t v : row) s += v;
  return s;
}

inline LabelMap apply_permutation(const LabelMap& y, const Permutation& pi) {
  LabelMap out = y;
  for (int& v : out.data) v = pi[static_cast<std::size_t>(v)];
  return out;
}

struct Agreement {
  double acc = 0.0;
  Permutation pi = identity_permutation();  // class i of A corresponds to class pi[i] of B
  ClassMatrix raw{};
  ClassMatrix aligned{};  // rows are A classes relabeled by pi, columns are B classes
};

/// Exhaustive search over the 24 label permutations; the first maximizer in
/// lexicographic order wins.
inline Agreement perm_agreement(const LabelMap& a, const LabelMap& b) {
  Agreement r;
  r.raw = contingency(a, b);
  if (a.size() == 0) throw Error("perm_agreement: empty label maps");
  Permutation pi = identity_permutation();
  std::size_t best = 0;
  bool first = true;
  do {
    std::size_t mass = 0;
    for (std::size_t i = 0; i < kClasses; ++i) mass += r.raw[i][static_cast<std::size_t>(pi[i])];
    if (first || mass > best) {
      best = mass;
      r.pi = pi;
      first = false;
    }
  } while (std::next_permutation(pi.begin(), pi.end()));
  for (std::size_t i = 0; i < kClasses; ++i)
    for (std::size_t j = 0; j < kClasses; ++j) r.aligned[static_cast<std::size_t>(r.pi[i])][j] = r.raw[i][j];
  r.acc = static_cast<double>(best) / static_cast<double>(a.size());
  return r;
}

struct ConfusionMasses {
  double diag = 0.0;
  double off_diag = 0.0;
};

inline ConfusionMasses confusion_masses(const ClassMatrix& m) {
  const std::size_t total = matrix_total(m);
  if (total == 0) throw Error("confusion_masses: empty confusion matrix");
  std::size_t tr = 0;
  for (std::size_t i = 0; i < kClasses; ++i) tr += m[i][i];
  const double d = static_cast<double>(tr) / static_cast<double>(total);
  return {d, 1.0 - d};
}

struct CanonicalOrder {
  LabelMap labels;
  Permutation pi = identity_permutation();  // old class -> new class
};

/// Relabels classes by ascending mean amplitude; empty classes go last in
/// their original relative order.
inline CanonicalOrder canonical_reorder(const LabelMap& seg, const Field& amplitude) {
  if (!seg.same_shape(amplitude)) throw Error("canonical_reorder: segmentation and image differ in shape");
  check_labels(seg, "canonical_reorder");
  std::array<double, kClasses> sum{};
  std::array<std::size_t, kClasses> count{};
  for (std::size_t p = 0; p < seg.size(); ++p) {
    const auto k = static_cast<std::size_t>(seg.data[p]);
    sum[k] += amplitude.data[p];
    ++count[k];
  }
  std::array<std::size_t, kClasses> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if ((count[x] == 0) != (count[y] == 0)) return count[y] == 0;
    if (count[x] == 0) return false;
    return sum[x] / static_cast<double>(count[x]) < sum[y] / static_cast<double>(count[y]);
  });
  CanonicalOrder r;
  for (std::size_t rank = 0; rank < kClasses; ++rank) r.pi[order[rank]] = static_cast<int>(rank);
  r.labels = apply_permutation(seg, r.pi);
  return r;
}

inline std::array<double, kClasses> class_fractions(const LabelMap& y) {
  check_labels(y, "class_fractions");
  std::array<double, kClasses> f{};
  for (int v : y.data) f[static_cast<std::size_t>(v)] += 1.0;
  for (double& v : f) v /= static_cast<double>(std::max<std::size_t>(y.size(), 1));
  return f;
}

struct ChangeStats {
  double changed_frac = 0.0;
  std::optional<double> low_conf_change_frac;  // absent when nothing changed
  double tau_low = 0.0;
};

/// Disagreement between two aligned maps and the share of it falling below
/// the first quartile of the confidence map.
inline ChangeStats changed_fraction(const LabelMap& ym, const LabelMap& yref, const Field& confidence) {
  if (!ym.same_shape(yref) || !ym.same_shape(confidence)) throw Error("changed_fraction: shape mismatch");
  if (ym.size() == 0) throw Error("changed_fraction: empty maps");
  ChangeStats s;
  s.tau_low = stats::percentile(confidence.data, 25.0);
  std::size_t changed = 0, low = 0;
  for (std::size_t p = 0; p < ym.size(); ++p) {
    if (ym.data[p] == yref.data[p]) continue;
    ++changed;
    low += confidence.data[p] < s.tau_low;
  }
  s.changed_frac = static_cast<double>(changed) / static_cast<double>(ym.size());
  if (changed > 0) s.low_conf_change_frac = static_cast<double>(low) / static_cast<double>(changed);
  return s;
}

inline std::size_t boundary_length(const LabelMap& y) {
  std::size_t n = 0;
  for (std::size_t r = 0; r < y.rows; ++r)
    for (std::size_t c = 0; c + 1 < y.cols; ++c) n += y(r, c) != y(r, c + 1);
  for (std::size_t r = 0; r + 1 < y.rows; ++r)
    for (std::size_t c = 0; c < y.cols; ++c) n += y(r, c) != y(r + 1, c);
  return n;
}

/// Number of 8-connected same-class components with at least min_size pixels.
inline std::size_t total_components(const LabelMap& y, std::size_t min_size = 10) {
  std::vector<char> seen(y.size(), 0);
  std::vector<std::size_t> stack;
  std::size_t kept = 0;
  for (std::size_t start = 0; start < y.size(); ++start) {
    if (seen[start]) continue;
    const int label = y.data[start];
    seen[start] = 1;
    stack.assign(1, start);
    std::size_t size = 0;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t r = p / y.cols, c = p % y.cols;
      for (std::size_t nr = r == 0 ? 0 : r - 1; nr <= std::min(r + 1, y.rows - 1); ++nr)
        for (std::size_t nc = c == 0 ? 0 : c - 1; nc <= std::min(c + 1, y.cols - 1); ++nc) {
          const std::size_t q = nr * y.cols + nc;
          if (!seen[q] && y.data[q] == label) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
    }
    kept += size >= min_size;
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Per-interval records and cross-well aggregation.

struct MethodEvaluation {
  std::string interval;
  std::string well;
  IntervalKind kind = IntervalKind::kBroad;
  std::string method;
  double acc_pseudo = 0.0;
  double acc_ae_otsu = 0.0;
  double acc_raw_otsu = 0.0;
  ClassMatrix aligned{};
  std::array<double, kClasses> fractions{};
  ConfusionMasses masses;
  std::optional<ChangeStats> change;  // only when a concat prediction is available
  std::size_t boundary = 0;
  std::size_t components = 0;
};

struct EvaluationContext {
  const Field* image_db = nullptr;
  const LabelMap* pseudo = nullptr;
  const LabelMap* ae_otsu = nullptr;
  const LabelMap* raw_otsu = nullptr;
  const LabelMap* concat = nullptr;
  const Field* confidence = nullptr;
};

/// Scores one prediction. Learned and clustered maps are put in canonical
/// order first; all structural metrics use the map aligned to the pseudo-labels.
inline MethodEvaluation evaluate_method(const IntervalSpec& spec, const std::string& method, const LabelMap& prediction,
                                        const EvaluationContext& ctx, bool reorder = true) {
  if (!ctx.image_db || !ctx.pseudo || !ctx.ae_otsu || !ctx.raw_otsu) throw Error("evaluate_method: incomplete context");
  MethodEvaluation e;
  e.interval = spec.id();
  e.well = spec.well_id;
  e.kind = spec.kind;
  e.method = method;
  const LabelMap y = reorder ? canonical_reorder(prediction, *ctx.image_db).labels : prediction;
  const Agreement ap = perm_agreement(y, *ctx.pseudo);
  e.acc_pseudo = ap.acc;
  e.acc_ae_otsu = perm_agreement(y, *ctx.ae_otsu).acc;
  e.acc_raw_otsu = perm_agreement(y, *ctx.raw_otsu).acc;
  e.aligned = ap.aligned;
  e.masses = confusion_masses(ap.aligned);
  const LabelMap aligned = apply_permutation(y, ap.pi);
  e.fractions = class_fractions(aligned);
  e.boundary = boundary_length(aligned);
  e.components = total_components(aligned);
  if (ctx.concat && ctx.confidence) {
    const LabelMap ref = apply_permutation(*ctx.concat, perm_agreement(*ctx.concat, *ctx.pseudo).pi);
    e.change = changed_fraction(aligned, ref, *ctx.confidence);
  }
  return e;
}

struct ScoreRecord {
  std::string well;
  std::string interval;
  IntervalKind kind = IntervalKind::kBroad;
  std::string method;
  double score = 0.0;
};

struct SpreadSummary {
  double mean = 0.0;
  double std = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
  double range() const { return max - min; }
};

inline SpreadSummary summarize(const std::vector<double>& v) {
  if (v.empty()) throw Error("summarize: no values");
  SpreadSummary s;
  s.mean = stats::mean(v);
  s.std = stats::stddev(v);
  s.min = *std::min_element(v.begin(), v.end());
  s.max = *std::max_element(v.begin(), v.end());
  return s;
}

struct MethodSummary {
  std::string method;
  std::size_t wells = 0;
  std::size_t intervals = 0;
  SpreadSummary over_wells;
};

struct CrossWellSummary {
  std::vector<MethodSummary> methods;  // in first-seen order
  // wins[{a, b}] = intervals where a scored strictly above b
  std::map<std::pair<std::string, std::string>, std::size_t> wins;
  std::map<std::pair<std::string, std::string>, std::size_t> compared;
};

/// Per-well means first, then spread over wells; pairwise wins count
/// intervals scored by both methods, ties count for neither.
inline CrossWellSummary aggregate_wells(const std::vector<ScoreRecord>& records) {
  if (records.empty()) throw Error("aggregate_wells: no records");
  CrossWellSummary out;
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::vector<double>>> per_method_well;
  std::map<std::string, std::map<std::string, double>> by_interval;
  for (const auto& r : records) {
    if (!per_method_well.count(r.method)) order.push_back(r.method);
    per_method_well[r.method][r.well].push_back(r.score);
    by_interval[r.interval][r.method] = r.score;
  }
  for (const auto& m : order) {
    MethodSummary s;
    s.method = m;
    std::vector<double> well_means;
    for (const auto& [well, scores] : per_method_well[m]) {
      well_means.push_back(stats::mean(scores));
      s.intervals += scores.size();
    }
    s.wells = well_means.size();
    s.over_wells = summarize(well_means);
    out.methods.push_back(s);
  }
  for (const auto& [interval, scores] : by_interval)
    for (const auto& [a, sa] : scores)
      for (const auto& [b, sb] : scores) {
        if (a == b) continue;
        ++out.compared[{a, b}];
        if (sa > sb) ++out.wins[{a, b}];
      }
  return out;
}

struct AblationRow {
  std::string variant;
  double overall_mean = 0.0;
  double std = 0.0;
  std::optional<double> broad_mean;
  std::optional<double> heavy_mean;
  double delta_vs_full = 0.0;
  std::size_t full_wins = 0;  // intervals where the full model scored strictly higher
  std::size_t comparisons = 0;
};

/// Variant table against a reference variant, one row per variant in
/// first-seen order.
inline std::vector<AblationRow> ablation_summary(const std::vector<ScoreRecord>& records, const std::string& full = "cgdca") {
  if (records.empty()) throw Error("ablation_summary: no records");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ScoreRecord*>> by_variant;
  std::map<std::string, double> full_score;
  for (const auto& r : records) {
    if (!by_variant.count(r.method)) order.push_back(r.method);
    by_variant[r.method].push_back(&r);
    if (r.method == full) full_score[r.interval] = r.score;
  }
  std::vector<AblationRow> rows;
  const bool have_full = by_variant.count(full) > 0;
  double full_mean = 0.0;
  for (const auto& v : order) {
    AblationRow row;
    row.variant = v;
    std::vector<double> all, broad, heavy;
    for (const ScoreRecord* r : by_variant[v]) {
      all.push_back(r->score);
      (r->kind == IntervalKind::kHeavy ? heavy : broad).push_back(r->score);
      if (v != full && full_score.count(r->interval)) {
        ++row.comparisons;
        row.full_wins += full_score[r->interval] > r->score;
      }
    }
    row.overall_mean = stats::mean(all);
    row.std = stats::stddev(all);
    if (!broad.empty()) row.broad_mean = stats::mean(broad);
    if (!heavy.empty()) row.heavy_mean = stats::mean(heavy);
    if (v == full) full_mean = row.overall_mean;
    rows.push_back(row);
  }
  if (have_full)
    for (auto& row : rows) row.delta_vs_full = row.overall_mean - full_mean;
  return rows;
}

}  // namespace borelog
