#pragma once

// Evaluation of verdict streams against ground truth.
//
// Abnormal is the positive class. Hard-label metrics come from a confusion
// table; ranking metrics (ROC, standardized partial AUC) come from a
// per-sample score where larger means more abnormal.

#include <adnad/error.hpp>
#include <adnad/label.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace adnad {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const Label> predicted, std::span<const Label> truth) {
  if (predicted.size() != truth.size())
    fail(Errc::LengthMismatch, "confusion: " + std::to_string(predicted.size()) +
                                   " predictions vs " + std::to_string(truth.size()) + " labels");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool p = predicted[i] == Label::Abnormal;
    const bool t = truth[i] == Label::Abnormal;
    if (p && t) ++c.tp;
    else if (p) ++c.fp;
    else if (t) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// False alarm rate fp / (fp + tn).
inline double far(const ConfusionCounts& c) {
  if (c.fp + c.tn == 0) fail(Errc::UndefinedRate, "far: no normal samples in truth");
  return double(c.fp) / double(c.fp + c.tn);
}

/// Missed detection rate fn / (fn + tp).
inline double mdr(const ConfusionCounts& c) {
  if (c.fn + c.tp == 0) fail(Errc::UndefinedRate, "mdr: no abnormal samples in truth");
  return double(c.fn) / double(c.fn + c.tp);
}

inline double accuracy(const ConfusionCounts& c) {
  if (c.total() == 0) fail(Errc::UndefinedRate, "accuracy: no samples");
  return double(c.tp + c.tn) / double(c.total());
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

namespace detail {

inline double ratio_or_zero(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : double(num) / double(den);
}

inline ClassScores class_scores(std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  ClassScores s;
  s.precision = ratio_or_zero(tp, tp + fp);
  s.recall = ratio_or_zero(tp, tp + fn);
  const double sum = s.precision + s.recall;
  s.f1 = sum == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / sum;
  return s;
}

}  // namespace detail

/// Scores with each class taken as positive in turn, indexed by Label.
/// Empty denominators count as 0.
inline std::array<ClassScores, 2> per_class_scores(const ConfusionCounts& c) {
  return {detail::class_scores(c.tn, c.fn, c.fp), detail::class_scores(c.tp, c.fp, c.fn)};
}

/// Unweighted mean over the two classes; macro-F1 is the mean of the
/// per-class F1 values.
inline ClassScores macro_prf(const ConfusionCounts& c) {
  const auto pc = per_class_scores(c);
  return {(pc[0].precision + pc[1].precision) / 2.0, (pc[0].recall + pc[1].recall) / 2.0,
          (pc[0].f1 + pc[1].f1) / 2.0};
}

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;

  bool operator==(const RocPoint&) const = default;
};

/// ROC curve from a descending threshold sweep. `thresholds[i]` is the score
/// at or above which samples are called abnormal to reach `points[i]`; the
/// first point (0,0) has threshold +inf.
struct RocCurve {
  std::vector<RocPoint> points;
  std::vector<double> thresholds;
};

/// Samples sharing a score move together, so the curve does not depend on
/// input order.
inline RocCurve roc(std::span<const double> scores, std::span<const Label> truth) {
  if (scores.size() != truth.size())
    fail(Errc::LengthMismatch, "roc: scores and labels differ in length");
  std::uint64_t pos = 0;
  for (auto t : truth) pos += t == Label::Abnormal;
  const std::uint64_t neg = truth.size() - pos;
  if (pos == 0 || neg == 0) fail(Errc::SingleClass, "roc: truth contains a single class");
  for (double s : scores)
    if (!std::isfinite(s)) fail(Errc::NonFinite, "roc: non-finite score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0});
  curve.thresholds.push_back(HUGE_VAL);
  std::uint64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i)
      (truth[order[i]] == Label::Abnormal ? tp : fp) += 1;
    curve.points.push_back({double(fp) / double(neg), double(tp) / double(pos)});
    curve.thresholds.push_back(s);
  }
  return curve;
}

/// Trapezoidal area under the curve for fpr in [0, fpr_max], interpolating
/// linearly where a segment crosses fpr_max.
inline double partial_auc(const RocCurve& curve, double fpr_max) {
  if (!(fpr_max > 0.0 && fpr_max <= 1.0)) fail(Errc::InvalidConfig, "partial_auc: fpr_max outside (0,1]");
  double area = 0.0;
  const auto& p = curve.points;
  for (std::size_t i = 1; i < p.size(); ++i) {
    const RocPoint a = p[i - 1];
    RocPoint b = p[i];
    if (a.fpr >= fpr_max) break;
    if (b.fpr > fpr_max) {
      const double w = (fpr_max - a.fpr) / (b.fpr - a.fpr);
      b = {fpr_max, a.tpr + w * (b.tpr - a.tpr)};
    }
    area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2.0;
  }
  return area;
}

inline double auc(const RocCurve& curve) { return partial_auc(curve, 1.0); }

/// McClish standardization of the partial AUC: chance maps to 0.5 and a
/// perfect ranking to 1.
inline double spauc(const RocCurve& curve, double fpr_max = 0.05) {
  const double a_min = fpr_max * fpr_max / 2.0;
  const double a_max = fpr_max;
  return 0.5 * (1.0 + (partial_auc(curve, fpr_max) - a_min) / (a_max - a_min));
}

/// Hard-label and ranking metrics for one evaluated stream. Rates that are
/// undefined for the given truth are NaN.
struct MetricReport {
  ConfusionCounts counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double far = 0.0;
  double mdr = 0.0;
  double spauc = 0.0;
};

inline MetricReport evaluate(std::span<const Label> predicted, std::span<const double> scores,
                             std::span<const Label> truth, double fpr_max = 0.05) {
  MetricReport r;
  r.counts = confusion(predicted, truth);
  if (r.counts.total() == 0) fail(Errc::InsufficientData, "evaluate: empty stream");
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  const auto prf = macro_prf(r.counts);
  r.accuracy = accuracy(r.counts);
  r.precision = prf.precision;
  r.recall = prf.recall;
  r.f1 = prf.f1;
  r.far = r.counts.fp + r.counts.tn ? far(r.counts) : nan;
  r.mdr = r.counts.fn + r.counts.tp ? mdr(r.counts) : nan;
  const bool both = r.counts.fp + r.counts.tn && r.counts.fn + r.counts.tp;
  r.spauc = both ? spauc(roc(scores, truth), fpr_max) : nan;
  return r;
}

namespace detail {

inline std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

/// `key=value` lines, fractions printed with 6 decimals.
inline std::string to_key_value(const MetricReport& r) {
  std::string out;
  auto line = [&](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
  line("accuracy", detail::fixed(r.accuracy, 6));
  line("precision_macro", detail::fixed(r.precision, 6));
  line("recall_macro", detail::fixed(r.recall, 6));
  line("f1_macro", detail::fixed(r.f1, 6));
  line("far", detail::fixed(r.far, 6));
  line("mdr", detail::fixed(r.mdr, 6));
  line("spauc", detail::fixed(r.spauc, 6));
  line("tp", std::to_string(r.counts.tp));
  line("fp", std::to_string(r.counts.fp));
  line("tn", std::to_string(r.counts.tn));
  line("fn", std::to_string(r.counts.fn));
  return out;
}

inline constexpr const char* kMetricCsvHeader =
    "label,accuracy,precision_macro,recall_macro,f1_macro,far,mdr,spauc,tp,fp,tn,fn";

inline std::string to_csv_row(const std::string& label, const MetricReport& r) {
  std::string out = label;
  for (double v : {r.accuracy, r.precision, r.recall, r.f1, r.far, r.mdr, r.spauc})
    out += "," + detail::fixed(v, 6);
  for (auto v : {r.counts.tp, r.counts.fp, r.counts.tn, r.counts.fn}) out += "," + std::to_string(v);
  return out;
}

/// Percent table row in the column order Acc, Pre, Rec, F1, FAR, MDR, SPAUC.
inline std::string to_table_row(const MetricReport& r) {
  std::string out;
  for (double v : {r.accuracy, r.precision, r.recall, r.f1, r.far, r.mdr, r.spauc}) {
    if (!out.empty()) out += "  ";
    out += detail::fixed(100.0 * v, 2);
  }
  return out;
}

inline constexpr const char* kMetricTableHeader = "Acc.  Pre.  Rec.  F1  FAR  MDR  SPAUC";

}  // namespace adnad
