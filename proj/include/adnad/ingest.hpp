#pragma once

// Stream input: feature CSVs described by a JSON schema, min-max
// normalization learned from the first-round slice, sliding windows,
// partition rules, and a seeded synthetic stream generator.

#include <adnad/error.hpp>
#include <adnad/label.hpp>
#include <adnad/lstm_vae.hpp>
#include <adnad/random.hpp>

#include <nlohmann/json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace adnad {

/// One stream element. `truth` is for evaluation only; the engine consumes
/// `features` alone.
struct FeatureRecord {
  std::int64_t index = 0;
  std::vector<double> features;
  std::optional<Label> truth;
  std::string timestamp;
};

// ---------------------------------------------------------------------------
// CSV + schema

enum class ColumnRole { Feature, Label, Timestamp, Ignore };

inline std::optional<ColumnRole> parse_role(std::string_view s) {
  if (s == "feature") return ColumnRole::Feature;
  if (s == "label") return ColumnRole::Label;
  if (s == "timestamp") return ColumnRole::Timestamp;
  if (s == "ignore") return ColumnRole::Ignore;
  return std::nullopt;
}

/// Maps header names to roles and raw label values to classes.
///
///   {
///     "columns": {"Flow Duration": "feature", "Label": "label", ...},
///     "default_role": "ignore",
///     "label_map": {"Tor": "abnormal", "Non-Tor": "normal"}
///   }
///
/// Columns absent from "columns" take "default_role" ("ignore" unless set).
/// Without a label_map, label cells are parsed as normal/abnormal/0/1.
struct Schema {
  std::map<std::string, ColumnRole> columns;
  ColumnRole default_role = ColumnRole::Ignore;
  std::map<std::string, Label> label_map;

  static Schema from_json(const nlohmann::json& j) {
    Schema s;
    auto role = [](const nlohmann::json& v, const std::string& where) {
      if (!v.is_string()) fail(Errc::SchemaMismatch, "schema: role for " + where + " is not a string");
      const auto r = parse_role(v.get<std::string>());
      if (!r) fail(Errc::SchemaMismatch, "schema: unknown role '" + v.get<std::string>() + "' for " + where);
      return *r;
    };
    if (!j.is_object()) fail(Errc::SchemaMismatch, "schema: top level must be an object");
    if (j.contains("columns")) {
      if (!j["columns"].is_object()) fail(Errc::SchemaMismatch, "schema: 'columns' must be an object");
      for (const auto& [name, v] : j["columns"].items()) s.columns[name] = role(v, "column '" + name + "'");
    }
    if (j.contains("default_role")) s.default_role = role(j["default_role"], "default_role");
    if (j.contains("label_map")) {
      if (!j["label_map"].is_object()) fail(Errc::SchemaMismatch, "schema: 'label_map' must be an object");
      for (const auto& [raw, v] : j["label_map"].items()) {
        const auto l = v.is_string() ? parse_label(v.get<std::string>()) : std::nullopt;
        if (!l) fail(Errc::SchemaMismatch, "schema: label_map value for '" + raw + "' must be normal or abnormal");
        s.label_map[raw] = *l;
      }
    }
    return s;
  }

  static Schema load(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::MissingFile, "cannot open schema " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::SchemaMismatch, "schema " + path + ": " + e.what());
    }
  }

  ColumnRole role_of(const std::string& column) const {
    const auto it = columns.find(column);
    return it == columns.end() ? default_role : it->second;
  }

  std::optional<Label> map_label(std::string_view raw) const {
    if (label_map.empty()) return parse_label(raw);
    const auto it = label_map.find(std::string(raw));
    if (it == label_map.end()) return std::nullopt;
    return it->second;
  }
};

/// Splits one CSV line; double quotes group fields and "" is an escaped quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

/// Parses a finite double occupying the whole (trimmed) cell.
inline std::optional<double> parse_number(std::string_view cell) {
  cell = trim(cell);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v))
    return std::nullopt;
  return v;
}

struct LoadResult {
  std::vector<FeatureRecord> records;
  std::vector<std::string> feature_names;
  std::size_t rejected_rows = 0;
  std::vector<std::string> warnings;  // first few rejection reasons
};

inline LoadResult load_csv(std::istream& in, const Schema& schema, const std::string& source = "csv") {
  std::string line;
  if (!std::getline(in, line)) fail(Errc::SchemaMismatch, source + ": missing header row");
  const auto header = split_csv_line(line);

  LoadResult out;
  std::vector<std::size_t> feature_cols;
  std::optional<std::size_t> label_col, time_col;
  std::set<std::string> seen;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string name(trim(header[c]));
    seen.insert(name);
    switch (schema.role_of(name)) {
      case ColumnRole::Feature:
        feature_cols.push_back(c);
        out.feature_names.push_back(name);
        break;
      case ColumnRole::Label:
        if (label_col) fail(Errc::SchemaMismatch, source + ": more than one label column");
        label_col = c;
        break;
      case ColumnRole::Timestamp:
        if (time_col) fail(Errc::SchemaMismatch, source + ": more than one timestamp column");
        time_col = c;
        break;
      case ColumnRole::Ignore: break;
    }
  }
  for (const auto& [name, role] : schema.columns)
    if (!seen.count(name)) fail(Errc::SchemaMismatch, source + ": schema column '" + name + "' not in header");
  if (feature_cols.empty()) fail(Errc::SchemaMismatch, source + ": schema selects no feature columns");

  auto reject = [&](std::size_t row, const std::string& why) {
    ++out.rejected_rows;
    if (out.warnings.size() < 10) out.warnings.push_back(source + " row " + std::to_string(row) + ": " + why);
  };

  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      reject(row, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
      continue;
    }
    FeatureRecord r;
    r.features.reserve(feature_cols.size());
    bool ok = true;
    for (auto c : feature_cols) {
      const auto v = parse_number(cells[c]);
      if (!v) {
        reject(row, "non-numeric feature '" + header[c] + "'");
        ok = false;
        break;
      }
      r.features.push_back(*v);
    }
    if (!ok) continue;
    if (label_col) {
      r.truth = schema.map_label(trim(cells[*label_col]));
      if (!r.truth) {
        reject(row, "unmapped label '" + cells[*label_col] + "'");
        continue;
      }
    }
    if (time_col) r.timestamp = std::string(trim(cells[*time_col]));
    r.index = std::int64_t(out.records.size());
    out.records.push_back(std::move(r));
  }
  if (out.records.empty()) fail(Errc::EmptyAfterFiltering, source + ": no valid rows");
  return out;
}

inline LoadResult load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, "cannot open " + path);
  return load_csv(in, schema, path);
}

/// Writes records as `f0,...,f{D-1},label` (label omitted when no record
/// carries truth). Values use 17 significant digits so they round-trip.
inline void write_csv(std::ostream& out, std::span<const FeatureRecord> records) {
  if (records.empty()) return;
  const std::size_t d = records.front().features.size();
  const bool labelled = std::any_of(records.begin(), records.end(), [](const auto& r) { return r.truth.has_value(); });
  for (std::size_t f = 0; f < d; ++f) out << (f ? "," : "") << "f" << f;
  if (labelled) out << ",label";
  out << "\n";
  char buf[32];
  for (const auto& r : records) {
    for (std::size_t f = 0; f < d; ++f) {
      std::snprintf(buf, sizeof buf, "%.17g", r.features[f]);
      out << (f ? "," : "") << buf;
    }
    if (labelled) out << "," << (r.truth ? label_name(*r.truth) : "");
    out << "\n";
  }
}

/// Schema matching write_csv output.
inline nlohmann::json default_schema_json(std::size_t dims, bool labelled = true) {
  nlohmann::json cols = nlohmann::json::object();
  for (std::size_t f = 0; f < dims; ++f) cols["f" + std::to_string(f)] = "feature";
  if (labelled) cols["label"] = "label";
  return {{"columns", cols}, {"default_role", "ignore"}};
}

// ---------------------------------------------------------------------------
// Normalization

/// Per-feature min-max scaling learned from the first-round slice. Constant
/// features are dropped; values outside the learned range clip to [0, 1].
class Normalizer {
 public:
  Normalizer() = default;
  Normalizer(std::vector<std::size_t> kept, std::vector<double> lo, std::vector<double> hi, std::size_t input_dims)
      : kept_(std::move(kept)), lo_(std::move(lo)), hi_(std::move(hi)), input_dims_(input_dims) {}

  static Normalizer fit(std::span<const FeatureRecord> first_round) {
    if (first_round.empty()) fail(Errc::InsufficientData, "fit_normalizer: no records");
    const std::size_t d = first_round.front().features.size();
    std::vector<double> lo(d, HUGE_VAL), hi(d, -HUGE_VAL);
    for (const auto& r : first_round) {
      if (r.features.size() != d) fail(Errc::ShapeMismatch, "fit_normalizer: ragged feature vectors");
      for (std::size_t f = 0; f < d; ++f) {
        lo[f] = std::min(lo[f], r.features[f]);
        hi[f] = std::max(hi[f], r.features[f]);
      }
    }
    std::vector<std::size_t> kept;
    std::vector<double> klo, khi;
    for (std::size_t f = 0; f < d; ++f) {
      if (!(hi[f] > lo[f])) continue;
      kept.push_back(f);
      klo.push_back(lo[f]);
      khi.push_back(hi[f]);
    }
    if (kept.empty()) fail(Errc::AllFeaturesConstant, "fit_normalizer: every feature is constant");
    return Normalizer(std::move(kept), std::move(klo), std::move(khi), d);
  }

  std::size_t input_dims() const { return input_dims_; }
  std::size_t output_dims() const { return kept_.size(); }
  const std::vector<std::size_t>& kept() const { return kept_; }
  const std::vector<double>& lo() const { return lo_; }
  const std::vector<double>& hi() const { return hi_; }

  std::vector<double> apply(std::span<const double> x) const {
    if (x.size() != input_dims_) fail(Errc::ShapeMismatch, "normalize: wrong feature count");
    std::vector<double> out(kept_.size());
    for (std::size_t k = 0; k < kept_.size(); ++k)
      out[k] = std::clamp((x[kept_[k]] - lo_[k]) / (hi_[k] - lo_[k]), 0.0, 1.0);
    return out;
  }

  FeatureRecord apply(const FeatureRecord& r) const {
    FeatureRecord out = r;
    out.features = apply(r.features);
    return out;
  }

  std::vector<FeatureRecord> apply(std::span<const FeatureRecord> rs) const {
    std::vector<FeatureRecord> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(apply(r));
    return out;
  }

 private:
  std::vector<std::size_t> kept_;
  std::vector<double> lo_, hi_;
  std::size_t input_dims_ = 0;
};

// ---------------------------------------------------------------------------
// Windows

/// The last T rows of a stream. `full()` once T rows have been pushed.
class SlidingWindow {
 public:
  SlidingWindow(int timestep, std::size_t dims) : timestep_(timestep), dims_(dims) {
    if (timestep < 1) fail(Errc::InvalidConfig, "window: timestep must be >= 1");
  }

  void push(std::span<const double> row, std::int64_t index) {
    if (row.size() != dims_) fail(Errc::ShapeMismatch, "window: wrong feature count");
    rows_.emplace_back(row.begin(), row.end());
    if (rows_.size() > std::size_t(timestep_)) rows_.pop_front();
    last_index_ = index;
  }

  bool full() const { return rows_.size() == std::size_t(timestep_); }
  int timestep() const { return timestep_; }

  SequenceWindow window() const {
    SequenceWindow w;
    w.rows.resize(timestep_, Eigen::Index(dims_));
    for (int t = 0; t < timestep_; ++t)
      for (std::size_t f = 0; f < dims_; ++f) w.rows(t, Eigen::Index(f)) = rows_[std::size_t(t)][f];
    w.end_index = last_index_;
    return w;
  }

  const std::vector<double>& last_row() const { return rows_.back(); }

 private:
  int timestep_;
  std::size_t dims_;
  std::deque<std::vector<double>> rows_;
  std::int64_t last_index_ = 0;
};

/// Stride-1 windows; the first T-1 records yield none.
inline std::vector<SequenceWindow> windows(std::span<const FeatureRecord> records, int timestep) {
  std::vector<SequenceWindow> out;
  if (records.empty()) return out;
  SlidingWindow sw(timestep, records.front().features.size());
  for (const auto& r : records) {
    sw.push(r.features, r.index);
    if (sw.full()) out.push_back(sw.window());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Partitions

struct StreamSplit {
  std::vector<FeatureRecord> first_round;
  std::vector<FeatureRecord> stream;
  std::vector<FeatureRecord> test;
};

/// Consecutive slices in stream order: first `first` of the records, then
/// `train`, then the remainder.
inline StreamSplit split_fractions(std::span<const FeatureRecord> records, double first, double train) {
  if (!(first > 0 && train >= 0 && first + train <= 1.0))
    fail(Errc::InvalidConfig, "split: fractions must satisfy first > 0, train >= 0, first + train <= 1");
  const auto n = records.size();
  const auto a = std::size_t(std::llround(first * double(n)));
  const auto b = std::min(n, a + std::size_t(std::llround(train * double(n))));
  StreamSplit s;
  s.first_round.assign(records.begin(), records.begin() + std::ptrdiff_t(a));
  s.stream.assign(records.begin() + std::ptrdiff_t(a), records.begin() + std::ptrdiff_t(b));
  s.test.assign(records.begin() + std::ptrdiff_t(b), records.end());
  return s;
}

/// Day key of a timestamp: the text before the first space or 'T'.
inline std::string day_of(std::string_view timestamp) {
  const auto cut = timestamp.find_first_of(" T");
  return std::string(timestamp.substr(0, cut));
}

/// Chronological sort key for a day string: yyyy-mm-dd, yyyy/mm/dd or
/// dd/mm/yyyy (the CIC exports' format). nullopt for anything else.
inline std::optional<int> day_key(std::string_view day) {
  int a = 0, b = 0, c = 0;
  char s1 = 0, s2 = 0;
  char tail = 0;
  const std::string text(day);
  if (std::sscanf(text.c_str(), "%d%c%d%c%d%c", &a, &s1, &b, &s2, &c, &tail) != 5 || s1 != s2 ||
      (s1 != '-' && s1 != '/'))
    return std::nullopt;
  const bool year_first = text.find(s1) == 4;
  const int y = year_first ? a : c, d = year_first ? c : a;
  if (b < 1 || b > 12 || d < 1 || d > 31 || y < 1) return std::nullopt;
  return y * 10000 + b * 100 + d;
}

/// Distinct days of the records in chronological order (lexicographic when
/// some day does not parse as a date).
inline std::vector<std::string> distinct_days(std::span<const FeatureRecord> records) {
  std::set<std::string> days;
  for (const auto& r : records) days.insert(day_of(r.timestamp));
  std::vector<std::string> out(days.begin(), days.end());
  const bool dated = std::all_of(out.begin(), out.end(), [](const auto& d) { return day_key(d).has_value(); });
  if (dated) std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return *day_key(x) < *day_key(y); });
  return out;
}

/// Stable-sorts records into chronological day order (file order within a
/// day) and renumbers their indices. No-op when some day is not a date.
inline void order_by_day(std::vector<FeatureRecord>& records) {
  std::vector<std::pair<int, std::size_t>> keys;
  keys.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto k = day_key(day_of(records[i].timestamp));
    if (!k) return;
    keys.emplace_back(*k, i);
  }
  std::stable_sort(keys.begin(), keys.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<FeatureRecord> sorted;
  sorted.reserve(records.size());
  for (const auto& [k, i] : keys) sorted.push_back(std::move(records[i]));
  records = std::move(sorted);
  for (std::size_t i = 0; i < records.size(); ++i) records[i].index = std::int64_t(i);
}

/// Records whose day is listed in `first_days` form the first round, those in
/// `test_days` the test set, and all others the training stream.
inline StreamSplit split_days(std::span<const FeatureRecord> records, const std::set<std::string>& first_days,
                              const std::set<std::string>& test_days) {
  StreamSplit s;
  for (const auto& r : records) {
    const auto day = day_of(r.timestamp);
    if (first_days.count(day)) s.first_round.push_back(r);
    else if (test_days.count(day)) s.test.push_back(r);
    else s.stream.push_back(r);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Synthetic stream

/// Normal traffic: x_t = mean + drift(t) + W z_t + noise, where z_t is an
/// AR(1) latent process of dimension `rank` (so windows carry temporal
/// structure) and W a fixed random loading matrix. Anomalies arrive in bursts
/// of `burst` consecutive records starting with probability rate / burst;
/// inside a burst records ignore the latent structure and are drawn
/// independently around mean + drift + a fixed random offset.
struct SyntheticConfig {
  std::size_t dims = 8;
  std::size_t count = 100000;
  int rank = 3;
  double ar = 0.8;
  double noise = 0.3;
  double anomaly_rate = 0.015;
  int burst = 1;
  double anomaly_shift = 1.5;  // RMS per-feature offset of the anomaly centre
  double anomaly_scale = 1.5;  // anomaly spread, in units of the normal spread
  double drift_start = 0.5;  // fraction of the stream where the ramp begins
  double drift_end = 1.0;    // fraction where it reaches full magnitude
  double drift = 0.0;        // full drift, per feature, in units of the normal spread
};

inline std::vector<FeatureRecord> synthetic_stream(const SyntheticConfig& cfg, std::uint64_t seed) {
  if (cfg.dims == 0 || cfg.rank < 1 || cfg.burst < 1 || cfg.anomaly_rate < 0 || cfg.anomaly_rate > 1)
    fail(Errc::InvalidConfig, "synthetic: invalid configuration");
  Rng rng(seed);
  const auto d = cfg.dims;
  const auto r = std::size_t(cfg.rank);
  Eigen::MatrixXd w(d, r);
  Eigen::VectorXd mean(d), drift_dir(d), offset(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < r; ++k) w(Eigen::Index(i), Eigen::Index(k)) = rng.normal(0.0, 1.0 / std::sqrt(double(r)));
  for (std::size_t i = 0; i < d; ++i) {
    mean(Eigen::Index(i)) = rng.uniform(-1.0, 1.0);
    drift_dir(Eigen::Index(i)) = rng.bernoulli(0.5) ? 1.0 : -1.0;
    offset(Eigen::Index(i)) = rng.normal();
  }
  // Anomalies sit a fixed distance away (random direction), so difficulty
  // does not depend on the seed's draw of the offset length.
  if (offset.norm() > 0) offset *= cfg.anomaly_shift * std::sqrt(double(d)) / offset.norm();
  // Stationary latent spread is 1, so each normal feature has spread near
  // sqrt(|w_i|^2 + noise^2); drift is measured against that.
  Eigen::VectorXd spread(d);
  for (std::size_t i = 0; i < d; ++i)
    spread(Eigen::Index(i)) = std::sqrt(w.row(Eigen::Index(i)).squaredNorm() + cfg.noise * cfg.noise);

  const double innovation = std::sqrt(1.0 - cfg.ar * cfg.ar);
  Eigen::VectorXd z(r);
  for (std::size_t k = 0; k < r; ++k) z(Eigen::Index(k)) = rng.normal();
  const double start_p = cfg.anomaly_rate / double(cfg.burst);

  std::vector<FeatureRecord> out;
  out.reserve(cfg.count);
  int burst_left = 0;
  for (std::size_t t = 0; t < cfg.count; ++t) {
    const double pos = cfg.count > 1 ? double(t) / double(cfg.count - 1) : 0.0;
    double ramp = 0.0;
    if (pos >= cfg.drift_end) ramp = 1.0;
    else if (pos > cfg.drift_start) ramp = (pos - cfg.drift_start) / (cfg.drift_end - cfg.drift_start);
    const Eigen::VectorXd centre = mean + cfg.drift * ramp * drift_dir.cwiseProduct(spread);

    for (std::size_t k = 0; k < r; ++k) z(Eigen::Index(k)) = cfg.ar * z(Eigen::Index(k)) + innovation * rng.normal();
    if (burst_left == 0 && rng.bernoulli(start_p)) burst_left = cfg.burst;

    FeatureRecord rec;
    rec.index = std::int64_t(t);
    rec.features.resize(d);
    if (burst_left > 0) {
      --burst_left;
      rec.truth = Label::Abnormal;
      for (std::size_t i = 0; i < d; ++i)
        rec.features[i] = centre(Eigen::Index(i)) + offset(Eigen::Index(i)) +
                          rng.normal(0.0, cfg.anomaly_scale * spread(Eigen::Index(i)));
    } else {
      rec.truth = Label::Normal;
      const Eigen::VectorXd x = centre + w * z;
      for (std::size_t i = 0; i < d; ++i) rec.features[i] = x(Eigen::Index(i)) + rng.normal(0.0, cfg.noise);
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace adnad
