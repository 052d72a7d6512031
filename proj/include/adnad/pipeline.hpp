#pragma once

// End-to-end runs: configuration, ablation modes, bootstrap and replay, and
// the artifacts a run leaves in its output directory.
//
// Output directory layout:
//   alerts.csv            every abnormal verdict (stream and test)
//   test_verdicts.csv     every verdict on the test partition
//   truth.csv             index,label for the test partition (when labelled)
//   thresholds.csv        threshold events: bootstrap, phase change, retrains
//   metrics.txt           key=value metric report (when labelled)
//   metrics.csv           the same as one CSV row, labelled with the mode
//   scorer.ckpt           final scorer parameters
//   forest.ckpt           final forest (absent when no forest was trained)
//   importances.csv       forest feature importances (with forest.ckpt)
//   warnings.txt          engine and loader warnings
//
// Verdict logs share the columns index,loss,route,label,t1,t2,score; t2 is
// empty while undefined.

#include <adnad/engine.hpp>
#include <adnad/error.hpp>
#include <adnad/ingest.hpp>
#include <adnad/lstm_vae.hpp>
#include <adnad/metrics.hpp>
#include <adnad/random_forest.hpp>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace adnad {

enum class Mode { Adaptive, FixedThreshold, ScorerOnly, InitialOnly, Offline };

inline constexpr std::array<Mode, 5> kAllModes = {Mode::Adaptive, Mode::FixedThreshold, Mode::ScorerOnly,
                                                  Mode::InitialOnly, Mode::Offline};

inline std::string_view mode_name(Mode m) {
  switch (m) {
    case Mode::Adaptive: return "adaptive";
    case Mode::FixedThreshold: return "fixed-threshold";
    case Mode::ScorerOnly: return "scorer-only";
    case Mode::InitialOnly: return "initial-only";
    case Mode::Offline: return "offline";
  }
  return "unknown";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  for (Mode m : kAllModes)
    if (mode_name(m) == s) return m;
  return std::nullopt;
}

/// Switches the engine features a mode disables.
///   adaptive         everything on
///   fixed-threshold  T1 frozen after bootstrap, T2 frozen at the phase change
///   scorer-only      single layer: T1 verdicts only, no forest
///   initial-only     scorer trained on the first round only
///   offline          scorer trained once on first round + training stream
inline void apply_mode(Mode mode, EngineConfig& e) {
  e.adapt_thresholds = mode != Mode::FixedThreshold;
  e.two_layer = mode != Mode::ScorerOnly;
  e.update_scorer = mode != Mode::InitialOnly && mode != Mode::Offline;
}

enum class SplitKind { Fraction, Day };
enum class EvalProtocol { Online, Frozen };

struct StreamConfig {
  bool synthetic = true;
  SyntheticConfig synth;
  std::string path;
  std::string schema_path;
  std::size_t max_rows = 0;  // 0 = all; otherwise an evenly strided subsample
  SplitKind split = SplitKind::Fraction;
  double first_fraction = 0.01;
  double train_fraction = 0.69;
  std::set<std::string> first_days, test_days;        // literal day strings
  std::vector<int> first_day_ordinals, test_day_ordinals;  // 1-based, chronological
};

struct RunConfig {
  std::uint64_t seed = 0;
  Mode mode = Mode::Adaptive;
  StreamConfig stream;
  EngineConfig engine;
  ScorerConfig scorer;
  int offline_epochs = 5;
  EvalProtocol protocol = EvalProtocol::Online;
  double fpr_max = 0.05;
  unsigned eval_threads = 1;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(Errc::InvalidConfig, "config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) fail(Errc::InvalidConfig, "config: unknown key '" + k + "' in '" + where + "'");
  }
}

template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(Errc::InvalidConfig, std::string("config: bad value for '") + key + "' in '" + where + "'");
  }
}

}  // namespace detail

/// Parses a run configuration. `seed` is required; every other field has a
/// default. Unknown keys are rejected so typos do not pass silently.
inline RunConfig parse_run_config(const nlohmann::json& j) {
  using detail::check_keys;
  using detail::read;
  RunConfig c;
  check_keys(j, "root", {"seed", "mode", "stream", "engine", "scorer", "forest", "evaluation"});
  if (!j.contains("seed") || !j["seed"].is_number_integer())
    fail(Errc::InvalidConfig, "config: integer 'seed' is required");
  c.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("mode")) {
    const auto m = j["mode"].is_string() ? parse_mode(j["mode"].get<std::string>()) : std::nullopt;
    if (!m) fail(Errc::InvalidConfig, "config: unknown mode");
    c.mode = *m;
  }

  if (j.contains("stream")) {
    const auto& s = j["stream"];
    check_keys(s, "stream", {"source", "path", "schema", "max_rows", "synthetic", "split"});
    std::string source = "synthetic";
    read(s, "source", source, "stream");
    if (source != "synthetic" && source != "csv") fail(Errc::InvalidConfig, "config: stream.source must be synthetic or csv");
    c.stream.synthetic = source == "synthetic";
    read(s, "path", c.stream.path, "stream");
    read(s, "schema", c.stream.schema_path, "stream");
    read(s, "max_rows", c.stream.max_rows, "stream");
    if (s.contains("synthetic")) {
      const auto& g = s["synthetic"];
      auto& y = c.stream.synth;
      check_keys(g, "stream.synthetic",
                 {"dims", "count", "rank", "ar", "noise", "anomaly_rate", "burst", "anomaly_shift", "anomaly_scale",
                  "drift_start", "drift_end", "drift"});
      read(g, "dims", y.dims, "stream.synthetic");
      read(g, "count", y.count, "stream.synthetic");
      read(g, "rank", y.rank, "stream.synthetic");
      read(g, "ar", y.ar, "stream.synthetic");
      read(g, "noise", y.noise, "stream.synthetic");
      read(g, "anomaly_rate", y.anomaly_rate, "stream.synthetic");
      read(g, "burst", y.burst, "stream.synthetic");
      read(g, "anomaly_shift", y.anomaly_shift, "stream.synthetic");
      read(g, "anomaly_scale", y.anomaly_scale, "stream.synthetic");
      read(g, "drift_start", y.drift_start, "stream.synthetic");
      read(g, "drift_end", y.drift_end, "stream.synthetic");
      read(g, "drift", y.drift, "stream.synthetic");
    }
    if (s.contains("split")) {
      const auto& p = s["split"];
      check_keys(p, "stream.split", {"kind", "first_round", "train", "first_round_days", "test_days"});
      std::string kind = "fraction";
      read(p, "kind", kind, "stream.split");
      if (kind != "fraction" && kind != "day") fail(Errc::InvalidConfig, "config: split.kind must be fraction or day");
      c.stream.split = kind == "day" ? SplitKind::Day : SplitKind::Fraction;
      read(p, "first_round", c.stream.first_fraction, "stream.split");
      read(p, "train", c.stream.train_fraction, "stream.split");
      // Days are given either as literal day strings or as 1-based
      // ordinals into the chronologically sorted distinct days.
      auto read_days = [&](const char* key, std::set<std::string>& literal, std::vector<int>& ordinals) {
        if (!p.contains(key)) return;
        if (!p[key].is_array()) fail(Errc::InvalidConfig, std::string("config: '") + key + "' must be an array");
        for (const auto& d : p[key]) {
          if (d.is_string()) literal.insert(d.get<std::string>());
          else if (d.is_number_integer() && d.get<int>() >= 1) ordinals.push_back(d.get<int>());
          else fail(Errc::InvalidConfig, std::string("config: bad day in '") + key + "'");
        }
      };
      read_days("first_round_days", c.stream.first_days, c.stream.first_day_ordinals);
      read_days("test_days", c.stream.test_days, c.stream.test_day_ordinals);
    }
  }

  if (j.contains("engine")) {
    const auto& e = j["engine"];
    check_keys(e, "engine", {"n", "m", "p1", "p2", "buffer_capacity", "first_round_epochs", "update_epochs",
                             "offline_epochs"});
    read(e, "n", c.engine.n, "engine");
    read(e, "m", c.engine.m, "engine");
    read(e, "p1", c.engine.p1, "engine");
    read(e, "p2", c.engine.p2, "engine");
    read(e, "buffer_capacity", c.engine.buffer_capacity, "engine");
    read(e, "first_round_epochs", c.engine.first_round_epochs, "engine");
    read(e, "update_epochs", c.engine.update_epochs, "engine");
    read(e, "offline_epochs", c.offline_epochs, "engine");
  }

  if (j.contains("scorer")) {
    const auto& s = j["scorer"];
    check_keys(s, "scorer", {"timestep", "hidden", "latent", "learning_rate", "batch_size"});
    read(s, "timestep", c.scorer.timestep, "scorer");
    read(s, "hidden", c.scorer.hidden, "scorer");
    read(s, "latent", c.scorer.latent, "scorer");
    read(s, "learning_rate", c.scorer.learning_rate, "scorer");
    read(s, "batch_size", c.scorer.batch_size, "scorer");
  }

  if (j.contains("forest")) {
    const auto& f = j["forest"];
    check_keys(f, "forest", {"n_estimators", "max_depth", "min_samples_split", "max_features", "ties_to_abnormal",
                             "threads"});
    auto& fc = c.engine.forest;
    read(f, "n_estimators", fc.n_estimators, "forest");
    read(f, "max_depth", fc.max_depth, "forest");
    read(f, "min_samples_split", fc.min_samples_split, "forest");
    read(f, "ties_to_abnormal", fc.ties_to_abnormal, "forest");
    read(f, "threads", fc.threads, "forest");
    std::string mf = "sqrt";
    read(f, "max_features", mf, "forest");
    if (mf != "sqrt" && mf != "all") fail(Errc::InvalidConfig, "config: forest.max_features must be sqrt or all");
    fc.max_features = mf == "all" ? MaxFeatures::All : MaxFeatures::Sqrt;
  }

  if (j.contains("evaluation")) {
    const auto& v = j["evaluation"];
    check_keys(v, "evaluation", {"protocol", "fpr_max", "threads"});
    std::string protocol = "online";
    read(v, "protocol", protocol, "evaluation");
    if (protocol != "online" && protocol != "frozen") fail(Errc::InvalidConfig, "config: protocol must be online or frozen");
    c.protocol = protocol == "frozen" ? EvalProtocol::Frozen : EvalProtocol::Online;
    read(v, "fpr_max", c.fpr_max, "evaluation");
    read(v, "threads", c.eval_threads, "evaluation");
  }

  if (c.scorer.timestep < 1 || c.scorer.hidden < 1 || c.scorer.latent < 1 || c.scorer.batch_size < 1)
    fail(Errc::InvalidConfig, "config: scorer sizes must be >= 1");
  if (!(c.fpr_max > 0 && c.fpr_max <= 1)) fail(Errc::InvalidConfig, "config: fpr_max must lie in (0,1]");
  if (c.offline_epochs < 0) fail(Errc::InvalidConfig, "config: offline_epochs must be >= 0");
  if (!c.stream.synthetic && c.stream.path.empty()) fail(Errc::InvalidConfig, "config: csv stream needs a path");
  c.engine.seed = c.seed;
  c.engine.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, "cannot open config " + path);
  try {
    return parse_run_config(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidConfig, "config " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Formatting

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kVerdictCsvHeader = "index,loss,route,label,t1,t2,score";

inline std::string verdict_csv_row(const Verdict& v) {
  using detail::num;
  return std::to_string(v.index) + "," + num(v.loss) + "," + std::string(route_name(v.route)) + "," +
         std::string(label_name(v.label)) + "," + num(v.t1) + "," + (v.t2 ? num(*v.t2) : "") + "," + num(v.score);
}

// ---------------------------------------------------------------------------
// Running

struct ThresholdEvent {
  std::string event;  // bootstrap | phase_change | retrain
  std::int64_t index = 0;
  Phase phase = Phase::Initial;
  double t1 = 0.0;
  std::optional<double> t2;
  std::string family_normal, family_abnormal;
};

struct RunResult {
  Mode mode = Mode::Adaptive;
  std::size_t dims = 0;
  std::size_t first_round = 0, stream = 0, test = 0;
  std::size_t rejected_rows = 0;
  std::vector<Verdict> test_verdicts;
  std::vector<Label> test_truth;  // empty when the data carries no labels
  std::optional<MetricReport> report;
  std::vector<ThresholdEvent> threshold_events;
  std::vector<std::string> warnings;
  std::size_t alerts = 0;
  std::size_t retrains = 0;
  Phase final_phase = Phase::Initial;
  bool has_forest = false;

  // Serialized artifacts, written verbatim by write_outputs.
  std::string alerts_csv, test_verdicts_csv, truth_csv, thresholds_csv, metrics_txt, metrics_csv;
  std::string scorer_ckpt, forest_ckpt, importances_csv;
};

namespace detail {

class RunSink : public EngineSink {
 public:
  explicit RunSink(RunResult& r) : r_(r) {}

  void on_verdict(const Verdict& v) override {
    if (v.label == Label::Abnormal) {
      ++r_.alerts;
      r_.alerts_csv += verdict_csv_row(v) + "\n";
    }
    if (capture_test) r_.test_verdicts.push_back(v);
  }
  void on_retrain(const RetrainReport& rep) override {
    pending_retrain = rep;
  }
  void on_phase_change(std::int64_t index, const ThresholdPair& t) override {
    pending_phase = index;
    (void)t;
  }
  void on_warning(const std::string& w) override { r_.warnings.push_back(w); }

  bool capture_test = false;
  std::optional<RetrainReport> pending_retrain;
  std::optional<std::int64_t> pending_phase;

 private:
  RunResult& r_;
};

inline ThresholdEvent threshold_event(std::string name, std::int64_t index, Phase phase, const ThresholdPair& t) {
  ThresholdEvent e;
  e.event = std::move(name);
  e.index = index;
  e.phase = phase;
  e.t1 = t.t1;
  e.t2 = t.t2;
  e.family_normal = std::string(family_name(t.fit_normal.family));
  if (t.fit_abnormal) e.family_abnormal = std::string(family_name(t.fit_abnormal->family));
  return e;
}

inline std::vector<FeatureRecord> load_records(const RunConfig& cfg, RunResult& result) {
  std::vector<FeatureRecord> records;
  if (cfg.stream.synthetic) {
    records = synthetic_stream(cfg.stream.synth, cfg.seed);
  } else {
    if (cfg.stream.schema_path.empty()) fail(Errc::InvalidConfig, "config: csv stream needs a schema");
    auto loaded = load_csv(cfg.stream.path, Schema::load(cfg.stream.schema_path));
    result.rejected_rows = loaded.rejected_rows;
    for (auto& w : loaded.warnings) result.warnings.push_back(std::move(w));
    if (loaded.rejected_rows > loaded.warnings.size())
      result.warnings.push_back(std::to_string(loaded.rejected_rows) + " rows rejected in total");
    records = std::move(loaded.records);
  }
  if (cfg.stream.split == SplitKind::Day) order_by_day(records);
  if (cfg.stream.max_rows > 0 && records.size() > cfg.stream.max_rows) {
    std::vector<FeatureRecord> sub;
    sub.reserve(cfg.stream.max_rows);
    for (std::size_t k = 0; k < cfg.stream.max_rows; ++k)
      sub.push_back(std::move(records[k * records.size() / cfg.stream.max_rows]));
    records = std::move(sub);
    for (std::size_t i = 0; i < records.size(); ++i) records[i].index = std::int64_t(i);
  }
  return records;
}

inline std::vector<std::vector<double>> feature_rows(std::span<const FeatureRecord> rs) {
  std::vector<std::vector<double>> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(r.features);
  return out;
}

}  // namespace detail

/// Runs one configuration end to end. Pure apart from reading its inputs:
/// artifacts are returned as strings and written by write_outputs.
inline RunResult run_pipeline(const RunConfig& cfg) {
  RunResult result;
  result.mode = cfg.mode;
  const auto records = detail::load_records(cfg, result);

  StreamSplit split;
  if (cfg.stream.split == SplitKind::Day) {
    auto first_days = cfg.stream.first_days, test_days = cfg.stream.test_days;
    const auto days = distinct_days(records);
    auto resolve = [&](const std::vector<int>& ordinals, std::set<std::string>& into) {
      for (int k : ordinals) {
        if (std::size_t(k) > days.size())
          fail(Errc::InsufficientData, "split: day " + std::to_string(k) + " requested but the data spans " +
                                           std::to_string(days.size()) + " days");
        into.insert(days[std::size_t(k) - 1]);
      }
    };
    resolve(cfg.stream.first_day_ordinals, first_days);
    resolve(cfg.stream.test_day_ordinals, test_days);
    split = split_days(records, first_days, test_days);
  } else {
    split = split_fractions(records, cfg.stream.first_fraction, cfg.stream.train_fraction);
  }
  if (split.first_round.empty()) fail(Errc::InsufficientData, "split: first round is empty");
  result.first_round = split.first_round.size();
  result.stream = split.stream.size();
  result.test = split.test.size();

  const auto normalizer = Normalizer::fit(split.first_round);
  const auto first = detail::feature_rows(normalizer.apply(split.first_round));
  const auto stream = normalizer.apply(split.stream);
  const auto test = normalizer.apply(split.test);
  result.dims = normalizer.output_dims();

  ScorerConfig sc = cfg.scorer;
  sc.features = int(result.dims);
  EngineConfig ec = cfg.engine;
  ec.seed = cfg.seed;
  apply_mode(cfg.mode, ec);

  // Offline pretraining covers the whole training stream, so it gets its own
  // (smaller) epoch budget.
  if (cfg.mode == Mode::Offline) ec.first_round_epochs = cfg.offline_epochs;

  Rng seeds(cfg.seed);
  detail::RunSink sink(result);
  Engine<LstmVae> engine(ec, LstmVae::init(sc, seeds.split(1).next_u64()), result.dims, sc.timestep, &sink);
  if (cfg.mode == Mode::Offline) {
    auto pretrain = first;
    for (const auto& r : stream) pretrain.push_back(r.features);
    engine.bootstrap(first, pretrain);
  } else {
    engine.bootstrap(first);
  }
  result.threshold_events.push_back(detail::threshold_event("bootstrap", -1, engine.phase(), engine.thresholds()));

  auto feed = [&](const std::vector<FeatureRecord>& part) {
    for (const auto& r : part) {
      engine.process(r.features, r.index);
      if (sink.pending_phase) {
        result.threshold_events.push_back(
            detail::threshold_event("phase_change", *sink.pending_phase, Phase::Steady, engine.thresholds()));
        sink.pending_phase.reset();
      }
      if (sink.pending_retrain) {
        result.threshold_events.push_back(
            detail::threshold_event("retrain", sink.pending_retrain->last_index, engine.phase(), engine.thresholds()));
        sink.pending_retrain.reset();
      }
    }
  };
  feed(stream);
  if (cfg.protocol == EvalProtocol::Online) {
    sink.capture_test = true;
    feed(test);
  } else {
    result.test_verdicts = engine.evaluate_frozen(detail::feature_rows(test), test.empty() ? 0 : test.front().index,
                                                  cfg.eval_threads);
    for (const auto& v : result.test_verdicts)
      if (v.label == Label::Abnormal) sink.on_verdict(v);
  }
  result.retrains = engine.retrains();
  result.final_phase = engine.phase();
  result.has_forest = engine.forest().has_value();

  // Artifacts.
  result.alerts_csv = std::string(kVerdictCsvHeader) + "\n" + result.alerts_csv;
  result.test_verdicts_csv = std::string(kVerdictCsvHeader) + "\n";
  for (const auto& v : result.test_verdicts) result.test_verdicts_csv += verdict_csv_row(v) + "\n";

  result.thresholds_csv = "event,index,phase,t1,t2,family_normal,family_abnormal\n";
  for (const auto& e : result.threshold_events)
    result.thresholds_csv += e.event + "," + std::to_string(e.index) + "," + std::string(phase_name(e.phase)) + "," +
                             detail::num(e.t1) + "," + (e.t2 ? detail::num(*e.t2) : "") + "," + e.family_normal + "," +
                             e.family_abnormal + "\n";

  const bool labelled = !test.empty() && std::all_of(test.begin(), test.end(), [](const auto& r) { return r.truth.has_value(); });
  if (labelled) {
    result.truth_csv = "index,label\n";
    std::vector<double> scores;
    std::vector<Label> predicted;
    for (std::size_t i = 0; i < test.size(); ++i) {
      result.test_truth.push_back(*test[i].truth);
      result.truth_csv += std::to_string(test[i].index) + "," + std::string(label_name(*test[i].truth)) + "\n";
      scores.push_back(result.test_verdicts[i].score);
      predicted.push_back(result.test_verdicts[i].label);
    }
    result.report = evaluate(predicted, scores, result.test_truth, cfg.fpr_max);
    result.metrics_txt = "mode=" + std::string(mode_name(cfg.mode)) + "\n" + to_key_value(*result.report);
    result.metrics_csv = std::string(kMetricCsvHeader) + "\n" + to_csv_row(std::string(mode_name(cfg.mode)), *result.report) + "\n";
  } else {
    result.warnings.push_back("test partition is unlabelled or empty; metrics skipped");
  }

  std::ostringstream sc_out;
  engine.scorer().save(sc_out);
  result.scorer_ckpt = sc_out.str();
  if (engine.forest()) {
    std::ostringstream f_out;
    engine.forest()->save(f_out);
    result.forest_ckpt = f_out.str();
    result.importances_csv = "feature,importance\n";
    const auto imp = engine.forest()->feature_importances();
    for (std::size_t k = 0; k < imp.size(); ++k)
      result.importances_csv += std::to_string(normalizer.kept()[k]) + "," + detail::num(imp[k]) + "\n";
  }
  return result;
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(Errc::MissingFile, "cannot write " + p.string());
  out << text;
}

inline void write_outputs(const RunResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "alerts.csv", r.alerts_csv);
  write_text(dir / "test_verdicts.csv", r.test_verdicts_csv);
  write_text(dir / "thresholds.csv", r.thresholds_csv);
  write_text(dir / "scorer.ckpt", r.scorer_ckpt);
  std::string warnings;
  for (const auto& w : r.warnings) warnings += w + "\n";
  write_text(dir / "warnings.txt", warnings);
  if (!r.truth_csv.empty()) write_text(dir / "truth.csv", r.truth_csv);
  if (r.report) {
    write_text(dir / "metrics.txt", r.metrics_txt);
    write_text(dir / "metrics.csv", r.metrics_csv);
  }
  if (!r.forest_ckpt.empty()) {
    write_text(dir / "forest.ckpt", r.forest_ckpt);
    write_text(dir / "importances.csv", r.importances_csv);
  }
}

// ---------------------------------------------------------------------------
// Evaluation of saved logs

struct LoggedVerdict {
  std::int64_t index = 0;
  Label label = Label::Normal;
  double score = 0.0;
};

/// Reads a verdict log (index and label columns required; ranking uses the
/// score column, falling back to loss).
inline std::vector<LoggedVerdict> read_verdict_log(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) fail(Errc::SchemaMismatch, source + ": missing header");
  const auto header = split_csv_line(line);
  auto col = [&](const char* name) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    return std::nullopt;
  };
  const auto ci = col("index"), cl = col("label");
  auto cs = col("score");
  if (!cs) cs = col("loss");
  if (!ci || !cl || !cs) fail(Errc::SchemaMismatch, source + ": needs index, label and score or loss columns");
  std::vector<LoggedVerdict> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const auto idx = cells.size() == header.size() ? parse_number(cells[*ci]) : std::nullopt;
    const auto lab = cells.size() == header.size() ? parse_label(trim(cells[*cl])) : std::nullopt;
    const auto sc = cells.size() == header.size() ? parse_number(cells[*cs]) : std::nullopt;
    if (!idx || !lab || !sc) fail(Errc::SchemaMismatch, source + " row " + std::to_string(row) + ": malformed");
    out.push_back({std::int64_t(*idx), *lab, *sc});
  }
  return out;
}

/// Reads a truth file with index and label columns.
inline std::vector<std::pair<std::int64_t, Label>> read_truth(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) fail(Errc::SchemaMismatch, source + ": missing header");
  const auto header = split_csv_line(line);
  std::optional<std::size_t> ci, cl;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (trim(header[i]) == "index") ci = i;
    if (trim(header[i]) == "label") cl = i;
  }
  if (!ci || !cl) fail(Errc::SchemaMismatch, source + ": needs index and label columns");
  std::vector<std::pair<std::int64_t, Label>> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    const auto idx = cells.size() == header.size() ? parse_number(cells[*ci]) : std::nullopt;
    const auto lab = cells.size() == header.size() ? parse_label(trim(cells[*cl])) : std::nullopt;
    if (!idx || !lab) fail(Errc::SchemaMismatch, source + " row " + std::to_string(row) + ": malformed");
    out.emplace_back(std::int64_t(*idx), *lab);
  }
  return out;
}

/// Scores a verdict log against truth. Every truth index must appear in the
/// log exactly once; extra log rows (e.g. stream verdicts) are ignored.
inline MetricReport evaluate_logs(const std::vector<LoggedVerdict>& log,
                                  const std::vector<std::pair<std::int64_t, Label>>& truth, double fpr_max = 0.05) {
  std::map<std::int64_t, const LoggedVerdict*> by_index;
  for (const auto& v : log)
    if (!by_index.emplace(v.index, &v).second)
      fail(Errc::LengthMismatch, "verdict log repeats index " + std::to_string(v.index));
  std::vector<Label> predicted, labels;
  std::vector<double> scores;
  for (const auto& [index, label] : truth) {
    const auto it = by_index.find(index);
    if (it == by_index.end()) fail(Errc::LengthMismatch, "verdict log has no row for index " + std::to_string(index));
    predicted.push_back(it->second->label);
    scores.push_back(it->second->score);
    labels.push_back(label);
  }
  if (labels.empty()) fail(Errc::EmptyBuffer, "truth file has no rows");
  return evaluate(predicted, scores, labels, fpr_max);
}

}  // namespace adnad
