// adnad: command-line driver for the online anomaly detector.
//
//   adnad run   --config run.json [--seed N] [--mode M] [--out DIR] [--dataset-schema S]
//   adnad fit   losses.csv --column loss [--percentile 0.98] [--out DIR]
//   adnad eval  test_verdicts.csv truth.csv
//   adnad synth --seed N --out DIR [--config run.json]
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 numeric divergence.

#include <adnad/pipeline.hpp>
#include <adnad/threshold.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDivergence = 3 };

int exit_code(adnad::Errc code) {
  switch (code) {
    case adnad::Errc::InvalidConfig:
    case adnad::Errc::InvalidPercentile: return kUsage;
    case adnad::Errc::NonFinite: return kDivergence;
    default: return kData;
  }
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[48];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

struct RunArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out = "adnad_out";
  std::string schema;
};

int cmd_run(const RunArgs& a) {
  auto cfg = adnad::load_run_config(a.config);
  if (a.seed) cfg.seed = cfg.engine.seed = *a.seed;
  if (!a.mode.empty()) {
    const auto m = adnad::parse_mode(a.mode);
    if (!m) adnad::fail(adnad::Errc::InvalidConfig, "unknown mode '" + a.mode + "'");
    cfg.mode = *m;
  }
  if (!a.schema.empty()) cfg.stream.schema_path = a.schema;

  const auto r = adnad::run_pipeline(cfg);
  adnad::write_outputs(r, a.out);

  std::cout << "mode " << adnad::mode_name(r.mode) << ": " << r.first_round << " first-round, " << r.stream
            << " stream, " << r.test << " test records (" << r.dims << " features)\n";
  std::cout << "retrains " << r.retrains << ", phase " << adnad::phase_name(r.final_phase) << ", alerts " << r.alerts
            << "\n";
  if (r.report) std::cout << adnad::kMetricTableHeader << "\n" << adnad::to_table_row(*r.report) << "\n";
  if (!r.warnings.empty())
    std::cerr << r.warnings.size() << " warning(s); see " << (std::filesystem::path(a.out) / "warnings.txt").string()
              << "\n";
  std::cout << "outputs written to " << a.out << "\n";
  return kOk;
}

std::vector<double> read_column(const std::string& path, const std::string& column) {
  std::ifstream in(path);
  if (!in) adnad::fail(adnad::Errc::MissingFile, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) adnad::fail(adnad::Errc::SchemaMismatch, path + ": missing header");
  const auto header = adnad::split_csv_line(line);
  std::optional<std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (adnad::trim(header[i]) == column) col = i;
  if (!col) adnad::fail(adnad::Errc::SchemaMismatch, path + ": no column '" + column + "'");
  std::vector<double> values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    const auto cells = adnad::split_csv_line(line);
    if (*col >= cells.size() || adnad::trim(cells[*col]).empty()) continue;
    const auto v = adnad::parse_number(cells[*col]);
    if (!v) adnad::fail(adnad::Errc::SchemaMismatch, path + " row " + std::to_string(row) + ": not a number");
    values.push_back(*v);
  }
  return values;
}

int cmd_fit(const std::string& path, const std::string& column, double p, const std::string& out) {
  if (!(p > 0.0 && p < 1.0))
    adnad::fail(adnad::Errc::InvalidPercentile, "percentile must lie in (0,1), got " + fmt(p));
  const auto values = read_column(path, column);
  const auto t = adnad::adaptive_threshold(values, p);
  const bool lognormal = t.fit.family == adnad::Family::LogNormal;
  std::cout << "family " << adnad::family_name(t.fit.family) << "\n"
            << (lognormal ? "mu " : "location ") << fmt(t.fit.location, "%.10g") << "\n"
            << (lognormal ? "sigma " : "scale ") << fmt(t.fit.scale, "%.10g") << "\n"
            << "ks " << fmt(t.fit.gof, "%.6f") << "\n"
            << "n " << values.size() << "\n"
            << "percentile " << fmt(p) << "\n"
            << "threshold " << fmt(t.threshold, "%.10g") << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::string csv = "value,theoretical,empirical\n";
    for (const auto& pt : adnad::pp_points(values, t.fit))
      csv += fmt(pt.value, "%.17g") + "," + fmt(pt.theoretical, "%.17g") + "," + fmt(pt.empirical, "%.17g") + "\n";
    adnad::write_text(std::filesystem::path(out) / "pp.csv", csv);
    std::cout << "pp data written to " << (std::filesystem::path(out) / "pp.csv").string() << "\n";
  }
  return kOk;
}

int cmd_eval(const std::string& log_path, const std::string& truth_path, double fpr_max) {
  std::ifstream log(log_path), truth(truth_path);
  if (!log) adnad::fail(adnad::Errc::MissingFile, "cannot open " + log_path);
  if (!truth) adnad::fail(adnad::Errc::MissingFile, "cannot open " + truth_path);
  const auto report =
      adnad::evaluate_logs(adnad::read_verdict_log(log, log_path), adnad::read_truth(truth, truth_path), fpr_max);
  std::cout << adnad::kMetricTableHeader << "\n" << adnad::to_table_row(report) << "\n";
  return kOk;
}

int cmd_synth(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
              std::optional<std::size_t> count) {
  adnad::SyntheticConfig synth;
  if (!config.empty()) {
    const auto cfg = adnad::load_run_config(config);
    synth = cfg.stream.synth;
    if (!seed) seed = cfg.seed;
  }
  if (!seed) adnad::fail(adnad::Errc::InvalidConfig, "synth needs --seed or a config with a seed");
  if (count) synth.count = *count;
  const auto records = adnad::synthetic_stream(synth, *seed);
  std::filesystem::create_directories(out);
  const auto dir = std::filesystem::path(out);
  std::ofstream csv(dir / "stream.csv", std::ios::binary);
  if (!csv) adnad::fail(adnad::Errc::MissingFile, "cannot write " + (dir / "stream.csv").string());
  adnad::write_csv(csv, records);
  adnad::write_text(dir / "schema.json", adnad::default_schema_json(synth.dims).dump(2) + "\n");
  std::cout << records.size() << " records written to " << (dir / "stream.csv").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online self-adaptive network anomaly detector"};
  app.require_subcommand(1);

  RunArgs run;
  auto* run_cmd = app.add_subcommand("run", "Bootstrap on the first round, replay the stream, evaluate the test part");
  run_cmd->add_option("--config", run.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--seed", run.seed, "Override the configured seed");
  run_cmd->add_option("--mode", run.mode, "adaptive | fixed-threshold | scorer-only | initial-only | offline");
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  run_cmd->add_option("--dataset-schema", run.schema, "Override the CSV schema file")->check(CLI::ExistingFile);

  std::string fit_csv, fit_column, fit_out;
  double fit_p = 0.98;
  auto* fit_cmd = app.add_subcommand("fit", "Fit the best loss distribution to a CSV column and report its quantile");
  fit_cmd->add_option("csv", fit_csv, "Input CSV with a header row")->required();
  fit_cmd->add_option("--column", fit_column, "Column to fit")->required();
  fit_cmd->add_option("--percentile", fit_p, "Quantile level in (0,1)")->capture_default_str();
  fit_cmd->add_option("--out", fit_out, "Directory for pp.csv (probability-plot data)");

  std::string eval_log, eval_truth;
  double eval_fpr = 0.05;
  auto* eval_cmd = app.add_subcommand("eval", "Score a verdict log against a truth file");
  eval_cmd->add_option("log", eval_log, "Verdict log (index,label,score or loss columns)")->required();
  eval_cmd->add_option("truth", eval_truth, "Truth CSV (index,label)")->required();
  eval_cmd->add_option("--fpr-max", eval_fpr, "FPR cut-off for the standardized partial AUC")->capture_default_str();

  std::string synth_config, synth_out = "adnad_synth";
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::size_t> synth_count;
  auto* synth_cmd = app.add_subcommand("synth", "Write a labelled synthetic drift stream and its schema");
  synth_cmd->add_option("--config", synth_config, "Take stream.synthetic settings from a run configuration")
      ->check(CLI::ExistingFile);
  synth_cmd->add_option("--seed", synth_seed, "Generator seed");
  synth_cmd->add_option("--count", synth_count, "Number of records");
  synth_cmd->add_option("--out", synth_out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*fit_cmd) return cmd_fit(fit_csv, fit_column, fit_p, fit_out);
    if (*eval_cmd) return cmd_eval(eval_log, eval_truth, eval_fpr);
    if (*synth_cmd) return cmd_synth(synth_config, synth_seed, synth_out, synth_count);
  } catch (const adnad::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
