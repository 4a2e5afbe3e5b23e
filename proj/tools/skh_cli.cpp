// skh_cli: runs quadrature and filtering experiment grids from a config file
// and summarizes metric CSVs.
//
//   skh_cli quad   --config configs/quad.ini --out quad.csv
//   skh_cli filter --config configs/lgss.ini --out lgss.csv --workers 4
//   skh_cli summarize --in lgss.csv --out lgss_summary.csv
//
// Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "skh/errors.hpp"
#include "skh/harness/config.hpp"
#include "skh/harness/csv.hpp"
#include "skh/harness/experiments.hpp"

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

struct RunArgs {
  std::string config;
  std::string out;
  std::string trace;
  std::optional<int> workers;
  bool full_scale = false;
};

std::ostream& open_output(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw skh::UsageError("cannot open output file '" + path + "'");
  return file;
}

int run_experiment(const RunArgs& a, skh::harness::ExperimentKind expected) {
  using namespace skh::harness;
  ExperimentConfig cfg = load_config(a.config);
  if (cfg.kind != expected) {
    throw skh::ConfigError(0, "config declares kind '" + to_string(cfg.kind) + "' but the '" + to_string(expected) +
                                  "' subcommand was used");
  }
  if (a.full_scale) cfg.apply_full_scale();
  if (a.workers) cfg.workers = std::max(1, *a.workers);
  const std::string out_path = a.out.empty() ? cfg.output : a.out;
  const std::string hash = config_hash(cfg);

  std::ofstream file;
  if (expected == ExperimentKind::Quad) {
    if (!a.trace.empty()) throw skh::UsageError("--trace applies to filter and rbpf runs");
    const std::vector<MetricRow> rows = run_quad_experiment(cfg);
    write_rows(open_output(out_path, file), rows, hash);
  } else {
    const FilterExperimentResult res = run_filter_experiment(cfg, !a.trace.empty());
    write_rows(open_output(out_path, file), res.rows, hash);
    if (!a.trace.empty()) {
      std::ofstream tf;
      write_traces(open_output(a.trace, tf), res.traces);
    }
  }
  return 0;
}

int run_summarize(const std::string& in_path, const std::string& out_path) {
  using namespace skh::harness;
  std::ifstream in(in_path);
  if (!in) throw skh::UsageError("cannot open '" + in_path + "'");
  std::vector<std::string> warnings;
  const std::vector<SummaryRow> rows = summarize(read_csv(in), &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
  std::ofstream file;
  write_summary(open_output(out_path, file), rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequential kernel herding experiments"};
  app.set_version_flag("--version", skh::harness::version_string());
  app.require_subcommand(1);

  RunArgs args;
  auto add_run = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", args.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", args.out, "metric CSV path (default: config output, else stdout)");
    sub->add_option("--workers", args.workers, "worker threads")->check(CLI::PositiveNumber);
    sub->add_flag("--full-scale", args.full_scale, "larger N grid, T, M and batch counts");
    return sub;
  };
  CLI::App* quad = add_run("quad", "quadrature comparison on a random Gaussian mixture");
  CLI::App* filter = add_run("filter", "particle filter comparison against reference filters");
  CLI::App* rbpf = add_run("rbpf", "Rao-Blackwellized filters on the conditionally linear model");
  for (CLI::App* sub : {filter, rbpf}) sub->add_option("--trace", args.trace, "per-timestep trace CSV path");

  std::string sum_in, sum_out;
  CLI::App* summarize = app.add_subcommand("summarize", "median, quartiles, min and max per method and N");
  summarize->add_option("--in", sum_in, "metric CSV produced by quad/filter/rbpf")->required();
  summarize->add_option("--out", sum_out, "summary CSV path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }

  try {
    using skh::harness::ExperimentKind;
    if (*quad) return run_experiment(args, ExperimentKind::Quad);
    if (*filter) return run_experiment(args, ExperimentKind::Filter);
    if (*rbpf) return run_experiment(args, ExperimentKind::Rbpf);
    return run_summarize(sum_in, sum_out);
  } catch (const skh::ConfigError& e) {
    std::cerr << args.config << ": " << e.what() << '\n';
    return kConfigError;
  } catch (const skh::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfigError;
  } catch (const skh::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  }
}
