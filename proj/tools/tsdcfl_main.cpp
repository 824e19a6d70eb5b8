// Command-line driver: simulate | compare | verify | plot-data.
// Exit codes: 0 success, 1 verification failure, 2 configuration error,
// 3 I/O error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "tsdcfl/config.hpp"
#include "tsdcfl/report.hpp"
#include "tsdcfl/sim.hpp"
#include "tsdcfl/verify.hpp"

namespace fs = std::filesystem;
using namespace tsdcfl;

namespace {

nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

config::ExperimentConfig load_config(const std::string& path, const std::string& scheme,
                                     uint64_t seed, int epochs) {
  nlohmann::json j = load_json(path);
  if (!scheme.empty()) j["scheme"] = scheme;
  if (seed != 0) j["seed"] = seed;
  if (epochs > 0) j["epochs"] = epochs;
  return config::parse_config(j);
}

void write_outputs(const report::RunReport& rep, const fs::path& dir, bool slot_trace,
                   const std::string& stem) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory: " + dir.string());
  report::write_report_json(rep, (dir / (stem + "_report.json")).string());
  report::write_text_file((dir / (stem + "_epochs.csv")).string(), report::epoch_csv(rep));
  if (slot_trace)
    report::write_text_file((dir / (stem + "_slots.csv")).string(),
                            report::slot_trace_csv(rep.slot_trace));
}

int cmd_simulate(const std::string& config_path, const std::string& scheme, uint64_t seed,
                 int epochs, const std::string& out_dir) {
  const auto cfg = load_config(config_path, scheme, seed, epochs);
  log_info("simulate scheme=" + config::to_string(cfg.scheme) + " seed=" + std::to_string(cfg.seed));
  const auto rep = sim::run_experiment(cfg);
  write_outputs(rep, out_dir, cfg.slot_trace, config::to_string(cfg.scheme));
  std::printf("scheme=%s seed=%llu epochs=%zu mean_iteration_time=%s final_loss=%s fairness=%s\n",
              rep.scheme.c_str(), static_cast<unsigned long long>(rep.seed), rep.epochs.size(),
              format_double(rep.mean_iteration_time).c_str(), format_double(rep.final_loss).c_str(),
              format_double(rep.fairness).c_str());
  return 0;
}

int cmd_compare(const std::string& config_path, int reps, const std::string& out_dir,
                const std::vector<std::string>& schemes) {
  const nlohmann::json base = load_json(config_path);
  std::vector<report::RunReport> reports;
  struct Row {
    std::string scheme;
    double mean = 0, var = 0;
    int n = 0;
  };
  std::vector<Row> summary;
  bool any_failed = false;

  for (const std::string& scheme : schemes) {
    Row row;
    row.scheme = scheme;
    std::vector<double> means;
    for (int rep_idx = 0; rep_idx < reps; ++rep_idx) {
      try {
        nlohmann::json j = base;
        j["scheme"] = scheme;
        j["seed"] = base.value("seed", 1ull) + rep_idx;
        if (!j.contains("output")) j["output"] = nlohmann::json::object();
        j["output"]["slot_trace"] = false;  // traces are per-run artifacts, not comparisons
        auto cfg = config::parse_config(j);
        auto rep = sim::run_experiment(cfg);
        means.push_back(rep.mean_iteration_time);
        reports.push_back(std::move(rep));
      } catch (const std::exception& e) {
        any_failed = true;
        log_error("compare: scheme " + scheme + " rep " + std::to_string(rep_idx) + " failed: " +
                  e.what());
      }
    }
    row.n = static_cast<int>(means.size());
    for (double m : means) row.mean += m;
    row.mean /= std::max(row.n, 1);
    for (double m : means) row.var += (m - row.mean) * (m - row.mean);
    row.var = row.n > 1 ? row.var / (row.n - 1) : 0.0;
    summary.push_back(row);
  }

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory: " + out_dir);
  report::write_text_file((fs::path(out_dir) / "comparison.csv").string(),
                          report::comparison_csv(reports));
  std::string summary_csv = "scheme,reps,mean_iteration_time,std_iteration_time\n";
  std::printf("%-8s %4s %20s %20s\n", "scheme", "reps", "mean_iteration_time", "std_iteration_time");
  for (const auto& row : summary) {
    const double sd = std::sqrt(row.var);
    summary_csv += row.scheme + ',' + std::to_string(row.n) + ',' + format_double(row.mean) + ',' +
                   format_double(sd) + '\n';
    std::printf("%-8s %4d %20s %20s\n", row.scheme.c_str(), row.n, format_double(row.mean).c_str(),
                format_double(sd).c_str());
  }
  report::write_text_file((fs::path(out_dir) / "summary.csv").string(), summary_csv);
  return any_failed ? 1 : 0;
}

int cmd_verify(int max_workers, int max_partitions, int max_s, bool corrupt) {
  const auto started = std::chrono::steady_clock::now();
  const auto result = verify::run_verification(max_workers, max_partitions, max_s, corrupt,
                                               [](const std::string& line) {
                                                 std::printf("%s\n", line.c_str());
                                               });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::printf("checked %lld configurations, %lld censuses, %lld straggler patterns in %.2fs\n",
              result.configurations, result.censuses, result.patterns, secs);
  if (!result.ok()) {
    for (const auto& w : result.witnesses)
      std::printf("WITNESS M=%d K=%d s=%d %s pattern=%s: %s\n", w.workers, w.partitions,
                  w.tolerance, w.census.c_str(), w.pattern.c_str(), w.reason.c_str());
    return 1;
  }
  std::printf("all configurations pass\n");
  return 0;
}

int cmd_plot_data(const std::vector<std::string>& report_paths, const std::string& out_path) {
  std::vector<report::RunReport> reports;
  for (const auto& path : report_paths) {
    nlohmann::json j = load_json(path);
    report::RunReport rep;
    try {
      rep.scheme = j.at("scheme").get<std::string>();
      for (const auto& e : j.at("epoch_reports")) {
        report::EpochReport er;
        er.epoch = e.at("epoch").get<int>();
        er.loss = e.at("loss").get<double>();
        // Accuracy is null for regression tasks.
        er.accuracy = e.contains("accuracy") && e.at("accuracy").is_number()
                          ? e.at("accuracy").get<double>()
                          : std::numeric_limits<double>::quiet_NaN();
        er.iteration_time = e.at("iteration_time").get<double>();
        rep.epochs.push_back(er);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + " is not a run report: " + e.what());
    }
    reports.push_back(std::move(rep));
  }
  report::write_text_file(out_path, report::plot_data_csv(reports));
  std::printf("wrote %s\n", out_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage dynamic coded federated-edge-learning simulator"};
  app.require_subcommand(1);

  std::string config_path, scheme, out_dir = "out", plot_out = "plot_data.csv";
  std::vector<std::string> schemes{"tsdcfl", "cyclic", "fracrep"};
  uint64_t seed = 0;
  int epochs = 0, reps = 1;
  int max_workers = 6, max_partitions = 8, max_s = 2;
  bool corrupt = false;
  std::vector<std::string> report_paths;

  auto* simulate = app.add_subcommand("simulate", "run one scheme end to end");
  simulate->add_option("--config", config_path, "experiment config JSON")->required();
  simulate->add_option("--seed", seed, "override the config seed");
  simulate->add_option("--scheme", scheme, "override the scheme")
      ->check(CLI::IsMember({"tsdcfl", "cyclic", "fracrep"}));
  simulate->add_option("--epochs", epochs, "override the epoch count");
  simulate->add_option("--out", out_dir, "output directory (default out)");

  auto* compare = app.add_subcommand("compare", "run all three schemes on shared seeds");
  compare->add_option("--config", config_path, "experiment config JSON")->required();
  compare->add_option("--reps", reps, "repetitions per scheme")->check(CLI::PositiveNumber);
  compare->add_option("--schemes", schemes, "schemes to run (default all three)")
      ->delimiter(',')
      ->check(CLI::IsMember({"tsdcfl", "cyclic", "fracrep"}));
  compare->add_option("--out", out_dir, "output directory (default out)");

  auto* verify_cmd = app.add_subcommand("verify", "exhaustive coding verification sweep");
  verify_cmd->add_option("--max-workers", max_workers, "largest worker count (default 6)");
  verify_cmd->add_option("--max-partitions", max_partitions, "largest partition count (default 8)");
  verify_cmd->add_option("--max-s", max_s, "largest straggler tolerance (default 2)");
  verify_cmd->add_flag("--corrupt", corrupt, "inject a corrupted matrix as a negative control");

  auto* plot = app.add_subcommand("plot-data", "emit tidy long-format metric CSV");
  plot->add_option("reports", report_paths, "run report JSON files")->required();
  plot->add_option("--out", plot_out, "output CSV path (default plot_data.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(config_path, scheme, seed, epochs, out_dir);
    if (compare->parsed()) return cmd_compare(config_path, reps, out_dir, schemes);
    if (verify_cmd->parsed()) return cmd_verify(max_workers, max_partitions, max_s, corrupt);
    if (plot->parsed()) return cmd_plot_data(report_paths, plot_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
