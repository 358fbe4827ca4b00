// riskeval command-line front end: simulate | run | score | report.

#include <fmt/format.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "riskeval/metrics.hpp"
#include "riskeval/pipeline.hpp"
#include "riskeval/report.hpp"
#include "riskeval/scaffold.hpp"
#include "riskeval/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw riskeval::IoError(fmt::format("cannot open {}", path.string()));
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) {
    throw riskeval::IoError(fmt::format("cannot write {}", path.string()));
  }
  out << content;
}

int run_simulate(const std::string& config_path, const std::string& out_dir,
                 std::string records_path) {
  const riskeval::SimulationSpec spec =
      riskeval::simulation_spec_from_json_text(read_file(config_path));
  if (records_path.empty()) {
    records_path = (fs::path(out_dir) / "records.jsonl").string();
  }
  const std::vector<riskeval::ItemRecord> records = riskeval::run_sweep(
      spec.agent, spec.sweep, spec.dataset_id, spec.strategy);
  if (fs::path(records_path).has_parent_path()) {
    fs::create_directories(fs::path(records_path).parent_path());
  }
  const std::size_t n = riskeval::write_records(
      records_path, records, riskeval::WriteMode::truncate);

  json manifest;
  manifest["spec"] =
      json::parse(riskeval::simulation_spec_to_json_text(spec));
  manifest["rng"] = "splitmix64";
  manifest["seed"] = spec.sweep.seed;
  manifest["n_records"] = n;
  write_file(records_path + ".manifest.json", manifest.dump(2) + "\n");

  fmt::print("wrote {} records to {}\n", n, records_path);
  return 0;
}

int run_run(const std::string& config_path, const std::string& out_dir) {
  riskeval::RunConfig config =
      riskeval::run_config_from_json_text(read_file(config_path));
  if (!out_dir.empty() && fs::path(config.output_path).is_relative()) {
    config.output_path = (fs::path(out_dir) / config.output_path).string();
  }
  if (fs::path(config.output_path).has_parent_path()) {
    fs::create_directories(fs::path(config.output_path).parent_path());
  }
  const riskeval::RunSummary summary = riskeval::execute_run(config);
  fmt::print(
      "run complete: {} pairs ({} resumed, {} new, {} transport-failed, "
      "{} image items skipped) in {:.1f}s -> {}\n",
      summary.n_pairs, summary.n_already_complete, summary.n_new,
      summary.n_transport_failed, summary.n_skipped_image,
      summary.elapsed_seconds, config.output_path);
  return 0;
}

std::vector<riskeval::ItemRecord> load_records(const std::string& path) {
  riskeval::ReadResult result = riskeval::read_records(path);
  for (const auto& warning : result.warnings) {
    fmt::print(stderr, "warning: {}\n", warning);
  }
  return std::move(result.records);
}

int run_score(const std::string& records_path, const std::string& out_dir,
              const std::string& format) {
  const auto records = load_records(records_path);
  const auto summaries = riskeval::summarize(records);
  if (format.empty() || format == "csv") {
    write_file(fs::path(out_dir) / "summaries.csv",
               riskeval::summaries_to_csv(summaries));
  }
  if (format.empty() || format == "json") {
    write_file(fs::path(out_dir) / "summaries.json",
               riskeval::summaries_to_json(summaries) + "\n");
  }
  fmt::print("scored {} records into {} partition(s) -> {}\n", records.size(),
             summaries.size(), out_dir);
  return 0;
}

int run_report(const std::string& records_path,
               const std::string& summaries_path, const std::string& out_dir,
               const std::string& regime_name,
               const std::vector<std::string>& metrics,
               const std::string& format) {
  std::vector<riskeval::MetricsSummary> summaries;
  std::vector<riskeval::GainRow> gains;
  if (!records_path.empty()) {
    const auto records = load_records(records_path);
    summaries = riskeval::summarize(records);
    gains = riskeval::utility_gain_report(records);
  } else {
    summaries = riskeval::summaries_from_json_text(read_file(summaries_path));
  }
  const riskeval::Regime regime = riskeval::regime_from_string(regime_name);

  const auto table = riskeval::build_table(summaries, gains, regime);
  const std::string stem = fmt::format("table_{}", to_string(regime));
  if (format.empty() || format == "csv") {
    write_file(fs::path(out_dir) / (stem + ".csv"),
               riskeval::table_to_csv(table));
  }
  if (format.empty() || format == "json") {
    write_file(fs::path(out_dir) / (stem + ".json"),
               riskeval::table_to_json(table) + "\n");
  }
  if (!gains.empty()) {
    if (format.empty() || format == "csv") {
      write_file(fs::path(out_dir) / "gains.csv",
                 riskeval::gains_to_csv(gains));
    }
    if (format.empty() || format == "json") {
      write_file(fs::path(out_dir) / "gains.json",
                 riskeval::gains_to_json(gains) + "\n");
    }
  }

  for (const auto& metric : metrics) {
    const auto series = riskeval::penalty_series(summaries, metric);
    write_file(fs::path(out_dir) / fmt::format("series_{}.csv", metric),
               riskeval::series_to_csv(series, metric));
  }

  // Emit strategy deltas whenever both prompt strategies are present.
  const bool has_base = std::any_of(
      summaries.begin(), summaries.end(), [](const auto& s) {
        return s.strategy == riskeval::Strategy::base;
      });
  const bool has_conf = std::any_of(
      summaries.begin(), summaries.end(), [](const auto& s) {
        return s.strategy == riskeval::Strategy::use_confidence;
      });
  if (has_base && has_conf) {
    const auto deltas = riskeval::strategy_delta(summaries, summaries);
    write_file(fs::path(out_dir) / "deltas.csv",
               riskeval::deltas_to_csv(deltas));
  }

  fmt::print("report written to {}\n", out_dir);
  return 0;
}

int error_exit(const char* type, const std::string& message) {
  json err;
  err["error"] = {{"type", type}, {"message", message}};
  fmt::print(stderr, "{}\n", err.dump());
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalty-conditioned answer/abstain evaluation toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string records_path;
  std::string summaries_path;
  std::string out_dir = ".";
  std::string regime = "all";
  std::string format;
  std::vector<std::string> metrics;

  auto* simulate = app.add_subcommand(
      "simulate", "Generate records from a synthetic agent spec");
  simulate->add_option("--config", config_path, "Agent + sweep JSON spec")
      ->required();
  simulate->add_option("--out", out_dir, "Output directory");
  simulate->add_option("--records", records_path,
                       "Records output path (overrides --out)");

  auto* run = app.add_subcommand(
      "run", "Evaluate a live endpoint from a run config");
  run->add_option("--config", config_path, "Run config JSON")->required();
  run->add_option("--out", out_dir,
                  "Directory for a relative output_path");

  auto* score =
      app.add_subcommand("score", "Compute metric summaries from records");
  score->add_option("--records", records_path, "Records JSONL")->required();
  score->add_option("--out", out_dir, "Output directory");
  score->add_option("--format", format, "csv or json (default: both)")
      ->check(CLI::IsMember({"csv", "json"}));

  auto* report = app.add_subcommand(
      "report", "Emit tables, penalty series, and strategy deltas");
  auto* rec_opt =
      report->add_option("--records", records_path, "Records JSONL");
  report->add_option("--summaries", summaries_path,
                     "Precomputed summaries JSON (from score)")
      ->excludes(rec_opt);
  report->add_option("--out", out_dir, "Output directory");
  report->add_option("--regime", regime, "all or high")
      ->check(CLI::IsMember({"all", "high", "high_penalty"}));
  report->add_option("--metric", metrics,
                     "Metric name(s) to emit as penalty series");
  report->add_option("--format", format, "csv or json (default: both)")
      ->check(CLI::IsMember({"csv", "json"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) {
      return run_simulate(config_path,
                          records_path.empty() ? out_dir : out_dir,
                          records_path);
    }
    if (run->parsed()) return run_run(config_path, out_dir);
    if (score->parsed()) return run_score(records_path, out_dir, format);
    if (report->parsed()) {
      if (records_path.empty() && summaries_path.empty()) {
        throw riskeval::ConfigError(
            "report needs --records or --summaries");
      }
      return run_report(records_path, summaries_path, out_dir, regime,
                        metrics, format);
    }
  } catch (const riskeval::ValidationError& e) {
    return error_exit("validation", e.what());
  } catch (const riskeval::ParseError& e) {
    return error_exit("parse", e.what());
  } catch (const riskeval::ConfigError& e) {
    return error_exit("config", e.what());
  } catch (const riskeval::IoError& e) {
    return error_exit("io", e.what());
  } catch (const riskeval::Error& e) {
    return error_exit("error", e.what());
  } catch (const std::exception& e) {
    return error_exit("internal", e.what());
  }
  return 0;
}
