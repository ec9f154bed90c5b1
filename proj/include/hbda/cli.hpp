#pragma once

// Experiment commands. Every command works inside one output directory:
//
//   <out>/data         observations, truth and manifest (generate)
//   <out>/chain        chain files and checkpoints (run)
//   <out>/diagnostics  traces, ACF, summaries (diagnose)
//   <out>/forecast     trajectory bands (forecast)
//   <out>/report.json, <out>/report.md (report)
//
// Random streams are derived from the config seed by name: "data-truth",
// "data-noise", "chain" and "forecast".

#include <filesystem>
#include <string>

#include <json.hpp>

#include "hbda/config.hpp"

namespace hbda {

struct ExperimentPaths {
  std::filesystem::path root, data, chain, diagnostics, forecast;
  explicit ExperimentPaths(const std::filesystem::path& out);
};

void cmd_generate(const ExperimentConfig& cfg);
/// Throws ConfigError when the data directory is missing or was generated
/// from a different experiment.
void cmd_run(const ExperimentConfig& cfg, bool resume = false);
void cmd_diagnose(const ExperimentConfig& cfg);
void cmd_forecast(const ExperimentConfig& cfg);
void cmd_report(const ExperimentConfig& cfg);

/// Command-line entry point; returns the process exit code (0 ok, 2 config
/// error, 3 numerical failure).
int cli_main(int argc, char** argv);

}  // namespace hbda
