#pragma once

// Experiment configuration. Files use a TOML subset: [table] and [a.b]
// headers, key = value with strings, numbers, booleans and one-line arrays,
// and # comments.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbda/mwg_ns.hpp"
#include "hbda/spde.hpp"

namespace hbda {

/// Parses the TOML subset into a JSON object. Throws ConfigError with the
/// line number on malformed input.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json load_toml(const std::filesystem::path& file);

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// Text of a built-in preset; throws ConfigError for unknown names.
std::string preset_text(const std::string& name);

/// Recursively overlays `patch` onto `base`.
void merge_json(nlohmann::json& base, const nlohmann::json& patch);

struct NsExperiment {
  double eta = 0.1;
  double dt = 0.05;
  double delta = 1.0;
  int T = 5;
  int sites = 16;
  double tau2 = 0.2;
  Wavevector forcing{5, 5};
  double forcing_amplitude = 1.0;
  double truth_alpha = 2.2;
  double truth_beta2 = 1.2;
  /// Solver run before the truth is recorded, from the prior draw.
  double spinup = 0.0;
};

struct SpdeExperiment {
  int T = 10;
  double delta = 1.0;
  bool full_grid = true;
  int sites = 16;
  SpdeParams truth;
};

struct ForecastSettings {
  double horizon = 8.0;
  double step = 0.5;
  int max_samples = 200;
};

struct ExperimentConfig {
  std::string case_name = "ns";
  int n = 16;
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs/out";
  NsExperiment ns;
  SpdeExperiment spde;
  MwgConfig ns_sampler;
  SpdeMwgConfig spde_sampler;
  std::uint64_t checkpoint_every = 1000;
  ForecastSettings forecast;
  /// Every effective setting, echoed into each manifest.
  nlohmann::json resolved;

  bool is_spde() const { return case_name == "spde"; }
  NsConfig ns_solver_config(const LatticePtr& lattice) const;
};

/// Fully populated config document; experiment_from_json of it (plus the
/// same seed) reproduces the config.
nlohmann::json resolved_config(const ExperimentConfig& c);

/// Builds and validates a config from a parsed document. The seed is
/// mandatory. Throws ConfigError.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);

/// Preset (optional) overlaid by a config file (optional), then the seed
/// and output overrides.
ExperimentConfig load_experiment(const std::optional<std::string>& preset,
                                 const std::optional<std::filesystem::path>& file,
                                 std::optional<std::uint64_t> seed,
                                 const std::optional<std::filesystem::path>& out);

}  // namespace hbda
