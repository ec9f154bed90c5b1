#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbda/chain_io.hpp"
#include "hbda/mwg_ns.hpp"
#include "hbda/spectral.hpp"

namespace hbda {

struct AcfResult {
  std::vector<double> acf;  // acf[0] = 1
  bool degenerate = false;  // constant chain
};

/// Biased ACF estimate (divisor N at every lag) normalised to lag 0.
AcfResult autocorrelation(std::span<const double> x, std::size_t max_lag);

struct EssResult {
  double ess = 0.0;
  double tau = 0.0;  // integrated autocorrelation time
  bool degenerate = false;
};

/// N / (1 + 2 sum rho_l), truncating the sum with Geyer's initial positive
/// sequence of paired autocorrelations.
EssResult ess(std::span<const double> x);

enum class DerivedField { kVorticity, kVelocity1, kVelocity2, kScalar };

DerivedField parse_derived_field(const std::string& name);

struct FieldSummary {
  int n = 0;
  long long count = 0;
  std::vector<double> mean;  // row-major n x n
  std::vector<double> var;   // population variance
};

FieldSummary field_summary(std::span<const SpectralVelocityField> samples, DerivedField which);
FieldSummary field_summary(std::span<const SpectralScalarField> samples);
/// Reads snapshots.bin from a chain directory; `field_index` selects which
/// field of each snapshot (0 for the Navier-Stokes initial condition, a time
/// index for SPDE paths). Throws std::runtime_error when there are none.
FieldSummary field_summary(const std::filesystem::path& chain_dir, DerivedField which,
                           std::size_t field_index = 0);

/// Mean variance over the grid nodes not listed in `observed`.
double mean_variance_excluding(const FieldSummary& s, std::span<const GridPoint> observed);

struct BandRow {
  double time;
  std::size_t point;
  int component;
  double mean, q05, q50, q95;
};

struct Bands {
  std::vector<BandRow> rows;
  int members = 0;
  bool unreliable = false;  // fewer than 20 members
};

Bands trajectory_bands(const ForecastStats& f, std::span<const std::size_t> sites);

struct MoveReport {
  std::string name;
  std::uint64_t count = 0;
  std::uint64_t accepted = 0;
  std::uint64_t mh_moves = 0;
  std::uint64_t evaluations = 0;
  double seconds = 0.0;
};

struct SolveCountReport {
  std::uint64_t iterations = 0;
  std::uint64_t evaluations = 0;
  std::uint64_t solver_steps = 0;  // evaluations x steps per forward solve
  std::vector<MoveReport> moves;
  double wall_seconds = 0.0;
};

/// Tallies forward evaluations per move from the chain records; wall times
/// come from timing.json when present.
SolveCountReport solve_count_report(const ChainData& chain,
                                    const nlohmann::json& timing = nlohmann::json());
SolveCountReport solve_count_report(const std::filesystem::path& chain_dir);
nlohmann::json to_json(const SolveCountReport& r);

/// Writes traces.csv, acf.csv, summary.json (and field_summary.csv when
/// snapshots exist) for the chain in chain_dir. Output is a deterministic
/// function of the chain files, except timing.json which holds wall times.
void diagnose_chain(const std::filesystem::path& chain_dir, const std::filesystem::path& out_dir,
                    std::size_t max_lag = 200);

void write_field_summary_csv(const std::filesystem::path& file, const FieldSummary& s);
void write_bands_csv(const std::filesystem::path& file, const Bands& b, const ForecastStats& f);

}  // namespace hbda
