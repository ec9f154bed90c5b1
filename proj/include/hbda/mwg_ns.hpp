#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbda/ns_solver.hpp"
#include "hbda/observation.hpp"
#include "hbda/priors.hpp"
#include "hbda/rng.hpp"

namespace hbda {

struct PcnConfig {
  double rho = 0.999;
  double target_lo = 0.2;
  double target_hi = 0.3;
  /// Robbins-Monro adaptation of rho toward `adapt_target` during burn-in.
  bool adapt = false;
  double adapt_target = 0.25;

  void validate() const;
};

struct MwgConfig {
  double p_v = 1.0 / 3.0;
  double p_beta2 = 1.0 / 3.0;
  double p_alpha = 1.0 / 3.0;
  double rho_alpha = 0.96;
  UniformInterval alpha_prior{0.6, 4.0};
  InvGamma beta2_prior{1.5, 2.5};
  std::uint64_t iterations = 1000;
  std::uint64_t burn_in = 0;
  std::uint64_t thin = 100;
  PcnConfig pcn;
  /// Starting hyperparameters; unset values are drawn from their priors.
  std::optional<double> alpha0;
  std::optional<double> beta2_0;

  void validate() const;
};

/// Log-likelihood of an initial condition; owns whatever solver it needs.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;
  /// -inf when the forward solve fails.
  virtual double log_likelihood(const SpectralVelocityField& v0) = 0;
  std::uint64_t evaluations() const { return evaluations_; }
  void set_evaluations(std::uint64_t n) { evaluations_ = n; }

 protected:
  std::uint64_t evaluations_ = 0;
};

/// Solves Navier-Stokes from v0 to the last observation time and scores the
/// predicted observations.
class NsForwardModel final : public ForwardModel {
 public:
  NsForwardModel(NsConfig cfg, ObservationSet obs);
  double log_likelihood(const SpectralVelocityField& v0) override;
  std::uint64_t blowups() const { return blowups_; }
  const ObservationSet& observations() const { return obs_; }

 private:
  NavierStokesSolver solver_;
  ObservationSet obs_;
  std::uint64_t blowups_ = 0;
};

/// Test harness: likelihood identically zero, evaluations still counted.
class ConstantLikelihood final : public ForwardModel {
 public:
  double log_likelihood(const SpectralVelocityField&) override {
    ++evaluations_;
    return 0.0;
  }
};

struct PcnResult {
  SpectralVelocityField v;
  double loglik;
  bool accepted;
};

/// One pCN move: proposal rho v + sqrt(1 - rho^2) xi with xi from the prior,
/// accepted with probability min(1, exp(loglik' - loglik)). One forward call.
PcnResult pcn_step(const SpectralVelocityField& v, double loglik, const NsPriorParams& p,
                   double rho, ForwardModel& model, Rng& rng);

/// Draw from the conjugate IG full conditional; never touches the likelihood.
double beta2_gibbs_move(const SpectralVelocityField& v, double alpha, const InvGamma& prior,
                        Rng& rng);

struct AlphaMove {
  double alpha;
  bool accepted;
  double proposal;
};

/// Smoothness move. Proposal alpha' = rho_a alpha + (1 - rho_a) u with
/// u ~ U[lo, hi]; it is uniform on an interval of fixed width around
/// rho_a alpha, so the Hastings ratio is 1 when the reverse move is feasible
/// and 0 otherwise. Acceptance uses the prior-density ratio of v.
AlphaMove alpha_mh_move(const SpectralVelocityField& v, double alpha, double beta2,
                        const UniformInterval& prior, double rho_alpha, Rng& rng);
/// Same with a caller-chosen u (for tests).
AlphaMove alpha_mh_move_with_u(const SpectralVelocityField& v, double alpha, double beta2,
                               const UniformInterval& prior, double rho_alpha, double u,
                               double log_uniform);

enum class NsMove : std::uint8_t { kVelocity = 0, kBeta2 = 1, kAlpha = 2 };

/// Checkpointing and interruption control for long runs.
struct RunControl {
  std::uint64_t checkpoint_every = 0;  // 0 = only at the end
  /// Stop (after checkpointing) once this many iterations exist; simulates
  /// an interrupted run in tests.
  std::optional<std::uint64_t> stop_after;
  bool resume = false;
  /// Extra JSON echoed into the chain header.
  nlohmann::json config_echo = nlohmann::json::object();
  std::uint64_t seed = 0;
};

struct MwgSummary {
  std::uint64_t iterations = 0;
  std::uint64_t evaluations = 0;
  std::uint64_t pcn_moves = 0;
  std::uint64_t pcn_accepted = 0;
  std::uint64_t pcn_moves_after_burn = 0;
  std::uint64_t pcn_accepted_after_burn = 0;
  std::uint64_t alpha_moves = 0;
  std::uint64_t alpha_accepted = 0;
  double final_rho = 0.0;
  double wall_seconds = 0.0;
  bool completed = false;
};

/// Random-scan Metropolis-within-Gibbs over (v0, beta2, alpha). Writes
/// chain.bin, chain.csv, snapshots.bin (v0 every cfg.thin iterations after
/// burn-in), checkpoint.json and timing.json into out_dir.
MwgSummary mwg_run(ForwardModel& model, const LatticePtr& lattice, const MwgConfig& cfg,
                   Rng& rng, const std::filesystem::path& out_dir, const RunControl& ctl = {});

struct ForecastStats {
  std::vector<double> times;
  std::vector<GridPoint> points;
  int members = 0;
  int failed = 0;
  // [time][point][component]
  std::vector<double> mean, var, q05, q50, q95;
  std::size_t index(std::size_t t, std::size_t p, int c) const { return (t * points.size() + p) * 2 + c; }
};

/// Propagates every sample to each requested time and summarises the
/// velocity at the given nodes. Failed solves are excluded and counted.
ForecastStats forecast(std::span<const SpectralVelocityField> samples, std::span<const double> times,
                       const NsConfig& ns, std::span<const GridPoint> points);

}  // namespace hbda
