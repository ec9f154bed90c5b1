#pragma once

// Stochastic advection-diffusion model on the torus, diagonal in Fourier space:
//
//   dc_k = lambda_k c_k dt + dW_k,  lambda_k = -i mu.k - k' Sigma k - zeta,
//
// integrated exactly over one observation interval delta. Modes are indexed
// m = 0 for the k = 0 mean and m = 1 + i for the i-th upper-half wavevector.
// Real coordinates (dense path) are x = [c_0, Re c_1, Im c_1, Re c_2, ...].

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "hbda/mwg_ns.hpp"
#include "hbda/observation.hpp"
#include "hbda/priors.hpp"
#include "hbda/rng.hpp"
#include "hbda/spectral.hpp"

namespace hbda {

struct SpdeParams {
  double zeta = 0.5;
  double rho1 = 0.1;
  double gamma = 2.0;
  double psi = M_PI / 4;
  std::array<double, 2> mu{0.2, -0.2};
  double tau2 = 0.01;
  MaternParams matern{2.0, 0.1, 0.2};

  /// Throws ConfigError on a violated range.
  void validate() const;
};

nlohmann::json to_json(const SpdeParams& p);
SpdeParams spde_params_from_json(const nlohmann::json& j);

/// Sigma = rho1^2 (M'M)^-1 with M = [[cos psi, sin psi], [-gamma sin psi, gamma cos psi]].
Eigen::Matrix2d diffusion_matrix(double rho1, double gamma, double psi);

struct StateSpaceModel {
  LatticePtr lattice;
  double dt = 1.0;
  double tau2 = 1.0;
  std::vector<Complex> g;           // per mode; g[0] is real
  std::vector<double> q;            // innovation variance E|w_m|^2
  std::vector<double> stationary;   // q / (1 - |g|^2)

  std::size_t modes() const { return g.size(); }
  std::size_t real_dim() const { return 2 * g.size() - 1; }
};

StateSpaceModel build_state_space(const SpdeParams& p, const LatticePtr& lattice, double delta);

/// path[0] from the stationary law, path[t] = g path[t-1] + innovation.
std::vector<SpectralScalarField> simulate_path(const StateSpaceModel& m, int T, Rng& rng);

/// Data-only preprocessing shared by every filter call on the same data.
/// For full-grid data it holds the grid DFT of each observation time and the
/// energy of the Nyquist components that the lattice cannot represent.
struct PreparedObservations {
  ObservationSet obs;
  bool full_grid = false;
  std::vector<std::vector<Complex>> spectra;  // [t][mode]
  std::vector<double> nyquist_energy;         // [t], in grid units
  Eigen::MatrixXd H;                          // dense observation operator
};

PreparedObservations prepare_observations(const ObservationSet& obs, const LatticePtr& lattice);

enum class FilterPath { kAuto, kDiagonal, kDense };

struct FilterState {
  bool dense = false;
  double loglik = 0.0;
  // Diagonal path, t = 0..T: E[c_m | y_1:t] and E|c_m - mean|^2.
  std::vector<std::vector<Complex>> mean;
  std::vector<std::vector<double>> var;
  std::vector<std::vector<Complex>> pred_mean;
  std::vector<std::vector<double>> pred_var;
  // Dense path, real coordinates.
  std::vector<Eigen::VectorXd> dmean;
  std::vector<Eigen::MatrixXd> dcov;
  std::vector<Eigen::VectorXd> dpred_mean;
  std::vector<Eigen::MatrixXd> dpred_cov;

  std::size_t steps() const { return dense ? dmean.size() : mean.size(); }
  /// Filtered mean at time index t as a field.
  SpectralScalarField filtered_field(const LatticePtr& lattice, std::size_t t) const;
  /// E|c_m - mean|^2 at time index t.
  double mode_variance(std::size_t t, std::size_t m) const;
};

/// Kalman filter from the stationary law at t = 0 through observations at
/// t = 1..T. Throws NumericalError on a non-positive innovation variance.
FilterState kalman_filter(const PreparedObservations& data, const StateSpaceModel& m,
                          FilterPath path = FilterPath::kAuto);
FilterState kalman_filter(const ObservationSet& obs, const StateSpaceModel& m,
                          FilterPath path = FilterPath::kAuto);

/// Joint draw of the path t = 0..T given the filter output.
std::vector<SpectralScalarField> ffbs_from_filter(const FilterState& f, const StateSpaceModel& m,
                                                  Rng& rng);
std::vector<SpectralScalarField> ffbs_sample(const ObservationSet& obs, const StateSpaceModel& m,
                                             Rng& rng, FilterPath path = FilterPath::kAuto);

/// Real coordinates of a scalar field in the dense layout.
Eigen::VectorXd to_real_coords(const SpectralScalarField& f);
SpectralScalarField from_real_coords(const Eigen::VectorXd& x, const LatticePtr& lattice);

/// Sum of squared innovations whitened by the sigma2 = 1 variances, and the
/// count of real coordinates: sigma2 | path ~ IG(a + D/2, b + S/2).
struct WhitenedInnovations {
  double sum_squares = 0.0;
  std::size_t count = 0;
};
WhitenedInnovations whitened_innovations(std::span<const SpectralScalarField> path,
                                         const SpdeParams& p, const LatticePtr& lattice,
                                         double delta);

struct SpdeHyperpriors {
  InvGamma sigma2{1.0, 1.0};
  InvGamma gamma{5.0, 5.0};
  InvGamma zeta{1.0, 1.0};
  UniformInterval tau2{0.0, 100.0};
  UniformInterval mu{-0.5, 0.5};
  UniformInterval psi{0.0, M_PI / 2};
  UniformInterval rho1{0.0, 100.0};
  UniformInterval alpha{1.0, 4.0};
  double rho0_lo = 0.01;
  double rho0_scale = 5.0;

  /// Upper end of the rho0 prior, rho0_scale (alpha - 1)^-2.
  double rho0_hi(double alpha) const;
  /// Joint log prior density; -inf outside the support.
  double logpdf(const SpdeParams& p) const;
  bool in_support(const SpdeParams& p) const;
};

struct SpdeMwgConfig {
  std::uint64_t iterations = 1000;
  std::uint64_t burn_in = 0;
  std::uint64_t thin = 100;
  /// Iterations before the proposal covariance starts to adapt.
  std::uint64_t warmup = 5000;
  double delta = 1.0;
  SpdeHyperpriors priors;
  SpdeParams start{0.25, 0.2, 1.0, 0.3, {0.0, 0.0}, 0.005, MaternParams(2.0, 0.2, 0.1)};
  bool estimate_alpha = true;
  double rho_alpha = 0.96;
  double initial_step = 0.1;
  double adapt_target = 0.234;
  FilterPath filter = FilterPath::kAuto;

  void validate() const;
};

struct SpdeMwgSummary {
  std::uint64_t iterations = 0;
  std::uint64_t filter_evaluations = 0;
  std::uint64_t rw_moves = 0;
  std::uint64_t rw_accepted = 0;
  std::uint64_t rw_moves_after_burn = 0;
  std::uint64_t rw_accepted_after_burn = 0;
  std::uint64_t alpha_moves = 0;
  std::uint64_t alpha_accepted = 0;
  double wall_seconds = 0.0;
  bool completed = false;
};

/// Parameter columns written to the chain, in order.
const std::vector<std::string>& spde_param_names();

/// Sweep: adaptive random-walk MH on transformed (zeta, rho1, gamma, psi,
/// mu1, mu2, tau2, rho0) with the path integrated out; alpha MH with the
/// rho0-prior ratio; FFBS path draw; conjugate sigma2 draw given the path.
SpdeMwgSummary spde_mwg_run(const ObservationSet& obs, const LatticePtr& lattice,
                            const SpdeMwgConfig& cfg, Rng& rng,
                            const std::filesystem::path& out_dir, const RunControl& ctl = {});

}  // namespace hbda
