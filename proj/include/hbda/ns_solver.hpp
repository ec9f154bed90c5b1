#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "hbda/spectral.hpp"

namespace hbda {

/// Parameters of dv/dt + eta A v + B(v, v) = P f on the torus.
struct NsConfig {
  double eta = 0.1;
  SpectralVelocityField forcing;  // P(f), already projected
  double dt = 0.05;
  int n = 16;
  /// Test hook: when false the bilinear term is dropped (heat equation).
  bool nonlinear = true;
  /// Abort when any |u_k| exceeds this.
  double blowup_threshold = 1e8;

  /// Throws ConfigError on eta <= 0, dt <= 0 or a forcing on another lattice.
  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<SpectralVelocityField> states;

  /// State recorded at time t (within tol); throws std::out_of_range if absent.
  const SpectralVelocityField& at_time(double t, double tol = 1e-9) const;
};

/// Spectral form of amplitude * grad_perp cos(k.x); for k = (5, 5) this is the
/// forcing of the standard experiments.
SpectralVelocityField perp_gradient_cosine(const LatticePtr& lattice, Wavevector k,
                                           double amplitude = 1.0);

/// phi_1(z) = (e^z - 1) / z, with phi_1(0) = 1.
double phi1(double z);

/// Pseudo-spectral Galerkin solver with 2n zero-padded products and
/// first-order exponential time differencing. Owns FFT plans and scratch;
/// use one instance per thread.
class NavierStokesSolver {
 public:
  explicit NavierStokesSolver(NsConfig cfg);
  ~NavierStokesSolver();
  NavierStokesSolver(NavierStokesSolver&&) noexcept;
  NavierStokesSolver& operator=(NavierStokesSolver&&) noexcept;

  const NsConfig& config() const { return cfg_; }
  const LatticePtr& lattice() const { return lattice_; }

  /// B(v, w) = 1/2 P((v.grad) w) + 1/2 P((w.grad) v), dealiased.
  SpectralVelocityField bilinear(const SpectralVelocityField& v, const SpectralVelocityField& w);
  /// B(v, v) = P((v.grad) v).
  SpectralVelocityField advection(const SpectralVelocityField& v);

  /// One ETD-Euler step:
  ///   u_k <- exp(-eta|k|^2 dt) u_k + phi_1(-eta|k|^2 dt) dt (P f - B(v, v))_k
  SpectralVelocityField step(const SpectralVelocityField& v);
  void step_in_place(SpectralVelocityField& v);

  /// Integrates to t_end, recording t = 0 and every time in record_at (each
  /// must be an integer multiple of dt within [0, t_end]). Throws
  /// NumericalError naming the step on blow-up.
  Trajectory solve_to(const SpectralVelocityField& v0, double t_end,
                      std::span<const double> record_at);

  /// Total ETD steps taken by this instance.
  std::uint64_t steps_taken() const { return steps_taken_; }

 private:
  struct Impl;
  NsConfig cfg_;
  LatticePtr lattice_;
  std::unique_ptr<Impl> impl_;
  std::vector<double> decay_;  // exp(-eta |k|^2 dt)
  std::vector<double> gain_;   // dt * phi_1(-eta |k|^2 dt)
  std::uint64_t steps_taken_ = 0;
};

/// Convenience wrappers constructing a temporary solver.
SpectralVelocityField bilinear_term(const SpectralVelocityField& v, const SpectralVelocityField& w);
SpectralVelocityField etd_step(const SpectralVelocityField& v, const NsConfig& cfg);
Trajectory solve_to(const SpectralVelocityField& v0, double t_end, const NsConfig& cfg,
                    std::span<const double> record_at);

/// Writes state_<i>.bin field blocks and manifest.json (times, config echo,
/// version stamp) into dir.
void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj,
                      const NsConfig& cfg);
Trajectory read_trajectory(const std::filesystem::path& dir);

}  // namespace hbda
