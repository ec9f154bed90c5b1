#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hbda/ns_solver.hpp"
#include "hbda/rng.hpp"
#include "hbda/spectral.hpp"

namespace hbda {

/// Eulerian observations y_{t,p,c} = field_c(x_p, t*delta) + tau * noise, t = 1..T.
/// Vector fields contribute both components as separate scalar observations.
struct ObservationSet {
  int mesh = 0;
  double delta = 1.0;
  double tau = 1.0;
  int components = 2;
  std::vector<double> times;
  std::vector<GridPoint> points;
  std::vector<double> values;  // [time][point][component]
  std::uint64_t seed = 0;      // provenance only

  std::size_t num_times() const { return times.size(); }
  std::size_t num_points() const { return points.size(); }
  std::size_t size() const { return values.size(); }
  std::size_t index(std::size_t t, std::size_t p, int c) const {
    return (t * points.size() + p) * static_cast<std::size_t>(components) + c;
  }
  double value(std::size_t t, std::size_t p, int c) const { return values[index(t, p, c)]; }

  /// Throws std::invalid_argument when an invariant is violated.
  void validate() const;
  /// True when every node of the mesh is observed exactly once.
  bool is_full_grid() const;
};

/// sqrt(sites) x sqrt(sites) evenly spaced nodes; sites must be a perfect
/// square whose root divides n.
std::vector<GridPoint> uniform_subgrid(int n, int sites);
std::vector<GridPoint> full_grid(int n);

/// Noisy samples of a Navier-Stokes trajectory at t = delta, ..., T delta.
/// Throws std::out_of_range when a required time is not recorded.
ObservationSet generate_observations(const Trajectory& traj, std::span<const GridPoint> points,
                                     double delta, int T, double tau, Rng& rng);

/// Noisy samples of a scalar path; path[t] is the state at t * delta and
/// path[0] (t = 0) is not observed.
ObservationSet generate_observations(std::span<const SpectralScalarField> path,
                                     std::span<const GridPoint> points, double delta, double tau,
                                     Rng& rng);

/// -(M/2) log(2 pi tau^2) - sum(residual^2) / (2 tau^2) over all M scalars.
double log_likelihood(const Trajectory& traj, const ObservationSet& obs);
/// Same with model predictions laid out like obs.values.
double log_likelihood(std::span<const double> predicted, const ObservationSet& obs);

/// Predicted values of a trajectory at the observation sites and times.
std::vector<double> predict_observations(const Trajectory& traj, const ObservationSet& obs);

/// observations.csv (n,point,component,value) and observations.json sidecar.
void write_observations(const std::filesystem::path& dir, const ObservationSet& obs);
ObservationSet read_observations(const std::filesystem::path& dir);

}  // namespace hbda
