#pragma once

#include <limits>
#include <vector>

#include "hbda/rng.hpp"
#include "hbda/spectral.hpp"

namespace hbda {

/// Hyperparameters of the velocity prior N(0, beta2 A^-alpha). alpha > 1/2 is
/// required for a trace-class covariance.
struct NsPriorParams {
  double alpha;
  double beta2;

  NsPriorParams(double alpha_, double beta2_);
};

/// Whittle-Matern spectrum parameters; alpha = nu + 1 in two dimensions.
struct MaternParams {
  double alpha;
  double rho0;
  double sigma2;

  MaternParams(double alpha_, double rho0_, double sigma2_);
};

/// Inverse-Gamma with shape a and scale b: b^a / Gamma(a) x^(-a-1) exp(-b/x).
struct InvGamma {
  double a;
  double b;

  InvGamma(double a_, double b_);
  double mean() const { return a > 1.0 ? b / (a - 1.0) : std::numeric_limits<double>::infinity(); }
  double mode() const { return b / (a + 1.0); }
  bool operator==(const InvGamma&) const = default;
};

struct UniformInterval {
  double lo;
  double hi;

  UniformInterval(double lo_, double hi_);
  bool contains(double x) const { return x >= lo && x <= hi; }
  double logpdf(double x) const;
  double sample(Rng& rng) const { return rng.uniform(lo, hi); }
};

/// Karhunen-Loeve draw: Re u_k, Im u_k iid N(0, beta2 |k|^(-2 alpha) / 2).
SpectralVelocityField ns_prior_sample(const NsPriorParams& p, const LatticePtr& lattice, Rng& rng);

/// q = sum_{k in half} 2 |k|^(2 alpha) |u_k|^2, i.e. v' A^alpha v in real coordinates.
double ns_quadratic_form(const SpectralVelocityField& v, double alpha);

/// Exact Gaussian log-density of the 2|half| real coordinates of v:
///   -(d/2) log(pi beta2) + alpha sum_half 2 log|k| - q / (2 beta2).
double ns_prior_logdensity(const SpectralVelocityField& v, const NsPriorParams& p);
/// Same, reusing a precomputed quadratic form.
double ns_prior_logdensity_from_q(double q, const NsPriorParams& p, const WavenumberSet& lattice);

/// -inf for x <= 0.
double invgamma_logpdf(const InvGamma& g, double x);
/// Reciprocal of a Gamma(a, 1/b) draw.
double invgamma_sample(const InvGamma& g, Rng& rng);

/// Full conditional of beta2: IG(a + d/2, b + q/2) with d = 2|half|.
InvGamma conjugate_beta2_update(const InvGamma& prior, const SpectralVelocityField& v, double alpha);

/// Lattice normalisation c(p) = 1 / sum_{k in L_n U {0}} (rho0^2 + |k|^2)^(-alpha),
/// so that the per-mode variances sum to sigma2.
double matern_normalization(const MaternParams& p, const WavenumberSet& lattice);

/// Innovation variance E|c_k|^2 = c(p) sigma2 (rho0^2 + |k|^2)^(-alpha).
double matern_mode_variance(const MaternParams& p, const WavenumberSet& lattice, Wavevector k);

/// Variances for k = 0 followed by every upper-half mode in storage order.
std::vector<double> matern_mode_variances(const MaternParams& p, const WavenumberSet& lattice);

}  // namespace hbda
