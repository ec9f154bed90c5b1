#include "hbda/priors.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hbda {

namespace {
[[noreturn]] void bad(const std::string& what, double value) {
  std::ostringstream msg;
  msg << what << " (got " << value << ")";
  throw std::invalid_argument(msg.str());
}
}  // namespace

NsPriorParams::NsPriorParams(double alpha_, double beta2_) : alpha(alpha_), beta2(beta2_) {
  if (!(alpha > 0.5)) bad("prior smoothness alpha must exceed 1/2", alpha);
  if (!(beta2 > 0.0)) bad("prior scale beta2 must be positive", beta2);
}

MaternParams::MaternParams(double alpha_, double rho0_, double sigma2_)
    : alpha(alpha_), rho0(rho0_), sigma2(sigma2_) {
  if (!(alpha > 1.0)) bad("Matern alpha must exceed 1 in two dimensions", alpha);
  if (!(rho0 > 0.0)) bad("Matern rho0 must be positive", rho0);
  if (!(sigma2 > 0.0)) bad("Matern sigma2 must be positive", sigma2);
}

InvGamma::InvGamma(double a_, double b_) : a(a_), b(b_) {
  if (!(a > 0.0)) bad("inverse-gamma shape must be positive", a);
  if (!(b > 0.0)) bad("inverse-gamma scale must be positive", b);
}

UniformInterval::UniformInterval(double lo_, double hi_) : lo(lo_), hi(hi_) {
  if (!(lo < hi)) bad("uniform interval needs lo < hi", lo);
}

double UniformInterval::logpdf(double x) const {
  return contains(x) ? -std::log(hi - lo) : -std::numeric_limits<double>::infinity();
}

SpectralVelocityField ns_prior_sample(const NsPriorParams& p, const LatticePtr& lattice, Rng& rng) {
  SpectralVelocityField v(lattice);
  const auto& half = lattice->half();
  const double base = std::sqrt(0.5 * p.beta2);
  for (std::size_t i = 0; i < half.size(); ++i) {
    const double sd = base * std::pow(half[i].norm2(), -0.5 * p.alpha);
    const double re = rng.normal();
    const double im = rng.normal();
    v[i] = Complex(sd * re, sd * im);
  }
  return v;
}

double ns_quadratic_form(const SpectralVelocityField& v, double alpha) {
  const auto& half = v.lattice().half();
  double q = 0.0;
  for (std::size_t i = 0; i < half.size(); ++i) {
    q += std::pow(half[i].norm2(), alpha) * std::norm(v[i]);
  }
  return 2.0 * q;
}

double ns_prior_logdensity_from_q(double q, const NsPriorParams& p, const WavenumberSet& lattice) {
  const double d = lattice.real_dim();
  return -0.5 * d * std::log(M_PI * p.beta2) + p.alpha * lattice.log_norm_sum() -
         q / (2.0 * p.beta2);
}

double ns_prior_logdensity(const SpectralVelocityField& v, const NsPriorParams& p) {
  return ns_prior_logdensity_from_q(ns_quadratic_form(v, p.alpha), p, v.lattice());
}

double invgamma_logpdf(const InvGamma& g, double x) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return g.a * std::log(g.b) - std::lgamma(g.a) - (g.a + 1.0) * std::log(x) - g.b / x;
}

double invgamma_sample(const InvGamma& g, Rng& rng) { return g.b / rng.gamma(g.a); }

InvGamma conjugate_beta2_update(const InvGamma& prior, const SpectralVelocityField& v,
                                double alpha) {
  const double d = v.lattice().real_dim();
  return InvGamma(prior.a + 0.5 * d, prior.b + 0.5 * ns_quadratic_form(v, alpha));
}

double matern_normalization(const MaternParams& p, const WavenumberSet& lattice) {
  const double r2 = p.rho0 * p.rho0;
  double total = std::pow(r2, -p.alpha);
  for (const Wavevector& k : lattice.full()) total += std::pow(r2 + k.norm2(), -p.alpha);
  return 1.0 / total;
}

double matern_mode_variance(const MaternParams& p, const WavenumberSet& lattice, Wavevector k) {
  return matern_normalization(p, lattice) * p.sigma2 *
         std::pow(p.rho0 * p.rho0 + k.norm2(), -p.alpha);
}

std::vector<double> matern_mode_variances(const MaternParams& p, const WavenumberSet& lattice) {
  const double r2 = p.rho0 * p.rho0;
  std::vector<double> out;
  out.reserve(lattice.half_size() + 1);
  out.push_back(std::pow(r2, -p.alpha));
  double total = out.front();
  for (const Wavevector& k : lattice.half()) {
    out.push_back(std::pow(r2 + k.norm2(), -p.alpha));
    total += 2.0 * out.back();  // k and -k
  }
  const double scale = p.sigma2 / total;
  for (double& x : out) x *= scale;
  return out;
}

}  // namespace hbda
