#include "hbda/spde.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "hbda/chain_io.hpp"
#include "hbda/errors.hpp"
#include "hbda/version.hpp"

namespace hbda {

namespace fs = std::filesystem;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

// Complex circular draw with E|c - m|^2 = v.
Complex circular(Complex m, double v, Rng& rng) {
  const double s = std::sqrt(std::max(v, 0.0) / 2.0);
  const double re = rng.normal();
  const double im = rng.normal();
  return m + Complex(s * re, s * im);
}

}  // namespace

void SpdeParams::validate() const {
  require(zeta > 0.0, "SPDE zeta must be positive");
  require(rho1 > 0.0, "SPDE rho1 must be positive");
  require(gamma > 0.0, "SPDE gamma must be positive");
  require(psi >= 0.0 && psi <= M_PI / 2, "SPDE psi must lie in [0, pi/2]");
  require(std::isfinite(mu[0]) && std::isfinite(mu[1]), "SPDE drift must be finite");
  require(tau2 > 0.0, "SPDE tau2 must be positive");
  require(matern.alpha > 1.0 && matern.alpha <= 4.0, "SPDE alpha must lie in (1, 4]");
  require(matern.rho0 > 0.0 && matern.sigma2 > 0.0, "Matern rho0 and sigma2 must be positive");
}

nlohmann::json to_json(const SpdeParams& p) {
  return {{"zeta", p.zeta},   {"rho1", p.rho1},           {"gamma", p.gamma},
          {"psi", p.psi},     {"mu", {p.mu[0], p.mu[1]}}, {"tau2", p.tau2},
          {"alpha", p.matern.alpha}, {"rho0", p.matern.rho0}, {"sigma2", p.matern.sigma2}};
}

SpdeParams spde_params_from_json(const nlohmann::json& j) {
  SpdeParams p;
  p.zeta = j.value("zeta", p.zeta);
  p.rho1 = j.value("rho1", p.rho1);
  p.gamma = j.value("gamma", p.gamma);
  p.psi = j.value("psi", p.psi);
  if (j.contains("mu")) p.mu = {j["mu"].at(0).get<double>(), j["mu"].at(1).get<double>()};
  p.tau2 = j.value("tau2", p.tau2);
  try {
    p.matern = MaternParams(j.value("alpha", p.matern.alpha), j.value("rho0", p.matern.rho0),
                            j.value("sigma2", p.matern.sigma2));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  p.validate();
  return p;
}

Eigen::Matrix2d diffusion_matrix(double rho1, double gamma, double psi) {
  Eigen::Matrix2d M;
  M << std::cos(psi), std::sin(psi), -gamma * std::sin(psi), gamma * std::cos(psi);
  const Eigen::Matrix2d MtM = M.transpose() * M;
  const double det = MtM.determinant();
  if (!(std::abs(det) > 1e-300)) throw NumericalError("anisotropy matrix is singular");
  return rho1 * rho1 * MtM.inverse();
}

StateSpaceModel build_state_space(const SpdeParams& p, const LatticePtr& lattice, double delta) {
  if (!(delta > 0.0)) throw ConfigError("observation interval must be positive");
  const Eigen::Matrix2d S = diffusion_matrix(p.rho1, p.gamma, p.psi);
  StateSpaceModel m;
  m.lattice = lattice;
  m.dt = delta;
  m.tau2 = p.tau2;
  const std::vector<double> v = matern_mode_variances(p.matern, *lattice);
  const std::size_t M = v.size();
  m.g.resize(M);
  m.q.resize(M);
  m.stationary.resize(M);
  for (std::size_t i = 0; i < M; ++i) {
    Complex lambda(-p.zeta, 0.0);
    if (i > 0) {
      const Wavevector k = lattice->half()[i - 1];
      const double k1 = k.k1, k2 = k.k2;
      const double diff = S(0, 0) * k1 * k1 + 2.0 * S(0, 1) * k1 * k2 + S(1, 1) * k2 * k2;
      lambda = Complex(-diff - p.zeta, -(p.mu[0] * k1 + p.mu[1] * k2));
    }
    const double re = lambda.real();
    m.g[i] = std::exp(delta * lambda);
    m.q[i] = v[i] * (-std::expm1(2.0 * delta * re)) / (-2.0 * re);
    m.stationary[i] = v[i] / (-2.0 * re);
  }
  return m;
}

std::vector<SpectralScalarField> simulate_path(const StateSpaceModel& m, int T, Rng& rng) {
  if (T < 0) throw std::invalid_argument("path length must be nonnegative");
  std::vector<SpectralScalarField> path;
  SpectralScalarField f(m.lattice);
  f.mean() = std::sqrt(m.stationary[0]) * rng.normal();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = circular(0.0, m.stationary[i + 1], rng);
  path.push_back(f);
  for (int t = 1; t <= T; ++t) {
    SpectralScalarField next(m.lattice);
    const auto& prev = path.back();
    next.mean() = m.g[0].real() * prev.mean() + std::sqrt(m.q[0]) * rng.normal();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = circular(m.g[i + 1] * prev[i], m.q[i + 1], rng);
    path.push_back(std::move(next));
  }
  return path;
}

Eigen::VectorXd to_real_coords(const SpectralScalarField& f) {
  Eigen::VectorXd x(1 + 2 * f.size());
  x[0] = f.mean();
  for (std::size_t i = 0; i < f.size(); ++i) {
    x[1 + 2 * i] = f[i].real();
    x[2 + 2 * i] = f[i].imag();
  }
  return x;
}

SpectralScalarField from_real_coords(const Eigen::VectorXd& x, const LatticePtr& lattice) {
  SpectralScalarField f(lattice);
  if (static_cast<std::size_t>(x.size()) != 1 + 2 * f.size()) {
    throw std::invalid_argument("real coordinate vector has the wrong length");
  }
  f.mean() = x[0];
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = Complex(x[1 + 2 * i], x[2 + 2 * i]);
  return f;
}

PreparedObservations prepare_observations(const ObservationSet& obs, const LatticePtr& lattice) {
  obs.validate();
  if (obs.components != 1) throw ConfigError("SPDE observations must be scalar");
  if (obs.mesh != lattice->n()) throw ConfigError("observation mesh differs from the lattice");
  PreparedObservations d;
  d.obs = obs;
  const int n = lattice->n();
  const auto& half = lattice->half();
  const std::size_t N = 1 + 2 * half.size();

  d.H.resize(static_cast<Eigen::Index>(obs.num_points()), static_cast<Eigen::Index>(N));
  for (std::size_t p = 0; p < obs.num_points(); ++p) {
    const double x1 = GridField::coordinate(n, obs.points[p].i);
    const double x2 = GridField::coordinate(n, obs.points[p].j);
    d.H(p, 0) = 1.0;
    for (std::size_t i = 0; i < half.size(); ++i) {
      const double th = half[i].k1 * x1 + half[i].k2 * x2;
      d.H(p, 1 + 2 * i) = 2.0 * std::cos(th);
      d.H(p, 2 + 2 * i) = -2.0 * std::sin(th);
    }
  }

  d.full_grid = obs.is_full_grid();
  if (d.full_grid) {
    for (std::size_t t = 0; t < obs.num_times(); ++t) {
      GridField g(n, 1);
      double total = 0.0;
      for (std::size_t p = 0; p < obs.num_points(); ++p) {
        const double y = obs.value(t, p, 0);
        g(0, obs.points[p].i, obs.points[p].j) = y;
        total += y * y;
      }
      const SpectralScalarField f = scalar_from_grid(g, lattice);
      std::vector<Complex> s(1 + f.size());
      s[0] = f.mean();
      double represented = f.mean() * f.mean();
      for (std::size_t i = 0; i < f.size(); ++i) {
        s[i + 1] = f[i];
        represented += 2.0 * std::norm(f[i]);
      }
      d.spectra.push_back(std::move(s));
      d.nyquist_energy.push_back(std::max(0.0, total - double(n) * n * represented));
    }
  }
  return d;
}

SpectralScalarField FilterState::filtered_field(const LatticePtr& lattice, std::size_t t) const {
  if (dense) return from_real_coords(dmean.at(t), lattice);
  const auto& m = mean.at(t);
  SpectralScalarField f(lattice);
  f.mean() = m[0].real();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = m[i + 1];
  return f;
}

double FilterState::mode_variance(std::size_t t, std::size_t m) const {
  if (!dense) return var.at(t).at(m);
  const auto& P = dcov.at(t);
  if (m == 0) return P(0, 0);
  return P(2 * m - 1, 2 * m - 1) + P(2 * m, 2 * m);
}

namespace {

void check_model(const PreparedObservations& d, const StateSpaceModel& m) {
  if (!m.lattice || m.lattice->n() != d.obs.mesh) throw ConfigError("model lattice differs from the data");
  if (!(m.tau2 > 0.0)) throw ConfigError("observation noise variance must be positive");
}

FilterState diagonal_filter(const PreparedObservations& d, const StateSpaceModel& m) {
  const std::size_t M = m.modes();
  const std::size_t T = d.obs.num_times();
  const double n2 = double(d.obs.mesh) * d.obs.mesh;
  const double R = m.tau2 / n2;
  FilterState f;
  f.mean.assign(T + 1, std::vector<Complex>(M));
  f.var.assign(T + 1, std::vector<double>(M));
  f.pred_mean = f.mean;
  f.pred_var = f.var;
  f.var[0] = m.stationary;
  f.pred_var[0] = m.stationary;
  const double nyq_count = 2.0 * d.obs.mesh - 1.0;
  const double log2pi = std::log(2.0 * M_PI);
  double ll = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const auto& y = d.spectra[t - 1];
    for (std::size_t k = 0; k < M; ++k) {
      const Complex pm = m.g[k] * f.mean[t - 1][k];
      const double pv = std::norm(m.g[k]) * f.var[t - 1][k] + m.q[k];
      const double S = pv + R;
      if (!(S > 0.0) || !std::isfinite(S)) {
        throw NumericalError("non-positive innovation variance at time " + std::to_string(t) +
                             ", mode " + std::to_string(k));
      }
      const Complex e = y[k] - pm;
      const double K = pv / S;
      f.pred_mean[t][k] = pm;
      f.pred_var[t][k] = pv;
      f.mean[t][k] = pm + K * e;
      f.var[t][k] = pv * R / S;
      if (k == 0) {
        ll += -0.5 * (log2pi + std::log(n2 * S)) - 0.5 * e.real() * e.real() / S;
      } else {
        ll += -(log2pi + std::log(n2 * S)) - std::norm(e) / S;
      }
    }
    ll += -0.5 * nyq_count * (log2pi + std::log(m.tau2)) - 0.5 * d.nyquist_energy[t - 1] / m.tau2;
  }
  f.loglik = ll;
  return f;
}

// y = G x for the block-diagonal real transition.
Eigen::VectorXd apply_g(const StateSpaceModel& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd y(x.size());
  y[0] = m.g[0].real() * x[0];
  for (std::size_t k = 1; k < m.modes(); ++k) {
    const double a = m.g[k].real(), b = m.g[k].imag();
    const Eigen::Index r = 2 * k - 1;
    y[r] = a * x[r] - b * x[r + 1];
    y[r + 1] = b * x[r] + a * x[r + 1];
  }
  return y;
}

// G P (rows transformed).
Eigen::MatrixXd apply_g_rows(const StateSpaceModel& m, const Eigen::MatrixXd& P) {
  Eigen::MatrixXd out(P.rows(), P.cols());
  out.row(0) = m.g[0].real() * P.row(0);
  for (std::size_t k = 1; k < m.modes(); ++k) {
    const double a = m.g[k].real(), b = m.g[k].imag();
    const Eigen::Index r = 2 * k - 1;
    out.row(r) = a * P.row(r) - b * P.row(r + 1);
    out.row(r + 1) = b * P.row(r) + a * P.row(r + 1);
  }
  return out;
}

Eigen::VectorXd real_variances(const StateSpaceModel& m, const std::vector<double>& v) {
  Eigen::VectorXd d(static_cast<Eigen::Index>(m.real_dim()));
  d[0] = v[0];
  for (std::size_t k = 1; k < m.modes(); ++k) d[2 * k - 1] = d[2 * k] = v[k] / 2.0;
  return d;
}

FilterState dense_filter(const PreparedObservations& d, const StateSpaceModel& m) {
  const std::size_t T = d.obs.num_times();
  const Eigen::Index P = static_cast<Eigen::Index>(d.obs.num_points());
  const Eigen::Index N = static_cast<Eigen::Index>(m.real_dim());
  const Eigen::VectorXd Q = real_variances(m, m.q);
  FilterState f;
  f.dense = true;
  f.dmean.assign(T + 1, Eigen::VectorXd::Zero(N));
  f.dcov.assign(T + 1, Eigen::MatrixXd::Zero(N, N));
  f.dpred_mean = f.dmean;
  f.dpred_cov = f.dcov;
  f.dcov[0].diagonal() = real_variances(m, m.stationary);
  f.dpred_cov[0] = f.dcov[0];
  const Eigen::MatrixXd& H = d.H;
  double ll = 0.0;
  for (std::size_t t = 1; t <= T; ++t) {
    const Eigen::VectorXd mp = apply_g(m, f.dmean[t - 1]);
    const Eigen::MatrixXd GP = apply_g_rows(m, f.dcov[t - 1]);
    Eigen::MatrixXd Pp = apply_g_rows(m, GP.transpose()).transpose();
    Pp.diagonal() += Q;
    Pp = 0.5 * (Pp + Pp.transpose()).eval();
    Eigen::VectorXd y(P);
    for (Eigen::Index p = 0; p < P; ++p) y[p] = d.obs.value(t - 1, static_cast<std::size_t>(p), 0);
    const Eigen::MatrixXd PHt = Pp * H.transpose();
    Eigen::MatrixXd S = H * PHt;
    S.diagonal().array() += m.tau2;
    const Eigen::LLT<Eigen::MatrixXd> llt(S);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("innovation covariance not positive definite at time " + std::to_string(t));
    }
    const Eigen::VectorXd e = y - H * mp;
    const Eigen::VectorXd Sinv_e = llt.solve(e);
    const Eigen::MatrixXd K = llt.solve(PHt.transpose()).transpose();
    f.dpred_mean[t] = mp;
    f.dpred_cov[t] = Pp;
    f.dmean[t] = mp + K * e;
    Eigen::MatrixXd Pf = Pp - K * PHt.transpose();
    f.dcov[t] = 0.5 * (Pf + Pf.transpose());
    const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    ll += -0.5 * (double(P) * std::log(2.0 * M_PI) + logdet + e.dot(Sinv_e));
  }
  f.loglik = ll;
  return f;
}

Eigen::VectorXd gaussian_draw(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = rng.normal() * std::sqrt(std::max(es.eigenvalues()[i], 0.0));
  return mean + es.eigenvectors() * z;
}

}  // namespace

FilterState kalman_filter(const PreparedObservations& data, const StateSpaceModel& m, FilterPath path) {
  check_model(data, m);
  if (path == FilterPath::kDiagonal && !data.full_grid) {
    throw ConfigError("the diagonal filter needs every grid node observed");
  }
  const bool dense = path == FilterPath::kDense || (path == FilterPath::kAuto && !data.full_grid);
  FilterState f = dense ? dense_filter(data, m) : diagonal_filter(data, m);
  if (!std::isfinite(f.loglik)) throw NumericalError("filter log-likelihood is not finite");
  return f;
}

FilterState kalman_filter(const ObservationSet& obs, const StateSpaceModel& m, FilterPath path) {
  return kalman_filter(prepare_observations(obs, m.lattice), m, path);
}

std::vector<SpectralScalarField> ffbs_from_filter(const FilterState& f, const StateSpaceModel& m,
                                                  Rng& rng) {
  const std::size_t steps = f.steps();
  std::vector<SpectralScalarField> path(steps);
  if (f.dense) {
    std::vector<Eigen::VectorXd> x(steps);
    x[steps - 1] = gaussian_draw(f.dmean[steps - 1], f.dcov[steps - 1], rng);
    for (std::size_t t = steps - 1; t-- > 0;) {
      // J = P_t G' Pp^-1; conditional covariance P_t - J G P_t.
      const Eigen::MatrixXd GP = apply_g_rows(m, f.dcov[t]);
      const Eigen::LDLT<Eigen::MatrixXd> ldlt(f.dpred_cov[t + 1]);
      const Eigen::MatrixXd Jt = ldlt.solve(GP);
      const Eigen::VectorXd mean = f.dmean[t] + Jt.transpose() * (x[t + 1] - f.dpred_mean[t + 1]);
      Eigen::MatrixXd cov = f.dcov[t] - Jt.transpose() * GP;
      cov = 0.5 * (cov + cov.transpose()).eval();
      x[t] = gaussian_draw(mean, cov, rng);
    }
    for (std::size_t t = 0; t < steps; ++t) path[t] = from_real_coords(x[t], m.lattice);
    return path;
  }
  const std::size_t M = m.modes();
  std::vector<std::vector<Complex>> c(steps, std::vector<Complex>(M));
  for (std::size_t k = 0; k < M; ++k) {
    if (k == 0) {
      c[steps - 1][0] = f.mean[steps - 1][0].real() + std::sqrt(std::max(f.var[steps - 1][0], 0.0)) * rng.normal();
    } else {
      c[steps - 1][k] = circular(f.mean[steps - 1][k], f.var[steps - 1][k], rng);
    }
  }
  for (std::size_t t = steps - 1; t-- > 0;) {
    for (std::size_t k = 0; k < M; ++k) {
      const double v = f.var[t][k];
      const double pv = f.pred_var[t + 1][k];
      const Complex J = v * std::conj(m.g[k]) / pv;
      const Complex mean = f.mean[t][k] + J * (c[t + 1][k] - m.g[k] * f.mean[t][k]);
      const double cv = std::max(0.0, v * m.q[k] / pv);
      if (k == 0) {
        c[t][0] = mean.real() + std::sqrt(cv) * rng.normal();
      } else {
        c[t][k] = circular(mean, cv, rng);
      }
    }
  }
  for (std::size_t t = 0; t < steps; ++t) {
    SpectralScalarField s(m.lattice);
    s.mean() = c[t][0].real();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = c[t][i + 1];
    path[t] = std::move(s);
  }
  return path;
}

std::vector<SpectralScalarField> ffbs_sample(const ObservationSet& obs, const StateSpaceModel& m,
                                             Rng& rng, FilterPath path) {
  return ffbs_from_filter(kalman_filter(obs, m, path), m, rng);
}

WhitenedInnovations whitened_innovations(std::span<const SpectralScalarField> path,
                                         const SpdeParams& p, const LatticePtr& lattice,
                                         double delta) {
  SpdeParams unit = p;
  unit.matern.sigma2 = 1.0;
  const StateSpaceModel m = build_state_space(unit, lattice, delta);
  WhitenedInnovations w;
  for (std::size_t t = 0; t < path.size(); ++t) {
    const auto& c = path[t];
    const std::vector<double>& var = t == 0 ? m.stationary : m.q;
    const double r0 = t == 0 ? c.mean() : c.mean() - m.g[0].real() * path[t - 1].mean();
    w.sum_squares += r0 * r0 / var[0];
    for (std::size_t i = 0; i < c.size(); ++i) {
      const Complex r = t == 0 ? c[i] : c[i] - m.g[i + 1] * path[t - 1][i];
      w.sum_squares += 2.0 * std::norm(r) / var[i + 1];
    }
    w.count += 1 + 2 * c.size();
  }
  return w;
}

double SpdeHyperpriors::rho0_hi(double alpha) const {
  return rho0_scale / ((alpha - 1.0) * (alpha - 1.0));
}

bool SpdeHyperpriors::in_support(const SpdeParams& p) const {
  const double a = p.matern.alpha;
  return p.zeta > 0 && p.gamma > 0 && p.matern.sigma2 > 0 && p.tau2 > tau2.lo && p.tau2 < tau2.hi &&
         mu.contains(p.mu[0]) && mu.contains(p.mu[1]) && psi.contains(p.psi) && p.rho1 > rho1.lo &&
         p.rho1 < rho1.hi && a > alpha.lo && a <= alpha.hi && p.matern.rho0 >= rho0_lo &&
         p.matern.rho0 <= rho0_hi(a);
}

double SpdeHyperpriors::logpdf(const SpdeParams& p) const {
  if (!in_support(p)) return kNegInf;
  return invgamma_logpdf(sigma2, p.matern.sigma2) + invgamma_logpdf(gamma, p.gamma) +
         invgamma_logpdf(zeta, p.zeta) + tau2.logpdf(p.tau2) + mu.logpdf(p.mu[0]) +
         mu.logpdf(p.mu[1]) + psi.logpdf(p.psi) + rho1.logpdf(p.rho1) + alpha.logpdf(p.matern.alpha) -
         std::log(rho0_hi(p.matern.alpha) - rho0_lo);
}

void SpdeMwgConfig::validate() const {
  require(burn_in <= iterations, "burn-in exceeds the number of iterations");
  require(thin > 0, "thinning must be positive");
  require(delta > 0.0, "observation interval must be positive");
  require(rho_alpha > 0.0 && rho_alpha < 1.0, "rho_alpha must lie in (0, 1)");
  require(initial_step > 0.0, "initial random-walk step must be positive");
  require(adapt_target > 0.0 && adapt_target < 1.0, "adaptation target must lie in (0, 1)");
  require(priors.alpha.lo >= 1.0, "SPDE alpha prior must lie above 1");
  start.validate();
  require(priors.in_support(start), "starting values lie outside the prior support");
}

const std::vector<std::string>& spde_param_names() {
  static const std::vector<std::string> names = {"alpha", "rho0", "sigma2", "zeta", "rho1",
                                                 "gamma", "psi",  "mu1",    "mu2",  "tau2"};
  return names;
}

namespace {

constexpr int kBlock = 8;

struct Bounds {
  double lo, hi;
  bool log_scale;
};

std::array<Bounds, kBlock> block_bounds(const SpdeHyperpriors& h, double alpha) {
  return {{{0, 0, true},
           {h.rho1.lo, h.rho1.hi, false},
           {0, 0, true},
           {h.psi.lo, h.psi.hi, false},
           {h.mu.lo, h.mu.hi, false},
           {h.mu.lo, h.mu.hi, false},
           {h.tau2.lo, h.tau2.hi, false},
           {h.rho0_lo, h.rho0_hi(alpha), false}}};
}

std::array<double, kBlock> block_values(const SpdeParams& p) {
  return {p.zeta, p.rho1, p.gamma, p.psi, p.mu[0], p.mu[1], p.tau2, p.matern.rho0};
}

double to_eta(double x, const Bounds& b) {
  if (b.log_scale) return std::log(x);
  const double u = (x - b.lo) / (b.hi - b.lo);
  return std::log(u) - std::log1p(-u);
}

double from_eta(double e, const Bounds& b) {
  if (b.log_scale) return std::exp(e);
  return b.lo + (b.hi - b.lo) / (1.0 + std::exp(-e));
}

// log |d x / d eta|
double log_jacobian(double x, const Bounds& b) {
  if (b.log_scale) return std::log(x);
  return std::log(x - b.lo) + std::log(b.hi - x) - std::log(b.hi - b.lo);
}

Eigen::VectorXd eta_of(const SpdeParams& p, const SpdeHyperpriors& h) {
  const auto b = block_bounds(h, p.matern.alpha);
  const auto v = block_values(p);
  Eigen::VectorXd e(kBlock);
  for (int i = 0; i < kBlock; ++i) e[i] = to_eta(v[i], b[i]);
  return e;
}

// Returns nullopt when a back-transformed value degenerates to a bound.
std::optional<SpdeParams> params_of(const Eigen::VectorXd& e, const SpdeParams& base,
                                    const SpdeHyperpriors& h) {
  const auto b = block_bounds(h, base.matern.alpha);
  std::array<double, kBlock> x;
  for (int i = 0; i < kBlock; ++i) {
    x[i] = from_eta(e[i], b[i]);
    if (!std::isfinite(x[i])) return std::nullopt;
    if (!b[i].log_scale && !(x[i] > b[i].lo && x[i] < b[i].hi)) return std::nullopt;
    if (b[i].log_scale && !(x[i] > 0.0)) return std::nullopt;
  }
  SpdeParams p = base;
  p.zeta = x[0];
  p.rho1 = x[1];
  p.gamma = x[2];
  p.psi = x[3];
  p.mu = {x[4], x[5]};
  p.tau2 = x[6];
  p.matern.rho0 = x[7];
  return p;
}

double block_log_jacobian(const SpdeParams& p, const SpdeHyperpriors& h) {
  const auto b = block_bounds(h, p.matern.alpha);
  const auto v = block_values(p);
  double s = 0.0;
  for (int i = 0; i < kBlock; ++i) s += log_jacobian(v[i], b[i]);
  return s;
}

std::vector<double> record_params(const SpdeParams& p) {
  return {p.matern.alpha, p.matern.rho0, p.matern.sigma2, p.zeta, p.rho1,
          p.gamma,        p.psi,         p.mu[0],         p.mu[1], p.tau2};
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  nlohmann::json j = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    j.push_back(row);
  }
  return j;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index k = 0; k < m.cols(); ++k) m(i, k) = j[i][k].get<double>();
  return m;
}

const char* filter_name(FilterPath p) {
  switch (p) {
    case FilterPath::kDiagonal:
      return "diagonal";
    case FilterPath::kDense:
      return "dense";
    case FilterPath::kAuto:
      break;
  }
  return "auto";
}

nlohmann::json sampler_json(const SpdeMwgConfig& c) {
  const auto& h = c.priors;
  return {{"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"thin", c.thin},
          {"warmup", c.warmup},
          {"delta", c.delta},
          {"estimate_alpha", c.estimate_alpha},
          {"rho_alpha", c.rho_alpha},
          {"initial_step", c.initial_step},
          {"adapt_target", c.adapt_target},
          {"filter", filter_name(c.filter)},
          {"start", to_json(c.start)},
          {"priors",
           {{"sigma2", {h.sigma2.a, h.sigma2.b}},
            {"gamma", {h.gamma.a, h.gamma.b}},
            {"zeta", {h.zeta.a, h.zeta.b}},
            {"tau2", {h.tau2.lo, h.tau2.hi}},
            {"mu", {h.mu.lo, h.mu.hi}},
            {"psi", {h.psi.lo, h.psi.hi}},
            {"rho1", {h.rho1.lo, h.rho1.hi}},
            {"alpha", {h.alpha.lo, h.alpha.hi}},
            {"rho0", {h.rho0_lo, h.rho0_scale}}}}};
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace

SpdeMwgSummary spde_mwg_run(const ObservationSet& obs, const LatticePtr& lattice,
                            const SpdeMwgConfig& cfg, Rng& rng, const fs::path& out_dir,
                            const RunControl& ctl) {
  cfg.validate();
  const PreparedObservations data = prepare_observations(obs, lattice);
  const auto& h = cfg.priors;
  const std::vector<std::string> moves = {"sweep", "init"};
  const nlohmann::json header = {{"format", "hbda-chain"},
                                 {"case", "spde"},
                                 {"version", version_string()},
                                 {"seed", ctl.seed},
                                 {"n", lattice->n()},
                                 {"ordering", WavenumberSet::kOrderingTag},
                                 {"param_names", spde_param_names()},
                                 {"move_names", moves},
                                 {"sampler", sampler_json(cfg)},
                                 {"config", ctl.config_echo}};
  const fs::path ckpt_file = out_dir / "checkpoint.json";

  SpdeMwgSummary sum;
  std::uint64_t evaluations = 0;
  auto filter_at = [&](const SpdeParams& p) {
    ++evaluations;
    return kalman_filter(data, build_state_space(p, lattice, cfg.delta), cfg.filter);
  };

  SpdeParams cur = cfg.start;
  double log_scale = 0.0;
  bool cov_active = false;
  Eigen::MatrixXd chol = Eigen::MatrixXd::Identity(kBlock, kBlock) * cfg.initial_step;
  std::uint64_t adapt_n = 0;
  Eigen::VectorXd adapt_mean = Eigen::VectorXd::Zero(kBlock);
  Eigen::MatrixXd adapt_m2 = Eigen::MatrixXd::Zero(kBlock, kBlock);
  std::uint64_t start = 0;
  std::array<double, 5> seconds{};  // rw, alpha, ffbs, sigma2, refresh
  std::unique_ptr<ChainWriter> writer;
  FilterState cur_f;

  if (ctl.resume && fs::exists(ckpt_file)) {
    const auto ck = read_json(ckpt_file);
    rng.restore_state(ck.at("rng").get<std::string>());
    cur = spde_params_from_json(ck.at("params"));
    log_scale = ck.at("log_scale");
    cov_active = ck.at("cov_active");
    chol = matrix_from_json(ck.at("chol"));
    adapt_n = ck.at("adapt_n");
    adapt_mean = matrix_from_json(ck.at("adapt_mean"));
    adapt_m2 = matrix_from_json(ck.at("adapt_m2"));
    start = ck.at("iteration");
    evaluations = ck.at("evaluations");
    const auto& s = ck.at("summary");
    sum.rw_moves = s.at("rw_moves");
    sum.rw_accepted = s.at("rw_accepted");
    sum.rw_moves_after_burn = s.at("rw_moves_after_burn");
    sum.rw_accepted_after_burn = s.at("rw_accepted_after_burn");
    sum.alpha_moves = s.at("alpha_moves");
    sum.alpha_accepted = s.at("alpha_accepted");
    if (fs::exists(out_dir / "timing.json")) {
      const auto t = read_json(out_dir / "timing.json");
      for (std::size_t i = 0; i < seconds.size(); ++i) seconds[i] = t.at("component_seconds").at(i);
    }
    const ChainOffsets off{ck.at("offsets").at(0), ck.at("offsets").at(1), ck.at("offsets").at(2)};
    writer = std::make_unique<ChainWriter>(out_dir, header, moves, off);
    const std::uint64_t e = evaluations;
    cur_f = filter_at(cur);
    evaluations = e;
  } else {
    writer = std::make_unique<ChainWriter>(out_dir, header, moves);
    cur_f = filter_at(cur);
    writer->append({0, 1, kNoAccept, 1, cur_f.loglik, record_params(cur)});
  }

  auto checkpoint = [&](std::uint64_t it) {
    const ChainOffsets off = writer->flush();
    const nlohmann::json ck = {{"format", "hbda-checkpoint"},
                               {"version", version_string()},
                               {"iteration", it},
                               {"rng", rng.save_state()},
                               {"params", to_json(cur)},
                               {"log_scale", log_scale},
                               {"cov_active", cov_active},
                               {"chol", matrix_json(chol)},
                               {"adapt_n", adapt_n},
                               {"adapt_mean", matrix_json(adapt_mean)},
                               {"adapt_m2", matrix_json(adapt_m2)},
                               {"evaluations", evaluations},
                               {"offsets", {off.chain, off.snapshots, off.csv}},
                               {"summary",
                                {{"rw_moves", sum.rw_moves},
                                 {"rw_accepted", sum.rw_accepted},
                                 {"rw_moves_after_burn", sum.rw_moves_after_burn},
                                 {"rw_accepted_after_burn", sum.rw_accepted_after_burn},
                                 {"alpha_moves", sum.alpha_moves},
                                 {"alpha_accepted", sum.alpha_accepted}}}};
    write_json_atomic(ckpt_file, ck);
    double total = 0.0;
    for (double s : seconds) total += s;
    write_json_atomic(out_dir / "timing.json",
                      {{"move_names", moves},
                       {"move_seconds", {total, 0.0}},
                       {"component_names", {"rw", "alpha", "ffbs", "sigma2", "refresh"}},
                       {"component_seconds", seconds}});
  };

  auto log_target = [&](const SpdeParams& p, double loglik) {
    return loglik + h.logpdf(p) + block_log_jacobian(p, h);
  };

  Timer wall;
  std::uint64_t it = start;
  while (it < cfg.iterations) {
    ++it;
    const std::uint64_t e0 = evaluations;
    ChainRecord rec;
    rec.iteration = it;
    rec.move = 0;

    // (i) random-walk block with the path integrated out.
    {
      Timer t;
      const Eigen::VectorXd eta = eta_of(cur, h);
      Eigen::VectorXd z(kBlock);
      for (int i = 0; i < kBlock; ++i) z[i] = rng.normal();
      const double log_u = std::log(rng.uniform());
      const Eigen::VectorXd prop_eta = eta + std::exp(log_scale) * (chol * z);
      bool accepted = false;
      if (const auto prop = params_of(prop_eta, cur, h); prop && h.in_support(*prop)) {
        try {
          FilterState f = filter_at(*prop);
          if (log_u < log_target(*prop, f.loglik) - log_target(cur, cur_f.loglik)) {
            cur = *prop;
            cur_f = std::move(f);
            accepted = true;
          }
        } catch (const NumericalError&) {
        }
      }
      rec.accept = accepted ? 1 : 0;
      ++sum.rw_moves;
      sum.rw_accepted += accepted;
      if (it > cfg.burn_in) {
        ++sum.rw_moves_after_burn;
        sum.rw_accepted_after_burn += accepted;
      } else {
        const double gain = 1.0 / std::pow(static_cast<double>(it) + 10.0, 0.6);
        log_scale += gain * ((accepted ? 1.0 : 0.0) - cfg.adapt_target);
        log_scale = std::clamp(log_scale, -15.0, 5.0);
        if (it > cfg.warmup) {
          const Eigen::VectorXd x = eta_of(cur, h);
          ++adapt_n;
          const Eigen::VectorXd d = x - adapt_mean;
          adapt_mean += d / static_cast<double>(adapt_n);
          adapt_m2 += d * (x - adapt_mean).transpose();
          if (adapt_n >= 2 * kBlock && (adapt_n % 100 == 0 || it == cfg.burn_in)) {
            Eigen::MatrixXd C = adapt_m2 / static_cast<double>(adapt_n - 1);
            C *= 2.38 * 2.38 / kBlock;
            C.diagonal().array() += 1e-10;
            const Eigen::LLT<Eigen::MatrixXd> llt(C);
            if (llt.info() == Eigen::Success) {
              chol = llt.matrixL();
              if (!cov_active) log_scale = 0.0;
              cov_active = true;
            }
          }
        }
      }
      seconds[0] += t.seconds();
    }

    // (ii) smoothness, aware of the alpha-dependent rho0 bound.
    if (cfg.estimate_alpha) {
      Timer t;
      const double a = cur.matern.alpha;
      const double u = h.alpha.sample(rng);
      const double log_u = std::log(rng.uniform());
      const double prop = cfg.rho_alpha * a + (1.0 - cfg.rho_alpha) * u;
      const double reverse = (a - cfg.rho_alpha * prop) / (1.0 - cfg.rho_alpha);
      bool accepted = false;
      if (prop > h.alpha.lo && h.alpha.contains(prop) && h.alpha.contains(reverse) &&
          cur.matern.rho0 <= h.rho0_hi(prop)) {
        SpdeParams p = cur;
        p.matern = MaternParams(prop, cur.matern.rho0, cur.matern.sigma2);
        try {
          FilterState f = filter_at(p);
          const double log_ratio = f.loglik - cur_f.loglik + h.logpdf(p) - h.logpdf(cur);
          if (log_u < log_ratio) {
            cur = p;
            cur_f = std::move(f);
            accepted = true;
          }
        } catch (const NumericalError&) {
        }
      }
      ++sum.alpha_moves;
      sum.alpha_accepted += accepted;
      seconds[1] += t.seconds();
    }

    // (iii) path.
    Timer t_ffbs;
    const StateSpaceModel model = build_state_space(cur, lattice, cfg.delta);
    const auto path = ffbs_from_filter(cur_f, model, rng);
    seconds[2] += t_ffbs.seconds();

    // (iv) conjugate sigma2 given the path.
    Timer t_s2;
    const WhitenedInnovations w = whitened_innovations(path, cur, lattice, cfg.delta);
    const InvGamma post(h.sigma2.a + 0.5 * static_cast<double>(w.count), h.sigma2.b + 0.5 * w.sum_squares);
    cur.matern = MaternParams(cur.matern.alpha, cur.matern.rho0, invgamma_sample(post, rng));
    seconds[3] += t_s2.seconds();

    Timer t_ref;
    cur_f = filter_at(cur);
    seconds[4] += t_ref.seconds();

    rec.evaluations = static_cast<std::uint32_t>(evaluations - e0);
    rec.loglik = cur_f.loglik;
    rec.params = record_params(cur);
    writer->append(rec);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) writer->snapshot(it, path);

    if (ctl.checkpoint_every && it % ctl.checkpoint_every == 0) checkpoint(it);
    if (ctl.stop_after && it >= *ctl.stop_after && it < cfg.iterations) {
      checkpoint(it);
      sum.iterations = it;
      sum.filter_evaluations = evaluations;
      sum.wall_seconds = wall.seconds();
      return sum;
    }
  }
  checkpoint(it);
  sum.iterations = it;
  sum.filter_evaluations = evaluations;
  sum.wall_seconds = wall.seconds();
  sum.completed = true;
  return sum;
}

}  // namespace hbda
