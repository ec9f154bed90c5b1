#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hbda/chain_io.hpp"
#include "hbda/errors.hpp"
#include "hbda/spde.hpp"
#include "hbda/stats.hpp"
#include "oracles.hpp"
#include "spde_oracle.hpp"

namespace hbda {
namespace {

namespace fs = std::filesystem;

SpdeParams truth() { return SpdeParams{}; }

SpdeParams random_params(Rng& rng) {
  SpdeParams p;
  p.zeta = rng.uniform(0.1, 2.0);
  p.rho1 = rng.uniform(0.05, 0.6);
  p.gamma = rng.uniform(0.5, 3.0);
  p.psi = rng.uniform(0.0, M_PI / 2);
  p.mu = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
  p.tau2 = rng.uniform(0.01, 0.5);
  p.matern = MaternParams(rng.uniform(1.2, 3.5), rng.uniform(0.1, 2.0), rng.uniform(0.1, 2.0));
  return p;
}

ObservationSet simulate_obs(const StateSpaceModel& m, int T, std::span<const GridPoint> pts, Rng& rng) {
  const auto path = simulate_path(m, T, rng);
  return generate_observations(path, pts, m.dt, std::sqrt(m.tau2), rng);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TEST(StateSpace, IsotropicPropagatorIsReal) {
  const auto lat = build_wavenumbers(8);
  SpdeParams p;
  p.mu = {0, 0};
  p.psi = 0;
  p.gamma = 1;
  p.rho1 = 0.3;
  const auto m = build_state_space(p, lat, 0.7);
  for (std::size_t i = 0; i < lat->half_size(); ++i) {
    const double k2 = lat->half()[i].norm2();
    EXPECT_EQ(m.g[i + 1].imag(), 0.0);
    EXPECT_NEAR(m.g[i + 1].real(), std::exp(-0.7 * (0.09 * k2 + p.zeta)), 1e-14);
  }
  EXPECT_NEAR(m.g[0].real(), std::exp(-0.7 * p.zeta), 1e-15);
  const auto S = diffusion_matrix(0.3, 1.0, 0.0);
  EXPECT_NEAR(S(0, 0), 0.09, 1e-15);
  EXPECT_NEAR(S(0, 1), 0.0, 1e-15);
}

TEST(StateSpace, AnisotropyMatchesDisplayedInverse) {
  const double rho1 = 0.4, gamma = 2.5, psi = 0.6;
  Eigen::Matrix2d M;
  M << std::cos(psi), std::sin(psi), -gamma * std::sin(psi), gamma * std::cos(psi);
  const Eigen::Matrix2d Sinv = M.transpose() * M / (rho1 * rho1);
  const Eigen::Matrix2d prod = diffusion_matrix(rho1, gamma, psi) * Sinv;
  EXPECT_NEAR((prod - Eigen::Matrix2d::Identity()).norm(), 0.0, 1e-13);
}

TEST(StateSpace, DriftRotatesPhase) {
  const auto lat = build_wavenumbers(8);
  SpdeParams p;
  const auto m = build_state_space(p, lat, 1.0);
  const int i = lat->half_index({1, 2});
  EXPECT_NEAR(std::arg(m.g[i + 1]), -(0.2 * 1 - 0.2 * 2), 1e-14);
}

TEST(StateSpace, HeavyDampingKillsPropagator) {
  const auto lat = build_wavenumbers(8);
  SpdeParams p;
  p.zeta = 1e3;
  const auto m = build_state_space(p, lat, 1.0);
  for (const auto& g : m.g) EXPECT_LT(std::abs(g), 1e-300);
}

TEST(StateSpace, GeneratingValuesAreDissipative) {
  const auto lat = build_wavenumbers(16);
  const auto m = build_state_space(truth(), lat, 1.0);
  ASSERT_EQ(m.modes(), 1 + lat->half_size());
  for (std::size_t k = 0; k < m.modes(); ++k) {
    EXPECT_LT(std::abs(m.g[k]), 1.0);
    EXPECT_GT(m.q[k], 0.0);
    // Stationary variance is a fixed point of the prediction step.
    EXPECT_NEAR(std::norm(m.g[k]) * m.stationary[k] + m.q[k], m.stationary[k], 1e-12 * m.stationary[k]);
  }
}

TEST(StateSpace, InnovationVarianceIsExactOu) {
  const auto lat = build_wavenumbers(8);
  SpdeParams p;
  const auto m1 = build_state_space(p, lat, 0.5);
  const auto m2 = build_state_space(p, lat, 1.0);
  // Two half steps compose into one full step.
  for (std::size_t k = 0; k < m1.modes(); ++k) {
    EXPECT_NEAR(std::abs(m1.g[k] * m1.g[k] - m2.g[k]), 0.0, 1e-14);
    EXPECT_NEAR(std::norm(m1.g[k]) * m1.q[k] + m1.q[k], m2.q[k], 1e-13 * m2.q[k]);
  }
}

TEST(StateSpace, Validation) {
  SpdeParams p;
  p.zeta = 0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = SpdeParams{};
  p.psi = 2.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = SpdeParams{};
  p.tau2 = -1;
  EXPECT_THROW(p.validate(), ConfigError);
  EXPECT_NO_THROW(SpdeParams{}.validate());
  const auto j = to_json(SpdeParams{});
  const auto q = spde_params_from_json(j);
  EXPECT_EQ(q.mu[1], -0.2);
  EXPECT_EQ(q.matern.rho0, 0.1);
}

TEST(Kalman, ScalarRecursion) {
  const auto lat = build_wavenumbers(4);
  StateSpaceModel m;
  m.lattice = lat;
  m.tau2 = 16.0;  // grid-DFT noise variance tau2 / n^2 = 1
  const std::size_t M = 1 + lat->half_size();
  m.g.assign(M, 0.5);
  m.q.assign(M, 1.0);
  m.stationary.assign(M, 1.0 / 0.75);
  Rng rng(1);
  const auto path = simulate_path(m, 6, rng);
  const auto obs = generate_observations(path, full_grid(4), 1.0, 4.0, rng);
  const auto f = kalman_filter(obs, m, FilterPath::kDiagonal);
  double mean = 0, var = 1.0 / 0.75;
  for (std::size_t t = 1; t <= 6; ++t) {
    double y = 0;
    for (std::size_t p = 0; p < 16; ++p) y += obs.value(t - 1, p, 0);
    y /= 16;
    const double pm = 0.5 * mean, pv = 0.25 * var + 1.0;
    const double K = pv / (pv + 1.0);
    mean = pm + K * (y - pm);
    var = (1 - K) * pv;
    EXPECT_NEAR(f.mean[t][0].real(), mean, 1e-12);
    EXPECT_NEAR(f.var[t][0], var, 1e-12);
  }
}

TEST(Kalman, MatchesDenseOracleFullGrid) {
  const auto lat = build_wavenumbers(4);
  const auto pts = full_grid(4);
  Rng rng(2);
  for (int draw = 0; draw < 50; ++draw) {
    const SpdeParams p = random_params(rng);
    const auto m = build_state_space(p, lat, rng.uniform(0.3, 1.5));
    const auto obs = simulate_obs(m, 3, pts, rng);
    const oracle::SpdeJoint joint(m, obs);
    for (FilterPath path : {FilterPath::kDiagonal, FilterPath::kDense}) {
      const auto f = kalman_filter(obs, m, path);
      EXPECT_NEAR(f.loglik, joint.loglik(), 1e-8) << draw;
      for (std::size_t t = 0; t <= 3; ++t) {
        const auto [mean, cov] = joint.filtered(t);
        const Eigen::VectorXd got = to_real_coords(f.filtered_field(lat, t));
        EXPECT_LT((got - mean).lpNorm<Eigen::Infinity>(), 1e-8) << draw << " t=" << t;
        EXPECT_NEAR(f.mode_variance(t, 1), cov(1, 1) + cov(2, 2), 1e-8);
      }
    }
  }
}

TEST(Kalman, MatchesDenseOraclePartialGrid) {
  const auto lat = build_wavenumbers(4);
  const std::vector<GridPoint> pts = {{0, 0}, {1, 3}, {2, 2}, {3, 1}, {0, 2}};
  Rng rng(3);
  for (int draw = 0; draw < 10; ++draw) {
    const auto m = build_state_space(random_params(rng), lat, 1.0);
    const auto obs = simulate_obs(m, 3, pts, rng);
    const oracle::SpdeJoint joint(m, obs);
    const auto f = kalman_filter(obs, m);
    EXPECT_TRUE(f.dense);
    EXPECT_NEAR(f.loglik, joint.loglik(), 1e-8);
    const auto [mean, cov] = joint.filtered(3);
    EXPECT_LT((f.dmean[3] - mean).lpNorm<Eigen::Infinity>(), 1e-8);
    EXPECT_LT((f.dcov[3] - cov).lpNorm<Eigen::Infinity>(), 1e-8);
  }
  ObservationSet obs = simulate_obs(build_state_space(truth(), lat, 1.0), 2, pts, rng);
  EXPECT_THROW(kalman_filter(obs, build_state_space(truth(), lat, 1.0), FilterPath::kDiagonal),
               ConfigError);
}

TEST(Kalman, UninformativeDataLeavesPrior) {
  const auto lat = build_wavenumbers(6);
  auto m = build_state_space(truth(), lat, 1.0);
  Rng rng(4);
  const auto obs = simulate_obs(m, 4, full_grid(6), rng);
  m.tau2 = 1e14;
  const auto f = kalman_filter(obs, m);
  for (std::size_t t = 0; t <= 4; ++t)
    for (std::size_t k = 0; k < m.modes(); ++k) {
      EXPECT_NEAR(f.var[t][k], f.pred_var[t][k], 1e-6 * f.pred_var[t][k]);
      EXPECT_NEAR(f.var[t][k], m.stationary[k], 1e-6 * m.stationary[k]);
    }
}

TEST(Kalman, NoObservationsStayStationary) {
  const auto lat = build_wavenumbers(6);
  const auto m = build_state_space(truth(), lat, 1.0);
  Rng rng(5);
  const std::vector<GridPoint> one = {{0, 0}};
  auto obs = simulate_obs(m, 5, one, rng);
  auto m2 = m;
  m2.tau2 = 1e300;
  const auto f = kalman_filter(obs, m2);
  for (std::size_t t = 1; t <= 5; ++t)
    for (std::size_t k = 0; k < m.modes(); ++k)
      EXPECT_NEAR(f.mode_variance(t, k), m.stationary[k], 1e-9 * m.stationary[k]);
}

TEST(Ffbs, NoiselessPathReproducesData) {
  const auto lat = build_wavenumbers(8);
  auto m = build_state_space(truth(), lat, 1.0);
  m.tau2 = 1e-16;
  Rng rng(6);
  const auto path = simulate_path(m, 3, rng);
  const auto obs = generate_observations(path, full_grid(8), 1.0, 1e-8, rng);
  const auto draw = ffbs_sample(obs, m, rng);
  ASSERT_EQ(draw.size(), 4u);
  for (std::size_t t = 1; t <= 3; ++t) {
    EXPECT_NEAR(draw[t].mean(), path[t].mean(), 1e-6);
    for (std::size_t i = 0; i < path[t].size(); ++i) EXPECT_LT(std::abs(draw[t][i] - path[t][i]), 1e-6);
  }
}

TEST(Ffbs, SeedContract) {
  const auto lat = build_wavenumbers(4);
  const auto m = build_state_space(truth(), lat, 1.0);
  Rng rng(7);
  const auto obs = simulate_obs(m, 3, full_grid(4), rng);
  Rng a(8), b(8), c(9);
  const auto pa = ffbs_sample(obs, m, a), pb = ffbs_sample(obs, m, b), pc = ffbs_sample(obs, m, c);
  EXPECT_EQ(to_real_coords(pa[2]), to_real_coords(pb[2]));
  EXPECT_NE(to_real_coords(pa[2]), to_real_coords(pc[2]));
}

void check_ffbs_moments(FilterPath path, int draws, double nse) {
  const auto lat = build_wavenumbers(4);
  SpdeParams p;
  p.matern = MaternParams(2.0, 0.8, 1.0);
  p.tau2 = 0.3;
  const auto m = build_state_space(p, lat, 1.0);
  Rng rng(10);
  const auto obs = simulate_obs(m, 3, full_grid(4), rng);
  const oracle::SpdeJoint joint(m, obs);
  const auto f = kalman_filter(obs, m, path);
  const std::size_t N = m.real_dim();
  std::vector<std::vector<Welford>> w(4, std::vector<Welford>(N));
  std::vector<std::vector<Welford>> w2(4, std::vector<Welford>(N));
  for (int s = 0; s < draws; ++s) {
    const auto d = ffbs_from_filter(f, m, rng);
    for (std::size_t t = 0; t < 4; ++t) {
      const auto x = to_real_coords(d[t]);
      for (std::size_t j = 0; j < N; ++j) w[t][j].add(x[j]);
    }
  }
  for (std::size_t t = 0; t < 4; ++t) {
    const auto [mean, cov] = joint.smoothed(t);
    for (std::size_t j = 0; j < N; ++j) {
      const double v = cov(j, j);
      EXPECT_NEAR(w[t][j].mean(), mean[j], nse * std::sqrt(v / draws)) << t << "," << j;
      // Var of the sample variance of a Gaussian is 2 v^2 / N.
      EXPECT_NEAR(w[t][j].sample_variance(), v, nse * v * std::sqrt(2.0 / draws)) << t << "," << j;
    }
  }
}

TEST(Ffbs, DiagonalMomentsMatchSmoother) { check_ffbs_moments(FilterPath::kDiagonal, 20000, 4.0); }
TEST(Ffbs, DenseMomentsMatchSmoother) { check_ffbs_moments(FilterPath::kDense, 5000, 4.0); }

TEST(Sigma2, WhitenedInnovationsMatchDensePathDensity) {
  const auto lat = build_wavenumbers(4);
  Rng rng(11);
  SpdeParams p = random_params(rng);
  const auto m = build_state_space(p, lat, 1.0);
  const auto path = simulate_path(m, 3, rng);
  const auto w = whitened_innovations(path, p, lat, 1.0);
  EXPECT_EQ(w.count, 4u * m.real_dim());
  auto logp = [&](double s2) {
    SpdeParams q = p;
    q.matern.sigma2 = s2;
    return oracle::path_logpdf(build_state_space(q, lat, 1.0), path);
  };
  const double s1 = 0.7, s2 = 1.9;
  const double expect = -0.5 * w.count * std::log(s1 / s2) - 0.5 * w.sum_squares * (1 / s1 - 1 / s2);
  EXPECT_NEAR(logp(s1) - logp(s2), expect, 1e-8 * std::abs(expect) + 1e-8);
}

TEST(Sigma2, ConjugateDrawMatchesInverseGamma) {
  const auto lat = build_wavenumbers(4);
  Rng rng(12);
  const auto m = build_state_space(truth(), lat, 1.0);
  const auto path = simulate_path(m, 2, rng);
  const auto w = whitened_innovations(path, truth(), lat, 1.0);
  const InvGamma post(1.0 + 0.5 * w.count, 1.0 + 0.5 * w.sum_squares);
  std::vector<double> d;
  for (int i = 0; i < 20000; ++i) d.push_back(invgamma_sample(post, rng));
  std::sort(d.begin(), d.end());
  double D = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double F = oracle::invgamma_cdf(post.a, post.b, d[i]);
    D = std::max({D, std::abs(F - double(i) / d.size()), std::abs(F - double(i + 1) / d.size())});
  }
  EXPECT_LT(std::sqrt(double(d.size())) * D, 1.628);
}

TEST(Hyperpriors, SupportAndRho0Bound) {
  SpdeHyperpriors h;
  SpdeParams p;
  EXPECT_TRUE(h.in_support(p));
  EXPECT_NEAR(h.rho0_hi(2.0), 5.0, 1e-15);
  EXPECT_NEAR(h.rho0_hi(3.0), 1.25, 1e-15);
  p.matern = MaternParams(3.0, 2.0, 0.2);
  EXPECT_FALSE(h.in_support(p));
  EXPECT_EQ(h.logpdf(p), -std::numeric_limits<double>::infinity());
  p.matern = MaternParams(3.0, 1.0, 0.2);
  EXPECT_TRUE(std::isfinite(h.logpdf(p)));
  p.mu = {0.6, 0};
  EXPECT_FALSE(h.in_support(p));
}

TEST(SpdeMwg, ShortRunRespectsSupportAndResumes) {
  const auto lat = build_wavenumbers(6);
  const auto m = build_state_space(truth(), lat, 1.0);
  Rng rng(13);
  const auto obs = simulate_obs(m, 4, full_grid(6), rng);
  SpdeMwgConfig cfg;
  cfg.iterations = 600;
  cfg.burn_in = 300;
  cfg.warmup = 100;
  cfg.thin = 50;
  const fs::path full = fs::temp_directory_path() / "hbda_spde_full";
  const fs::path part = fs::temp_directory_path() / "hbda_spde_part";
  fs::remove_all(full);
  fs::remove_all(part);
  RunControl ctl;
  ctl.seed = 13;
  Rng r1(21);
  const auto s = spde_mwg_run(obs, lat, cfg, r1, full, ctl);
  EXPECT_TRUE(s.completed);
  // Infeasible alpha proposals are rejected without a filter pass.
  EXPECT_GE(s.filter_evaluations, 1 + 2 * 600u);
  EXPECT_LE(s.filter_evaluations, 1 + 3 * 600u);
  const auto chain = read_chain(full);
  ASSERT_EQ(chain.records.size(), 601u);
  std::uint64_t ev = 0;
  for (const auto& r : chain.records) ev += r.evaluations;
  EXPECT_EQ(ev, s.filter_evaluations);
  EXPECT_EQ(chain.param_names, spde_param_names());
  for (const auto& r : chain.records) {
    SpdeParams p;
    p.matern = MaternParams(r.params[0], r.params[1], r.params[2]);
    p.zeta = r.params[3];
    p.rho1 = r.params[4];
    p.gamma = r.params[5];
    p.psi = r.params[6];
    p.mu = {r.params[7], r.params[8]};
    p.tau2 = r.params[9];
    EXPECT_TRUE(cfg.priors.in_support(p)) << r.iteration;
  }
  const auto snaps = read_scalar_snapshots(full);
  ASSERT_EQ(snaps.size(), 6u);
  EXPECT_EQ(snaps[0].fields.size(), 5u);

  RunControl stop = ctl;
  stop.stop_after = 250;
  Rng r2(21);
  EXPECT_FALSE(spde_mwg_run(obs, lat, cfg, r2, part, stop).completed);
  RunControl res = ctl;
  res.resume = true;
  Rng r3(0);
  EXPECT_TRUE(spde_mwg_run(obs, lat, cfg, r3, part, res).completed);
  for (const char* f : {"chain.bin", "chain.csv", "snapshots.bin", "checkpoint.json"})
    EXPECT_EQ(slurp(full / f), slurp(part / f)) << f;
  fs::remove_all(full);
  fs::remove_all(part);
}

TEST(SpdeMwg, FixedAlphaStaysFixed) {
  const auto lat = build_wavenumbers(4);
  const auto m = build_state_space(truth(), lat, 1.0);
  Rng rng(14);
  const auto obs = simulate_obs(m, 3, full_grid(4), rng);
  SpdeMwgConfig cfg;
  cfg.iterations = 200;
  cfg.estimate_alpha = false;
  cfg.start.matern = MaternParams(1.5, 0.2, 0.1);
  const fs::path dir = fs::temp_directory_path() / "hbda_spde_fixed";
  fs::remove_all(dir);
  Rng r(15);
  const auto s = spde_mwg_run(obs, lat, cfg, r, dir);
  EXPECT_EQ(s.alpha_moves, 0u);
  EXPECT_EQ(s.filter_evaluations, 1 + 2 * 200u);
  for (double a : read_chain(dir).column("alpha")) EXPECT_EQ(a, 1.5);
  fs::remove_all(dir);

  SpdeMwgConfig bad;
  bad.start.matern = MaternParams(3.0, 2.0, 0.1);
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace hbda
