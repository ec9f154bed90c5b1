#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "hbda/priors.hpp"
#include "oracles.hpp"

namespace hbda {
namespace {

TEST(NsPrior, ParameterGuards) {
  EXPECT_THROW(NsPriorParams(0.5, 1.0), std::invalid_argument);
  EXPECT_THROW(NsPriorParams(0.4, 1.0), std::invalid_argument);
  EXPECT_THROW(NsPriorParams(2.0, 0.0), std::invalid_argument);
  EXPECT_NO_THROW(NsPriorParams(0.51, 1e-3));
  EXPECT_THROW(MaternParams(1.0, 0.1, 0.2), std::invalid_argument);
  EXPECT_THROW(InvGamma(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(UniformInterval(1.0, 1.0), std::invalid_argument);
}

TEST(NsPrior, SampleVariancesMatchSpectrum) {
  const auto lat = build_wavenumbers(8);
  Rng rng(101);
  const NsPriorParams p(2.2, 1.2);
  const int draws = 100000;
  const std::vector<Wavevector> probe = {{1, 0}, {1, 1}, {2, -1}};
  std::vector<double> s(probe.size(), 0.0), s4(probe.size(), 0.0);
  for (int d = 0; d < draws; ++d) {
    const auto v = ns_prior_sample(p, lat, rng);
    for (std::size_t j = 0; j < probe.size(); ++j) {
      const double x = v.at(probe[j]).real();
      s[j] += x * x;
      s4[j] += x * x * x * x;
    }
  }
  for (std::size_t j = 0; j < probe.size(); ++j) {
    const double expect = 0.5 * p.beta2 * std::pow(probe[j].norm2(), -p.alpha);
    const double mean = s[j] / draws;
    const double se = std::sqrt((s4[j] / draws - mean * mean) / draws);
    EXPECT_LT(std::abs(mean - expect), 3.0 * se) << "mode " << j;
  }
  EXPECT_NEAR(0.5 * 1.2, 0.6, 1e-15);
}

TEST(NsPrior, SeedContract) {
  const auto lat = build_wavenumbers(8);
  const NsPriorParams p(2.0, 1.0);
  Rng a(5), b(5), c(6);
  const auto va = ns_prior_sample(p, lat, a);
  const auto vb = ns_prior_sample(p, lat, b);
  const auto vc = ns_prior_sample(p, lat, c);
  EXPECT_EQ(va.coeffs()[0], vb.coeffs()[0]);
  EXPECT_TRUE(std::equal(va.coeffs().begin(), va.coeffs().end(), vb.coeffs().begin()));
  EXPECT_FALSE(std::equal(va.coeffs().begin(), va.coeffs().end(), vc.coeffs().begin()));
}

TEST(NsPrior, QuadraticForm) {
  const auto lat = build_wavenumbers(8);
  SpectralVelocityField v(lat);
  EXPECT_EQ(ns_quadratic_form(v, 2.0), 0.0);
  v.mode({1, 0}) = 1.0;
  EXPECT_DOUBLE_EQ(ns_quadratic_form(v, 2.0), 2.0);
  Rng rng(3);
  const auto w = oracle::random_velocity(lat, rng);
  double plain = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) plain += std::norm(w[i]);
  EXPECT_NEAR(ns_quadratic_form(w, 0.0), 2.0 * plain, 1e-12);
}

TEST(NsPrior, LogDensityMatchesIndependentGaussians) {
  const auto lat = build_wavenumbers(6);
  Rng rng(8);
  const auto v = oracle::random_velocity(lat, rng);
  const NsPriorParams p(1.7, 0.8);
  double ref = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double var = 0.5 * p.beta2 * std::pow(lat->half()[i].norm2(), -p.alpha);
    for (double x : {v[i].real(), v[i].imag()}) {
      ref += -0.5 * std::log(2.0 * M_PI * var) - x * x / (2.0 * var);
    }
  }
  EXPECT_NEAR(ns_prior_logdensity(v, p), ref, 1e-10);
}

TEST(NsPrior, AlphaRatioAndZeroFieldDeterminant) {
  const auto lat = build_wavenumbers(16);
  Rng rng(9);
  const auto v = ns_prior_sample(NsPriorParams(2.0, 1.0), lat, rng);
  const double a = 2.0, ah = 2.3, b2 = 1.0;
  const double diff = ns_prior_logdensity(v, NsPriorParams(ah, b2)) -
                      ns_prior_logdensity(v, NsPriorParams(a, b2));
  const double direct = (ah - a) * lat->log_norm_sum() -
                        (ns_quadratic_form(v, ah) - ns_quadratic_form(v, a)) / (2.0 * b2);
  EXPECT_NEAR(diff, direct, 1e-12 * std::max(1.0, std::abs(diff)));

  SpectralVelocityField zero(lat);
  double logsum = 0.0;
  for (const Wavevector& k : lat->half()) logsum += 2.0 * std::log(k.norm());
  const double z = ns_prior_logdensity(zero, NsPriorParams(ah, b2)) -
                   ns_prior_logdensity(zero, NsPriorParams(a, b2));
  EXPECT_NEAR(z, (ah - a) * logsum, 1e-12 * std::abs(z));
}

TEST(NsPrior, DoublingBeta2) {
  const auto lat = build_wavenumbers(8);
  Rng rng(10);
  const auto v = oracle::random_velocity(lat, rng);
  const double b2 = 0.7, alpha = 1.5;
  const double d = lat->real_dim();
  const double q = ns_quadratic_form(v, alpha);
  const double change = ns_prior_logdensity(v, NsPriorParams(alpha, 2 * b2)) -
                        ns_prior_logdensity(v, NsPriorParams(alpha, b2));
  EXPECT_NEAR(change, -0.5 * d * std::log(2.0) + q / (4.0 * b2), 1e-10);
}

TEST(NsPrior, QuadraticFormIsChiSquared) {
  const auto lat = build_wavenumbers(8);
  Rng rng(12);
  const NsPriorParams p(2.0, 1.5);
  const int draws = 10000;
  const double d = lat->real_dim();
  double s = 0.0;
  for (int i = 0; i < draws; ++i) s += ns_quadratic_form(ns_prior_sample(p, lat, rng), p.alpha) / p.beta2;
  const double mean = s / draws;
  EXPECT_LT(std::abs(mean - d), 3.0 * std::sqrt(2.0 * d / draws));
}

TEST(NsPrior, MonotoneSmoothing) {
  for (double k2 : {2.0, 4.0, 5.0, 49.0}) {
    EXPECT_LT(0.5 * std::pow(k2, -2.5), 0.5 * std::pow(k2, -2.0));
  }
  const auto lat = build_wavenumbers(8);
  SpectralVelocityField v(lat);
  v.mode({1, 0}) = 1.0;
  EXPECT_DOUBLE_EQ(ns_quadratic_form(v, 1.0), ns_quadratic_form(v, 3.0));
}

TEST(InvGammaDist, ModeMeanAndMoments) {
  const InvGamma g(1.5, 2.5);
  EXPECT_DOUBLE_EQ(g.mode(), 1.0);
  EXPECT_DOUBLE_EQ(g.mean(), 5.0);
  // Variance is infinite for a <= 2, so check E[1/x] = a/b instead of the
  // raw mean, plus the mean of a heavier-shape law.
  Rng rng(77);
  const int draws = 1000000;
  double s = 0.0, ss = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = 1.0 / invgamma_sample(g, rng);
    s += x;
    ss += x * x;
  }
  double mean = s / draws;
  double se = std::sqrt((ss / draws - mean * mean) / draws);
  EXPECT_LT(std::abs(mean - g.a / g.b), 3.0 * se);

  const InvGamma h(6.0, 2.5);
  s = ss = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double x = invgamma_sample(h, rng);
    s += x;
    ss += x * x;
  }
  mean = s / draws;
  se = std::sqrt((ss / draws - mean * mean) / draws);
  EXPECT_LT(std::abs(mean - h.mean()), 3.0 * se);
}

TEST(InvGammaDist, MeanOfHeavyTailedLaw) {
  // a = 1.5 has finite mean 5 but infinite variance; the sample mean still
  // converges, so compare with a loose tolerance.
  const InvGamma g(1.5, 2.5);
  Rng rng(78);
  const int draws = 1000000;
  double s = 0.0;
  for (int i = 0; i < draws; ++i) s += invgamma_sample(g, rng);
  EXPECT_NEAR(s / draws, 5.0, 0.25);
}

TEST(InvGammaDist, DensityIntegratesToOne) {
  for (const InvGamma g : {InvGamma(1.5, 2.5), InvGamma(5.5, 3.5), InvGamma(1.0, 1.0)}) {
    // Substitute x = e^s to integrate the long right tail.
    const double lo = -12.0, hi = 18.0;
    const int m = 200000;
    const double h = (hi - lo) / m;
    double total = 0.0;
    for (int i = 0; i <= m; ++i) {
      const double s = lo + i * h;
      const double w = (i == 0 || i == m) ? 0.5 : 1.0;
      total += w * std::exp(invgamma_logpdf(g, std::exp(s)) + s);
    }
    EXPECT_NEAR(total * h, 1.0, 1e-4);
  }
  EXPECT_EQ(invgamma_logpdf(InvGamma(1, 1), 0.0), -std::numeric_limits<double>::infinity());
  EXPECT_EQ(invgamma_logpdf(InvGamma(1, 1), -1.0), -std::numeric_limits<double>::infinity());
}

TEST(InvGammaDist, KolmogorovSmirnov) {
  const InvGamma g(5.5, 3.5);
  Rng rng(79);
  const int draws = 100000;
  std::vector<double> xs(draws);
  for (double& x : xs) x = invgamma_sample(g, rng);
  std::sort(xs.begin(), xs.end());
  double dmax = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double cdf = oracle::invgamma_cdf(g.a, g.b, xs[i]);
    dmax = std::max({dmax, std::abs(cdf - double(i) / draws), std::abs(cdf - double(i + 1) / draws)});
  }
  // p > 0.01 <=> sqrt(N) D < 1.628
  EXPECT_LT(std::sqrt(double(draws)) * dmax, 1.628);
}

TEST(ConjugateUpdate, WorkedExamples) {
  const auto lat = build_wavenumbers(4);
  ASSERT_EQ(lat->real_dim(), 8);
  SpectralVelocityField v(lat);
  const InvGamma prior(1.5, 2.5);
  EXPECT_EQ(conjugate_beta2_update(prior, v, 2.0), InvGamma(5.5, 2.5));
  v.mode({1, 0}) = 1.0;
  EXPECT_EQ(conjugate_beta2_update(prior, v, 2.0), InvGamma(5.5, 3.5));
  EXPECT_EQ(build_wavenumbers(32)->real_dim(), 960);
}

TEST(ConjugateUpdate, SufficientStatisticsAdd) {
  const auto lat = build_wavenumbers(8);
  Rng rng(4);
  const auto v = oracle::random_velocity(lat, rng);
  const InvGamma prior(1.5, 2.5);
  const InvGamma once = conjugate_beta2_update(prior, v, 1.8);
  const InvGamma twice = conjugate_beta2_update(once, v, 1.8);
  const double q = ns_quadratic_form(v, 1.8);
  EXPECT_NEAR(twice.a, prior.a + lat->real_dim(), 1e-12);
  EXPECT_NEAR(twice.b, prior.b + q, 1e-9);
}

TEST(ConjugateUpdate, MatchesGridPosterior) {
  const auto lat = build_wavenumbers(4);
  Rng rng(123);
  const double alpha = 2.0;
  const auto v = ns_prior_sample(NsPriorParams(alpha, 1.2), lat, rng);
  const InvGamma prior(1.5, 2.5);
  const InvGamma post = conjugate_beta2_update(prior, v, alpha);

  const auto grid = oracle::brute_force_beta2_posterior(
      [&](double b2) { return ns_prior_logdensity(v, NsPriorParams(alpha, b2)) + invgamma_logpdf(prior, b2); },
      post, 1000);
  // Analytic density against the normalised brute-force grid.
  double tv = 0.0;
  for (std::size_t i = 0; i < grid.x.size(); ++i) {
    tv += std::abs(grid.mass[i] - std::exp(invgamma_logpdf(post, grid.x[i])) * grid.h);
  }
  EXPECT_LT(0.5 * tv, 1e-2);

  std::vector<double> draws(1000000);
  for (double& x : draws) x = invgamma_sample(post, rng);
  EXPECT_LT(oracle::histogram_tv(grid, draws, 100), 1e-2);
}

TEST(Matern, VariancesAndNormalisation) {
  const auto lat = build_wavenumbers(16);
  const MaternParams p(2.0, 0.1, 0.2);
  const double c = matern_normalization(p, *lat);
  EXPECT_NEAR(matern_mode_variance(p, *lat, {0, 0}), c * 0.2 * std::pow(0.01, -2.0), 1e-15);

  const auto vars = matern_mode_variances(p, *lat);
  ASSERT_EQ(vars.size(), lat->half_size() + 1);
  double total = vars[0];
  for (std::size_t i = 1; i < vars.size(); ++i) total += 2.0 * vars[i];
  EXPECT_NEAR(total, 0.2, 1e-10);
  double direct = matern_mode_variance(p, *lat, {0, 0});
  for (const Wavevector& k : lat->full()) direct += matern_mode_variance(p, *lat, k);
  EXPECT_NEAR(direct, 0.2, 1e-10);

  const Wavevector a{1, 2}, b{3, -4};
  const MaternParams p2(2.5, 0.3, 7.0);
  const double ratio = matern_mode_variance(p2, *lat, a) / matern_mode_variance(p2, *lat, b);
  EXPECT_NEAR(ratio, std::pow((0.09 + 25.0) / (0.09 + 5.0), 2.5), 1e-10);
}

TEST(Matern, PositiveAndDecreasing) {
  const auto lat = build_wavenumbers(8);
  for (const MaternParams p : {MaternParams(1.1, 0.01, 0.1), MaternParams(4.0, 2.0, 5.0)}) {
    double prev = std::numeric_limits<double>::infinity();
    for (double k1 = 0; k1 < 4; ++k1) {
      const double var = matern_mode_variance(p, *lat, {int(k1), 0});
      EXPECT_GT(var, 0.0);
      EXPECT_LT(var, prev);
      prev = var;
    }
  }
}

TEST(UniformPrior, LogPdf) {
  const UniformInterval u(0.6, 4.0);
  EXPECT_NEAR(u.logpdf(1.0), -std::log(3.4), 1e-15);
  EXPECT_EQ(u.logpdf(0.5), -std::numeric_limits<double>::infinity());
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_TRUE(u.contains(u.sample(rng)));
}

}  // namespace
}  // namespace hbda
