#include "hbda/mwg_ns.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <limits>

#include "hbda/chain_io.hpp"
#include "hbda/errors.hpp"
#include "hbda/stats.hpp"
#include "hbda/version.hpp"

namespace hbda {

namespace fs = std::filesystem;

void PcnConfig::validate() const {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("pCN rho must lie in (0, 1]");
  if (!(target_lo < target_hi)) throw ConfigError("pCN target acceptance interval is empty");
  if (!(adapt_target > 0.0 && adapt_target < 1.0)) throw ConfigError("pCN adapt target must lie in (0, 1)");
}

void MwgConfig::validate() const {
  pcn.validate();
  if (p_v < 0 || p_beta2 < 0 || p_alpha < 0) throw ConfigError("scan probabilities must be nonnegative");
  if (std::abs(p_v + p_beta2 + p_alpha - 1.0) > 1e-9) throw ConfigError("scan probabilities must sum to 1");
  if (!(rho_alpha > 0.0 && rho_alpha < 1.0)) throw ConfigError("rho_alpha must lie in (0, 1)");
  if (!(alpha_prior.lo > 0.5)) throw ConfigError("alpha prior must lie above 1/2");
  if (burn_in > iterations) throw ConfigError("burn-in exceeds the number of iterations");
  if (thin == 0) throw ConfigError("thinning must be positive");
  if (alpha0 && !(*alpha0 > 0.5)) throw ConfigError("initial alpha must exceed 1/2");
  if (beta2_0 && !(*beta2_0 > 0.0)) throw ConfigError("initial beta2 must be positive");
}

NsForwardModel::NsForwardModel(NsConfig cfg, ObservationSet obs)
    : solver_(std::move(cfg)), obs_(std::move(obs)) {
  obs_.validate();
  if (obs_.mesh != solver_.lattice()->n()) throw ConfigError("observation mesh differs from solver mesh");
  if (obs_.components != 2) throw ConfigError("Navier-Stokes observations must have 2 components");
}

double NsForwardModel::log_likelihood(const SpectralVelocityField& v0) {
  ++evaluations_;
  try {
    const Trajectory traj = solver_.solve_to(v0, obs_.times.back(), obs_.times);
    return hbda::log_likelihood(traj, obs_);
  } catch (const NumericalError& e) {
    ++blowups_;
    std::cerr << "warning: " << e.what() << "; proposal rejected\n";
    return -std::numeric_limits<double>::infinity();
  }
}

PcnResult pcn_step(const SpectralVelocityField& v, double loglik, const NsPriorParams& p,
                   double rho, ForwardModel& model, Rng& rng) {
  SpectralVelocityField prop = ns_prior_sample(p, v.lattice_ptr(), rng);
  prop *= std::sqrt(std::max(0.0, 1.0 - rho * rho));
  for (std::size_t i = 0; i < prop.size(); ++i) prop[i] += rho * v[i];
  const double ll = model.log_likelihood(prop);
  const double log_u = std::log(rng.uniform());
  if (std::isfinite(ll) && log_u < ll - loglik) return {std::move(prop), ll, true};
  return {v, loglik, false};
}

double beta2_gibbs_move(const SpectralVelocityField& v, double alpha, const InvGamma& prior,
                        Rng& rng) {
  return invgamma_sample(conjugate_beta2_update(prior, v, alpha), rng);
}

AlphaMove alpha_mh_move_with_u(const SpectralVelocityField& v, double alpha, double beta2,
                               const UniformInterval& prior, double rho_alpha, double u,
                               double log_uniform) {
  const double prop = rho_alpha * alpha + (1.0 - rho_alpha) * u;
  const double reverse_u = (alpha - rho_alpha * prop) / (1.0 - rho_alpha);
  if (!prior.contains(prop) || !prior.contains(reverse_u) || !(prop > 0.5)) {
    return {alpha, false, prop};
  }
  const double log_ratio = ns_prior_logdensity(v, NsPriorParams(prop, beta2)) -
                           ns_prior_logdensity(v, NsPriorParams(alpha, beta2)) +
                           prior.logpdf(prop) - prior.logpdf(alpha);
  if (log_uniform < log_ratio) return {prop, true, prop};
  return {alpha, false, prop};
}

AlphaMove alpha_mh_move(const SpectralVelocityField& v, double alpha, double beta2,
                        const UniformInterval& prior, double rho_alpha, Rng& rng) {
  const double u = prior.sample(rng);
  const double log_uniform = std::log(rng.uniform());
  return alpha_mh_move_with_u(v, alpha, beta2, prior, rho_alpha, u, log_uniform);
}

namespace {

nlohmann::json sampler_json(const MwgConfig& c) {
  return {{"p_v", c.p_v},
          {"p_beta2", c.p_beta2},
          {"p_alpha", c.p_alpha},
          {"rho_alpha", c.rho_alpha},
          {"alpha_prior", {c.alpha_prior.lo, c.alpha_prior.hi}},
          {"beta2_prior", {c.beta2_prior.a, c.beta2_prior.b}},
          {"iterations", c.iterations},
          {"burn_in", c.burn_in},
          {"thin", c.thin},
          {"rho", c.pcn.rho},
          {"adapt", c.pcn.adapt},
          {"adapt_target", c.pcn.adapt_target},
          {"alpha0", c.alpha0 ? nlohmann::json(*c.alpha0) : nlohmann::json()},
          {"beta2_0", c.beta2_0 ? nlohmann::json(*c.beta2_0) : nlohmann::json()}};
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

}  // namespace

MwgSummary mwg_run(ForwardModel& model, const LatticePtr& lattice, const MwgConfig& cfg, Rng& rng,
                   const fs::path& out_dir, const RunControl& ctl) {
  cfg.validate();
  const nlohmann::json header = {{"format", "hbda-chain"},
                                 {"case", "ns"},
                                 {"version", version_string()},
                                 {"seed", ctl.seed},
                                 {"n", lattice->n()},
                                 {"ordering", WavenumberSet::kOrderingTag},
                                 {"param_names", {"alpha", "beta2"}},
                                 {"move_names", {"v", "beta2", "alpha", "init"}},
                                 {"sampler", sampler_json(cfg)},
                                 {"config", ctl.config_echo}};
  const std::vector<std::string> moves = {"v", "beta2", "alpha", "init"};
  const fs::path ckpt_file = out_dir / "checkpoint.json";

  MwgSummary sum;
  SpectralVelocityField v;
  double alpha = 0.0, beta2 = 0.0, loglik = 0.0;
  double log1m_rho = std::log1p(-std::min(cfg.pcn.rho, 1.0 - 1e-15));
  std::uint64_t start = 0;
  std::array<double, 3> move_seconds{};
  std::array<std::uint64_t, 3> move_counts{};
  std::unique_ptr<ChainWriter> writer;

  if (ctl.resume && fs::exists(ckpt_file)) {
    const auto ck = read_json(ckpt_file);
    rng.restore_state(ck.at("rng").get<std::string>());
    v = velocity_from_json(ck.at("v"), lattice);
    alpha = ck.at("alpha");
    beta2 = ck.at("beta2");
    loglik = ck.at("loglik");
    log1m_rho = ck.at("log1m_rho");
    start = ck.at("iteration");
    model.set_evaluations(ck.at("evaluations"));
    const auto& s = ck.at("summary");
    sum.pcn_moves = s.at("pcn_moves");
    sum.pcn_accepted = s.at("pcn_accepted");
    sum.pcn_moves_after_burn = s.at("pcn_moves_after_burn");
    sum.pcn_accepted_after_burn = s.at("pcn_accepted_after_burn");
    sum.alpha_moves = s.at("alpha_moves");
    sum.alpha_accepted = s.at("alpha_accepted");
    if (fs::exists(out_dir / "timing.json")) {
      const auto t = read_json(out_dir / "timing.json");
      for (int m = 0; m < 3; ++m) {
        move_seconds[m] = t.at("move_seconds").at(m);
        move_counts[m] = t.at("move_counts").at(m);
      }
    }
    const ChainOffsets off{ck.at("offsets").at(0), ck.at("offsets").at(1), ck.at("offsets").at(2)};
    writer = std::make_unique<ChainWriter>(out_dir, header, moves, off);
  } else {
    writer = std::make_unique<ChainWriter>(out_dir, header, moves);
    alpha = cfg.alpha0 ? *cfg.alpha0 : cfg.alpha_prior.sample(rng);
    beta2 = cfg.beta2_0 ? *cfg.beta2_0 : invgamma_sample(cfg.beta2_prior, rng);
    v = ns_prior_sample(NsPriorParams(alpha, beta2), lattice, rng);
    const std::uint64_t e0 = model.evaluations();
    loglik = model.log_likelihood(v);
    if (!std::isfinite(loglik)) throw NumericalError("initial state has non-finite log-likelihood");
    writer->append({0, 3, kNoAccept, static_cast<std::uint32_t>(model.evaluations() - e0), loglik,
                    {alpha, beta2}});
  }

  auto checkpoint = [&](std::uint64_t it) {
    const ChainOffsets off = writer->flush();
    nlohmann::json ck = {{"format", "hbda-checkpoint"},
                         {"version", version_string()},
                         {"iteration", it},
                         {"rng", rng.save_state()},
                         {"v", to_json(v)},
                         {"alpha", alpha},
                         {"beta2", beta2},
                         {"loglik", loglik},
                         {"log1m_rho", log1m_rho},
                         {"evaluations", model.evaluations()},
                         {"offsets", {off.chain, off.snapshots, off.csv}},
                         {"summary",
                          {{"pcn_moves", sum.pcn_moves},
                           {"pcn_accepted", sum.pcn_accepted},
                           {"pcn_moves_after_burn", sum.pcn_moves_after_burn},
                           {"pcn_accepted_after_burn", sum.pcn_accepted_after_burn},
                           {"alpha_moves", sum.alpha_moves},
                           {"alpha_accepted", sum.alpha_accepted}}}};
    write_json_atomic(ckpt_file, ck);
    write_json_atomic(out_dir / "timing.json",
                      {{"move_names", {"v", "beta2", "alpha"}},
                       {"move_seconds", move_seconds},
                       {"move_counts", move_counts}});
  };

  Timer wall;
  std::uint64_t it = start;
  while (it < cfg.iterations) {
    ++it;
    const double pick = rng.uniform();
    ChainRecord rec;
    rec.iteration = it;
    Timer t;
    if (pick < cfg.p_v) {
      const std::uint64_t e0 = model.evaluations();
      const double rho = -std::expm1(log1m_rho);
      auto res = pcn_step(v, loglik, NsPriorParams(alpha, beta2), rho, model, rng);
      v = std::move(res.v);
      loglik = res.loglik;
      rec.move = static_cast<std::uint8_t>(NsMove::kVelocity);
      rec.accept = res.accepted ? 1 : 0;
      rec.evaluations = static_cast<std::uint32_t>(model.evaluations() - e0);
      ++sum.pcn_moves;
      sum.pcn_accepted += res.accepted;
      if (it > cfg.burn_in) {
        ++sum.pcn_moves_after_burn;
        sum.pcn_accepted_after_burn += res.accepted;
      } else if (cfg.pcn.adapt) {
        const double gain = 1.0 / std::pow(static_cast<double>(sum.pcn_moves) + 10.0, 0.6);
        log1m_rho += gain * ((res.accepted ? 1.0 : 0.0) - cfg.pcn.adapt_target);
        log1m_rho = std::clamp(log1m_rho, std::log(1e-7), 0.0);
      }
    } else if (pick < cfg.p_v + cfg.p_beta2) {
      beta2 = beta2_gibbs_move(v, alpha, cfg.beta2_prior, rng);
      rec.move = static_cast<std::uint8_t>(NsMove::kBeta2);
    } else {
      const auto res = alpha_mh_move(v, alpha, beta2, cfg.alpha_prior, cfg.rho_alpha, rng);
      alpha = res.alpha;
      rec.move = static_cast<std::uint8_t>(NsMove::kAlpha);
      rec.accept = res.accepted ? 1 : 0;
      ++sum.alpha_moves;
      sum.alpha_accepted += res.accepted;
    }
    move_seconds[rec.move] += t.seconds();
    ++move_counts[rec.move];
    rec.loglik = loglik;
    rec.params = {alpha, beta2};
    writer->append(rec);
    if (it > cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) writer->snapshot(it, std::vector{v});

    if (ctl.checkpoint_every && it % ctl.checkpoint_every == 0) checkpoint(it);
    if (ctl.stop_after && it >= *ctl.stop_after && it < cfg.iterations) {
      checkpoint(it);
      sum.iterations = it;
      sum.evaluations = model.evaluations();
      sum.final_rho = -std::expm1(log1m_rho);
      sum.wall_seconds = wall.seconds();
      return sum;
    }
  }
  checkpoint(it);
  sum.iterations = it;
  sum.evaluations = model.evaluations();
  sum.final_rho = -std::expm1(log1m_rho);
  sum.wall_seconds = wall.seconds();
  sum.completed = true;
  return sum;
}

ForecastStats forecast(std::span<const SpectralVelocityField> samples, std::span<const double> times,
                       const NsConfig& ns, std::span<const GridPoint> points) {
  ForecastStats out;
  out.times.assign(times.begin(), times.end());
  out.points.assign(points.begin(), points.end());
  const std::size_t cells = out.times.size() * out.points.size() * 2;
  std::vector<std::vector<double>> values(cells);
  NavierStokesSolver solver(ns);
  const double t_end = out.times.empty() ? 0.0 : *std::max_element(out.times.begin(), out.times.end());
  for (const auto& s : samples) {
    Trajectory traj;
    try {
      traj = solver.solve_to(s, t_end, out.times);
    } catch (const NumericalError&) {
      ++out.failed;
      continue;
    }
    ++out.members;
    for (std::size_t t = 0; t < out.times.size(); ++t) {
      const auto vals = evaluate_at(traj.at_time(out.times[t]), out.points);
      for (std::size_t j = 0; j < vals.size(); ++j) values[t * vals.size() + j].push_back(vals[j]);
    }
  }
  out.mean.assign(cells, 0.0);
  out.var.assign(cells, 0.0);
  out.q05 = out.q50 = out.q95 = out.mean;
  if (out.members == 0) return out;
  for (std::size_t i = 0; i < cells; ++i) {
    Welford w;
    for (double x : values[i]) w.add(x);
    out.mean[i] = w.mean();
    out.var[i] = w.variance();
    const auto q = quantiles(values[i], {0.05, 0.5, 0.95});
    out.q05[i] = q[0];
    out.q50[i] = q[1];
    out.q95[i] = q[2];
  }
  return out;
}

}  // namespace hbda
