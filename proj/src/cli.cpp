#include "hbda/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "hbda/chain_io.hpp"
#include "hbda/diagnostics.hpp"
#include "hbda/errors.hpp"
#include "hbda/field_io.hpp"
#include "hbda/mwg_ns.hpp"
#include "hbda/observation.hpp"
#include "hbda/spde.hpp"
#include "hbda/stats.hpp"
#include "hbda/version.hpp"

namespace hbda {

namespace fs = std::filesystem;
using nlohmann::json;

ExperimentPaths::ExperimentPaths(const fs::path& out)
    : root(out),
      data(out / "data"),
      chain(out / "chain"),
      diagnostics(out / "diagnostics"),
      forecast(out / "forecast") {}

namespace {

std::vector<GridPoint> observation_points(const ExperimentConfig& c) {
  if (c.is_spde()) return c.spde.full_grid ? full_grid(c.n) : uniform_subgrid(c.n, c.spde.sites);
  return uniform_subgrid(c.n, c.ns.sites);
}

/// Subset of the resolved config that determines the data.
json data_key(const json& resolved) {
  json k = json::object();
  for (const char* key : {"case", "n", "seed", "ns", "spde"})
    if (resolved.contains(key)) k[key] = resolved[key];
  return k;
}

json data_manifest(const ExperimentConfig& c) {
  return {{"format", "hbda-data"},
          {"schema_version", 1},
          {"version", version_string()},
          {"seed", c.seed},
          {"streams",
           {{"data-truth", Rng::derive_seed(c.seed, "data-truth")},
            {"data-noise", Rng::derive_seed(c.seed, "data-noise")}}},
          {"config", c.resolved}};
}

ObservationSet load_data(const ExperimentConfig& c, const ExperimentPaths& p) {
  if (!fs::exists(p.data / "manifest.json") || !fs::exists(p.data / "observations.json"))
    throw ConfigError("no data in " + p.data.string() + " (run 'generate' first)");
  const json m = read_json(p.data / "manifest.json");
  if (data_key(m.at("config")) != data_key(c.resolved))
    throw ConfigError("data in " + p.data.string() + " was generated from a different experiment config");
  return read_observations(p.data);
}

void require_chain(const ExperimentPaths& p) {
  if (!fs::exists(p.chain / "chain.bin"))
    throw ConfigError("no chain files in " + p.chain.string() + " (run 'run' first)");
  const ChainData ch = read_chain(p.chain);
  if (ch.records.empty()) throw ConfigError("chain in " + p.chain.string() + " has no records");
}

std::vector<double> forecast_times(double last_obs, const ForecastSettings& f) {
  const double end = last_obs + f.horizon;
  const auto count = static_cast<std::size_t>(std::floor(end / f.step + 1e-9)) + 1;
  std::vector<double> t(count);
  for (std::size_t i = 0; i < count; ++i) t[i] = static_cast<double>(i) * f.step;
  return t;
}

/// Observed nodes first, then the same pattern shifted by half a spacing.
std::pair<std::vector<GridPoint>, std::size_t> band_points(const ExperimentConfig& c) {
  std::vector<GridPoint> obs = observation_points(c);
  const std::size_t n_obs = obs.size();
  if (c.is_spde() && c.spde.full_grid) {
    // Every node is observed; keep a 4 x 4 sample so the bands stay small.
    std::vector<GridPoint> pts;
    const int s = std::max(1, c.n / 4);
    for (int i = 0; i < c.n; i += s)
      for (int j = 0; j < c.n; j += s) pts.push_back({i, j});
    return {pts, pts.size()};
  }
  const int sites = c.is_spde() ? c.spde.sites : c.ns.sites;
  const int side = static_cast<int>(std::lround(std::sqrt(sites)));
  const int spacing = c.n / side;
  if (spacing >= 2) {
    for (std::size_t k = 0; k < n_obs; ++k)
      obs.push_back({(obs[k].i + spacing / 2) % c.n, (obs[k].j + spacing / 2) % c.n});
  }
  return {obs, n_obs};
}

std::vector<std::size_t> stride_select(std::size_t count, int max_samples) {
  std::vector<std::size_t> idx;
  if (count == 0) return idx;
  const std::size_t stride = (count + static_cast<std::size_t>(max_samples) - 1) / static_cast<std::size_t>(max_samples);
  for (std::size_t i = count % stride == 0 ? stride - 1 : count % stride - 1; i < count; i += stride) idx.push_back(i);
  return idx;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << text;
}

}  // namespace

void cmd_generate(const ExperimentConfig& c) {
  const ExperimentPaths p(c.output);
  std::error_code ec;
  fs::create_directories(p.data / "truth", ec);
  if (ec) throw std::runtime_error("cannot create " + p.data.string() + ": " + ec.message());
  Rng truth_rng = Rng::stream(c.seed, "data-truth");
  Rng noise_rng = Rng::stream(c.seed, "data-noise");
  const LatticePtr lat = build_wavenumbers(c.n);
  const std::vector<GridPoint> points = observation_points(c);
  json truth;
  ObservationSet obs;
  if (!c.is_spde()) {
    const NsConfig ns = c.ns_solver_config(lat);
    SpectralVelocityField v0 = ns_prior_sample(NsPriorParams(c.ns.truth_alpha, c.ns.truth_beta2), lat, truth_rng);
    if (c.ns.spinup > 0.0) {
      const std::vector<double> at{c.ns.spinup};
      v0 = solve_to(v0, c.ns.spinup, ns, at).states.back();
    }
    std::vector<double> times;
    for (int t = 1; t <= c.ns.T; ++t) times.push_back(t * c.ns.delta);
    const Trajectory traj = solve_to(v0, times.back(), ns, times);
    obs = generate_observations(traj, points, c.ns.delta, c.ns.T, std::sqrt(c.ns.tau2), noise_rng);
    write_trajectory(p.data / "truth", traj, ns);
    truth = {{"case", "ns"}, {"alpha", c.ns.truth_alpha}, {"beta2", c.ns.truth_beta2}, {"v0", to_json(v0)}};
  } else {
    const StateSpaceModel m = build_state_space(c.spde.truth, lat, c.spde.delta);
    const auto path = simulate_path(m, c.spde.T, truth_rng);
    obs = generate_observations(path, points, c.spde.delta, std::sqrt(c.spde.truth.tau2), noise_rng);
    std::ofstream os(p.data / "truth" / "path.bin", std::ios::binary);
    if (!os) throw std::runtime_error("cannot write truth path");
    for (const auto& f : path) write_field_block(os, f);
    json times = json::array();
    for (int t = 0; t <= c.spde.T; ++t) times.push_back(t * c.spde.delta);
    truth = {{"case", "spde"}, {"params", to_json(c.spde.truth)}, {"path", "truth/path.bin"},
             {"times", times}};
  }
  obs.seed = c.seed;
  write_observations(p.data, obs);
  write_json_atomic(p.data / "truth.json", truth);
  write_json_atomic(p.data / "manifest.json", data_manifest(c));
}

void cmd_run(const ExperimentConfig& c, bool resume) {
  const ExperimentPaths p(c.output);
  const ObservationSet obs = load_data(c, p);
  const LatticePtr lat = build_wavenumbers(c.n);
  RunControl ctl;
  ctl.checkpoint_every = c.checkpoint_every;
  ctl.resume = resume;
  ctl.seed = c.seed;
  ctl.config_echo = c.resolved;
  if (resume && !fs::exists(p.chain / "checkpoint.json"))
    throw ConfigError("nothing to resume in " + p.chain.string());
  Rng rng = Rng::stream(c.seed, "chain");
  json run = {{"format", "hbda-run"}, {"schema_version", 1}, {"version", version_string()},
              {"case", c.case_name}, {"config", c.resolved}};
  if (!c.is_spde()) {
    const NsConfig ns = c.ns_solver_config(lat);
    ctl.config_echo["steps_per_solve"] =
        static_cast<std::uint64_t>(std::llround(c.ns.T * c.ns.delta / c.ns.dt));
    NsForwardModel model(ns, obs);
    const MwgSummary s = mwg_run(model, lat, c.ns_sampler, rng, p.chain, ctl);
    run["summary"] = {{"iterations", s.iterations},
                      {"evaluations", s.evaluations},
                      {"pcn_moves", s.pcn_moves},
                      {"pcn_accepted", s.pcn_accepted},
                      {"pcn_moves_after_burn", s.pcn_moves_after_burn},
                      {"pcn_accepted_after_burn", s.pcn_accepted_after_burn},
                      {"alpha_moves", s.alpha_moves},
                      {"alpha_accepted", s.alpha_accepted},
                      {"final_rho", s.final_rho},
                      {"blowups", model.blowups()},
                      {"completed", s.completed}};
  } else {
    const SpdeMwgSummary s = spde_mwg_run(obs, lat, c.spde_sampler, rng, p.chain, ctl);
    run["summary"] = {{"iterations", s.iterations},
                      {"evaluations", s.filter_evaluations},
                      {"rw_moves", s.rw_moves},
                      {"rw_accepted", s.rw_accepted},
                      {"rw_moves_after_burn", s.rw_moves_after_burn},
                      {"rw_accepted_after_burn", s.rw_accepted_after_burn},
                      {"alpha_moves", s.alpha_moves},
                      {"alpha_accepted", s.alpha_accepted},
                      {"completed", s.completed}};
  }
  write_json_atomic(p.chain / "run.json", run);
}

void cmd_diagnose(const ExperimentConfig& c) {
  const ExperimentPaths p(c.output);
  require_chain(p);
  diagnose_chain(p.chain, p.diagnostics);
  // Observation sites and the posterior variance split by observed status,
  // for the heat-map markers.
  if (!fs::exists(p.data / "observations.json")) return;
  const ObservationSet obs = read_observations(p.data);
  FieldSummary s;
  try {
    s = field_summary(p.chain, c.is_spde() ? DerivedField::kScalar : DerivedField::kVorticity, 0);
  } catch (const std::runtime_error&) {
    return;  // no snapshots after burn-in
  }
  json pts = json::array();
  for (const GridPoint& g : obs.points) pts.push_back({g.i, g.j});
  double obs_var = 0.0;
  for (const GridPoint& g : obs.points) obs_var += s.var[static_cast<std::size_t>(g.i) * s.n + g.j];
  json sites = {{"format", "hbda-sites"},
                {"schema_version", 1},
                {"field", c.is_spde() ? "scalar" : "vorticity"},
                {"n", s.n},
                {"observed", pts},
                {"samples", s.count},
                {"mean_variance_observed", obs_var / static_cast<double>(obs.points.size())},
                {"mean_variance_unobserved", nullptr}};
  if (obs.points.size() < static_cast<std::size_t>(s.n) * s.n)
    sites["mean_variance_unobserved"] = mean_variance_excluding(s, obs.points);
  write_json_atomic(p.diagnostics / "sites.json", sites);
}

void cmd_forecast(const ExperimentConfig& c) {
  const ExperimentPaths p(c.output);
  require_chain(p);
  fs::create_directories(p.forecast);
  const LatticePtr lat = build_wavenumbers(c.n);
  const auto [points, n_observed] = band_points(c);
  json meta = {{"format", "hbda-forecast"}, {"schema_version", 1}, {"version", version_string()},
               {"config", c.resolved}};
  json pts = json::array();
  for (std::size_t k = 0; k < points.size(); ++k)
    pts.push_back({{"index", k}, {"i", points[k].i}, {"j", points[k].j}, {"observed", k < n_observed}});
  meta["points"] = pts;

  if (!c.is_spde()) {
    const auto snaps = read_velocity_snapshots(p.chain);
    if (snaps.empty()) throw ConfigError("no v0 snapshots in " + p.chain.string());
    std::vector<SpectralVelocityField> samples;
    for (std::size_t i : stride_select(snaps.size(), c.forecast.max_samples)) samples.push_back(snaps[i].fields.at(0));
    const double last_obs = c.ns.T * c.ns.delta;
    const std::vector<double> times = forecast_times(last_obs, c.forecast);
    const NsConfig ns = c.ns_solver_config(lat);
    const ForecastStats f = forecast(samples, times, ns, points);
    std::vector<std::size_t> all(points.size());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    const Bands b = trajectory_bands(f, all);
    write_bands_csv(p.forecast / "bands.csv", b, f);
    meta["last_observation_time"] = last_obs;
    meta["times"] = times;
    meta["members"] = f.members;
    meta["failed"] = f.failed;
    meta["unreliable"] = b.unreliable;

    if (fs::exists(p.data / "truth.json")) {
      const json truth = read_json(p.data / "truth.json");
      const SpectralVelocityField v0 = velocity_from_json(truth.at("v0"), lat);
      std::vector<double> rec(times.begin() + 1, times.end());
      std::ostringstream os;
      os << std::setprecision(17) << "time,point,i,j,component,value\n";
      try {
        const Trajectory traj = rec.empty() ? Trajectory{{0.0}, {v0}} : solve_to(v0, times.back(), ns, rec);
        for (std::size_t t = 0; t < traj.times.size(); ++t) {
          const auto vals = evaluate_at(traj.states[t], points);
          for (std::size_t k = 0; k < points.size(); ++k)
            for (int comp = 0; comp < 2; ++comp)
              os << traj.times[t] << ',' << k << ',' << points[k].i << ',' << points[k].j << ',' << comp
                 << ',' << vals[2 * k + comp] << '\n';
        }
      } catch (const NumericalError&) {
      }
      write_text(p.forecast / "truth.csv", os.str());
    }
  } else {
    // Each member continues its sampled path with the sampled parameters.
    const auto snaps = read_scalar_snapshots(p.chain);
    if (snaps.empty()) throw ConfigError("no path snapshots in " + p.chain.string());
    const ChainData chain = read_chain(p.chain);
    std::map<std::uint64_t, std::size_t> row;
    for (std::size_t r = 0; r < chain.records.size(); ++r) row[chain.records[r].iteration] = r;
    const auto col = [&](const ChainRecord& r, const char* name) { return r.params.at(chain.param_index(name)); };
    const int steps_ahead = static_cast<int>(std::floor(c.forecast.horizon / c.spde.delta + 1e-9));
    const std::size_t n_times = static_cast<std::size_t>(c.spde.T + 1 + steps_ahead);
    Rng rng = Rng::stream(c.seed, "forecast");
    std::vector<std::vector<double>> values(n_times * points.size());
    int members = 0;
    for (std::size_t i : stride_select(snaps.size(), c.forecast.max_samples)) {
      const auto& s = snaps[i];
      const auto it = row.find(s.iteration);
      if (it == row.end()) throw ConfigError("snapshot without a chain record");
      const ChainRecord& r = chain.records[it->second];
      SpdeParams prm;
      prm.zeta = col(r, "zeta");
      prm.rho1 = col(r, "rho1");
      prm.gamma = col(r, "gamma");
      prm.psi = col(r, "psi");
      prm.mu = {col(r, "mu1"), col(r, "mu2")};
      prm.tau2 = col(r, "tau2");
      prm.matern = MaternParams(col(r, "alpha"), col(r, "rho0"), col(r, "sigma2"));
      const StateSpaceModel m = build_state_space(prm, lat, c.spde.delta);
      std::vector<SpectralScalarField> path = s.fields;
      for (int h = 0; h < steps_ahead; ++h) {
        SpectralScalarField next = path.back();
        next.mean() = m.g[0].real() * next.mean() + std::sqrt(m.q[0]) * rng.normal();
        for (std::size_t k = 0; k < next.size(); ++k) {
          const double sd = std::sqrt(m.q[k + 1] / 2);
          next[k] = m.g[k + 1] * next[k] + Complex(sd * rng.normal(), sd * rng.normal());
        }
        path.push_back(std::move(next));
      }
      for (std::size_t t = 0; t < n_times; ++t) {
        const auto vals = evaluate_at(path.at(t), points);
        for (std::size_t k = 0; k < points.size(); ++k) values[t * points.size() + k].push_back(vals[k]);
      }
      ++members;
    }
    std::ostringstream os;
    os << std::setprecision(17) << "time,point,i,j,component,mean,q05,q50,q95,members,unreliable\n";
    std::vector<double> times;
    for (std::size_t t = 0; t < n_times; ++t) {
      times.push_back(static_cast<double>(t) * c.spde.delta);
      for (std::size_t k = 0; k < points.size(); ++k) {
        const auto& v = values[t * points.size() + k];
        const auto q = quantiles(v, {0.05, 0.5, 0.95});
        os << times.back() << ',' << k << ',' << points[k].i << ',' << points[k].j << ",0," << mean(v) << ','
           << q[0] << ',' << q[1] << ',' << q[2] << ',' << members << ',' << (members < 20 ? 1 : 0) << '\n';
      }
    }
    write_text(p.forecast / "bands.csv", os.str());
    meta["last_observation_time"] = c.spde.T * c.spde.delta;
    meta["times"] = times;
    meta["members"] = members;
    meta["failed"] = 0;
    meta["unreliable"] = members < 20;
  }
  write_json_atomic(p.forecast / "forecast.json", meta);
}

void cmd_report(const ExperimentConfig& c) {
  const ExperimentPaths p(c.output);
  require_chain(p);
  if (!fs::exists(p.diagnostics / "summary.json"))
    throw ConfigError("no diagnostics in " + p.diagnostics.string() + " (run 'diagnose' first)");
  const json summary = read_json(p.diagnostics / "summary.json");
  const json truth = fs::exists(p.data / "truth.json") ? read_json(p.data / "truth.json") : json::object();
  std::map<std::string, double> true_values;
  if (!c.is_spde()) {
    true_values = {{"alpha", c.ns.truth_alpha}, {"beta2", c.ns.truth_beta2}};
  } else {
    const json t = to_json(c.spde.truth);
    for (const auto& [k, v] : t.items()) {
      if (k == "mu") {
        true_values["mu1"] = v[0];
        true_values["mu2"] = v[1];
      } else {
        true_values[k] = v;
      }
    }
  }
  json params = json::object();
  std::ostringstream md;
  md << "# Run report\n\n";
  md << "case: " << c.case_name << ", n = " << c.n << ", seed = " << c.seed << "\n\n";
  md << "| parameter | truth | median | q05 | q95 | covered | ESS |\n|---|---|---|---|---|---|---|\n";
  md << std::setprecision(6);
  for (const auto& [name, s] : summary.at("parameters").items()) {
    json row = s;
    md << "| " << name << " | ";
    if (true_values.count(name)) {
      const double t = true_values[name];
      const bool covered = s.at("q05").get<double>() <= t && t <= s.at("q95").get<double>();
      row["truth"] = t;
      row["covered"] = covered;
      md << t << " | ";
      md << s.at("median").get<double>() << " | " << s.at("q05").get<double>() << " | " << s.at("q95").get<double>()
         << " | " << (covered ? "yes" : "no");
    } else {
      md << "- | " << s.at("median").get<double>() << " | " << s.at("q05").get<double>() << " | "
         << s.at("q95").get<double>() << " | -";
    }
    md << " | " << s.at("ess").get<double>() << " |\n";
    params[name] = row;
  }
  const json counts = summary.at("solve_counts");
  md << "\nforward evaluations: " << counts.at("pde_count") << " over " << counts.at("iterations")
     << " iterations\n";
  json report = {{"format", "hbda-report"},
                 {"schema_version", 1},
                 {"version", version_string()},
                 {"config", c.resolved},
                 {"parameters", params},
                 {"solve_counts", counts}};
  if (fs::exists(p.chain / "run.json")) report["run"] = read_json(p.chain / "run.json").at("summary");
  if (fs::exists(p.diagnostics / "sites.json")) {
    const json sites = read_json(p.diagnostics / "sites.json");
    report["sites"] = {{"mean_variance_observed", sites.at("mean_variance_observed")},
                       {"mean_variance_unobserved", sites.at("mean_variance_unobserved")}};
    md << "mean posterior " << sites.at("field").get<std::string>() << " variance: observed sites "
       << sites.at("mean_variance_observed") << ", unobserved sites " << sites.at("mean_variance_unobserved")
       << "\n";
  }
  write_json_atomic(p.root / "report.json", report);
  write_text(p.root / "report.md", md.str());
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Hierarchical Bayesian data assimilation experiments"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  std::optional<std::string> preset;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool resume = false;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--preset", preset, "built-in preset: stationary, chaotic, spde-paper, desk-ns, desk-spde");
    sub->add_option("--config", config, "TOML config file, overlaid on the preset")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", out, "output directory (overrides the config)");
  };
  CLI::App* gen = app.add_subcommand("generate", "simulate the truth and write observations");
  CLI::App* run = app.add_subcommand("run", "run the sampler on generated data");
  CLI::App* dia = app.add_subcommand("diagnose", "export traces, ACF, ESS and field summaries");
  CLI::App* fc = app.add_subcommand("forecast", "propagate posterior samples and export bands");
  CLI::App* rep = app.add_subcommand("report", "summarise a diagnosed run");
  for (CLI::App* s : {gen, run, dia, fc, rep}) add_common(s);
  run->add_flag("--resume", resume, "continue from the last checkpoint");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    std::optional<fs::path> cfg_file, out_dir;
    if (config) cfg_file = *config;
    if (out) out_dir = *out;
    const ExperimentConfig cfg = load_experiment(preset, cfg_file, seed, out_dir);
    if (gen->parsed()) cmd_generate(cfg);
    if (run->parsed()) cmd_run(cfg, resume);
    if (dia->parsed()) cmd_diagnose(cfg);
    if (fc->parsed()) cmd_forecast(cfg);
    if (rep->parsed()) cmd_report(cfg);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace hbda
