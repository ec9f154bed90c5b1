#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "hbda/chain_io.hpp"
#include "hbda/cli.hpp"
#include "hbda/config.hpp"
#include "hbda/errors.hpp"
#include "hbda/field_io.hpp"
#include "hbda/observation.hpp"

namespace hbda {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hbda_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Contents of every file under dir except timing.json, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "timing.json")
      out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

const char* kSmallNs = R"(
case = "ns"
n = 8
seed = 11
[ns]
eta = 0.1
delta = 0.5
dt = 0.05
T = 2
sites = 4
tau2 = 0.2
forcing = [1, 2]
[sampler]
iterations = 120
burn_in = 20
thin = 10
checkpoint_every = 50
[forecast]
horizon = 1.0
step = 0.5
max_samples = 5
)";

const char* kSmallSpde = R"(
case = "spde"
n = 8
seed = 5
[spde]
T = 3
[sampler]
iterations = 150
burn_in = 50
thin = 10
warmup = 20
checkpoint_every = 40
[forecast]
horizon = 2.0
)";

ExperimentConfig small(const char* text, const fs::path& out, const std::string& extra = "") {
  json doc = parse_toml(text);
  if (!extra.empty()) merge_json(doc, parse_toml(extra));
  doc["output"] = out.string();
  return experiment_from_json(doc);
}

TEST(Toml, TablesArraysAndScalars) {
  const json j = parse_toml(R"(
# comment
name = "a \"q\" b"   # trailing
count = 12
neg = -3
x = 1.5e-3
flag = true
pair = [1, 2.5, "s", [3]]
[outer.inner]
k = false
[outer]
m = 1_000
)");
  EXPECT_EQ(j["name"], "a \"q\" b");
  EXPECT_TRUE(j["count"].is_number_unsigned());
  EXPECT_EQ(j["count"].get<int>(), 12);
  EXPECT_EQ(j["neg"].get<int>(), -3);
  EXPECT_DOUBLE_EQ(j["x"].get<double>(), 1.5e-3);
  EXPECT_EQ(j["flag"], true);
  EXPECT_EQ(j["pair"].size(), 4u);
  EXPECT_EQ(j["pair"][3][0], 3);
  EXPECT_EQ(j["outer"]["inner"]["k"], false);
  EXPECT_EQ(j["outer"]["m"], 1000);
}

TEST(Toml, LargeSeedIsExact) {
  const json j = parse_toml("seed = 18446744073709551615\n");
  EXPECT_EQ(j["seed"].get<std::uint64_t>(), 18446744073709551615ull);
}

TEST(Toml, ErrorsCarryLineNumbers) {
  const auto message = [](const std::string& text) {
    try {
      parse_toml(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("a = 1\na = 2\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("a = \"open\n").find("line 1"), std::string::npos);
  EXPECT_NE(message("\n\nb = 1.2.3\n").find("line 3"), std::string::npos);
  EXPECT_NE(message("[t]\n[t]\n").find("line 2"), std::string::npos);
  EXPECT_NE(message("c = 1 2\n").find("trailing"), std::string::npos);
  EXPECT_NE(message("= 4\n").find("key"), std::string::npos);
}

TEST(Config, PresetsValidate) {
  ASSERT_EQ(preset_names().size(), 5u);
  for (const auto& name : preset_names()) {
    json doc = parse_toml(preset_text(name));
    doc["seed"] = 1;
    EXPECT_NO_THROW(experiment_from_json(doc)) << name;
  }
  EXPECT_THROW(preset_text("nope"), ConfigError);
}

TEST(Config, PresetNumbers) {
  const auto st = load_experiment("stationary", std::nullopt, 1, std::nullopt);
  EXPECT_EQ(st.n, 32);
  EXPECT_EQ(st.ns.T, 5);
  EXPECT_EQ(st.ns.sites, 16);
  EXPECT_DOUBLE_EQ(st.ns.tau2, 0.2);
  EXPECT_DOUBLE_EQ(st.ns.eta, 0.1);
  EXPECT_DOUBLE_EQ(st.ns.delta, 1.0);
  EXPECT_DOUBLE_EQ(st.ns_sampler.pcn.rho, 0.999);
  EXPECT_EQ(st.ns_sampler.iterations, 2400000u);
  const auto ch = load_experiment("chaotic", std::nullopt, 1, std::nullopt);
  EXPECT_DOUBLE_EQ(ch.ns_sampler.pcn.rho, 0.998);
  EXPECT_DOUBLE_EQ(ch.ns.eta, 0.02);
  EXPECT_DOUBLE_EQ(ch.ns.delta, 0.02);
  const auto sp = load_experiment("spde-paper", std::nullopt, 1, std::nullopt);
  EXPECT_TRUE(sp.is_spde());
  EXPECT_EQ(sp.spde.T, 20);
  EXPECT_DOUBLE_EQ(sp.spde.truth.tau2, 0.01);
  EXPECT_EQ(sp.spde_sampler.iterations, 1000000u);
  EXPECT_EQ(sp.spde_sampler.burn_in, 100000u);
  const auto dn = load_experiment("desk-ns", std::nullopt, 1, std::nullopt);
  EXPECT_EQ(dn.n, 16);
  EXPECT_EQ(dn.ns_sampler.iterations, 200000u);
  const auto ds = load_experiment("desk-spde", std::nullopt, 1, std::nullopt);
  EXPECT_EQ(ds.n, 16);
  EXPECT_EQ(ds.spde.T, 10);
  EXPECT_TRUE(ds.spde.full_grid);
}

TEST(Config, ResolvedRoundTrip) {
  for (const auto& name : preset_names()) {
    const auto c = load_experiment(name, std::nullopt, 99, fs::path("o"));
    const auto again = experiment_from_json(c.resolved);
    EXPECT_EQ(again.resolved, c.resolved) << name;
    EXPECT_EQ(again.seed, 99u);
  }
}

TEST(Config, Rejections) {
  json doc = parse_toml(kSmallNs);
  EXPECT_NO_THROW(experiment_from_json(doc));
  auto bad = [&](const std::string& patch) {
    json d = doc;
    merge_json(d, parse_toml(patch));
    return d;
  };
  json no_seed = doc;
  no_seed.erase("seed");
  EXPECT_THROW(experiment_from_json(no_seed), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("case = \"heat\"\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[ns]\nviscosity = 1\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[sampler]\np_v = 0.9\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[sampler]\nrho = 1.5\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[ns]\nsites = 5\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[ns]\ntau2 = 0\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[ns]\nforcing = [4, 0]\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("n = 9\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[sampler]\niterations = -1\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[sampler]\nalpha_prior = [0.4, 4]\n")), ConfigError);
  EXPECT_THROW(experiment_from_json(bad("[spde]\nT = 3\n")), ConfigError);
  json s = parse_toml(kSmallSpde);
  merge_json(s, parse_toml("[sampler.start]\nalpha = 0.5\n"));
  EXPECT_THROW(experiment_from_json(s), ConfigError);
  s = parse_toml(kSmallSpde);
  merge_json(s, parse_toml("[sampler]\nfilter = \"magic\"\n"));
  EXPECT_THROW(experiment_from_json(s), ConfigError);
}

TEST(Config, FileOverlaysPreset) {
  const fs::path dir = scratch("overlay");
  fs::create_directories(dir);
  std::ofstream(dir / "c.toml") << "[sampler]\niterations = 77777\n";
  const auto c = load_experiment("desk-ns", dir / "c.toml", 3, dir / "out");
  EXPECT_EQ(c.ns_sampler.iterations, 77777u);
  EXPECT_EQ(c.ns_sampler.burn_in, 20000u);
  EXPECT_EQ(c.output, dir / "out");
  EXPECT_THROW(load_experiment(std::nullopt, std::nullopt, 3, std::nullopt), ConfigError);
  EXPECT_THROW(load_experiment(std::nullopt, dir / "missing.toml", 3, std::nullopt), ConfigError);
}

TEST(Generate, StationaryShapes) {
  const fs::path out = scratch("stationary");
  auto c = load_experiment("stationary", std::nullopt, 4, out);
  cmd_generate(c);
  const ObservationSet obs = read_observations(out / "data");
  EXPECT_EQ(obs.num_times(), 5u);
  EXPECT_EQ(obs.num_points(), 16u);
  EXPECT_EQ(obs.components, 2);
  EXPECT_EQ(obs.size(), 160u);
  EXPECT_EQ(obs.mesh, 32);
  const json m = read_json(out / "data" / "manifest.json");
  EXPECT_EQ(m["config"], c.resolved);
}

TEST(Generate, SameSeedSameBytes) {
  const fs::path a = scratch("gen_a");
  auto c = small(kSmallNs, a);
  cmd_generate(c);
  const auto first = tree(a);
  fs::remove_all(a);
  cmd_generate(c);
  EXPECT_EQ(tree(a), first);
  const fs::path b = scratch("gen_b");
  auto d = small(kSmallNs, b, "seed = 12\n");
  cmd_generate(d);
  EXPECT_NE(slurp(b / "data" / "observations.csv"), first.at("data/observations.csv"));
}

TEST(Generate, NoiselessObservationsEqualTruth) {
  const fs::path out = scratch("noiseless");
  const auto c = small(kSmallNs, out, "[ns]\ntau2 = 1e-24\n");
  cmd_generate(c);
  const ObservationSet obs = read_observations(out / "data");
  const Trajectory truth = read_trajectory(out / "data" / "truth");
  const auto pred = predict_observations(truth, obs);
  ASSERT_EQ(pred.size(), obs.size());
  for (std::size_t i = 0; i < pred.size(); ++i) EXPECT_NEAR(obs.values[i], pred[i], 1e-10);

  const fs::path s = scratch("noiseless_spde");
  const auto cs = small(kSmallSpde, s, "[spde.truth]\ntau2 = 1e-24\n");
  cmd_generate(cs);
  const ObservationSet so = read_observations(s / "data");
  std::ifstream in(s / "data" / "truth" / "path.bin", std::ios::binary);
  const LatticePtr lat = build_wavenumbers(8);
  read_scalar_block(in, lat);  // t = 0 is not observed
  for (std::size_t t = 0; t < so.num_times(); ++t) {
    const auto f = read_scalar_block(in, lat);
    const auto v = evaluate_at(f, so.points);
    for (std::size_t p = 0; p < so.num_points(); ++p) EXPECT_NEAR(so.value(t, p, 0), v[p], 1e-10);
  }
}

TEST(Generate, UnwritableOutput) {
  const fs::path f = scratch("blocker");
  std::ofstream(f) << "x";
  auto c = small(kSmallNs, f / "sub");
  EXPECT_ANY_THROW(cmd_generate(c));
}

TEST(Pipeline, NsDeterministicAndIdempotent) {
  const fs::path out = scratch("pipe_ns");
  const auto c = small(kSmallNs, out);
  cmd_generate(c);
  cmd_run(c);
  cmd_diagnose(c);
  cmd_forecast(c);
  cmd_report(c);
  const auto first = tree(out);
  ASSERT_TRUE(first.count("diagnostics/summary.json"));
  ASSERT_TRUE(first.count("diagnostics/sites.json"));
  ASSERT_TRUE(first.count("forecast/bands.csv"));
  ASSERT_TRUE(first.count("report.json"));

  cmd_diagnose(c);
  EXPECT_EQ(tree(out), first);

  fs::remove_all(out);
  cmd_generate(c);
  cmd_run(c);
  cmd_diagnose(c);
  cmd_forecast(c);
  cmd_report(c);
  EXPECT_EQ(tree(out), first);

  const json header = read_chain(out / "chain").header;
  EXPECT_EQ(header["config"]["steps_per_solve"], 20);
  const json fc = read_json(out / "forecast" / "forecast.json");
  EXPECT_GT(fc["times"].back().get<double>(), fc["last_observation_time"].get<double>());
  EXPECT_EQ(fc["config"], c.resolved);
}

TEST(Pipeline, SpdeDeterministic) {
  const fs::path out = scratch("pipe_spde");
  const auto c = small(kSmallSpde, out);
  for (int rep = 0; rep < 2; ++rep) {
    fs::remove_all(out);
    cmd_generate(c);
    cmd_run(c);
    cmd_diagnose(c);
    cmd_forecast(c);
    cmd_report(c);
    static std::map<std::string, std::string> first;
    if (rep == 0)
      first = tree(out);
    else
      EXPECT_EQ(tree(out), first);
  }
  const json fc = read_json(out / "forecast" / "forecast.json");
  EXPECT_EQ(fc["times"].size(), 6u);  // T = 3 plus two steps ahead
}

TEST(Pipeline, PcnOnlyRun) {
  const fs::path out = scratch("pcn_only");
  const auto c = small(kSmallNs, out, "[sampler]\np_v = 1.0\np_beta2 = 0.0\np_alpha = 0.0\nalpha0 = 2.0\nbeta2_0 = 1.0\n");
  cmd_generate(c);
  cmd_run(c);
  const ChainData ch = read_chain(out / "chain");
  std::uint64_t evals = 0;
  for (const auto& r : ch.records) {
    evals += r.evaluations;
    if (r.iteration > 0) EXPECT_EQ(r.move, 0);
    EXPECT_EQ(r.params[ch.param_index("alpha")], 2.0);
  }
  EXPECT_EQ(evals, 121u);
}

TEST(Pipeline, ResumeAndMismatch) {
  const fs::path out = scratch("resume");
  const auto c = small(kSmallNs, out);
  cmd_generate(c);
  EXPECT_THROW(cmd_run(c, true), ConfigError);  // nothing to resume
  cmd_run(c);
  const auto done = tree(out / "chain");
  cmd_run(c, true);
  EXPECT_EQ(tree(out / "chain"), done);

  const auto longer = small(kSmallNs, out, "[sampler]\niterations = 130\n");
  EXPECT_THROW(cmd_run(longer, true), ConfigError);

  const auto other_data = small(kSmallNs, out, "seed = 12\n");
  EXPECT_THROW(cmd_run(other_data), ConfigError);
}

TEST(Pipeline, MissingInputs) {
  const fs::path out = scratch("missing");
  const auto c = small(kSmallNs, out);
  EXPECT_THROW(cmd_run(c), ConfigError);
  fs::create_directories(out / "chain");
  EXPECT_THROW(cmd_diagnose(c), ConfigError);
  EXPECT_THROW(cmd_forecast(c), ConfigError);
  EXPECT_THROW(cmd_report(c), ConfigError);
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hbda");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exit");
  fs::create_directories(dir);
  EXPECT_EQ(run_cli({}), 2);
  EXPECT_EQ(run_cli({"frobnicate"}), 2);
  EXPECT_EQ(run_cli({"generate", "--preset", "nope", "--seed", "1"}), 2);
  EXPECT_EQ(run_cli({"generate", "--preset", "desk-ns"}), 2);  // no seed
  EXPECT_EQ(run_cli({"diagnose", "--preset", "desk-ns", "--seed", "1", "--out", (dir / "empty").string()}), 2);

  std::ofstream(dir / "ok.toml") << kSmallNs;
  EXPECT_EQ(run_cli({"generate", "--config", (dir / "ok.toml").string(), "--out", (dir / "ok").string()}), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "data" / "observations.csv"));

  // A prior draw this large overflows the solver's blow-up guard.
  std::string text = kSmallNs;
  text.replace(text.find("[ns]\n"), 5, "[ns]\ntruth_beta2 = 1e30\n");
  std::ofstream(dir / "blow.toml") << text;
  EXPECT_EQ(run_cli({"generate", "--config", (dir / "blow.toml").string(), "--out", (dir / "blow").string()}), 3);
}

}  // namespace
}  // namespace hbda
