#include "hbda/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <stdexcept>

#include "hbda/fft.hpp"
#include "hbda/stats.hpp"

namespace hbda {

namespace fs = std::filesystem;

AcfResult autocorrelation(std::span<const double> x, std::size_t max_lag) {
  if (x.empty()) throw std::invalid_argument("autocorrelation of an empty chain");
  AcfResult out;
  const double m = mean(std::vector<double>(x.begin(), x.end()));
  std::vector<double> c(x.begin(), x.end());
  bool constant = true;
  for (double& v : c) {
    v -= m;
    if (v != 0.0) constant = false;
  }
  const std::size_t lags = std::min(max_lag, x.size() - 1);
  if (constant) {
    out.degenerate = true;
    out.acf.assign(lags + 1, 0.0);
    out.acf[0] = 1.0;
    return out;
  }
  out.acf = lagged_products(c, lags);
  const double c0 = out.acf[0];
  for (double& a : out.acf) a /= c0;
  return out;
}

EssResult ess(std::span<const double> x) {
  EssResult out;
  if (x.size() < 2) {
    out.degenerate = true;
    return out;
  }
  const AcfResult a = autocorrelation(x, x.size() - 1);
  if (a.degenerate) {
    out.degenerate = true;
    return out;
  }
  // tau = -1 + 2 sum_m (rho_2m + rho_2m+1) over the initial positive pairs.
  double tau = -1.0;
  for (std::size_t k = 0; k + 1 < a.acf.size(); k += 2) {
    const double pair = a.acf[k] + a.acf[k + 1];
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  out.tau = std::max(tau, 1.0 / static_cast<double>(x.size()));
  out.ess = static_cast<double>(x.size()) / out.tau;
  return out;
}

DerivedField parse_derived_field(const std::string& name) {
  if (name == "vorticity") return DerivedField::kVorticity;
  if (name == "v1") return DerivedField::kVelocity1;
  if (name == "v2") return DerivedField::kVelocity2;
  if (name == "scalar") return DerivedField::kScalar;
  throw std::invalid_argument("unknown derived field: " + name);
}

namespace {

FieldSummary accumulate(int n, const std::vector<GridField>& grids) {
  FieldSummary s;
  s.n = n;
  const std::size_t cells = static_cast<std::size_t>(n) * n;
  std::vector<Welford> w(cells);
  for (const GridField& g : grids) {
    for (std::size_t i = 0; i < cells; ++i) w[i].add(g.values[i]);
  }
  s.count = static_cast<long long>(grids.size());
  for (const Welford& x : w) {
    s.mean.push_back(x.mean());
    s.var.push_back(x.variance());
  }
  return s;
}

GridField derived_grid(const SpectralVelocityField& v, DerivedField which) {
  switch (which) {
    case DerivedField::kVorticity:
      return to_grid(vorticity(v));
    case DerivedField::kVelocity1:
    case DerivedField::kVelocity2: {
      const GridField g = to_grid(v);
      GridField out(g.n, 1);
      const auto comp = g.component(which == DerivedField::kVelocity1 ? 0 : 1);
      std::copy(comp.begin(), comp.end(), out.values.begin());
      return out;
    }
    case DerivedField::kScalar:
      break;
  }
  throw std::invalid_argument("scalar selector applied to a velocity field");
}

}  // namespace

FieldSummary field_summary(std::span<const SpectralVelocityField> samples, DerivedField which) {
  if (samples.empty()) throw std::runtime_error("field summary needs at least one snapshot");
  std::vector<GridField> grids;
  for (const auto& v : samples) grids.push_back(derived_grid(v, which));
  return accumulate(samples.front().lattice().n(), grids);
}

FieldSummary field_summary(std::span<const SpectralScalarField> samples) {
  if (samples.empty()) throw std::runtime_error("field summary needs at least one snapshot");
  std::vector<GridField> grids;
  for (const auto& f : samples) grids.push_back(to_grid(f));
  return accumulate(samples.front().lattice().n(), grids);
}

FieldSummary field_summary(const fs::path& chain_dir, DerivedField which, std::size_t field_index) {
  const ChainData chain = read_chain(chain_dir);
  const bool scalar = chain.header.value("case", std::string("ns")) == "spde";
  if (scalar) {
    std::vector<SpectralScalarField> fields;
    for (auto& s : read_scalar_snapshots(chain_dir)) {
      if (field_index >= s.fields.size()) throw std::out_of_range("snapshot field index out of range");
      fields.push_back(std::move(s.fields[field_index]));
    }
    if (fields.empty()) throw std::runtime_error("chain has no field snapshots");
    return field_summary(fields);
  }
  std::vector<SpectralVelocityField> fields;
  for (auto& s : read_velocity_snapshots(chain_dir)) {
    if (field_index >= s.fields.size()) throw std::out_of_range("snapshot field index out of range");
    fields.push_back(std::move(s.fields[field_index]));
  }
  if (fields.empty()) throw std::runtime_error("chain has no field snapshots");
  return field_summary(fields, which);
}

double mean_variance_excluding(const FieldSummary& s, std::span<const GridPoint> observed) {
  const std::set<GridPoint> skip(observed.begin(), observed.end());
  double total = 0.0;
  long long count = 0;
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.n; ++j) {
      if (skip.count({i, j})) continue;
      total += s.var[static_cast<std::size_t>(i) * s.n + j];
      ++count;
    }
  return count ? total / static_cast<double>(count) : 0.0;
}

Bands trajectory_bands(const ForecastStats& f, std::span<const std::size_t> sites) {
  Bands b;
  b.members = f.members;
  b.unreliable = f.members < 20;
  for (std::size_t t = 0; t < f.times.size(); ++t)
    for (std::size_t p : sites) {
      if (p >= f.points.size()) throw std::out_of_range("band site index out of range");
      for (int c = 0; c < 2; ++c) {
        const std::size_t i = f.index(t, p, c);
        b.rows.push_back({f.times[t], p, c, f.mean[i], f.q05[i], f.q50[i], f.q95[i]});
      }
    }
  return b;
}

SolveCountReport solve_count_report(const ChainData& chain, const nlohmann::json& timing) {
  SolveCountReport r;
  std::vector<std::string> names = chain.header.value("move_names", std::vector<std::string>{});
  r.moves.resize(names.size());
  for (std::size_t m = 0; m < names.size(); ++m) r.moves[m].name = names[m];
  for (const ChainRecord& rec : chain.records) {
    if (rec.move >= r.moves.size()) r.moves.resize(rec.move + 1);
    MoveReport& m = r.moves[rec.move];
    ++m.count;
    m.evaluations += rec.evaluations;
    r.evaluations += rec.evaluations;
    if (rec.accept != kNoAccept) {
      ++m.mh_moves;
      m.accepted += rec.accept != 0;
    }
    if (rec.iteration > 0) ++r.iterations;
  }
  const auto cfg = chain.header.value("config", nlohmann::json::object());
  if (cfg.contains("steps_per_solve")) r.solver_steps = r.evaluations * cfg["steps_per_solve"].get<std::uint64_t>();
  if (timing.is_object() && timing.contains("move_seconds")) {
    const auto secs = timing["move_seconds"];
    for (std::size_t m = 0; m < secs.size() && m < r.moves.size(); ++m) {
      r.moves[m].seconds = secs[m].get<double>();
      r.wall_seconds += r.moves[m].seconds;
    }
  }
  return r;
}

SolveCountReport solve_count_report(const fs::path& chain_dir) {
  const ChainData chain = read_chain(chain_dir);
  nlohmann::json timing;
  if (fs::exists(chain_dir / "timing.json")) timing = read_json(chain_dir / "timing.json");
  return solve_count_report(chain, timing);
}

nlohmann::json to_json(const SolveCountReport& r) {
  nlohmann::json moves = nlohmann::json::array();
  for (const MoveReport& m : r.moves) {
    moves.push_back({{"move", m.name},
                     {"count", m.count},
                     {"evaluations", m.evaluations},
                     {"mh_moves", m.mh_moves},
                     {"accepted", m.accepted},
                     {"accept_rate", m.mh_moves ? double(m.accepted) / double(m.mh_moves) : 0.0},
                     {"seconds", m.seconds}});
  }
  return {{"iterations", r.iterations},
          {"pde_count", r.evaluations},
          {"solver_steps", r.solver_steps},
          {"wall_seconds", r.wall_seconds},
          {"moves", moves}};
}

void write_field_summary_csv(const fs::path& file, const FieldSummary& s) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << "i,j,mean,var\n" << std::setprecision(17);
  for (int i = 0; i < s.n; ++i)
    for (int j = 0; j < s.n; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * s.n + j;
      os << i << ',' << j << ',' << s.mean[k] << ',' << s.var[k] << '\n';
    }
}

void write_bands_csv(const fs::path& file, const Bands& b, const ForecastStats& f) {
  std::ofstream os(file);
  if (!os) throw std::runtime_error("cannot write " + file.string());
  os << "time,point,i,j,component,mean,q05,q50,q95,members,unreliable\n" << std::setprecision(17);
  for (const BandRow& r : b.rows) {
    os << r.time << ',' << r.point << ',' << f.points[r.point].i << ',' << f.points[r.point].j << ','
       << r.component << ',' << r.mean << ',' << r.q05 << ',' << r.q50 << ',' << r.q95 << ','
       << b.members << ',' << (b.unreliable ? 1 : 0) << '\n';
  }
}

void diagnose_chain(const fs::path& chain_dir, const fs::path& out_dir, std::size_t max_lag) {
  const ChainData chain = read_chain(chain_dir);
  if (chain.records.empty()) throw std::runtime_error("chain in " + chain_dir.string() + " is empty");
  fs::create_directories(out_dir);
  const std::uint64_t burn = chain.header.at("sampler").value("burn_in", std::uint64_t{0});
  const auto& names = chain.param_names;
  const auto move_names = chain.header.value("move_names", std::vector<std::string>{});

  // Traces with cumulative means and cumulative acceptance per MH move type.
  {
    std::ofstream os(out_dir / "traces.csv");
    os << std::setprecision(17) << "iteration";
    for (const auto& n : names) os << ',' << n;
    os << ",loglik";
    for (const auto& n : names) os << ",cummean_" << n;
    for (const auto& m : move_names) os << ",cumaccept_" << m;
    os << '\n';
    std::vector<double> sums(names.size(), 0.0);
    std::vector<double> acc(move_names.size(), 0.0), tried(move_names.size(), 0.0);
    std::size_t count = 0;
    for (const ChainRecord& r : chain.records) {
      ++count;
      if (r.accept != kNoAccept && r.move < move_names.size()) {
        tried[r.move] += 1.0;
        acc[r.move] += r.accept != 0;
      }
      os << r.iteration;
      for (double p : r.params) os << ',' << p;
      os << ',' << r.loglik;
      for (std::size_t k = 0; k < names.size(); ++k) {
        sums[k] += r.params[k];
        os << ',' << sums[k] / static_cast<double>(count);
      }
      for (std::size_t m = 0; m < move_names.size(); ++m) {
        os << ',';
        if (tried[m] > 0) os << acc[m] / tried[m];
      }
      os << '\n';
    }
  }

  // Post-burn-in summaries.
  nlohmann::json params = nlohmann::json::object();
  std::vector<std::vector<double>> acfs;
  for (const auto& name : names) {
    std::vector<double> xs;
    const std::size_t j = chain.param_index(name);
    for (const ChainRecord& r : chain.records)
      if (r.iteration > burn) xs.push_back(r.params[j]);
    if (xs.empty()) continue;
    const auto q = quantiles(xs, {0.05, 0.5, 0.95});
    const EssResult e = ess(xs);
    const AcfResult a = autocorrelation(xs, max_lag);
    acfs.push_back(a.acf);
    params[name] = {{"mean", mean(xs)},   {"sd", std::sqrt(variance(xs))},
                    {"q05", q[0]},        {"median", q[1]},
                    {"q95", q[2]},        {"ess", e.ess},
                    {"tau", e.tau},       {"degenerate", e.degenerate},
                    {"samples", xs.size()}};
  }
  {
    std::ofstream os(out_dir / "acf.csv");
    os << std::setprecision(17) << "lag";
    for (const auto& n : names) os << ',' << n;
    os << '\n';
    std::size_t lags = 0;
    for (const auto& a : acfs) lags = std::max(lags, a.size());
    for (std::size_t l = 0; l < lags; ++l) {
      os << l;
      for (const auto& a : acfs) {
        os << ',';
        if (l < a.size()) os << a[l];
      }
      os << '\n';
    }
  }

  nlohmann::json summary = {{"format", "hbda-diagnostics"},
                            {"schema_version", 1},
                            {"chain_header", chain.header},
                            {"burn_in", burn},
                            {"parameters", params},
                            {"solve_counts", nullptr}};
  // Wall times go to their own file so that summary.json depends only on the
  // chain contents.
  {
    nlohmann::json counts = to_json(solve_count_report(chain_dir));
    nlohmann::json timing = {{"wall_seconds", counts["wall_seconds"]}, {"moves", nlohmann::json::array()}};
    counts.erase("wall_seconds");
    for (auto& m : counts["moves"]) {
      timing["moves"].push_back({{"move", m["move"]}, {"seconds", m["seconds"]}});
      m.erase("seconds");
    }
    summary["solve_counts"] = counts;
    write_json_atomic(out_dir / "timing.json", timing);
  }

  if (fs::exists(chain_dir / "snapshots.bin")) {
    const bool scalar = chain.header.value("case", std::string("ns")) == "spde";
    try {
      const FieldSummary fsum =
          field_summary(chain_dir, scalar ? DerivedField::kScalar : DerivedField::kVorticity, 0);
      write_field_summary_csv(out_dir / "field_summary.csv", fsum);
      summary["field_summary"] = {{"file", "field_summary.csv"},
                                  {"quantity", scalar ? "scalar" : "vorticity"},
                                  {"snapshots", fsum.count}};
    } catch (const std::runtime_error&) {
      summary["field_summary"] = nullptr;
    }
  }
  write_json_atomic(out_dir / "summary.json", summary);
}

}  // namespace hbda
