#include "hbda/observation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace hbda {

void ObservationSet::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("observation noise tau must be positive");
  if (components != 1 && components != 2) throw std::invalid_argument("components must be 1 or 2");
  if (values.size() != times.size() * points.size() * components) {
    throw std::invalid_argument("observation array has the wrong shape");
  }
  for (std::size_t t = 1; t < times.size(); ++t) {
    if (!(times[t] > times[t - 1])) throw std::invalid_argument("observation times must increase");
  }
  std::set<GridPoint> unique(points.begin(), points.end());
  if (unique.size() != points.size()) throw std::invalid_argument("observation points must be distinct");
  for (const GridPoint& p : points) {
    if (p.i < 0 || p.j < 0 || p.i >= mesh || p.j >= mesh) {
      throw std::invalid_argument("observation point outside the mesh");
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("observation values must be finite");
  }
}

bool ObservationSet::is_full_grid() const {
  if (points.size() != static_cast<std::size_t>(mesh) * mesh) return false;
  std::set<GridPoint> unique(points.begin(), points.end());
  return unique.size() == points.size();
}

std::vector<GridPoint> uniform_subgrid(int n, int sites) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(sites))));
  if (side * side != sites || side < 1 || n % side != 0) {
    throw std::invalid_argument("observation sites must be a square number whose root divides n");
  }
  const int stride = n / side;
  std::vector<GridPoint> pts;
  for (int a = 0; a < side; ++a)
    for (int b = 0; b < side; ++b) pts.push_back({a * stride, b * stride});
  return pts;
}

std::vector<GridPoint> full_grid(int n) {
  std::vector<GridPoint> pts;
  pts.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) pts.push_back({i, j});
  return pts;
}

ObservationSet generate_observations(const Trajectory& traj, std::span<const GridPoint> points,
                                     double delta, int T, double tau, Rng& rng) {
  if (traj.states.empty()) throw std::invalid_argument("empty trajectory");
  ObservationSet obs;
  obs.mesh = traj.states.front().lattice().n();
  obs.delta = delta;
  obs.tau = tau;
  obs.components = 2;
  obs.points.assign(points.begin(), points.end());
  for (int t = 1; t <= T; ++t) obs.times.push_back(t * delta);
  obs.values = predict_observations(traj, obs);
  for (double& y : obs.values) y += tau * rng.normal();
  obs.validate();
  return obs;
}

ObservationSet generate_observations(std::span<const SpectralScalarField> path,
                                     std::span<const GridPoint> points, double delta, double tau,
                                     Rng& rng) {
  if (path.size() < 2) throw std::invalid_argument("path needs at least one observed time");
  ObservationSet obs;
  obs.mesh = path.front().lattice().n();
  obs.delta = delta;
  obs.tau = tau;
  obs.components = 1;
  obs.points.assign(points.begin(), points.end());
  for (std::size_t t = 1; t < path.size(); ++t) {
    obs.times.push_back(static_cast<double>(t) * delta);
    const auto vals = evaluate_at(path[t], obs.points);
    obs.values.insert(obs.values.end(), vals.begin(), vals.end());
  }
  for (double& y : obs.values) y += tau * rng.normal();
  obs.validate();
  return obs;
}

std::vector<double> predict_observations(const Trajectory& traj, const ObservationSet& obs) {
  std::vector<double> out;
  out.reserve(obs.size());
  for (double t : obs.times) {
    const auto vals = evaluate_at(traj.at_time(t), obs.points);
    out.insert(out.end(), vals.begin(), vals.end());
  }
  return out;
}

double log_likelihood(std::span<const double> predicted, const ObservationSet& obs) {
  if (predicted.size() != obs.size()) throw std::invalid_argument("prediction/observation shape mismatch");
  const double tau2 = obs.tau * obs.tau;
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double r = obs.values[i] - predicted[i];
    ss += r * r;
  }
  const double m = static_cast<double>(obs.size());
  return -0.5 * m * std::log(2.0 * M_PI * tau2) - ss / (2.0 * tau2);
}

double log_likelihood(const Trajectory& traj, const ObservationSet& obs) {
  return log_likelihood(predict_observations(traj, obs), obs);
}

void write_observations(const std::filesystem::path& dir, const ObservationSet& obs) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "observations.csv");
  if (!csv) throw std::runtime_error("cannot write observations to " + dir.string());
  csv << "n,point,component,value\n" << std::setprecision(17);
  for (std::size_t t = 0; t < obs.num_times(); ++t)
    for (std::size_t p = 0; p < obs.num_points(); ++p)
      for (int c = 0; c < obs.components; ++c)
        csv << t + 1 << ',' << p << ',' << c << ',' << obs.value(t, p, c) << '\n';

  nlohmann::json side;
  side["format"] = "hbda-observations";
  side["mesh"] = obs.mesh;
  side["delta"] = obs.delta;
  side["tau"] = obs.tau;
  side["components"] = obs.components;
  side["times"] = obs.times;
  side["seed"] = obs.seed;
  nlohmann::json pts = nlohmann::json::array();
  for (const GridPoint& p : obs.points) pts.push_back({p.i, p.j});
  side["points"] = pts;
  std::ofstream js(dir / "observations.json");
  js << std::setw(2) << side << '\n';
}

ObservationSet read_observations(const std::filesystem::path& dir) {
  std::ifstream js(dir / "observations.json");
  if (!js) throw std::runtime_error("missing observations.json in " + dir.string());
  const auto side = nlohmann::json::parse(js);
  ObservationSet obs;
  obs.mesh = side.at("mesh").get<int>();
  obs.delta = side.at("delta").get<double>();
  obs.tau = side.at("tau").get<double>();
  obs.components = side.at("components").get<int>();
  obs.times = side.at("times").get<std::vector<double>>();
  obs.seed = side.value("seed", std::uint64_t{0});
  for (const auto& p : side.at("points")) obs.points.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
  obs.values.assign(obs.num_times() * obs.num_points() * obs.components, 0.0);

  std::ifstream csv(dir / "observations.csv");
  if (!csv) throw std::runtime_error("missing observations.csv in " + dir.string());
  std::string line;
  std::getline(csv, line);
  std::size_t seen = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t t = 0, p = 0;
    int c = 0;
    double v = 0.0;
    char sep;
    row >> t >> sep >> p >> sep >> c >> sep >> v;
    if (!row || t < 1 || t > obs.num_times() || p >= obs.num_points() || c < 0 ||
        c >= obs.components) {
      throw std::runtime_error("malformed observation row: " + line);
    }
    obs.values[obs.index(t - 1, p, c)] = v;
    ++seen;
  }
  if (seen != obs.values.size()) throw std::runtime_error("observation file is incomplete");
  obs.validate();
  return obs;
}

}  // namespace hbda
