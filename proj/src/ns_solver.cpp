#include "hbda/ns_solver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "hbda/errors.hpp"
#include "hbda/fft.hpp"
#include "hbda/field_io.hpp"
#include "hbda/version.hpp"
#include "spectral_detail.hpp"

namespace hbda {

void NsConfig::validate() const {
  if (!(eta > 0.0)) throw ConfigError("viscosity eta must be positive");
  if (!(dt > 0.0)) throw ConfigError("solver dt must be positive");
  if (n < 4 || n % 2 != 0) throw ConfigError("mesh size must be even and >= 4");
  if (forcing.lattice_ptr() && forcing.lattice().n() != n) {
    throw ConfigError("forcing lattice does not match mesh size");
  }
}

const SpectralVelocityField& Trajectory::at_time(double t, double tol) const {
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (std::abs(times[i] - t) <= tol * std::max(1.0, std::abs(t))) return states[i];
  }
  std::ostringstream msg;
  msg << "trajectory has no state at t = " << t;
  throw std::out_of_range(msg.str());
}

SpectralVelocityField perp_gradient_cosine(const LatticePtr& lattice, Wavevector k,
                                           double amplitude) {
  if (!lattice->contains(k)) throw std::invalid_argument("forcing wavevector outside lattice");
  SpectralVelocityField f(lattice);
  // grad_perp exp(ik.x) = i k_perp exp(ik.x); both +k and -k carry i*pi*A*|k|.
  const Wavevector up = WavenumberSet::is_upper(k) ? k : -k;
  f.mode(up) = Complex(0.0, M_PI * amplitude * k.norm());
  return f;
}

double phi1(double z) {
  if (std::abs(z) > 1e-4) return std::expm1(z) / z;
  return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0));
}

// ---------------------------------------------------------------------------

struct NavierStokesSolver::Impl {
  // Upper-or-lower lattice entry with k2 >= 0, as scattered onto the padded grid.
  struct Scatter {
    std::size_t spec;
    int half;
    bool upper;
    double e1, e2;  // k_perp / (2 pi |k|)
    double k1, k2;
  };
  struct Gather {
    std::size_t spec;
    bool conj;
    double k1, k2, norm;
  };

  explicit Impl(const WavenumberSet& lat) : m(2 * lat.n()), fft(m) {
    for (const Wavevector& k : lat.full()) {
      if (k.k2 < 0) continue;
      const auto [idx, upper] = lat.resolve(k);
      const double s = 1.0 / (2.0 * M_PI * k.norm());
      scatter.push_back({detail::spectral_index(k, m), idx, upper, -k.k2 * s, k.k1 * s,
                         static_cast<double>(k.k1), static_cast<double>(k.k2)});
    }
    for (const Wavevector& k : lat.half()) {
      const bool conj = k.k2 < 0;
      const Wavevector src = conj ? -k : k;
      gather.push_back({detail::spectral_index(src, m), conj, static_cast<double>(k.k1),
                        static_cast<double>(k.k2), k.norm()});
    }
    const std::size_t mm = static_cast<std::size_t>(m) * m;
    for (auto& b : buf) b.assign(mm, 0.0);
  }

  // Physical-space values of component comp of v, optionally differentiated
  // along axis deriv (0 = none, 1 = x1, 2 = x2), written to out.
  void synthesize(const SpectralVelocityField& v, int comp, int deriv, std::vector<double>& out) {
    fft.clear_spectrum();
    Complex* spec = fft.spectrum();
    for (const Scatter& s : scatter) {
      const Complex u = s.upper ? v[s.half] : -std::conj(v[s.half]);
      Complex val = u * (comp == 0 ? s.e1 : s.e2);
      if (deriv == 1) val *= Complex(0.0, s.k1);
      if (deriv == 2) val *= Complex(0.0, s.k2);
      spec[s.spec] = val;
    }
    fft.inverse();
    std::copy(fft.grid(), fft.grid() + out.size(), out.begin());
  }

  // Forward-transform two products (already in prod[0], prod[1]), truncate to
  // the lattice and Leray-project, scaled by `scale`.
  SpectralVelocityField project(const LatticePtr& lattice, double scale) {
    const double norm = scale / (static_cast<double>(m) * m);
    std::vector<Complex> g1(gather.size());
    for (int comp = 0; comp < 2; ++comp) {
      std::copy(prod[comp].begin(), prod[comp].end(), fft.grid());
      fft.forward();
      const Complex* spec = fft.spectrum();
      if (comp == 0) {
        for (std::size_t i = 0; i < gather.size(); ++i) {
          const Complex c = spec[gather[i].spec];
          g1[i] = gather[i].conj ? std::conj(c) : c;
        }
      } else {
        SpectralVelocityField out(lattice);
        for (std::size_t i = 0; i < gather.size(); ++i) {
          const Gather& g = gather[i];
          const Complex c = spec[g.spec];
          const Complex g2 = g.conj ? std::conj(c) : c;
          out[i] = norm * 2.0 * M_PI * (-g.k2 * g1[i] + g.k1 * g2) / g.norm;
        }
        return out;
      }
    }
    return SpectralVelocityField(lattice);
  }

  int m;
  RealFft2d fft;
  std::vector<Scatter> scatter;
  std::vector<Gather> gather;
  // v1, v2, d1v1, d2v1, d1v2, d2v2 and the same for w.
  std::vector<double> buf[12];
  std::vector<double> prod[2];
};

NavierStokesSolver::NavierStokesSolver(NsConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  lattice_ = cfg_.forcing.lattice_ptr() ? cfg_.forcing.lattice_ptr() : build_wavenumbers(cfg_.n);
  if (!cfg_.forcing.lattice_ptr()) cfg_.forcing = SpectralVelocityField(lattice_);
  impl_ = std::make_unique<Impl>(*lattice_);
  const std::size_t mm = static_cast<std::size_t>(impl_->m) * impl_->m;
  impl_->prod[0].assign(mm, 0.0);
  impl_->prod[1].assign(mm, 0.0);
  for (const Wavevector& k : lattice_->half()) {
    const double z = -cfg_.eta * k.norm2() * cfg_.dt;
    decay_.push_back(std::exp(z));
    gain_.push_back(cfg_.dt * phi1(z));
  }
}

NavierStokesSolver::~NavierStokesSolver() = default;
NavierStokesSolver::NavierStokesSolver(NavierStokesSolver&&) noexcept = default;
NavierStokesSolver& NavierStokesSolver::operator=(NavierStokesSolver&&) noexcept = default;

SpectralVelocityField NavierStokesSolver::bilinear(const SpectralVelocityField& v,
                                                   const SpectralVelocityField& w) {
  if (v.size() != lattice_->half_size() || w.size() != lattice_->half_size()) {
    throw std::invalid_argument("bilinear: lattice mismatch");
  }
  Impl& s = *impl_;
  auto& b = s.buf;
  for (int comp = 0; comp < 2; ++comp) {
    s.synthesize(v, comp, 0, b[comp]);
    s.synthesize(v, comp, 1, b[2 + 2 * comp]);
    s.synthesize(v, comp, 2, b[3 + 2 * comp]);
    s.synthesize(w, comp, 0, b[6 + comp]);
    s.synthesize(w, comp, 1, b[8 + 2 * comp]);
    s.synthesize(w, comp, 2, b[9 + 2 * comp]);
  }
  const std::size_t mm = s.prod[0].size();
  for (int comp = 0; comp < 2; ++comp) {
    const auto& dv1 = b[2 + 2 * comp];
    const auto& dv2 = b[3 + 2 * comp];
    const auto& dw1 = b[8 + 2 * comp];
    const auto& dw2 = b[9 + 2 * comp];
    auto& p = s.prod[comp];
    for (std::size_t i = 0; i < mm; ++i) {
      p[i] = b[0][i] * dw1[i] + b[1][i] * dw2[i] + b[6][i] * dv1[i] + b[7][i] * dv2[i];
    }
  }
  return s.project(lattice_, 0.5);
}

SpectralVelocityField NavierStokesSolver::advection(const SpectralVelocityField& v) {
  if (v.size() != lattice_->half_size()) throw std::invalid_argument("advection: lattice mismatch");
  Impl& s = *impl_;
  auto& b = s.buf;
  for (int comp = 0; comp < 2; ++comp) {
    s.synthesize(v, comp, 0, b[comp]);
    s.synthesize(v, comp, 1, b[2 + 2 * comp]);
    s.synthesize(v, comp, 2, b[3 + 2 * comp]);
  }
  const std::size_t mm = s.prod[0].size();
  for (int comp = 0; comp < 2; ++comp) {
    const auto& d1 = b[2 + 2 * comp];
    const auto& d2 = b[3 + 2 * comp];
    auto& p = s.prod[comp];
    for (std::size_t i = 0; i < mm; ++i) p[i] = b[0][i] * d1[i] + b[1][i] * d2[i];
  }
  return s.project(lattice_, 1.0);
}

void NavierStokesSolver::step_in_place(SpectralVelocityField& v) {
  if (cfg_.nonlinear) {
    const SpectralVelocityField nl = advection(v);
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = decay_[i] * v[i] + gain_[i] * (cfg_.forcing[i] - nl[i]);
    }
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = decay_[i] * v[i] + gain_[i] * cfg_.forcing[i];
    }
  }
  ++steps_taken_;
}

SpectralVelocityField NavierStokesSolver::step(const SpectralVelocityField& v) {
  SpectralVelocityField out = v;
  step_in_place(out);
  return out;
}

Trajectory NavierStokesSolver::solve_to(const SpectralVelocityField& v0, double t_end,
                                        std::span<const double> record_at) {
  if (v0.size() != lattice_->half_size()) throw std::invalid_argument("solve_to: lattice mismatch");
  if (t_end < 0.0) throw std::invalid_argument("solve_to: negative end time");
  const double dt = cfg_.dt;
  auto to_steps = [dt](double t) {
    const double r = t / dt;
    const auto s = static_cast<long long>(std::llround(r));
    if (std::abs(r - static_cast<double>(s)) > 1e-7 * std::max(1.0, r)) {
      std::ostringstream msg;
      msg << "time " << t << " is not a multiple of the solver step " << dt;
      throw std::invalid_argument(msg.str());
    }
    return s;
  };
  const long long total = to_steps(t_end);
  std::vector<std::pair<long long, double>> marks;
  for (double t : record_at) {
    const long long s = to_steps(t);
    if (s < 0 || s > total) throw std::invalid_argument("record time outside [0, t_end]");
    if (s > 0) marks.emplace_back(s, t);
  }
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end(),
                          [](const auto& a, const auto& b) { return a.first == b.first; }),
              marks.end());

  Trajectory traj;
  traj.times.push_back(0.0);
  traj.states.push_back(v0);
  SpectralVelocityField v = v0;
  std::size_t next = 0;
  for (long long step = 1; step <= total && next < marks.size(); ++step) {
    step_in_place(v);
    const double m = v.max_abs();
    if (!(m <= cfg_.blowup_threshold)) {
      std::ostringstream msg;
      msg << "Navier-Stokes solver blew up at step " << step << " (t = " << step * dt
          << ", max|u_k| = " << m << ")";
      throw NumericalError(msg.str());
    }
    if (marks[next].first == step) {
      traj.times.push_back(marks[next].second);
      traj.states.push_back(v);
      ++next;
    }
  }
  return traj;
}

// ---------------------------------------------------------------------------

SpectralVelocityField bilinear_term(const SpectralVelocityField& v, const SpectralVelocityField& w) {
  NsConfig cfg;
  cfg.n = v.lattice().n();
  cfg.forcing = SpectralVelocityField(v.lattice_ptr());
  NavierStokesSolver solver(std::move(cfg));
  return solver.bilinear(v, w);
}

SpectralVelocityField etd_step(const SpectralVelocityField& v, const NsConfig& cfg) {
  NavierStokesSolver solver(cfg);
  return solver.step(v);
}

Trajectory solve_to(const SpectralVelocityField& v0, double t_end, const NsConfig& cfg,
                    std::span<const double> record_at) {
  NavierStokesSolver solver(cfg);
  return solver.solve_to(v0, t_end, record_at);
}

void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj,
                      const NsConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "hbda-trajectory";
  manifest["version"] = version_string();
  manifest["times"] = traj.times;
  manifest["config"] = {{"eta", cfg.eta}, {"dt", cfg.dt}, {"n", cfg.n},
                        {"nonlinear", cfg.nonlinear},
                        {"blowup_threshold", cfg.blowup_threshold}};
  std::vector<std::string> files;
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const std::string name = "state_" + std::to_string(i) + ".bin";
    std::ofstream os(dir / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
    write_field_block(os, traj.states[i]);
    files.push_back(name);
  }
  manifest["states"] = files;
  std::ofstream js(dir / "manifest.json");
  js << std::setw(2) << manifest << '\n';
}

Trajectory read_trajectory(const std::filesystem::path& dir) {
  std::ifstream js(dir / "manifest.json");
  if (!js) throw std::runtime_error("missing trajectory manifest in " + dir.string());
  const auto manifest = nlohmann::json::parse(js);
  Trajectory traj;
  traj.times = manifest.at("times").get<std::vector<double>>();
  LatticePtr lattice;
  for (const auto& name : manifest.at("states")) {
    std::ifstream is(dir / name.get<std::string>(), std::ios::binary);
    traj.states.push_back(read_velocity_block(is, lattice));
    lattice = traj.states.back().lattice_ptr();
  }
  return traj;
}

}  // namespace hbda
