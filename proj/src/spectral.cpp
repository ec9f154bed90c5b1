#include "hbda/spectral.hpp"

#include <algorithm>
#include <cassert>
#include <map>
#include <stdexcept>
#include <string>

#include "hbda/fft.hpp"
#include "spectral_detail.hpp"

namespace hbda {

namespace detail {

RealFft2d& cached_fft(int m) {
  thread_local std::map<int, std::unique_ptr<RealFft2d>> cache;
  auto& slot = cache[m];
  if (!slot) slot = std::make_unique<RealFft2d>(m);
  return *slot;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// WavenumberSet

WavenumberSet::WavenumberSet(int n) : n_(n) {
  if (n < 4 || n % 2 != 0) {
    throw std::invalid_argument("mesh size must be even and >= 4, got " + std::to_string(n));
  }
  const int km = kmax();
  half_slot_.assign(static_cast<std::size_t>(2 * km + 1) * (2 * km + 1), -1);
  for (int k1 = -km; k1 <= km; ++k1) {
    for (int k2 = -km; k2 <= km; ++k2) {
      if (k1 == 0 && k2 == 0) continue;
      const Wavevector k{k1, k2};
      full_.push_back(k);
      if (is_upper(k)) half_.push_back(k);
    }
  }
  // Generated in lexicographic order already; keep the guarantee explicit.
  std::sort(full_.begin(), full_.end());
  std::sort(half_.begin(), half_.end());
  for (std::size_t i = 0; i < half_.size(); ++i) {
    half_slot_[slot(half_[i])] = static_cast<int>(i);
    log_norm_sum_ += 2.0 * std::log(half_[i].norm());
  }
}

bool WavenumberSet::contains(Wavevector k) const {
  const int km = kmax();
  return !(k.k1 == 0 && k.k2 == 0) && std::abs(k.k1) <= km && std::abs(k.k2) <= km;
}

int WavenumberSet::half_index(Wavevector k) const {
  if (!contains(k)) return -1;
  return half_slot_[slot(k)];
}

std::pair<int, bool> WavenumberSet::resolve(Wavevector k) const {
  const int direct = half_slot_[slot(k)];
  if (direct >= 0) return {direct, true};
  return {half_slot_[slot(-k)], false};
}

LatticePtr build_wavenumbers(int n) { return std::make_shared<const WavenumberSet>(n); }

// ---------------------------------------------------------------------------
// SpectralVelocityField

SpectralVelocityField::SpectralVelocityField(LatticePtr lattice)
    : lattice_(std::move(lattice)), coeffs_(lattice_->half_size()) {}

SpectralVelocityField::SpectralVelocityField(LatticePtr lattice, std::vector<Complex> coeffs)
    : lattice_(std::move(lattice)), coeffs_(std::move(coeffs)) {
  if (coeffs_.size() != lattice_->half_size()) {
    throw std::invalid_argument("velocity coefficient count does not match lattice");
  }
}

Complex SpectralVelocityField::at(Wavevector k) const {
  if (!lattice_->contains(k)) return {};
  const auto [idx, upper] = lattice_->resolve(k);
  return upper ? coeffs_[idx] : -std::conj(coeffs_[idx]);
}

Complex& SpectralVelocityField::mode(Wavevector k) {
  const int idx = lattice_->half_index(k);
  if (idx < 0) throw std::out_of_range("mode is not in the upper half-lattice");
  return coeffs_[idx];
}

double SpectralVelocityField::energy() const {
  double s = 0.0;
  for (const auto& c : coeffs_) s += std::norm(c);
  return 2.0 * s;
}

double SpectralVelocityField::max_abs() const {
  double m = 0.0;
  for (const auto& c : coeffs_) m = std::max(m, std::abs(c));
  return m;
}

bool SpectralVelocityField::is_finite() const {
  return std::all_of(coeffs_.begin(), coeffs_.end(), [](const Complex& c) {
    return std::isfinite(c.real()) && std::isfinite(c.imag());
  });
}

bool SpectralVelocityField::same_lattice(const SpectralVelocityField& other) const {
  return lattice_ && other.lattice_ &&
         (lattice_ == other.lattice_ || lattice_->n() == other.lattice_->n());
}

SpectralVelocityField& SpectralVelocityField::operator+=(const SpectralVelocityField& other) {
  if (!same_lattice(other)) throw std::invalid_argument("lattice mismatch");
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += other.coeffs_[i];
  return *this;
}

SpectralVelocityField& SpectralVelocityField::operator-=(const SpectralVelocityField& other) {
  if (!same_lattice(other)) throw std::invalid_argument("lattice mismatch");
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] -= other.coeffs_[i];
  return *this;
}

SpectralVelocityField& SpectralVelocityField::operator*=(double s) {
  for (auto& c : coeffs_) c *= s;
  return *this;
}

double inner(const SpectralVelocityField& a, const SpectralVelocityField& b) {
  if (!a.same_lattice(b)) throw std::invalid_argument("lattice mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (std::conj(a[i]) * b[i]).real();
  return 2.0 * s;
}

// ---------------------------------------------------------------------------
// SpectralScalarField

SpectralScalarField::SpectralScalarField(LatticePtr lattice)
    : lattice_(std::move(lattice)), coeffs_(lattice_->half_size()) {}

SpectralScalarField::SpectralScalarField(LatticePtr lattice, double mean,
                                         std::vector<Complex> coeffs)
    : lattice_(std::move(lattice)), mean_(mean), coeffs_(std::move(coeffs)) {
  if (coeffs_.size() != lattice_->half_size()) {
    throw std::invalid_argument("scalar coefficient count does not match lattice");
  }
}

Complex SpectralScalarField::at(Wavevector k) const {
  if (k.k1 == 0 && k.k2 == 0) return {mean_, 0.0};
  if (!lattice_->contains(k)) return {};
  const auto [idx, upper] = lattice_->resolve(k);
  return upper ? coeffs_[idx] : std::conj(coeffs_[idx]);
}

SpectralScalarField& SpectralScalarField::operator+=(const SpectralScalarField& other) {
  if (other.size() != size()) throw std::invalid_argument("lattice mismatch");
  mean_ += other.mean_;
  for (std::size_t i = 0; i < coeffs_.size(); ++i) coeffs_[i] += other.coeffs_[i];
  return *this;
}

SpectralScalarField& SpectralScalarField::operator*=(double s) {
  mean_ *= s;
  for (auto& c : coeffs_) c *= s;
  return *this;
}

// ---------------------------------------------------------------------------
// Transforms

namespace {

void copy_grid_out(RealFft2d& fft, GridField& g, int comp) {
  const int n = g.n;
  std::copy(fft.grid(), fft.grid() + static_cast<std::size_t>(n) * n, g.component(comp).begin());
}

void copy_grid_in(RealFft2d& fft, const GridField& g, int comp) {
  const auto src = g.component(comp);
  std::copy(src.begin(), src.end(), fft.grid());
}

// Grid-spectrum coefficient at lattice mode k, normalised so that
// f(x) = sum_k F(k) exp(i k.x).
Complex grid_coefficient(const RealFft2d& fft, const Complex* spec, Wavevector k) {
  const int m = fft.size();
  const double scale = 1.0 / (static_cast<double>(m) * m);
  if (k.k2 >= 0) return spec[detail::spectral_index(k, m)] * scale;
  return std::conj(spec[detail::spectral_index(-k, m)]) * scale;
}

}  // namespace

GridField to_grid(const SpectralVelocityField& v) {
  const WavenumberSet& lat = v.lattice();
  const int n = lat.n();
  GridField g(n, 2);
  RealFft2d& fft = detail::cached_fft(n);
  for (int comp = 0; comp < 2; ++comp) {
    fft.clear_spectrum();
    Complex* spec = fft.spectrum();
    for (const Wavevector& k : lat.full()) {
      if (k.k2 < 0) continue;
      const Complex u = v.at(k);
      assert(!WavenumberSet::is_upper(k) ? u == -std::conj(v.at(-k)) : true);
      const double perp = comp == 0 ? -k.k2 : k.k1;
      spec[detail::spectral_index(k, n)] = u * (perp / (2.0 * M_PI * k.norm()));
    }
    fft.inverse();
    copy_grid_out(fft, g, comp);
  }
  return g;
}

GridField to_grid(const SpectralScalarField& f) {
  const WavenumberSet& lat = f.lattice();
  const int n = lat.n();
  GridField g(n, 1);
  RealFft2d& fft = detail::cached_fft(n);
  fft.clear_spectrum();
  Complex* spec = fft.spectrum();
  spec[0] = f.mean();
  for (const Wavevector& k : lat.full()) {
    if (k.k2 < 0) continue;
    spec[detail::spectral_index(k, n)] = f.at(k);
  }
  fft.inverse();
  copy_grid_out(fft, g, 0);
  return g;
}

SpectralVelocityField leray_project(const GridField& g, const LatticePtr& lattice) {
  const int n = lattice->n();
  if (g.n != n || g.arity != 2) throw std::invalid_argument("leray_project: grid/lattice mismatch");
  RealFft2d& fft = detail::cached_fft(n);
  const std::size_t nspec = static_cast<std::size_t>(n) * (n / 2 + 1);
  std::vector<Complex> comp_spec[2];
  for (int comp = 0; comp < 2; ++comp) {
    copy_grid_in(fft, g, comp);
    fft.forward();
    comp_spec[comp].assign(fft.spectrum(), fft.spectrum() + nspec);
  }
  SpectralVelocityField v(lattice);
  const auto& half = lattice->half();
  for (std::size_t i = 0; i < half.size(); ++i) {
    const Wavevector k = half[i];
    const Complex g1 = grid_coefficient(fft, comp_spec[0].data(), k);
    const Complex g2 = grid_coefficient(fft, comp_spec[1].data(), k);
    v[i] = 2.0 * M_PI * (-static_cast<double>(k.k2) * g1 + static_cast<double>(k.k1) * g2) /
           k.norm();
  }
  return v;
}

SpectralVelocityField velocity_from_grid(const GridField& g, const LatticePtr& lattice) {
  return leray_project(g, lattice);
}

SpectralScalarField scalar_from_grid(const GridField& g, const LatticePtr& lattice) {
  const int n = lattice->n();
  if (g.n != n || g.arity != 1) throw std::invalid_argument("scalar_from_grid: grid/lattice mismatch");
  RealFft2d& fft = detail::cached_fft(n);
  copy_grid_in(fft, g, 0);
  fft.forward();
  SpectralScalarField f(lattice);
  f.mean() = fft.spectrum()[0].real() / (static_cast<double>(n) * n);
  const auto& half = lattice->half();
  for (std::size_t i = 0; i < half.size(); ++i) f[i] = grid_coefficient(fft, fft.spectrum(), half[i]);
  return f;
}

SpectralScalarField vorticity(const SpectralVelocityField& v) {
  SpectralScalarField w(v.lattice_ptr());
  const auto& half = v.lattice().half();
  for (std::size_t i = 0; i < half.size(); ++i) {
    w[i] = Complex(0.0, half[i].norm() / (2.0 * M_PI)) * v[i];
  }
  return w;
}

std::vector<double> evaluate_at(const GridField& g, std::span<const GridPoint> points) {
  std::vector<double> out;
  out.reserve(points.size() * g.arity);
  for (const GridPoint& p : points) {
    if (p.i < 0 || p.j < 0 || p.i >= g.n || p.j >= g.n) {
      throw std::out_of_range("grid point (" + std::to_string(p.i) + "," + std::to_string(p.j) +
                              ") outside " + std::to_string(g.n) + "x" + std::to_string(g.n) +
                              " grid");
    }
    for (int c = 0; c < g.arity; ++c) out.push_back(g(c, p.i, p.j));
  }
  return out;
}

std::vector<double> evaluate_at(const SpectralVelocityField& v, std::span<const GridPoint> points) {
  return evaluate_at(to_grid(v), points);
}

std::vector<double> evaluate_at(const SpectralScalarField& f, std::span<const GridPoint> points) {
  return evaluate_at(to_grid(f), points);
}

}  // namespace hbda
