#pragma once

// Fourier representation of periodic fields on the torus [0, 2*pi]^2.
//
// Normalisation
// -------------
// Velocity fields are expanded in the orthonormal divergence-free basis
//
//     psi_k(x) = k_perp / (2*pi*|k|) * exp(i k.x),   k_perp = (-k2, k1),
//
// so v(x) = sum_{k in L_n} u_k psi_k(x) and the L2 norm over the torus is
// sum_k |u_k|^2. Only k in the upper half-lattice are stored; the rest follow
// from u_{-k} = -conj(u_k). On the uniform n x n grid this gives
//
//     sum_{k in L_n} |u_k|^2 = (2*pi)^2 * mean_grid |v|^2.
//
// Scalar fields use plain Fourier modes, f(x) = c_0 + sum_{k in L_n} c_k exp(i k.x)
// with c_{-k} = conj(c_k), so c_0^2 + sum_k |c_k|^2 = mean_grid f^2.
//
// Degrees of freedom: a velocity field on L_n has 2*|half| = (n-1)^2 - 1 real
// coordinates. This is the count used for the prior dimension d everywhere in
// the library (the shorthand n(n-1)/2 or n^2/2 is not used).

#include <cmath>
#include <complex>
#include <compare>
#include <memory>
#include <span>
#include <vector>

namespace hbda {

using Complex = std::complex<double>;

struct Wavevector {
  int k1 = 0;
  int k2 = 0;

  double norm2() const { return static_cast<double>(k1) * k1 + static_cast<double>(k2) * k2; }
  double norm() const { return std::sqrt(norm2()); }
  Wavevector operator-() const { return {-k1, -k2}; }
  auto operator<=>(const Wavevector&) const = default;
};

/// The truncated lattice L_n = {k != 0 : max(|k1|, |k2|) < n/2} and its upper
/// half {k1 + k2 > 0} U {k1 + k2 = 0, k1 > 0}. Both lists are sorted
/// lexicographically by (k1, k2); that ordering (tag "lex-half-v1") is the
/// storage order of every spectral field and of every file written.
class WavenumberSet {
 public:
  explicit WavenumberSet(int n);

  int n() const { return n_; }
  int kmax() const { return n_ / 2 - 1; }
  const std::vector<Wavevector>& full() const { return full_; }
  const std::vector<Wavevector>& half() const { return half_; }
  std::size_t half_size() const { return half_.size(); }
  /// Real coordinates of a velocity field: 2 per upper-half mode.
  int real_dim() const { return static_cast<int>(2 * half_.size()); }

  bool contains(Wavevector k) const;
  /// Position of k in half(), or -1 if k is not an upper-half lattice mode.
  int half_index(Wavevector k) const;
  /// Position in half() of k or of -k, together with whether k itself is upper.
  /// Precondition: contains(k).
  std::pair<int, bool> resolve(Wavevector k) const;

  static bool is_upper(Wavevector k) {
    const int s = k.k1 + k.k2;
    return s > 0 || (s == 0 && k.k1 > 0);
  }

  /// sum over half of 2 log|k|; the alpha-dependent part of log det(A^alpha).
  double log_norm_sum() const { return log_norm_sum_; }

  static constexpr const char* kOrderingTag = "lex-half-v1";

 private:
  int slot(Wavevector k) const { return (k.k1 + kmax()) * (2 * kmax() + 1) + (k.k2 + kmax()); }

  int n_;
  std::vector<Wavevector> full_;
  std::vector<Wavevector> half_;
  std::vector<int> half_slot_;  // slot -> half index, -1 otherwise
  double log_norm_sum_ = 0.0;
};

using LatticePtr = std::shared_ptr<const WavenumberSet>;

/// Throws std::invalid_argument unless n is even and >= 4.
LatticePtr build_wavenumbers(int n);

/// Divergence-free, mean-free velocity field: one coefficient per upper-half mode.
class SpectralVelocityField {
 public:
  SpectralVelocityField() = default;
  explicit SpectralVelocityField(LatticePtr lattice);
  SpectralVelocityField(LatticePtr lattice, std::vector<Complex> coeffs);

  const WavenumberSet& lattice() const { return *lattice_; }
  const LatticePtr& lattice_ptr() const { return lattice_; }
  std::size_t size() const { return coeffs_.size(); }

  std::span<Complex> coeffs() { return coeffs_; }
  std::span<const Complex> coeffs() const { return coeffs_; }
  Complex& operator[](std::size_t i) { return coeffs_[i]; }
  const Complex& operator[](std::size_t i) const { return coeffs_[i]; }

  /// Coefficient at any k in L_n, using u_{-k} = -conj(u_k).
  Complex at(Wavevector k) const;
  /// Mutable coefficient of an upper-half mode; throws for other k.
  Complex& mode(Wavevector k);

  /// sum over the full lattice of |u_k|^2 (the L2 norm squared).
  double energy() const;
  double max_abs() const;
  bool is_finite() const;
  bool same_lattice(const SpectralVelocityField& other) const;

  SpectralVelocityField& operator+=(const SpectralVelocityField& other);
  SpectralVelocityField& operator-=(const SpectralVelocityField& other);
  SpectralVelocityField& operator*=(double s);

  friend SpectralVelocityField operator+(SpectralVelocityField a, const SpectralVelocityField& b) {
    return a += b;
  }
  friend SpectralVelocityField operator-(SpectralVelocityField a, const SpectralVelocityField& b) {
    return a -= b;
  }
  friend SpectralVelocityField operator*(double s, SpectralVelocityField a) { return a *= s; }

 private:
  LatticePtr lattice_;
  std::vector<Complex> coeffs_;
};

/// Real L2 inner product over the torus: sum_{k in L_n} Re(conj(a_k) b_k).
double inner(const SpectralVelocityField& a, const SpectralVelocityField& b);

/// Real scalar field: upper-half coefficients plus the real k = 0 mean.
class SpectralScalarField {
 public:
  SpectralScalarField() = default;
  explicit SpectralScalarField(LatticePtr lattice);
  SpectralScalarField(LatticePtr lattice, double mean, std::vector<Complex> coeffs);

  const WavenumberSet& lattice() const { return *lattice_; }
  const LatticePtr& lattice_ptr() const { return lattice_; }
  std::size_t size() const { return coeffs_.size(); }

  double mean() const { return mean_; }
  double& mean() { return mean_; }
  std::span<Complex> coeffs() { return coeffs_; }
  std::span<const Complex> coeffs() const { return coeffs_; }
  Complex& operator[](std::size_t i) { return coeffs_[i]; }
  const Complex& operator[](std::size_t i) const { return coeffs_[i]; }

  /// Coefficient at k = 0 or any k in L_n, using c_{-k} = conj(c_k).
  Complex at(Wavevector k) const;

  SpectralScalarField& operator+=(const SpectralScalarField& other);
  SpectralScalarField& operator*=(double s);

 private:
  LatticePtr lattice_;
  double mean_ = 0.0;
  std::vector<Complex> coeffs_;
};

struct GridPoint {
  int i = 0;
  int j = 0;
  auto operator<=>(const GridPoint&) const = default;
};

/// Values on the uniform grid x_ij = (2*pi*i/n, 2*pi*j/n), component-major,
/// row-major within a component.
struct GridField {
  int n = 0;
  int arity = 1;
  std::vector<double> values;

  GridField() = default;
  GridField(int n_, int arity_)
      : n(n_), arity(arity_), values(static_cast<std::size_t>(arity_) * n_ * n_, 0.0) {}

  double& operator()(int comp, int i, int j) {
    return values[(static_cast<std::size_t>(comp) * n + i) * n + j];
  }
  double operator()(int comp, int i, int j) const {
    return values[(static_cast<std::size_t>(comp) * n + i) * n + j];
  }
  std::span<double> component(int comp) {
    return std::span<double>(values).subspan(static_cast<std::size_t>(comp) * n * n,
                                             static_cast<std::size_t>(n) * n);
  }
  std::span<const double> component(int comp) const {
    return std::span<const double>(values).subspan(static_cast<std::size_t>(comp) * n * n,
                                                   static_cast<std::size_t>(n) * n);
  }
  static double coordinate(int n, int i) { return 2.0 * M_PI * i / n; }
};

GridField to_grid(const SpectralVelocityField& v);
GridField to_grid(const SpectralScalarField& f);

/// Leray projection of a 2-vector grid field onto divergence-free, mean-free
/// fields on the given lattice. Nyquist rows/columns of the grid spectrum are
/// dropped (the lattice uses the strict inequality |k_i| < n/2).
SpectralVelocityField leray_project(const GridField& g, const LatticePtr& lattice);
/// Same as leray_project; named for symmetry with to_grid.
SpectralVelocityField velocity_from_grid(const GridField& g, const LatticePtr& lattice);
SpectralScalarField scalar_from_grid(const GridField& g, const LatticePtr& lattice);

/// omega = d1 v2 - d2 v1; mode k has coefficient i|k|/(2*pi) u_k.
SpectralScalarField vorticity(const SpectralVelocityField& v);

/// Grid values at the given nodes. Velocity fields return (v1, v2) per point,
/// interleaved. Throws std::out_of_range for nodes off the n x n grid.
std::vector<double> evaluate_at(const SpectralVelocityField& v, std::span<const GridPoint> points);
std::vector<double> evaluate_at(const SpectralScalarField& f, std::span<const GridPoint> points);
std::vector<double> evaluate_at(const GridField& g, std::span<const GridPoint> points);

}  // namespace hbda
