#pragma once

#include <complex>
#include <memory>
#include <span>
#include <vector>

namespace hbda {

/// Real 2D FFT pair on an m x m grid backed by FFTW, with its own aligned
/// buffers. Layouts follow FFTW's r2c convention: the real array is
/// row-major [i][j], the spectral array is m x (m/2 + 1) indexed by
/// (k1 mod m, k2) with k2 >= 0.
///
/// Both directions are unnormalised:
///   inverse: f(x_ij) = sum_k F(k) exp(+i k.x_ij)
///   forward: F(k)    = sum_ij f(x_ij) exp(-i k.x_ij)
/// so forward(inverse(F)) = m^2 F.
///
/// Instances are not shareable across threads; construct one per caller.
class RealFft2d {
 public:
  explicit RealFft2d(int m);
  ~RealFft2d();
  RealFft2d(const RealFft2d&) = delete;
  RealFft2d& operator=(const RealFft2d&) = delete;

  int size() const { return m_; }
  int spectral_cols() const { return m_ / 2 + 1; }

  std::complex<double>* spectrum() { return spectrum_; }
  double* grid() { return grid_; }

  /// spectrum() -> grid(). Leaves spectrum() unspecified.
  void inverse();
  /// grid() -> spectrum().
  void forward();

  /// Zero the spectral buffer.
  void clear_spectrum();

 private:
  int m_;
  std::complex<double>* spectrum_ = nullptr;
  double* grid_ = nullptr;
  void* plan_inverse_ = nullptr;
  void* plan_forward_ = nullptr;
};

/// Raw autocovariance sums c_l = sum_t x_t x_{t+l} for l = 0..max_lag via a
/// zero-padded real FFT (no centring or normalisation).
std::vector<double> lagged_products(std::span<const double> x, std::size_t max_lag);

}  // namespace hbda
