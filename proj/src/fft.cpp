#include "hbda/fft.hpp"

#include <fftw3.h>

#include <algorithm>
#include <mutex>
#include <stdexcept>

namespace hbda {

namespace {
// FFTW's planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

RealFft2d::RealFft2d(int m) : m_(m) {
  if (m < 2 || m % 2 != 0) throw std::invalid_argument("FFT size must be even and >= 2");
  const std::size_t nspec = static_cast<std::size_t>(m) * (m / 2 + 1);
  const std::size_t ngrid = static_cast<std::size_t>(m) * m;
  std::lock_guard<std::mutex> lock(planner_mutex());
  spectrum_ = reinterpret_cast<std::complex<double>*>(fftw_alloc_complex(nspec));
  grid_ = fftw_alloc_real(ngrid);
  if (!spectrum_ || !grid_) throw std::bad_alloc();
  plan_inverse_ = fftw_plan_dft_c2r_2d(m, m, reinterpret_cast<fftw_complex*>(spectrum_), grid_,
                                       FFTW_ESTIMATE);
  plan_forward_ = fftw_plan_dft_r2c_2d(m, m, grid_, reinterpret_cast<fftw_complex*>(spectrum_),
                                       FFTW_ESTIMATE);
  std::fill(spectrum_, spectrum_ + nspec, std::complex<double>{});
  std::fill(grid_, grid_ + ngrid, 0.0);
}

RealFft2d::~RealFft2d() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(plan_inverse_));
  fftw_destroy_plan(static_cast<fftw_plan>(plan_forward_));
  fftw_free(spectrum_);
  fftw_free(grid_);
}

void RealFft2d::inverse() { fftw_execute(static_cast<fftw_plan>(plan_inverse_)); }

void RealFft2d::forward() { fftw_execute(static_cast<fftw_plan>(plan_forward_)); }

void RealFft2d::clear_spectrum() {
  std::fill(spectrum_, spectrum_ + static_cast<std::size_t>(m_) * (m_ / 2 + 1),
            std::complex<double>{});
}

std::vector<double> lagged_products(std::span<const double> x, std::size_t max_lag) {
  std::size_t m = 1;
  while (m < 2 * x.size()) m <<= 1;
  const std::size_t nspec = m / 2 + 1;
  double* buf = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan fwd = nullptr, inv = nullptr;
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    buf = fftw_alloc_real(m);
    spec = fftw_alloc_complex(nspec);
    fwd = fftw_plan_dft_r2c_1d(static_cast<int>(m), buf, spec, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(static_cast<int>(m), spec, buf, FFTW_ESTIMATE);
  }
  std::fill(buf, buf + m, 0.0);
  std::copy(x.begin(), x.end(), buf);
  fftw_execute(fwd);
  for (std::size_t k = 0; k < nspec; ++k) {
    spec[k][0] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    spec[k][1] = 0.0;
  }
  fftw_execute(inv);
  std::vector<double> out(std::min(max_lag + 1, x.size()));
  for (std::size_t l = 0; l < out.size(); ++l) out[l] = buf[l] / static_cast<double>(m);
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    fftw_free(buf);
    fftw_free(spec);
  }
  return out;
}

}  // namespace hbda
