#pragma once

#include <cstddef>

#include "hbda/fft.hpp"
#include "hbda/spectral.hpp"

namespace hbda::detail {

/// Per-thread FFT instance for an m x m grid.
RealFft2d& cached_fft(int m);

/// Offset of mode k (k2 >= 0) in an m x (m/2 + 1) r2c spectrum.
inline std::size_t spectral_index(Wavevector k, int m) {
  const int r = ((k.k1 % m) + m) % m;
  return static_cast<std::size_t>(r) * (m / 2 + 1) + static_cast<std::size_t>(k.k2);
}

}  // namespace hbda::detail
