#pragma once

#include <iosfwd>
#include <string>

#include "hbda/spectral.hpp"

namespace hbda {

// Binary field block, little-endian:
//   char[4]  "HBFB"
//   u32      ordering version (1 = lexicographic upper half-lattice)
//   u32      kind (0 = velocity, 1 = scalar)
//   u32      mesh size n
//   u64      number of upper-half coefficients
//   f64      mean (scalar blocks only)
//   f64 x 2  (re, im) per coefficient, in half order

inline constexpr std::uint32_t kFieldOrderingVersion = 1;

void write_field_block(std::ostream& os, const SpectralVelocityField& v);
void write_field_block(std::ostream& os, const SpectralScalarField& f);

/// Reads a velocity block; reuses `lattice` when its n matches, else builds one.
SpectralVelocityField read_velocity_block(std::istream& is, LatticePtr lattice = nullptr);
SpectralScalarField read_scalar_block(std::istream& is, LatticePtr lattice = nullptr);

/// Debug CSV with header "k1,k2,re,im". Scalar fields start with the (0,0) row.
void write_field_csv(std::ostream& os, const SpectralVelocityField& v);
void write_field_csv(std::ostream& os, const SpectralScalarField& f);

}  // namespace hbda
