#include "hbda/field_io.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "hbda/binary_io.hpp"

namespace hbda {

namespace {

constexpr char kMagic[4] = {'H', 'B', 'F', 'B'};

void write_header(std::ostream& os, std::uint32_t kind, const WavenumberSet& lat) {
  os.write(kMagic, 4);
  io::write_le<std::uint32_t>(os, kFieldOrderingVersion);
  io::write_le<std::uint32_t>(os, kind);
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(lat.n()));
  io::write_le<std::uint64_t>(os, lat.half_size());
}

void write_coeffs(std::ostream& os, std::span<const Complex> c) {
  for (const Complex& z : c) {
    io::write_le<double>(os, z.real());
    io::write_le<double>(os, z.imag());
  }
}

LatticePtr read_header(std::istream& is, std::uint32_t expected_kind, LatticePtr lattice) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("not a field block (bad magic)");
  }
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != kFieldOrderingVersion) throw std::runtime_error("unsupported field ordering version");
  const auto kind = io::read_le<std::uint32_t>(is);
  if (kind != expected_kind) throw std::runtime_error("field block has the wrong kind");
  const auto n = static_cast<int>(io::read_le<std::uint32_t>(is));
  const auto count = io::read_le<std::uint64_t>(is);
  if (!lattice || lattice->n() != n) lattice = build_wavenumbers(n);
  if (count != lattice->half_size()) throw std::runtime_error("field block coefficient count mismatch");
  return lattice;
}

std::vector<Complex> read_coeffs(std::istream& is, std::size_t count) {
  std::vector<Complex> c(count);
  for (auto& z : c) {
    const double re = io::read_le<double>(is);
    const double im = io::read_le<double>(is);
    z = {re, im};
  }
  return c;
}

}  // namespace

void write_field_block(std::ostream& os, const SpectralVelocityField& v) {
  write_header(os, 0, v.lattice());
  write_coeffs(os, v.coeffs());
}

void write_field_block(std::ostream& os, const SpectralScalarField& f) {
  write_header(os, 1, f.lattice());
  io::write_le<double>(os, f.mean());
  write_coeffs(os, f.coeffs());
}

SpectralVelocityField read_velocity_block(std::istream& is, LatticePtr lattice) {
  lattice = read_header(is, 0, std::move(lattice));
  auto c = read_coeffs(is, lattice->half_size());
  return SpectralVelocityField(lattice, std::move(c));
}

SpectralScalarField read_scalar_block(std::istream& is, LatticePtr lattice) {
  lattice = read_header(is, 1, std::move(lattice));
  const double mean = io::read_le<double>(is);
  auto c = read_coeffs(is, lattice->half_size());
  return SpectralScalarField(lattice, mean, std::move(c));
}

void write_field_csv(std::ostream& os, const SpectralVelocityField& v) {
  os << "k1,k2,re,im\n" << std::setprecision(17);
  const auto& half = v.lattice().half();
  for (std::size_t i = 0; i < half.size(); ++i) {
    os << half[i].k1 << ',' << half[i].k2 << ',' << v[i].real() << ',' << v[i].imag() << '\n';
  }
}

void write_field_csv(std::ostream& os, const SpectralScalarField& f) {
  os << "k1,k2,re,im\n" << std::setprecision(17);
  os << "0,0," << f.mean() << ",0\n";
  const auto& half = f.lattice().half();
  for (std::size_t i = 0; i < half.size(); ++i) {
    os << half[i].k1 << ',' << half[i].k2 << ',' << f[i].real() << ',' << f[i].imag() << '\n';
  }
}

}  // namespace hbda
