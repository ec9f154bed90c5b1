#pragma once

// Chain files shared by both samplers.
//
// chain.bin, little-endian:
//   char[8]  "HBCHAIN1"
//   u32      header length L
//   char[L]  JSON header (config echo, seed, param_names, ordering tag, n)
//   records, each 20 + 8 K bytes for K parameters:
//     u64 iteration, u8 move, u8 accept (255 = not an MH move), u16 reserved,
//     u32 forward evaluations in this iteration, f64 log-likelihood, f64 x K
//
// snapshots.bin: "HBSNAP01", then per snapshot u64 iteration, u32 field
// count, field blocks (see field_io.hpp).
//
// chain.csv mirrors chain.bin for scalars.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hbda/spectral.hpp"

namespace hbda {

inline constexpr std::uint8_t kNoAccept = 255;

struct ChainRecord {
  std::uint64_t iteration = 0;
  std::uint8_t move = 0;
  std::uint8_t accept = kNoAccept;
  std::uint32_t evaluations = 0;
  double loglik = 0.0;
  std::vector<double> params;
};

/// Byte offsets of the three output files, stored in checkpoints so that a
/// resumed run can truncate partial output.
struct ChainOffsets {
  std::uint64_t chain = 0;
  std::uint64_t snapshots = 0;
  std::uint64_t csv = 0;
};

class ChainWriter {
 public:
  /// Creates fresh files in dir with the given header.
  ChainWriter(const std::filesystem::path& dir, nlohmann::json header,
              std::vector<std::string> move_names);
  /// Reopens existing files truncated to `offsets`; the header on disk must
  /// equal `header` (throws ConfigError otherwise).
  ChainWriter(const std::filesystem::path& dir, nlohmann::json header,
              std::vector<std::string> move_names, const ChainOffsets& offsets);

  void append(const ChainRecord& rec);
  void snapshot(std::uint64_t iteration, const std::vector<SpectralVelocityField>& fields);
  void snapshot(std::uint64_t iteration, const std::vector<SpectralScalarField>& fields);
  ChainOffsets flush();

 private:
  void open(const std::filesystem::path& dir, bool fresh, const ChainOffsets& offsets);

  nlohmann::json header_;
  std::vector<std::string> move_names_;
  std::ofstream chain_;
  std::ofstream snaps_;
  std::ofstream csv_;
};

struct ChainData {
  nlohmann::json header;
  std::vector<std::string> param_names;
  std::vector<ChainRecord> records;

  /// Column of parameter `name` over all records; throws if unknown.
  std::vector<double> column(const std::string& name) const;
  std::size_t param_index(const std::string& name) const;
};

ChainData read_chain(const std::filesystem::path& dir);

template <class Field>
struct Snapshot {
  std::uint64_t iteration = 0;
  std::vector<Field> fields;
};

std::vector<Snapshot<SpectralVelocityField>> read_velocity_snapshots(const std::filesystem::path& dir);
std::vector<Snapshot<SpectralScalarField>> read_scalar_snapshots(const std::filesystem::path& dir);

/// Writes JSON atomically (temp file + rename).
void write_json_atomic(const std::filesystem::path& file, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& file);

/// Field coefficients as [[re, im], ...] (plus the mean first for scalars).
nlohmann::json to_json(const SpectralVelocityField& v);
nlohmann::json to_json(const SpectralScalarField& f);
SpectralVelocityField velocity_from_json(const nlohmann::json& j, const LatticePtr& lattice);
SpectralScalarField scalar_from_json(const nlohmann::json& j, const LatticePtr& lattice);

}  // namespace hbda
