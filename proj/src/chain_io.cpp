#include "hbda/chain_io.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

#include "hbda/binary_io.hpp"
#include "hbda/errors.hpp"
#include "hbda/field_io.hpp"

namespace hbda {

namespace fs = std::filesystem;

namespace {

constexpr char kChainMagic[8] = {'H', 'B', 'C', 'H', 'A', 'I', 'N', '1'};
constexpr char kSnapMagic[8] = {'H', 'B', 'S', 'N', 'A', 'P', '0', '1'};

std::vector<std::string> param_names_of(const nlohmann::json& header) {
  return header.at("param_names").get<std::vector<std::string>>();
}

std::string read_header_text(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kChainMagic, 8) != 0) throw std::runtime_error("not a chain file");
  const auto len = io::read_le<std::uint32_t>(is);
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw std::runtime_error("truncated chain header");
  return text;
}

}  // namespace

ChainWriter::ChainWriter(const fs::path& dir, nlohmann::json header,
                         std::vector<std::string> move_names)
    : header_(std::move(header)), move_names_(std::move(move_names)) {
  open(dir, true, {});
}

ChainWriter::ChainWriter(const fs::path& dir, nlohmann::json header,
                         std::vector<std::string> move_names, const ChainOffsets& offsets)
    : header_(std::move(header)), move_names_(std::move(move_names)) {
  std::ifstream is(dir / "chain.bin", std::ios::binary);
  if (!is) throw ConfigError("cannot resume: no chain.bin in " + dir.string());
  if (nlohmann::json::parse(read_header_text(is)) != header_) {
    throw ConfigError("cannot resume: chain header differs from the current configuration");
  }
  open(dir, false, offsets);
}

void ChainWriter::open(const fs::path& dir, bool fresh, const ChainOffsets& offsets) {
  fs::create_directories(dir);
  const auto mode = std::ios::binary | (fresh ? std::ios::trunc : std::ios::app);
  if (!fresh) {
    fs::resize_file(dir / "chain.bin", offsets.chain);
    fs::resize_file(dir / "snapshots.bin", offsets.snapshots);
    fs::resize_file(dir / "chain.csv", offsets.csv);
  }
  chain_.open(dir / "chain.bin", std::ios::out | mode);
  snaps_.open(dir / "snapshots.bin", std::ios::out | mode);
  csv_.open(dir / "chain.csv", std::ios::out | mode);
  if (!chain_ || !snaps_ || !csv_) throw std::runtime_error("cannot open chain files in " + dir.string());
  csv_ << std::setprecision(17);
  if (!fresh) return;

  const std::string text = header_.dump();
  chain_.write(kChainMagic, 8);
  io::write_le<std::uint32_t>(chain_, static_cast<std::uint32_t>(text.size()));
  chain_.write(text.data(), static_cast<std::streamsize>(text.size()));
  snaps_.write(kSnapMagic, 8);
  csv_ << "iteration";
  for (const auto& name : param_names_of(header_)) csv_ << ',' << name;
  csv_ << ",loglik,move,accept\n";
}

void ChainWriter::append(const ChainRecord& rec) {
  io::write_le<std::uint64_t>(chain_, rec.iteration);
  io::write_le<std::uint8_t>(chain_, rec.move);
  io::write_le<std::uint8_t>(chain_, rec.accept);
  io::write_le<std::uint16_t>(chain_, 0);
  io::write_le<std::uint32_t>(chain_, rec.evaluations);
  io::write_le<double>(chain_, rec.loglik);
  for (double p : rec.params) io::write_le<double>(chain_, p);

  csv_ << rec.iteration;
  for (double p : rec.params) csv_ << ',' << p;
  csv_ << ',' << rec.loglik << ','
       << (rec.move < move_names_.size() ? move_names_[rec.move] : std::to_string(rec.move)) << ',';
  if (rec.accept != kNoAccept) csv_ << static_cast<int>(rec.accept);
  csv_ << '\n';
}

void ChainWriter::snapshot(std::uint64_t iteration, const std::vector<SpectralVelocityField>& fields) {
  io::write_le<std::uint64_t>(snaps_, iteration);
  io::write_le<std::uint32_t>(snaps_, static_cast<std::uint32_t>(fields.size()));
  for (const auto& f : fields) write_field_block(snaps_, f);
}

void ChainWriter::snapshot(std::uint64_t iteration, const std::vector<SpectralScalarField>& fields) {
  io::write_le<std::uint64_t>(snaps_, iteration);
  io::write_le<std::uint32_t>(snaps_, static_cast<std::uint32_t>(fields.size()));
  for (const auto& f : fields) write_field_block(snaps_, f);
}

ChainOffsets ChainWriter::flush() {
  chain_.flush();
  snaps_.flush();
  csv_.flush();
  if (!chain_ || !snaps_ || !csv_) throw std::runtime_error("failed writing chain files");
  return {static_cast<std::uint64_t>(chain_.tellp()), static_cast<std::uint64_t>(snaps_.tellp()),
          static_cast<std::uint64_t>(csv_.tellp())};
}

std::size_t ChainData::param_index(const std::string& name) const {
  for (std::size_t i = 0; i < param_names.size(); ++i)
    if (param_names[i] == name) return i;
  throw std::out_of_range("chain has no parameter named " + name);
}

std::vector<double> ChainData::column(const std::string& name) const {
  const std::size_t j = param_index(name);
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.params[j]);
  return out;
}

ChainData read_chain(const fs::path& dir) {
  std::ifstream is(dir / "chain.bin", std::ios::binary);
  if (!is) throw std::runtime_error("missing chain.bin in " + dir.string());
  ChainData data;
  data.header = nlohmann::json::parse(read_header_text(is));
  data.param_names = param_names_of(data.header);
  const std::size_t k = data.param_names.size();
  while (is.peek() != std::char_traits<char>::eof()) {
    ChainRecord r;
    r.iteration = io::read_le<std::uint64_t>(is);
    r.move = io::read_le<std::uint8_t>(is);
    r.accept = io::read_le<std::uint8_t>(is);
    io::read_le<std::uint16_t>(is);
    r.evaluations = io::read_le<std::uint32_t>(is);
    r.loglik = io::read_le<double>(is);
    r.params.resize(k);
    for (double& p : r.params) p = io::read_le<double>(is);
    data.records.push_back(std::move(r));
  }
  return data;
}

namespace {

template <class Field, class Reader>
std::vector<Snapshot<Field>> read_snapshots(const fs::path& dir, Reader reader) {
  std::ifstream is(dir / "snapshots.bin", std::ios::binary);
  if (!is) throw std::runtime_error("missing snapshots.bin in " + dir.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kSnapMagic, 8) != 0) throw std::runtime_error("not a snapshot file");
  std::vector<Snapshot<Field>> out;
  LatticePtr lattice;
  while (is.peek() != std::char_traits<char>::eof()) {
    Snapshot<Field> s;
    s.iteration = io::read_le<std::uint64_t>(is);
    const auto count = io::read_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
      s.fields.push_back(reader(is, lattice));
      lattice = s.fields.back().lattice_ptr();
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<Snapshot<SpectralVelocityField>> read_velocity_snapshots(const fs::path& dir) {
  return read_snapshots<SpectralVelocityField>(
      dir, [](std::istream& is, const LatticePtr& l) { return read_velocity_block(is, l); });
}

std::vector<Snapshot<SpectralScalarField>> read_scalar_snapshots(const fs::path& dir) {
  return read_snapshots<SpectralScalarField>(
      dir, [](std::istream& is, const LatticePtr& l) { return read_scalar_block(is, l); });
}

void write_json_atomic(const fs::path& file, const nlohmann::json& j) {
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream os(tmp);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << std::setw(2) << j << '\n';
  }
  fs::rename(tmp, file);
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream is(file);
  if (!is) throw std::runtime_error("cannot read " + file.string());
  return nlohmann::json::parse(is);
}

nlohmann::json to_json(const SpectralVelocityField& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const Complex& z : v.coeffs()) a.push_back({z.real(), z.imag()});
  return a;
}

nlohmann::json to_json(const SpectralScalarField& f) {
  nlohmann::json a = nlohmann::json::array();
  a.push_back({f.mean(), 0.0});
  for (const Complex& z : f.coeffs()) a.push_back({z.real(), z.imag()});
  return a;
}

SpectralVelocityField velocity_from_json(const nlohmann::json& j, const LatticePtr& lattice) {
  if (j.size() != lattice->half_size()) throw std::runtime_error("field size mismatch in JSON");
  std::vector<Complex> c;
  for (const auto& z : j) c.emplace_back(z.at(0).get<double>(), z.at(1).get<double>());
  return SpectralVelocityField(lattice, std::move(c));
}

SpectralScalarField scalar_from_json(const nlohmann::json& j, const LatticePtr& lattice) {
  if (j.size() != lattice->half_size() + 1) throw std::runtime_error("field size mismatch in JSON");
  std::vector<Complex> c;
  for (std::size_t i = 1; i < j.size(); ++i) c.emplace_back(j[i].at(0).get<double>(), j[i].at(1).get<double>());
  return SpectralScalarField(lattice, j[0].at(0).get<double>(), std::move(c));
}

}  // namespace hbda
