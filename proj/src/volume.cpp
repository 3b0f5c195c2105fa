#include "strokenet/volume.hpp"

#include <fstream>
#include <iterator>

#include "strokenet/binary_io.hpp"
#include "strokenet/errors.hpp"

namespace strokenet {

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

Volume Volume::filled(std::array<std::size_t, 3> dims, std::array<double, 3> spacing, double value) {
  Volume v;
  v.dims = dims;
  v.spacing = spacing;
  v.voxels.assign(dims[0] * dims[1] * dims[2], value);
  v.validate();
  return v;
}

void Volume::validate() const {
  for (auto d : dims)
    if (d == 0) throw ParameterError("volume dims must be >= 1");
  for (auto s : spacing)
    if (!(s > 0.0)) throw ParameterError("volume spacing must be > 0");
  if (voxels.size() != dims[0] * dims[1] * dims[2]) {
    throw ParameterError("volume voxel count does not match dims");
  }
}

namespace {
constexpr char kMagic[4] = {'S', 'V', 'O', 'L'};
}

std::vector<std::uint8_t> encode_volume(const Volume& v) {
  v.validate();
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVolumeFormatVersion);
  for (auto d : v.dims) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (auto s : v.spacing) w.put<float>(static_cast<float>(s));
  for (double x : v.voxels) w.put<float>(static_cast<float>(x));
  return std::move(w.buffer());
}

Volume decode_volume(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptFileError(source + ": bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVolumeFormatVersion) {
    throw CorruptFileError(source + ": unsupported version " + std::to_string(version), 4);
  }
  Volume v;
  for (auto& d : v.dims) {
    const std::size_t at = r.offset();
    d = r.get<std::uint32_t>("dims");
    if (d == 0) throw CorruptFileError(source + ": zero dimension", at);
  }
  for (auto& s : v.spacing) {
    const std::size_t at = r.offset();
    s = r.get<float>("spacing");
    if (!(s > 0.0)) throw CorruptFileError(source + ": non-positive spacing", at);
  }
  const std::size_t n = v.dims[0] * v.dims[1] * v.dims[2];
  if (r.remaining() != n * sizeof(float)) {
    throw CorruptFileError(source + ": expected " + std::to_string(n * sizeof(float)) +
                               " voxel bytes, found " + std::to_string(r.remaining()),
                           r.offset());
  }
  v.voxels.resize(n);
  for (auto& x : v.voxels) x = r.get<float>("voxels");
  return v;
}

void write_volume(const Volume& v, const std::filesystem::path& path) {
  write_binary_file(path, encode_volume(v));
}

Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(read_binary_file(path), path.string());
}

void quantize_to_float(Volume& v) {
  for (auto& s : v.spacing) s = static_cast<float>(s);
  for (auto& x : v.voxels) x = static_cast<float>(x);
}

}  // namespace strokenet
