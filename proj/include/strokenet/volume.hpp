#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace strokenet {

// CT volume in Hounsfield units. Voxels are z-major, then y, then x.
struct Volume {
  std::array<std::size_t, 3> dims{1, 1, 1};     // (D, H, W)
  std::array<double, 3> spacing{5.0, 1.0, 1.0};  // (sz, sy, sx) in mm
  std::vector<double> voxels;

  static Volume filled(std::array<std::size_t, 3> dims, std::array<double, 3> spacing,
                       double value);

  std::size_t size() const noexcept { return voxels.size(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const noexcept {
    return (z * dims[1] + y) * dims[2] + x;
  }
  double at(std::size_t z, std::size_t y, std::size_t x) const { return voxels[index(z, y, x)]; }
  double& at(std::size_t z, std::size_t y, std::size_t x) { return voxels[index(z, y, x)]; }

  // Throws ParameterError on zero dims, non-positive spacing or a size mismatch.
  void validate() const;

  friend bool operator==(const Volume&, const Volume&) = default;
};

inline constexpr std::uint32_t kVolumeFormatVersion = 1;

// "SVOL" file: magic, u32 version, u32 D,H,W, f32 sz,sy,sx, then D*H*W f32 voxels,
// all little-endian. Voxels and spacing round through float32.
std::vector<std::uint8_t> encode_volume(const Volume& v);
Volume decode_volume(const std::vector<std::uint8_t>& bytes, const std::string& source = "volume");
void write_volume(const Volume& v, const std::filesystem::path& path);
Volume read_volume(const std::filesystem::path& path);

// Rounds every voxel and spacing value to float32 so that a write/read round trip is exact.
void quantize_to_float(Volume& v);

}  // namespace strokenet
