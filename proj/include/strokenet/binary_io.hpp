#pragma once

// Little-endian packing helpers for the volume and checkpoint formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "strokenet/errors.hpp"

namespace strokenet {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void text(const std::string& s) { bytes(s.data(), s.size()); }
  template <class T>
  void put(T v) {
    bytes(&v, sizeof(T));
  }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& in, std::string what) : in_(in), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n, const char* field) {
    if (in_.size() - pos_ < n) {
      throw CorruptFileError(what_ + ": truncated while reading " + field, pos_);
    }
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::string text(std::size_t n, const char* field) {
    std::string s(n, '\0');
    bytes(s.data(), n, field);
    return s;
  }
  template <class T>
  T get(const char* field) {
    T v{};
    bytes(&v, sizeof(T), field);
    return v;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& in_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace strokenet
