#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "modalcompose/errors.hpp"

namespace modalcompose {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

// Little-endian append-only byte buffer.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void f64s(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
  void magic(std::string_view m) { raw(m.data(), m.size()); }
  // u16 length prefix + UTF-8 bytes
  void str16(std::string_view s);
  // u32 length prefix + UTF-8 bytes
  void str32(std::string_view s);

  const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }

 private:
  void raw(const void* p, std::size_t n);
  std::vector<std::uint8_t> bytes_;
};

// Bounds-checked reader; running past the end throws FileFormatError.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  void f64s(std::span<double> out);
  void expect_magic(std::string_view m);
  std::string str16();
  std::string str32();

  bool at_end() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  [[noreturn]] void fail(const std::string& why) const;

 private:
  void raw(void* p, std::size_t n);
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view text) noexcept;

}  // namespace modalcompose
