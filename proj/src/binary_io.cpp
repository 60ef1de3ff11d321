#include "modalcompose/binary_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace modalcompose {

void ByteWriter::raw(const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  bytes_.insert(bytes_.end(), b, b + n);
}

void ByteWriter::str16(std::string_view s) {
  if (s.size() > std::numeric_limits<std::uint16_t>::max()) throw FileFormatError("string too long for u16 prefix");
  u16(static_cast<std::uint16_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteWriter::str32(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteReader::fail(const std::string& why) const {
  throw FileFormatError(what_ + ": " + why + " (at byte " + std::to_string(pos_) + ")");
}

void ByteReader::raw(void* p, std::size_t n) {
  if (remaining() < n) fail("truncated");
  std::memcpy(p, bytes_.data() + pos_, n);
  pos_ += n;
}

std::uint8_t ByteReader::u8() {
  std::uint8_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint16_t ByteReader::u16() {
  std::uint16_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

double ByteReader::f64() {
  double v;
  raw(&v, sizeof v);
  return v;
}

void ByteReader::f64s(std::span<double> out) { raw(out.data(), out.size() * sizeof(double)); }

void ByteReader::expect_magic(std::string_view m) {
  std::string got(m.size(), '\0');
  if (remaining() < m.size()) fail("truncated header");
  raw(got.data(), m.size());
  if (got != m) fail("bad magic, expected \"" + std::string(m) + "\"");
}

std::string ByteReader::str16() {
  std::string s(u16(), '\0');
  raw(s.data(), s.size());
  return s;
}

std::string ByteReader::str32() {
  const std::uint32_t n = u32();
  if (n > remaining()) fail("truncated string");
  std::string s(n, '\0');
  raw(s.data(), s.size());
  return s;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileFormatError("cannot open '" + path.string() + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileFormatError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileFormatError("write to '" + path.string() + "' failed");
}

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace modalcompose
