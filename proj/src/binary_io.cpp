#include "svae/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "svae/errors.hpp"

namespace svae::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::f64s(std::span<const double> v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
  bytes_.insert(bytes_.end(), p, p + v.size() * sizeof(double));
}

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (n > remaining()) throw FormatError("truncated binary payload");
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::vector<double> ByteReader::f64s(std::size_t count) {
  if (count > remaining() / sizeof(double)) throw FormatError("truncated float payload");
  auto b = take(count * sizeof(double));
  std::vector<double> out(count);
  std::memcpy(out.data(), b.data(), b.size());
  return out;
}

std::string ByteReader::str() {
  const auto n = u64();
  auto b = take(n);
  return std::string(b.begin(), b.end());
}

std::span<const std::uint8_t> ByteReader::raw(std::size_t count) { return take(count); }

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(::crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size())));
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("short write to '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace svae::io
