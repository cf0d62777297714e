#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mapo::io {

/// Raised when a file fails a structural or checksum check
/// (bad magic, truncation, CRC mismatch, unsupported version).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Hash256 = std::array<uint8_t, 32>;

// CRC-64/XZ (ECMA-182 polynomial, reflected). Check value of "123456789"
// is 0x995dc9bbdf1939fa.
uint64_t crc64(std::span<const uint8_t> data, uint64_t seed = 0);

Hash256 sha256(std::span<const uint8_t> data);
Hash256 sha256_file(const std::filesystem::path& path);

std::string hex(std::span<const uint8_t> bytes);
std::string hex_u64(uint64_t v);

/// Little-endian append-only buffer used by the binary file formats.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u32(uint32_t v);
  void u64(uint64_t v);
  void i64(int64_t v);
  void f64(double v);
  void bytes(std::span<const uint8_t> b);
  void f64_vector(std::span<const double> v);  // count-prefixed

  const std::vector<uint8_t>& data() const { return buf_; }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws IntegrityError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  uint8_t u8();
  uint32_t u32();
  uint64_t u64();
  int64_t i64();
  double f64();
  void bytes(std::span<uint8_t> out);
  std::vector<double> f64_vector();

  size_t remaining() const { return data_.size() - pos_; }
  size_t position() const { return pos_; }

 private:
  void need(size_t n) const;
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> data);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double (std::to_chars); parsing it
/// back recovers the exact bits, which keeps CSV/JSON outputs lossless.
std::string format_double(double v);

}  // namespace mapo::io
