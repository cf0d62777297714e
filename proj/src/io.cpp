#include "mapo/io.hpp"

#include <openssl/sha.h>

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>

namespace mapo::io {

namespace {

struct Crc64Table {
  uint64_t t[256];
  Crc64Table() {
    // reflected ECMA-182 polynomial
    const uint64_t poly = 0xc96c5795d7870f42ull;
    for (uint64_t i = 0; i < 256; ++i) {
      uint64_t crc = i;
      for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ ((crc & 1) ? poly : 0);
      t[i] = crc;
    }
  }
};

const Crc64Table kCrc64Table;

}  // namespace

uint64_t crc64(std::span<const uint8_t> data, uint64_t seed) {
  uint64_t crc = ~seed;
  for (uint8_t b : data) crc = kCrc64Table.t[(crc ^ b) & 0xff] ^ (crc >> 8);
  return ~crc;
}

Hash256 sha256(std::span<const uint8_t> data) {
  Hash256 out{};
  SHA256(data.data(), data.size(), out.data());
  return out;
}

Hash256 sha256_file(const std::filesystem::path& path) {
  const auto data = read_file(path);
  return sha256(data);
}

std::string hex(std::span<const uint8_t> bytes) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (uint8_t b : bytes) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

std::string hex_u64(uint64_t v) {
  std::array<uint8_t, 8> b{};
  for (int i = 7; i >= 0; --i) {
    b[static_cast<size_t>(i)] = static_cast<uint8_t>(v & 0xff);
    v >>= 8;
  }
  return hex(b);
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::i64(int64_t v) { u64(static_cast<uint64_t>(v)); }

void ByteWriter::f64(double v) { u64(std::bit_cast<uint64_t>(v)); }

void ByteWriter::bytes(std::span<const uint8_t> b) {
  buf_.insert(buf_.end(), b.begin(), b.end());
}

void ByteWriter::f64_vector(std::span<const double> v) {
  u64(v.size());
  for (double x : v) f64(x);
}

void ByteReader::need(size_t n) const {
  if (pos_ + n > data_.size())
    throw IntegrityError("truncated input: need " + std::to_string(n) +
                         " bytes at offset " + std::to_string(pos_));
}

uint8_t ByteReader::u8() {
  need(1);
  return data_[pos_++];
}

uint32_t ByteReader::u32() {
  need(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_++]) << (8 * i);
  return v;
}

uint64_t ByteReader::u64() {
  need(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_++]) << (8 * i);
  return v;
}

int64_t ByteReader::i64() { return static_cast<int64_t>(u64()); }

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

void ByteReader::bytes(std::span<uint8_t> out) {
  need(out.size());
  std::memcpy(out.data(), data_.data() + pos_, out.size());
  pos_ += out.size();
}

std::vector<double> ByteReader::f64_vector() {
  const uint64_t n = u64();
  need(n * 8);
  std::vector<double> v(n);
  for (auto& x : v) x = f64();
  return v;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open file: " + path.string());
  std::vector<uint8_t> data((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
  return data;
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> data) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("cannot open file for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size()));
  if (!out) throw IntegrityError("short write: " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const uint8_t>(
                       reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  const auto data = read_file(path);
  return std::string(data.begin(), data.end());
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  (void)ec;
  return std::string(buf.data(), ptr);
}

}  // namespace mapo::io
