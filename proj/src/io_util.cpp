#include "af/io_util.hpp"

#include <array>

namespace af {

namespace {

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> table{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    table[i] = c;
  }
  return table;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len) {
  static const std::array<uint32_t, 256> table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string to_hex(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[v & 0xF];
    v >>= 4;
  }
  return s;
}

ByteWriter::ByteWriter(const std::string& path)
    : out_(path, std::ios::binary | std::ios::trunc), path_(path) {
  if (!out_) throw IoError("cannot open for writing: " + path);
}

void ByteWriter::bytes(const uint8_t* p, size_t n) {
  out_.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void ByteWriter::u8(uint8_t v) { bytes(&v, 1); }

void ByteWriter::u16(uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  bytes(b, 2);
}

void ByteWriter::u32(uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  bytes(b, 4);
}

void ByteWriter::u64(uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  bytes(b, 8);
}

void ByteWriter::finish() {
  out_.flush();
  if (!out_) throw IoError("write failed: " + path_);
  out_.close();
}

ByteReader::ByteReader(const std::string& path)
    : in_(path, std::ios::binary), path_(path) {
  if (!in_) throw IoError("cannot open: " + path);
}

void ByteReader::bytes(uint8_t* p, size_t n) {
  in_.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in_.gcount()) != n)
    throw FormatError("truncated payload: " + path_);
}

uint8_t ByteReader::u8() {
  uint8_t v;
  bytes(&v, 1);
  return v;
}

uint16_t ByteReader::u16() {
  uint8_t b[2];
  bytes(b, 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t ByteReader::u32() {
  uint8_t b[4];
  bytes(b, 4);
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

uint64_t ByteReader::u64() {
  uint8_t b[8];
  bytes(b, 8);
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

bool ByteReader::at_end() {
  return in_.peek() == std::ifstream::traits_type::eof();
}

}  // namespace af
