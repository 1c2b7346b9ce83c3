#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "af/errors.hpp"

namespace af {

/// CRC-32 (IEEE 802.3 polynomial, reflected), same parametrization as zip/png.
uint32_t crc32(const uint8_t* data, size_t len);

/// FNV-1a 64-bit, used for config hashes.
uint64_t fnv1a64(const std::string& text);
std::string to_hex(uint64_t v);

/// Little-endian binary file writer. All multi-byte fields in the AFDS/AFCK/
/// AFFR formats go through this.
class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path);
  void bytes(const uint8_t* p, size_t n);
  void u8(uint8_t v);
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v) { u32(std::bit_cast<uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  /// Flushes and verifies the stream; throws IoError on failure.
  void finish();

 private:
  std::ofstream out_;
  std::string path_;
};

/// Little-endian binary file reader; throws FormatError("truncated payload")
/// when asked to read past the end of the file.
class ByteReader {
 public:
  explicit ByteReader(const std::string& path);
  void bytes(uint8_t* p, size_t n);
  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  bool at_end();

 private:
  std::ifstream in_;
  std::string path_;
};

}  // namespace af
