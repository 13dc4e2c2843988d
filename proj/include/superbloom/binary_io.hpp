#pragma once

// Little-endian fixed-width encoding shared by every on-disk format:
//   [magic:4][version:u32][payload ...][crc32 of all preceding bytes:u32]

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace superbloom::io {

class Writer {
 public:
  Writer(std::string_view magic, std::uint32_t version);

  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(std::string_view s);
  void u32_array(std::span<const std::uint32_t> values);
  void f32_array(std::span<const float> values);

  // Appends the checksum and returns the finished image.
  std::vector<std::uint8_t> finish() &&;

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  // Verifies magic, version and checksum; throws IoError on any mismatch.
  Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::uint32_t version,
         std::string_view what);

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void u32_array(std::span<std::uint32_t> out);
  void f32_array(std::span<float> out);

  bool at_end() const noexcept { return pos_ == end_; }
  // Throws unless every payload byte was consumed.
  void expect_end() const;

 private:
  void need(std::size_t n) const;

  std::vector<std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
  std::string what_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// 64-bit FNV-1a; used for configuration and scheme fingerprints.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0);
std::string hex64(std::uint64_t v);

}  // namespace superbloom::io
