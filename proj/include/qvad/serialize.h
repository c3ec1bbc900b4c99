#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

namespace qvad {

// Little-endian binary file writer. finish() flushes and reports I/O errors
// as DataError.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);

  void bytes(const void* data, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);  // u32 length + bytes
  void finish();

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);

  void bytes(void* data, std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  void expect_end();

 private:
  std::ifstream in_;
  std::filesystem::path path_;
};

// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& text);

}  // namespace qvad
