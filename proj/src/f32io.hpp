#pragma once

// Little-endian float32 helpers shared by the model and test-vector writers.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace xbt::detail {

inline void append_f32(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(bits >> (8 * b)));
}

inline void append_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<unsigned char>(v >> (8 * b)));
}

inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline double read_f32(const unsigned char* p) {
  return static_cast<double>(std::bit_cast<float>(read_u32(p)));
}

std::uint32_t crc32(const std::vector<unsigned char>& bytes, std::size_t length);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes,
                bool overwrite);
void write_text(const std::filesystem::path& path, const std::string& text, bool overwrite);

}  // namespace xbt::detail
