#include "f32io.hpp"

#include <zlib.h>

#include <fstream>
#include <iterator>

#include "xbt/error.hpp"

namespace xbt::detail {

std::uint32_t crc32(const std::vector<unsigned char>& bytes, std::size_t length) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  if (length > 0) crc = ::crc32(crc, bytes.data(), static_cast<uInt>(length));
  return static_cast<std::uint32_t>(crc);
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

std::ofstream open_for_write(const std::filesystem::path& path, bool overwrite,
                             std::ios::openmode mode) {
  if (!overwrite && std::filesystem::exists(path))
    throw FormatError(path.string() + " already exists (pass overwrite to replace it)");
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  return out;
}

}  // namespace

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes,
                bool overwrite) {
  auto out = open_for_write(path, overwrite, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text, bool overwrite) {
  auto out = open_for_write(path, overwrite, std::ios::out);
  out << text;
  if (!out) throw FormatError("write failed for " + path.string());
}

}  // namespace xbt::detail
