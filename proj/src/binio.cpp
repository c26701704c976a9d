#include "ptta/binio.hpp"

#include <zlib.h>

#include <fstream>
#include <sstream>

namespace ptta::binio {

std::uint32_t crc32(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

void Reader::verify_seal() {
  if (data_.size() < 4) throw CorruptFileError(origin_ + ": truncated file");
  const std::string body = data_.substr(0, data_.size() - 4);
  Reader tail(data_.substr(data_.size() - 4), origin_);
  if (tail.get<std::uint32_t>() != crc32(body)) throw CorruptFileError(origin_ + ": internal checksum mismatch");
  data_ = body;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace ptta::binio
