#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ptta/errors.hpp"

namespace ptta::binio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

std::uint32_t crc32(std::string_view bytes);

/// Little-endian byte sink.
class Writer {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    buf_.append(reinterpret_cast<const char*>(raw), sizeof(T));
  }
  void bytes(std::string_view s) { buf_.append(s); }
  void str(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  /// Appends the CRC-32 of everything written so far.
  void seal() { put(crc32(buf_)); }

  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

/// Little-endian byte source over an in-memory file image. Running past the end throws
/// CorruptFileError.
class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string str() { return bytes(get<std::uint32_t>()); }

  /// Verifies the trailing CRC-32 written by Writer::seal and strips it.
  void verify_seal();
  bool at_end() const { return pos_ == data_.size(); }
  const std::string& origin() const { return origin_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw CorruptFileError(origin_ + ": truncated file");
  }

  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace ptta::binio
