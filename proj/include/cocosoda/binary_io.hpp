#pragma once

// Little-endian byte buffers with a trailing CRC-32, shared by the checkpoint
// and index containers.

#include "cocosoda/common.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace cocosoda::io {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }

  template <typename T>
  void put(T v) {
    v = to_little(v);
    bytes(&v, sizeof(T));
  }

  void str(std::string_view s) {
    put<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }

  void floats(const float* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(p, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(p[i]);
    }
  }

  /// Appends the CRC-32 of everything written so far.
  void seal() {
    const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(buf_.size()));
    put<std::uint32_t>(static_cast<std::uint32_t>(crc));
  }

  [[nodiscard]] const std::string& data() const { return buf_; }

  void write_file(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot write " + tmp);
      out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!out) throw DataError("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : buf_(std::move(data)) {}

  static ByteReader from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data));
  }

  /// Verifies and strips the trailing CRC-32.
  void verify_seal(std::string_view what) {
    if (buf_.size() < 4) throw DataError(std::string(what) + ": truncated file (checksum failure)");
    const auto body = buf_.size() - 4;
    std::uint32_t stored;
    std::memcpy(&stored, buf_.data() + body, 4);
    stored = to_little(stored);
    const auto crc = ::crc32(0L, reinterpret_cast<const Bytef*>(buf_.data()), static_cast<uInt>(body));
    if (static_cast<std::uint32_t>(crc) != stored) throw DataError(std::string(what) + ": checksum failure");
    end_ = body;
  }

  void bytes(void* p, std::size_t n) {
    if (pos_ + n > end()) throw DataError("unexpected end of data");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }

  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return to_little(v);
  }

  std::string str() {
    const auto n = get<std::uint64_t>();
    if (pos_ + n > end()) throw DataError("unexpected end of data");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  void floats(float* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      bytes(p, n * sizeof(float));
    } else {
      for (std::size_t i = 0; i < n; ++i) p[i] = get<float>();
    }
  }

  [[nodiscard]] std::size_t remaining() const { return end() - pos_; }

 private:
  [[nodiscard]] std::size_t end() const { return end_ == std::string::npos ? buf_.size() : end_; }

  std::string buf_;
  std::size_t pos_ = 0;
  std::size_t end_ = std::string::npos;
};

inline constexpr std::uint8_t kLittleEndian = 1;

}  // namespace cocosoda::io
