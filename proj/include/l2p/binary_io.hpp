#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "l2p/errors.hpp"

namespace l2p {

/// Appends little-endian (or big-endian, when asked) encoded values to a buffer.
class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void u8(std::uint8_t v) { buffer_.push_back(v); }
  void u32(std::uint32_t v, bool big_endian = false) {
    for (int i = 0; i < 4; ++i) {
      const int shift = big_endian ? (3 - i) * 8 : i * 8;
      buffer_.push_back(static_cast<std::uint8_t>(v >> shift));
    }
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buffer_.push_back(static_cast<std::uint8_t>(v >> (i * 8)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& buffer() const { return buffer_; }

  /// Writes to a sibling temp file, then renames over `path`.
  void write_file(const std::filesystem::path& path) const;

 private:
  std::vector<std::uint8_t> buffer_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::vector<std::uint8_t> data) : data_(std::move(data)) {}
  static ByteReader from_file(const std::filesystem::path& path);

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return data_.size() - offset_; }
  bool at_end() const { return offset_ == data_.size(); }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + offset_, n);
    offset_ += n;
  }
  std::uint8_t u8() {
    need(1);
    return data_[offset_++];
  }
  std::uint32_t u32(bool big_endian = false) {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const int shift = big_endian ? (3 - i) * 8 : i * 8;
      v |= static_cast<std::uint32_t>(data_[offset_ + static_cast<std::size_t>(i)]) << shift;
    }
    offset_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(data_[offset_ + static_cast<std::size_t>(i)]) << (i * 8);
    offset_ += 8;
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t max_length = 1 << 20) {
    const std::uint32_t n = u32();
    if (n > max_length) fail("string length " + std::to_string(n) + " exceeds limit");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(what + " at byte offset " + std::to_string(offset_));
  }

 private:
  void need(std::size_t n) const {
    if (remaining() < n)
      fail("truncated input: need " + std::to_string(n) + " bytes, have " +
           std::to_string(remaining()));
  }

  std::vector<std::uint8_t> data_;
  std::size_t offset_ = 0;
};

}  // namespace l2p
