#pragma once

// Little-endian encode/decode helpers shared by the snapshot and dataset
// file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bwft/error.hpp"

namespace bwft::io {

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

class ByteWriter {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void text(std::string_view s) { bytes(s.data(), s.size()); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { bytes(&v, sizeof v); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f32s(std::span<const float> v) { bytes(v.data(), v.size_bytes()); }

  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool done() const { return pos_ == data_.size(); }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated at offset " + std::to_string(pos_) + " (need " +
                        std::to_string(n) + " bytes, have " + std::to_string(remaining()) + ")");
    }
  }
  void expect(std::string_view magic) {
    need(magic.size());
    for (std::size_t i = 0; i < magic.size(); ++i) {
      if (data_[pos_ + i] != static_cast<std::uint8_t>(magic[i])) {
        throw FormatError(what_ + ": bad magic at offset " + std::to_string(pos_) + " (byte " +
                          std::to_string(pos_ + i) + " differs)");
      }
    }
    pos_ += magic.size();
  }
  template <class T>
  T scalar() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::uint8_t u8() { return scalar<std::uint8_t>(); }
  std::uint16_t u16() { return scalar<std::uint16_t>(); }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void copy(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  [[noreturn]] void fail(const std::string& message) const {
    throw FormatError(what_ + ": " + message + " at offset " + std::to_string(pos_));
  }

 private:
  std::span<const std::uint8_t> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes to a temporary sibling and renames, so the target is either the
/// old content or the complete new content.
void write_file_atomic(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace bwft::io
