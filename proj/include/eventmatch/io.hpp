#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "eventmatch/error.hpp"
#include "eventmatch/tensor.hpp"

namespace eventmatch {

// Appends little-endian scalars to a byte buffer.
class ByteWriter {
 public:
  explicit ByteWriter(Bytes& out) : out_(out) {}

  template <typename U>
  void put(U value) {
    static_assert(std::is_arithmetic_v<U>);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(raw[i], raw[sizeof(U) - 1 - i]);
    }
    out_.insert(out_.end(), raw, raw + sizeof(U));
  }

  void put_bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

 private:
  Bytes& out_;
};

// Reads little-endian scalars; throws ParseError carrying the byte offset when
// the buffer runs out.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  template <typename U>
  U get() {
    static_assert(std::is_arithmetic_v<U>);
    require(sizeof(U));
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, in_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(U) / 2; ++i) std::swap(raw[i], raw[sizeof(U) - 1 - i]);
    }
    U value;
    std::memcpy(&value, raw, sizeof(U));
    pos_ += sizeof(U);
    return value;
  }

  std::string get_string(std::size_t n) {
    require(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return in_.size() - pos_; }

 private:
  void require(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ParseError("truncated input", pos_);
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

Bytes read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

inline std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

}  // namespace eventmatch
