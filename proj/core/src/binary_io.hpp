#pragma once

// Little-endian primitive encoding shared by the checkpoint and recording
// formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include "hienet/errors.hpp"

namespace hienet::detail {

template <typename T>
T to_little(T v) {
  static_assert(std::is_integral_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    if constexpr (std::is_same_v<T, double>) {
      put(std::bit_cast<std::uint64_t>(v));
    } else if constexpr (std::is_same_v<T, float>) {
      put(std::bit_cast<std::uint32_t>(v));
    } else {
      const T le = to_little(v);
      const auto* p = reinterpret_cast<const char*>(&le);
      bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
  }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_string(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }
  void put_doubles(const std::vector<double>& values) {
    put(static_cast<std::uint64_t>(values.size()));
    for (double v : values) put(v);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(get<std::uint64_t>(field));
    } else if constexpr (std::is_same_v<T, float>) {
      return std::bit_cast<float>(get<std::uint32_t>(field));
    } else {
      need(sizeof(T), field);
      T v;
      std::memcpy(&v, data_ + pos_, sizeof(T));
      pos_ += sizeof(T);
      return to_little(v);
    }
  }
  std::string get_bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(data_ + pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string(const char* field) {
    const auto n = get<std::uint32_t>(field);
    return get_bytes(n, field);
  }
  std::vector<double> get_doubles(const char* field, std::size_t expected) {
    const auto n = get<std::uint64_t>(field);
    if (n != expected) {
      throw DataError(what_ + ": " + field + " count is " + std::to_string(n) + ", expected " +
                      std::to_string(expected));
    }
    need(n * sizeof(double), field);
    std::vector<double> values(n);
    for (auto& v : values) v = get<double>(field);
    return values;
  }
  std::size_t remaining() const { return size_ - pos_; }
  std::size_t position() const { return pos_; }
  void expect_end() const {
    if (pos_ != size_) {
      throw DataError(what_ + ": " + std::to_string(size_ - pos_) + " trailing bytes after payload");
    }
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (n > size_ - pos_) {
      throw DataError(what_ + ": truncated while reading " + field + " at byte " +
                      std::to_string(pos_) + " (need " + std::to_string(n) + ", have " +
                      std::to_string(size_ - pos_) + ")");
    }
  }

  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

}  // namespace hienet::detail
