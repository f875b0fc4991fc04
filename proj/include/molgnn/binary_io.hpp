#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <string>

namespace molgnn::bin {

// Little-endian encoders appending to a byte buffer.
template <typename T>
void put_uint(std::string& out, T value) {
  for (std::size_t k = 0; k < sizeof(T); ++k) out.push_back(static_cast<char>((value >> (8 * k)) & 0xff));
}

inline void put_u8(std::string& out, std::uint8_t v) { out.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& out, std::uint16_t v) { put_uint(out, v); }
inline void put_u32(std::string& out, std::uint32_t v) { put_uint(out, v); }
inline void put_u64(std::string& out, std::uint64_t v) { put_uint(out, v); }
inline void put_f32(std::string& out, float v) { put_uint(out, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::string& out, double v) { put_uint(out, std::bit_cast<std::uint64_t>(v)); }

template <typename T>
T get_uint(const char* p) {
  T value = 0;
  for (std::size_t k = 0; k < sizeof(T); ++k)
    value |= static_cast<T>(static_cast<unsigned char>(p[k])) << (8 * k);
  return value;
}

inline float get_f32(const char* p) { return std::bit_cast<float>(get_uint<std::uint32_t>(p)); }
inline double get_f64(const char* p) { return std::bit_cast<double>(get_uint<std::uint64_t>(p)); }

/// Sequential reader over an in-memory byte buffer; `ok()` turns false on overrun.
class Cursor {
 public:
  Cursor(const char* data, std::size_t size) : data_(data), size_(size) {}

  bool ok() const { return ok_; }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

  const char* take(std::size_t n) {
    if (!ok_ || n > size_ - pos_) {
      ok_ = false;
      return nullptr;
    }
    const char* p = data_ + pos_;
    pos_ += n;
    return p;
  }

  template <typename T>
  T uint() {
    const char* p = take(sizeof(T));
    return p ? get_uint<T>(p) : T{0};
  }
  float f32() {
    const char* p = take(4);
    return p ? get_f32(p) : 0.0f;
  }
  double f64() {
    const char* p = take(8);
    return p ? get_f64(p) : 0.0;
  }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  bool ok_ = true;
};

}  // namespace molgnn::bin
