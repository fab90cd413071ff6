#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cianet/errors.hpp"

namespace cianet {

/// N×C×H×W extent of a dense tensor. All components are at least one.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << n << "x" << c << "x" << h << "x" << w;
    return os.str();
  }
};

inline void validate_shape(const Shape& s) {
  if (s.n == 0) throw DimensionError("N", "shape component must be >= 1, got " + s.str());
  if (s.c == 0) throw DimensionError("C", "shape component must be >= 1, got " + s.str());
  if (s.h == 0) throw DimensionError("H", "shape component must be >= 1, got " + s.str());
  if (s.w == 0) throw DimensionError("W", "shape component must be >= 1, got " + s.str());
}

/// Dense row-major (W fastest) array. T is float for training, double for
/// gradient verification.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{}, data_(1, T(0)) {}
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    validate_shape(shape_);
    data_.assign(shape_.numel(), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_.numel())
      throw DimensionError("data", "buffer length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape_.str());
  }

  static Tensor scalar(T v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return data_.size(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) { return data_[offset(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  T* plane_ptr(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane_ptr(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape shape_;
  std::vector<T> data_;
};

// NMAP: "NMAP", u32 N, C, H, W little-endian, then N·C·H·W little-endian f32.
namespace nmap {

inline constexpr char kMagic[4] = {'N', 'M', 'A', 'P'};

namespace detail {
inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& is, const std::string& source, std::size_t& offset) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw ParseError(source, offset, "truncated u32");
  offset += 4;
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}
}  // namespace detail

template <class T>
void write(std::ostream& os, const Tensor<T>& t) {
  os.write(kMagic, 4);
  const Shape& s = t.shape();
  for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(os, static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.numel(); ++i)
    detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
  if (!os) throw IoError("NMAP write failed");
}

/// Reads one NMAP blob. `offset` tracks the byte position for error reports.
template <class T = float>
Tensor<T> read(std::istream& is, const std::string& source, std::size_t& offset) {
  char magic[4];
  if (!is.read(magic, 4)) throw ParseError(source, offset, "truncated NMAP magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw ParseError(source, offset, "bad NMAP magic");
  offset += 4;
  Shape s;
  s.n = detail::get_u32(is, source, offset);
  s.c = detail::get_u32(is, source, offset);
  s.h = detail::get_u32(is, source, offset);
  s.w = detail::get_u32(is, source, offset);
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0)
    throw ParseError(source, offset - 16, "NMAP shape has a zero component");
  if (double(s.n) * double(s.c) * double(s.h) * double(s.w) > double(1u << 30)) throw ParseError(source, offset - 16, "NMAP shape is implausibly large");
  std::vector<T> data(s.numel());
  for (auto& v : data) v = static_cast<T>(std::bit_cast<float>(detail::get_u32(is, source, offset)));
  return Tensor<T>(s, std::move(data));
}

}  // namespace nmap
}  // namespace cianet
