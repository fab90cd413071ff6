#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cianet/errors.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

/// Row-major H×W grid of scalar values.
template <class V>
class Grid {
 public:
  using value_type = V;

  Grid() = default;
  Grid(std::size_t height, std::size_t width, V fill = V{})
      : height_(height), width_(width), data_(height * width, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  V& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const V& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  V& operator[](std::size_t i) { return data_[i]; }
  const V& operator[](std::size_t i) const { return data_[i]; }

  std::vector<V>& vec() { return data_; }
  const std::vector<V>& vec() const { return data_; }

  bool same_extent(std::size_t h, std::size_t w) const { return height_ == h && width_ == w; }
  template <class U>
  bool same_extent(const Grid<U>& o) const {
    return height_ == o.height() && width_ == o.width();
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<V> data_;
};

/// 0 = background, positive = one nucleus instance.
using LabelMap = Grid<std::int32_t>;
using Mask = Grid<std::uint8_t>;
using FloatMap = Grid<float>;

/// 8-bit interleaved RGB.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(std::size_t height, std::size_t width, std::uint8_t fill = 0)
      : height_(height), width_(width), data_(height * width * 3, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::uint8_t& operator()(std::size_t y, std::size_t x, std::size_t c) { return data_[(y * width_ + x) * 3 + c]; }
  std::uint8_t operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * width_ + x) * 3 + c];
  }
  std::vector<std::uint8_t>& vec() { return data_; }
  const std::vector<std::uint8_t>& vec() const { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> data_;
};

template <class A, class B>
void require_same_extent(const A& a, const B& b, const char* what) {
  if (a.height() != b.height())
    throw DimensionError("H", std::string(what) + ": height " + std::to_string(a.height()) + " vs " +
                                  std::to_string(b.height()));
  if (a.width() != b.width())
    throw DimensionError("W", std::string(what) + ": width " + std::to_string(a.width()) + " vs " +
                                  std::to_string(b.width()));
}

/// Largest label present (0 for an empty map).
inline std::int32_t max_label(const LabelMap& m) {
  std::int32_t v = 0;
  for (auto l : m.vec()) v = std::max(v, l);
  return v;
}

/// Number of distinct positive labels.
inline std::size_t count_instances(const LabelMap& m) {
  std::vector<bool> seen(static_cast<std::size_t>(max_label(m)) + 1, false);
  std::size_t n = 0;
  for (auto l : m.vec())
    if (l > 0 && !seen[l]) {
      seen[l] = true;
      ++n;
    }
  return n;
}

/// Renumbers positive labels to 1..n keeping their relative order.
inline LabelMap relabel_contiguous(const LabelMap& m) {
  std::vector<std::int32_t> remap(static_cast<std::size_t>(max_label(m)) + 1, 0);
  for (auto l : m.vec())
    if (l > 0) remap[l] = 1;
  std::int32_t next = 0;
  for (std::size_t l = 1; l < remap.size(); ++l)
    if (remap[l]) remap[l] = ++next;
  LabelMap out(m.height(), m.width(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] > 0 ? remap[m[i]] : 0;
  return out;
}

/// Image as a 1×3×H×W tensor scaled to roughly zero mean, unit range.
template <class T>
Tensor<T> image_to_tensor(const RgbImage& img) {
  Tensor<T> t(Shape{1, 3, img.height(), img.width()});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < img.height(); ++y)
      for (std::size_t x = 0; x < img.width(); ++x) t.at(0, c, y, x) = T(img(y, x, c)) / T(255) - T(0.5);
  return t;
}

template <class T, class V>
Tensor<T> grid_to_tensor(const Grid<V>& g) {
  Tensor<T> t(Shape{1, 1, g.height(), g.width()});
  for (std::size_t i = 0; i < g.size(); ++i) t[i] = T(g[i]);
  return t;
}

/// Channel `c` of batch item `n` as a float map.
template <class T>
FloatMap tensor_plane(const Tensor<T>& t, std::size_t n = 0, std::size_t c = 0) {
  FloatMap m(t.shape().h, t.shape().w);
  const T* p = t.plane_ptr(n, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<float>(p[i]);
  return m;
}

}  // namespace cianet
