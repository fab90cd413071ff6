#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cianet/image.hpp"

namespace cianet::morph {

namespace detail {

// Running max/min over a window of radius r, clipped to [0, n).
template <class Op>
void filter_line(const std::uint8_t* in, std::uint8_t* out, std::size_t n, std::size_t stride, int r, Op op) {
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= std::size_t(r) ? i - r : 0;
    const std::size_t hi = std::min(n - 1, i + r);
    std::uint8_t v = in[lo * stride];
    for (std::size_t j = lo + 1; j <= hi; ++j) v = op(v, in[j * stride]);
    out[i * stride] = v;
  }
}

template <class Op>
Mask separable(const Mask& m, int r, Op op) {
  if (r <= 0 || m.empty()) return m;
  Mask tmp(m.height(), m.width()), out(m.height(), m.width());
  for (std::size_t y = 0; y < m.height(); ++y)
    filter_line(&m(y, 0), &tmp(y, 0), m.width(), 1, r, op);
  for (std::size_t x = 0; x < m.width(); ++x)
    filter_line(&tmp(0, x), &out(0, x), m.height(), m.width(), r, op);
  return out;
}

}  // namespace detail

/// Chebyshev-radius dilation (square structuring element of side 2r+1).
inline Mask dilate(const Mask& m, int r) {
  return detail::separable(m, r, [](std::uint8_t a, std::uint8_t b) { return std::max(a, b); });
}

/// Chebyshev-radius erosion. The window is clipped at the image border, so
/// pixels outside the image never erode the set.
inline Mask erode(const Mask& m, int r) {
  return detail::separable(m, r, [](std::uint8_t a, std::uint8_t b) { return std::min(a, b); });
}

/// Bounding box [y0, y1) × [x0, x1) of each positive label, index = label.
struct Box {
  std::size_t y0, x0, y1, x1;
  bool empty() const { return y1 <= y0 || x1 <= x0; }
};

inline std::vector<Box> label_boxes(const LabelMap& m) {
  std::vector<Box> boxes(static_cast<std::size_t>(max_label(m)) + 1, Box{SIZE_MAX, SIZE_MAX, 0, 0});
  for (std::size_t y = 0; y < m.height(); ++y)
    for (std::size_t x = 0; x < m.width(); ++x) {
      const auto l = m(y, x);
      if (l <= 0) continue;
      Box& b = boxes[l];
      b.y0 = std::min(b.y0, y);
      b.x0 = std::min(b.x0, x);
      b.y1 = std::max(b.y1, y + 1);
      b.x1 = std::max(b.x1, x + 1);
    }
  return boxes;
}

inline Box expand(const Box& b, int r, std::size_t h, std::size_t w) {
  return {b.y0 >= std::size_t(r) ? b.y0 - r : 0, b.x0 >= std::size_t(r) ? b.x0 - r : 0, std::min(h, b.y1 + r),
          std::min(w, b.x1 + r)};
}

/// Support of `label` inside window `b` as a local mask.
inline Mask crop_support(const LabelMap& m, std::int32_t label, const Box& b) {
  Mask out(b.y1 - b.y0, b.x1 - b.x0, 0);
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) out(y - b.y0, x - b.x0) = m(y, x) == label ? 1 : 0;
  return out;
}

}  // namespace cianet::morph
