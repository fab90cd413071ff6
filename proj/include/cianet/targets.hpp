#pragma once

#include <cstddef>
#include <cstdint>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/morphology.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

/// Binary nuclei and contour targets derived from an instance map.
struct TargetPair {
  Mask nuclei;
  Mask contour;
};

inline constexpr int kDefaultContourRadius = 2;

/// Contour band of each instance: pixels within Chebyshev radius r of its
/// boundary on either side, i.e. dilate_r(S) minus erode_r(S). The nuclei
/// target is the instance support minus the union of all bands, so touching
/// instances come apart.
inline TargetPair extract_targets(const LabelMap& instances, int r = kDefaultContourRadius) {
  if (r < 1) throw DomainError("contour radius must be at least 1");
  const std::size_t h = instances.height(), w = instances.width();
  TargetPair t{Mask(h, w, 0), Mask(h, w, 0)};
  const auto boxes = morph::label_boxes(instances);
  for (std::size_t label = 1; label < boxes.size(); ++label) {
    if (boxes[label].empty()) continue;
    const auto win = morph::expand(boxes[label], r, h, w);
    const Mask support = morph::crop_support(instances, static_cast<std::int32_t>(label), win);
    const Mask grown = morph::dilate(support, r);
    // Erosion must see neighbors outside the window as background, which
    // holds because the window already extends r past the support.
    const Mask core = morph::erode(support, r);
    for (std::size_t y = 0; y < support.height(); ++y)
      for (std::size_t x = 0; x < support.width(); ++x)
        if (grown(y, x) && !core(y, x)) t.contour(win.y0 + y, win.x0 + x) = 1;
  }
  for (std::size_t i = 0; i < instances.size(); ++i) t.nuclei[i] = (instances[i] > 0 && !t.contour[i]) ? 1 : 0;
  return t;
}

/// Max-pools each spatial plane by `factor` (H and W must be divisible).
template <class T>
Tensor<T> downsample_max(const Tensor<T>& t, std::size_t factor) {
  const Shape s = t.shape();
  if (factor == 1) return t;
  if (s.h % factor != 0) throw DimensionError("H", "downsample_max: height not divisible by factor");
  if (s.w % factor != 0) throw DimensionError("W", "downsample_max: width not divisible by factor");
  const std::size_t oh = s.h / factor, ow = s.w / factor;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = t.data() + nc * s.plane();
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        T v = src[y * factor * s.w + x * factor];
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) v = std::max(v, src[(y * factor + dy) * s.w + x * factor + dx]);
        dst[y * ow + x] = v;
      }
  }
  return out;
}

/// Average-pools each spatial plane by `factor` (H and W must be divisible).
template <class T>
Tensor<T> downsample_mean(const Tensor<T>& t, std::size_t factor) {
  const Shape s = t.shape();
  if (factor == 1) return t;
  if (s.h % factor != 0) throw DimensionError("H", "downsample_mean: height not divisible by factor");
  if (s.w % factor != 0) throw DimensionError("W", "downsample_mean: width not divisible by factor");
  const std::size_t oh = s.h / factor, ow = s.w / factor;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  const T scale = T(1) / T(factor * factor);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = t.data() + nc * s.plane();
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        T v = 0;
        for (std::size_t dy = 0; dy < factor; ++dy)
          for (std::size_t dx = 0; dx < factor; ++dx) v += src[(y * factor + dy) * s.w + x * factor + dx];
        dst[y * ow + x] = v * scale;
      }
  }
  return out;
}

}  // namespace cianet
