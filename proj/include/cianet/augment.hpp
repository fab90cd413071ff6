#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/targets.hpp"

namespace cianet {

struct AugmentConfig {
  int crop_size = 0;  // 0 keeps the full tile
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double elastic_alpha = 0.0;
  double elastic_sigma = 4.0;
  double brightness = 0.0;  // factor drawn from [1-b, 1+b]
  double contrast = 0.0;
  double saturation = 0.0;

  static AugmentConfig identity() { return {}; }
  static AugmentConfig training() { return {0, true, true, 8.0, 4.0, 0.1, 0.1, 0.1}; }

  void validate() const {
    if (crop_size < 0) throw ConfigError("augment.crop_size must be non-negative");
    if (elastic_alpha < 0 || !(elastic_sigma > 0)) throw ConfigError("augment elastic parameters are invalid");
    if (brightness < 0 || brightness >= 1 || contrast < 0 || contrast >= 1 || saturation < 0 || saturation >= 1)
      throw ConfigError("augment color jitter bounds must lie in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const AugmentConfig& a) {
  j = nlohmann::json{{"crop_size", a.crop_size},         {"flip_horizontal", a.flip_horizontal},
                     {"flip_vertical", a.flip_vertical}, {"elastic_alpha", a.elastic_alpha},
                     {"elastic_sigma", a.elastic_sigma}, {"brightness", a.brightness},
                     {"contrast", a.contrast},           {"saturation", a.saturation}};
}
inline void from_json(const nlohmann::json& j, AugmentConfig& a) {
  const AugmentConfig d = AugmentConfig::training();
  a.crop_size = j.value("crop_size", d.crop_size);
  a.flip_horizontal = j.value("flip_horizontal", d.flip_horizontal);
  a.flip_vertical = j.value("flip_vertical", d.flip_vertical);
  a.elastic_alpha = j.value("elastic_alpha", d.elastic_alpha);
  a.elastic_sigma = j.value("elastic_sigma", d.elastic_sigma);
  a.brightness = j.value("brightness", d.brightness);
  a.contrast = j.value("contrast", d.contrast);
  a.saturation = j.value("saturation", d.saturation);
}

/// An image with every map that must follow it through geometric ops.
struct AugmentedSample {
  RgbImage image;
  LabelMap instances;
  TargetPair targets;
};

namespace aug_detail {

// Source coordinate for each output pixel; geometric ops compose on this map.
struct Warp {
  std::size_t h, w;
  std::vector<double> sy, sx;
};

inline Warp identity_warp(std::size_t h, std::size_t w, std::size_t y0, std::size_t x0) {
  Warp m{h, w, std::vector<double>(h * w), std::vector<double>(h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      m.sy[y * w + x] = double(y0 + y);
      m.sx[y * w + x] = double(x0 + x);
    }
  return m;
}

inline std::vector<double> gaussian_blur(const std::vector<double>& f, std::size_t h, std::size_t w, double sigma) {
  const int r = std::max(1, int(std::ceil(3 * sigma)));
  std::vector<double> k(2 * r + 1);
  double ks = 0;
  for (int i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= ks;
  auto clampi = [](long v, long n) { return std::clamp(v, 0L, n - 1); };
  std::vector<double> tmp(h * w), out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * f[y * w + clampi(long(x) + i, long(w))];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (int i = -r; i <= r; ++i) s += k[i + r] * tmp[clampi(long(y) + i, long(h)) * w + x];
      out[y * w + x] = s;
    }
  return out;
}

template <class V>
Grid<V> sample_nearest(const Grid<V>& src, const Warp& m) {
  Grid<V> out(m.h, m.w);
  for (std::size_t i = 0; i < m.h * m.w; ++i) {
    const long y = std::clamp(std::lround(m.sy[i]), 0L, long(src.height()) - 1);
    const long x = std::clamp(std::lround(m.sx[i]), 0L, long(src.width()) - 1);
    out[i] = src(y, x);
  }
  return out;
}

inline RgbImage sample_bilinear(const RgbImage& src, const Warp& m) {
  RgbImage out(m.h, m.w);
  const long H = long(src.height()), W = long(src.width());
  for (std::size_t i = 0; i < m.h * m.w; ++i) {
    const double sy = std::clamp(m.sy[i], 0.0, double(H - 1)), sx = std::clamp(m.sx[i], 0.0, double(W - 1));
    const long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
    const long y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = sy - y0, fx = sx - x0;
    for (int c = 0; c < 3; ++c) {
      const double v = (1 - fy) * ((1 - fx) * src(y0, x0, c) + fx * src(y0, x1, c)) +
                       fy * ((1 - fx) * src(y1, x0, c) + fx * src(y1, x1, c));
      out(i / m.w, i % m.w, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

}  // namespace aug_detail

/// Random crop, flips, elastic deformation and color jitter. Geometric ops
/// are applied through one shared warp: bilinear for the image,
/// nearest-neighbor for the instance map and both target masks.
inline AugmentedSample augment(const RgbImage& image, const LabelMap& instances, const TargetPair& targets,
                               const AugmentConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  require_same_extent(image, instances, "augment");
  require_same_extent(instances, targets.nuclei, "augment");
  require_same_extent(instances, targets.contour, "augment");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t H = image.height(), W = image.width();
  const std::size_t ch = cfg.crop_size > 0 ? std::size_t(cfg.crop_size) : H;
  const std::size_t cw = cfg.crop_size > 0 ? std::size_t(cfg.crop_size) : W;
  if (ch > H || cw > W) throw DimensionError("crop", "crop size exceeds image size");

  const std::size_t y0 = ch < H ? std::uniform_int_distribution<std::size_t>(0, H - ch)(rng) : 0;
  const std::size_t x0 = cw < W ? std::uniform_int_distribution<std::size_t>(0, W - cw)(rng) : 0;
  const bool fh = u01(rng) < 0.5;
  const bool fv = u01(rng) < 0.5;

  auto warp = aug_detail::identity_warp(ch, cw, y0, x0);
  auto reflect = [&](bool horizontal) {
    auto copy = warp;
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) {
        const std::size_t src = horizontal ? y * cw + (cw - 1 - x) : (ch - 1 - y) * cw + x;
        warp.sy[y * cw + x] = copy.sy[src];
        warp.sx[y * cw + x] = copy.sx[src];
      }
  };
  if (cfg.flip_horizontal && fh) reflect(true);
  if (cfg.flip_vertical && fv) reflect(false);

  if (cfg.elastic_alpha > 0) {
    std::vector<double> dy(ch * cw), dx(ch * cw);
    for (auto& v : dy) v = 2 * u01(rng) - 1;
    for (auto& v : dx) v = 2 * u01(rng) - 1;
    dy = aug_detail::gaussian_blur(dy, ch, cw, cfg.elastic_sigma);
    dx = aug_detail::gaussian_blur(dx, ch, cw, cfg.elastic_sigma);
    // Displaced lookups are taken in output space and mapped through the
    // current warp by bilinear interpolation of the coordinate fields.
    auto copy = warp;
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x) {
        const double py = std::clamp(double(y) + cfg.elastic_alpha * dy[y * cw + x], 0.0, double(ch - 1));
        const double px = std::clamp(double(x) + cfg.elastic_alpha * dx[y * cw + x], 0.0, double(cw - 1));
        const std::size_t iy = std::size_t(py), ix = std::size_t(px);
        const std::size_t iy1 = std::min(iy + 1, ch - 1), ix1 = std::min(ix + 1, cw - 1);
        const double fy = py - iy, fx = px - ix;
        auto lerp = [&](const std::vector<double>& f) {
          return (1 - fy) * ((1 - fx) * f[iy * cw + ix] + fx * f[iy * cw + ix1]) +
                 fy * ((1 - fx) * f[iy1 * cw + ix] + fx * f[iy1 * cw + ix1]);
        };
        warp.sy[y * cw + x] = lerp(copy.sy);
        warp.sx[y * cw + x] = lerp(copy.sx);
      }
  }

  AugmentedSample out{aug_detail::sample_bilinear(image, warp), aug_detail::sample_nearest(instances, warp),
                      {aug_detail::sample_nearest(targets.nuclei, warp), aug_detail::sample_nearest(targets.contour, warp)}};

  if (cfg.brightness > 0 || cfg.contrast > 0 || cfg.saturation > 0) {
    const double b = 1 + cfg.brightness * (2 * u01(rng) - 1);
    const double c = 1 + cfg.contrast * (2 * u01(rng) - 1);
    const double s = 1 + cfg.saturation * (2 * u01(rng) - 1);
    auto& px = out.image.vec();
    const std::size_t n = px.size() / 3;
    double mean_gray = 0;
    for (std::size_t i = 0; i < n; ++i) mean_gray += 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
    mean_gray = b * mean_gray / double(n);
    for (std::size_t i = 0; i < n; ++i) {
      double rgb[3];
      for (int k = 0; k < 3; ++k) rgb[k] = b * px[3 * i + k];
      const double gray = 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
      for (int k = 0; k < 3; ++k) {
        double v = gray + s * (rgb[k] - gray);
        v = mean_gray + c * (v - mean_gray);
        px[3 * i + k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

}  // namespace cianet
