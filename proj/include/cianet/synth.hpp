#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/morphology.hpp"

namespace cianet {

/// FNV-1a over a byte string, as 16 hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Mixes a base seed with a stream tag into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Shape family and rendering of synthetic H&E-like tiles.
struct GeneratorConfig {
  int width = 64;
  int height = 64;
  int count_min = 4;
  int count_max = 7;
  double axis_min = 8.0;  // semi-major axis, pixels
  double axis_max = 12.0;
  double aspect_min = 0.7;  // semi-minor / semi-major
  double aspect_max = 1.0;
  /// Probability that a nucleus is placed touching an existing one.
  double cluster_probability = 0.3;
  /// Minimum free pixels between a non-clustered nucleus and its neighbors.
  int min_gap = 1;
  /// Keep every ellipse fully inside the tile.
  bool inside_only = true;
  int min_instance_area = 12;
  double noise_sigma = 5.0;
  double texture = 0.25;
  int max_attempts = 400;

  /// Elongated, denser family standing in for organs absent from training.
  GeneratorConfig unseen_variant() const {
    GeneratorConfig g = *this;
    g.aspect_min = 0.4;
    g.aspect_max = 0.7;
    g.axis_min = axis_min + 0.5;
    g.axis_max = axis_max + 1.0;
    g.cluster_probability = std::min(1.0, cluster_probability + 0.25);
    return g;
  }

  void validate() const {
    if (width < 32 || height < 32) throw ConfigError("generator image size must be at least 32");
    if (count_min < 0 || count_max < count_min) throw ConfigError("generator count range is invalid");
    if (!(axis_min > 0 && axis_max >= axis_min)) throw ConfigError("generator axis range is invalid");
    if (!(aspect_min > 0 && aspect_max <= 1.0 && aspect_max >= aspect_min))
      throw ConfigError("generator aspect range must lie in (0, 1]");
    if (!(cluster_probability >= 0 && cluster_probability <= 1))
      throw ConfigError("generator cluster_probability must lie in [0, 1]");
    if (min_gap < 0 || min_instance_area < 1 || max_attempts < 1) throw ConfigError("generator limits are invalid");
  }

  bool operator==(const GeneratorConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& g) {
  j = nlohmann::json{{"width", g.width},
                     {"height", g.height},
                     {"count_min", g.count_min},
                     {"count_max", g.count_max},
                     {"axis_min", g.axis_min},
                     {"axis_max", g.axis_max},
                     {"aspect_min", g.aspect_min},
                     {"aspect_max", g.aspect_max},
                     {"cluster_probability", g.cluster_probability},
                     {"min_gap", g.min_gap},
                     {"inside_only", g.inside_only},
                     {"min_instance_area", g.min_instance_area},
                     {"noise_sigma", g.noise_sigma},
                     {"texture", g.texture},
                     {"max_attempts", g.max_attempts}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& g) {
  const GeneratorConfig d;
  g.width = j.value("width", d.width);
  g.height = j.value("height", d.height);
  g.count_min = j.value("count_min", d.count_min);
  g.count_max = j.value("count_max", d.count_max);
  g.axis_min = j.value("axis_min", d.axis_min);
  g.axis_max = j.value("axis_max", d.axis_max);
  g.aspect_min = j.value("aspect_min", d.aspect_min);
  g.aspect_max = j.value("aspect_max", d.aspect_max);
  g.cluster_probability = j.value("cluster_probability", d.cluster_probability);
  g.min_gap = j.value("min_gap", d.min_gap);
  g.inside_only = j.value("inside_only", d.inside_only);
  g.min_instance_area = j.value("min_instance_area", d.min_instance_area);
  g.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  g.texture = j.value("texture", d.texture);
  g.max_attempts = j.value("max_attempts", d.max_attempts);
}

inline std::string config_digest(const GeneratorConfig& g) { return fnv1a_hex(nlohmann::json(g).dump()); }

struct SampleRecord {
  RgbImage image;
  LabelMap instances;
  std::uint64_t seed = 0;
  std::string config_digest;

  bool operator==(const SampleRecord&) const = default;
};

/// Annotation corruption applied to ground-truth instance maps.
struct NoiseConfig {
  double instance_flip_rate = 0.0;
  double spurious_rate = 0.0;
  int boundary_jitter = 0;

  void validate() const {
    if (!(instance_flip_rate >= 0 && instance_flip_rate <= 1)) throw ConfigError("noise.instance_flip_rate must lie in [0, 1]");
    if (!(spurious_rate >= 0 && spurious_rate <= 1)) throw ConfigError("noise.spurious_rate must lie in [0, 1]");
    if (boundary_jitter < 0) throw ConfigError("noise.boundary_jitter must be non-negative");
  }
  bool any() const { return instance_flip_rate > 0 || spurious_rate > 0 || boundary_jitter > 0; }
};

inline void to_json(nlohmann::json& j, const NoiseConfig& n) {
  j = nlohmann::json{{"instance_flip_rate", n.instance_flip_rate},
                     {"spurious_rate", n.spurious_rate},
                     {"boundary_jitter", n.boundary_jitter}};
}
inline void from_json(const nlohmann::json& j, NoiseConfig& n) {
  const NoiseConfig d;
  n.instance_flip_rate = j.value("instance_flip_rate", d.instance_flip_rate);
  n.spurious_rate = j.value("spurious_rate", d.spurious_rate);
  n.boundary_jitter = j.value("boundary_jitter", d.boundary_jitter);
}

namespace synth {

struct Ellipse {
  double cy, cx, a, b, theta;

  /// Normalized squared radius; ≤ 1 inside.
  double q(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(theta), s = std::sin(theta);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return (u * u) / (a * a) + (v * v) / (b * b);
  }
  bool contains(double y, double x) const { return q(y, x) <= 1.0; }
};

// Hematoxylin and eosin optical-density directions (RGB, unit norm).
inline constexpr std::array<double, 3> kHematoxylin{0.6500286, 0.7041306, 0.2860126};
inline constexpr std::array<double, 3> kEosin{0.0928038, 0.9541780, 0.2844109};

inline std::uint8_t od_to_intensity(double od) {
  const double v = 256.0 * std::pow(10.0, -od) - 1.0;
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

class Generator {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

  std::vector<Ellipse> place() {
    std::uniform_int_distribution<int> count_dist(cfg_.count_min, cfg_.count_max);
    const int count = count_dist(rng_);
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      std::vector<Ellipse> placed;
      bool ok = true;
      for (int i = 0; i < count && ok; ++i) ok = place_one(placed);
      if (!ok) continue;
      if (assignment_ok(placed)) return placed;
    }
    throw CapacityError("could not place " + std::to_string(count) + " nuclei in a " + std::to_string(cfg_.height) +
                        "x" + std::to_string(cfg_.width) + " tile after " + std::to_string(cfg_.max_attempts) +
                        " attempts");
  }

  /// Each pixel inside one or more ellipses goes to the nearest center.
  LabelMap rasterize(const std::vector<Ellipse>& es) const {
    LabelMap m(cfg_.height, cfg_.width, 0);
    for (int y = 0; y < cfg_.height; ++y)
      for (int x = 0; x < cfg_.width; ++x) {
        double best = 1e300;
        for (std::size_t i = 0; i < es.size(); ++i) {
          if (!es[i].contains(y, x)) continue;
          const double d = (y - es[i].cy) * (y - es[i].cy) + (x - es[i].cx) * (x - es[i].cx);
          if (d < best) {
            best = d;
            m(y, x) = static_cast<std::int32_t>(i + 1);
          }
        }
      }
    return m;
  }

  RgbImage render(const std::vector<Ellipse>& es, const LabelMap& labels) {
    const int h = cfg_.height, w = cfg_.width;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    // Low-frequency stroma variation from a few random plane waves.
    std::array<std::array<double, 4>, 3> waves{};
    for (auto& wv : waves) wv = {u01(rng_) * 0.2, u01(rng_) * 0.2, u01(rng_) * 6.28318, 0.5 + 0.5 * u01(rng_)};
    std::vector<double> stain_h(es.size()), stain_e(es.size());
    for (std::size_t i = 0; i < es.size(); ++i) {
      stain_h[i] = 0.55 + 0.35 * u01(rng_);
      stain_e[i] = 0.10 + 0.10 * u01(rng_);
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    RgbImage img(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double var = 0;
        for (const auto& wv : waves) var += wv[3] * std::sin(wv[0] * x + wv[1] * y + wv[2]);
        double od_h = 0.06 + 0.015 * var;
        double od_e = 0.32 + 0.05 * var;
        // Partial-volume ink: 1 well inside, 0 well outside, ~1 px ramp.
        double ink = 0;
        std::size_t owner = 0;
        for (std::size_t i = 0; i < es.size(); ++i) {
          const double s = (std::sqrt(es[i].q(y, x)) - 1.0) * es[i].b;
          const double k = std::clamp(0.5 - s, 0.0, 1.0);
          if (k > ink) {
            ink = k;
            owner = i;
          }
        }
        if (labels(y, x) > 0) {
          owner = static_cast<std::size_t>(labels(y, x) - 1);
          ink = std::max(ink, 0.5);
        }
        if (ink > 0) {
          const double grain = 1.0 + cfg_.texture * (2.0 * u01(rng_) - 1.0);
          od_h = (1 - ink) * od_h + ink * stain_h[owner] * grain;
          od_e = (1 - ink) * od_e + ink * stain_e[owner];
        }
        for (int c = 0; c < 3; ++c) {
          const double od = od_h * kHematoxylin[c] + od_e * kEosin[c];
          const double v = 256.0 * std::pow(10.0, -od) - 1.0 + cfg_.noise_sigma * noise(rng_);
          img(y, x, c) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
      }
    return img;
  }

 private:
  Ellipse random_shape() {
    std::uniform_real_distribution<double> axis(cfg_.axis_min, cfg_.axis_max);
    std::uniform_real_distribution<double> aspect(cfg_.aspect_min, cfg_.aspect_max);
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    Ellipse e{};
    e.a = axis(rng_);
    e.b = std::max(1.0, e.a * aspect(rng_));
    e.theta = angle(rng_);
    return e;
  }

  bool inside(const Ellipse& e) const {
    if (!cfg_.inside_only) return e.cy >= 0 && e.cy < cfg_.height && e.cx >= 0 && e.cx < cfg_.width;
    // Axis-aligned half extents of a rotated ellipse.
    const double c = std::cos(e.theta), s = std::sin(e.theta);
    const double hx = std::sqrt(e.a * e.a * c * c + e.b * e.b * s * s);
    const double hy = std::sqrt(e.a * e.a * s * s + e.b * e.b * c * c);
    return e.cx - hx >= 0.5 && e.cx + hx <= cfg_.width - 1.5 && e.cy - hy >= 0.5 && e.cy + hy <= cfg_.height - 1.5;
  }

  bool clear_of(const Ellipse& e, const std::vector<Ellipse>& placed, int gap) const {
    const double reach = e.a + gap + 1;
    const int y0 = std::max(0, int(std::floor(e.cy - reach))), y1 = std::min(cfg_.height - 1, int(std::ceil(e.cy + reach)));
    const int x0 = std::max(0, int(std::floor(e.cx - reach))), x1 = std::min(cfg_.width - 1, int(std::ceil(e.cx + reach)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        if (!e.contains(y, x)) continue;
        for (const auto& o : placed)
          for (int dy = -gap; dy <= gap; ++dy)
            for (int dx = -gap; dx <= gap; ++dx)
              if (o.contains(y + dy, x + dx)) return false;
      }
    return true;
  }

  bool place_one(std::vector<Ellipse>& placed) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
      Ellipse e = random_shape();
      const bool cluster = !placed.empty() && u01(rng_) < cfg_.cluster_probability;
      if (cluster) {
        std::uniform_int_distribution<std::size_t> pick(0, placed.size() - 1);
        const Ellipse& anchor = placed[pick(rng_)];
        const double phi = u01(rng_) * 2.0 * std::numbers::pi;
        const double dist = (0.8 + 0.2 * u01(rng_)) * (anchor.b + e.b);
        e.cy = anchor.cy + dist * std::sin(phi);
        e.cx = anchor.cx + dist * std::cos(phi);
      } else {
        e.cy = u01(rng_) * cfg_.height;
        e.cx = u01(rng_) * cfg_.width;
      }
      if (!inside(e)) continue;
      bool ok = true;
      for (const auto& o : placed) {
        const double d = std::hypot(e.cy - o.cy, e.cx - o.cx);
        if (d < 0.8 * (o.b + e.b)) ok = false;
      }
      if (!ok) continue;
      if (!cluster && !clear_of(e, placed, cfg_.min_gap)) continue;
      placed.push_back(e);
      return true;
    }
    return false;
  }

  bool assignment_ok(const std::vector<Ellipse>& es) const {
    const LabelMap m = rasterize(es);
    std::vector<int> area(es.size() + 1, 0);
    for (auto l : m.vec()) ++area[l];
    for (std::size_t i = 1; i < area.size(); ++i)
      if (area[i] < cfg_.min_instance_area) return false;
    return true;
  }

  GeneratorConfig cfg_;
  std::mt19937_64 rng_;
};

}  // namespace synth

/// Renders one synthetic tile and its instance map; a pure function of
/// (config, seed).
inline SampleRecord generate_sample(const GeneratorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  synth::Generator gen(cfg, seed);
  const auto ellipses = gen.place();
  SampleRecord rec;
  rec.instances = gen.rasterize(ellipses);
  rec.image = gen.render(ellipses, rec.instances);
  rec.seed = seed;
  rec.config_digest = config_digest(cfg);
  return rec;
}

/// Deletes, adds, and reshapes instances to mimic annotation errors, then
/// renumbers labels 1..n.
inline LabelMap inject_label_noise(const LabelMap& instances, const NoiseConfig& noise, std::uint64_t seed) {
  noise.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t h = instances.height(), w = instances.width();
  LabelMap out = instances;
  const std::int32_t n = max_label(instances);

  std::vector<bool> keep(static_cast<std::size_t>(n) + 1, true);
  for (std::int32_t l = 1; l <= n; ++l) keep[l] = !(u01(rng) < noise.instance_flip_rate);
  for (auto& v : out.vec())
    if (v > 0 && !keep[v]) v = 0;

  if (noise.boundary_jitter > 0) {
    std::uniform_int_distribution<int> jitter(-noise.boundary_jitter, noise.boundary_jitter);
    std::vector<int> radius(static_cast<std::size_t>(n) + 1, 0);
    for (std::int32_t l = 1; l <= n; ++l) radius[l] = jitter(rng);
    const auto boxes = morph::label_boxes(out);
    for (std::int32_t l = 1; l < static_cast<std::int32_t>(boxes.size()); ++l) {
      const int r = radius[l];
      if (boxes[l].empty() || r == 0) continue;
      const auto win = morph::expand(boxes[l], std::abs(r), h, w);
      const Mask support = morph::crop_support(out, l, win);
      if (r > 0) {
        const Mask grown = morph::dilate(support, r);
        for (std::size_t y = 0; y < grown.height(); ++y)
          for (std::size_t x = 0; x < grown.width(); ++x)
            if (grown(y, x) && out(win.y0 + y, win.x0 + x) == 0) out(win.y0 + y, win.x0 + x) = l;
      } else {
        const Mask core = morph::erode(support, -r);
        bool any = false;
        for (auto v : core.vec()) any = any || v;
        if (!any) continue;  // never erase an instance outright
        for (std::size_t y = 0; y < core.height(); ++y)
          for (std::size_t x = 0; x < core.width(); ++x)
            if (support(y, x) && !core(y, x)) out(win.y0 + y, win.x0 + x) = 0;
      }
    }
  }

  if (noise.spurious_rate > 0) {
    std::poisson_distribution<int> count(noise.spurious_rate);
    const int k = count(rng);
    std::int32_t next = n;
    std::uniform_real_distribution<double> axis(2.0, 4.0), angle(0.0, std::numbers::pi);
    for (int i = 0; i < k; ++i) {
      synth::Ellipse e{u01(rng) * double(h), u01(rng) * double(w), axis(rng), 0, angle(rng)};
      e.b = std::max(1.5, e.a * (0.6 + 0.4 * u01(rng)));
      ++next;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          if (out(y, x) == 0 && e.contains(double(y), double(x))) out(y, x) = next;
    }
  }
  return relabel_contiguous(out);
}

}  // namespace cianet
