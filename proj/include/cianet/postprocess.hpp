#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"

namespace cianet {

/// Which pixels dilation may not claim.
enum class Barrier {
  foreground,  // p_nuclei + p_contour < 0.5
  nuclei,      // p_nuclei < 0.5
};

inline std::string to_string(Barrier b) { return b == Barrier::foreground ? "foreground" : "nuclei"; }
inline Barrier parse_barrier(const std::string& s) {
  if (s == "foreground") return Barrier::foreground;
  if (s == "nuclei") return Barrier::nuclei;
  throw ConfigError("unknown post.barrier '" + s + "'");
}

struct PostConfig {
  double threshold = 0.3;
  int connectivity = 8;
  int min_area = 5;
  int post_dilation_radius = 2;
  bool dilation_enabled = true;
  Barrier barrier = Barrier::foreground;

  void validate() const {
    if (!(threshold > -1 && threshold < 1)) throw ConfigError("post.threshold must lie in (-1, 1)");
    if (connectivity != 4 && connectivity != 8) throw ConfigError("post.connectivity must be 4 or 8");
    if (min_area < 0) throw ConfigError("post.min_area must be non-negative");
    if (post_dilation_radius < 0) throw ConfigError("post.post_dilation_radius must be non-negative");
  }
};

inline void to_json(nlohmann::json& j, const PostConfig& p) {
  j = nlohmann::json{{"threshold", p.threshold},
                     {"connectivity", p.connectivity},
                     {"min_area", p.min_area},
                     {"post_dilation_radius", p.post_dilation_radius},
                     {"dilation_enabled", p.dilation_enabled},
                     {"barrier", to_string(p.barrier)}};
}
inline void from_json(const nlohmann::json& j, PostConfig& p) {
  const PostConfig d;
  p.threshold = j.value("threshold", d.threshold);
  p.connectivity = j.value("connectivity", d.connectivity);
  p.min_area = j.value("min_area", d.min_area);
  p.post_dilation_radius = j.value("post_dilation_radius", d.post_dilation_radius);
  p.dilation_enabled = j.value("dilation_enabled", d.dilation_enabled);
  p.barrier = parse_barrier(j.value("barrier", to_string(d.barrier)));
}

/// Labels maximal connected regions 1..n in raster-scan discovery order.
inline LabelMap connected_components(const Mask& binary, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
  const long H = long(binary.height()), W = long(binary.width());
  LabelMap out(binary.height(), binary.width(), 0);
  std::vector<std::size_t> queue;
  std::int32_t next = 0;
  for (long s = 0; s < H * W; ++s) {
    if (!binary[s] || out[s]) continue;
    out[s] = ++next;
    queue.assign(1, std::size_t(s));
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const long y = long(queue[head]) / W, x = long(queue[head]) % W;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const std::size_t n = std::size_t(ny * W + nx);
          if (binary[n] && !out[n]) {
            out[n] = next;
            queue.push_back(n);
          }
        }
    }
  }
  return out;
}

/// Grows every instance by up to `radius` Chebyshev steps, one ring at a
/// time. A pixel reached in the same ring by several instances goes to the
/// lowest label. Barrier pixels and already-labeled pixels are never claimed.
inline LabelMap dilate_instances(const LabelMap& instances, int radius, const Mask& barrier) {
  if (radius < 0) throw DomainError("dilation radius must be non-negative");
  require_same_extent(instances, barrier, "dilate_instances");
  const long H = long(instances.height()), W = long(instances.width());
  LabelMap cur = instances;
  std::vector<std::size_t> frontier;
  for (long i = 0; i < H * W; ++i)
    if (cur[i] > 0) frontier.push_back(std::size_t(i));
  for (int step = 0; step < radius && !frontier.empty(); ++step) {
    LabelMap next = cur;
    std::vector<std::size_t> claimed;
    for (std::size_t f : frontier) {
      const long y = long(f) / W, x = long(f) % W;
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
          const std::size_t n = std::size_t(ny * W + nx);
          if (cur[n] != 0 || barrier[n]) continue;
          if (next[n] == 0) {
            next[n] = cur[f];
            claimed.push_back(n);
          } else if (cur[f] < next[n]) {
            next[n] = cur[f];
          }
        }
    }
    cur = std::move(next);
    frontier = std::move(claimed);
  }
  return cur;
}

/// Instance map from nuclei and contour probabilities: threshold the
/// difference, label components, drop small ones, then grow them back.
inline LabelMap extract_instances(const FloatMap& p_nuclei, const FloatMap& p_contour, const PostConfig& cfg = {}) {
  cfg.validate();
  require_same_extent(p_nuclei, p_contour, "extract_instances");
  Mask marker(p_nuclei.height(), p_nuclei.width(), 0);
  for (std::size_t i = 0; i < marker.size(); ++i)
    marker[i] = double(p_nuclei[i]) - double(p_contour[i]) > cfg.threshold ? 1 : 0;
  LabelMap cc = connected_components(marker, cfg.connectivity);
  std::vector<std::int64_t> area(std::size_t(max_label(cc)) + 1, 0);
  for (auto l : cc.vec()) ++area[l];
  for (auto& l : cc.vec())
    if (l > 0 && area[l] < cfg.min_area) l = 0;
  cc = relabel_contiguous(cc);
  if (!cfg.dilation_enabled || cfg.post_dilation_radius == 0) return cc;
  Mask barrier(p_nuclei.height(), p_nuclei.width(), 0);
  for (std::size_t i = 0; i < barrier.size(); ++i) {
    const double fg = cfg.barrier == Barrier::foreground ? double(p_nuclei[i]) + double(p_contour[i]) : double(p_nuclei[i]);
    barrier[i] = fg < 0.5 ? 1 : 0;
  }
  return dilate_instances(cc, cfg.post_dilation_radius, barrier);
}

}  // namespace cianet
