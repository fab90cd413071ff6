#pragma once

#include <algorithm>
#include <functional>
#include <vector>

#include <json.hpp>

#include "cianet/corpus.hpp"
#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/metrics.hpp"
#include "cianet/model.hpp"
#include "cianet/postprocess.hpp"

namespace cianet {

/// Inference window. Images larger than `tile` are covered by overlapping
/// windows `stride` apart and the probabilities averaged.
struct TileConfig {
  int tile = 64;
  int stride = 32;

  void validate() const {
    if (tile < 16 || tile % 16 != 0) throw ConfigError("infer.tile must be a positive multiple of 16");
    if (stride < 1 || stride > tile) throw ConfigError("infer.stride must lie in [1, tile]");
  }
};

inline void to_json(nlohmann::json& j, const TileConfig& t) { j = nlohmann::json{{"tile", t.tile}, {"stride", t.stride}}; }
inline void from_json(const nlohmann::json& j, TileConfig& t) {
  const TileConfig d;
  t.tile = j.value("tile", d.tile);
  t.stride = j.value("stride", d.stride);
}

struct ProbabilityMaps {
  FloatMap nuclei;
  FloatMap contour;
};

/// Maps a 1×3×h×w window (h, w multiples of 16) to its two probability maps.
using WindowPredictor = std::function<ProbabilityMaps(const Tensor<float>&)>;

namespace infer_detail {

inline std::vector<std::size_t> window_starts(std::size_t extent, std::size_t tile, std::size_t stride) {
  if (extent <= tile) return {0};
  std::vector<std::size_t> s;
  for (std::size_t p = 0; p + tile < extent; p += stride) s.push_back(p);
  s.push_back(extent - tile);
  return s;
}

inline std::size_t round_up16(std::size_t v) { return (v + 15) / 16 * 16; }

/// Window [y0, y0+h) × [x0, x0+w) of a 1×3×H×W tensor, edge-replicated up to
/// a multiple of 16 on each axis.
inline Tensor<float> window(const Tensor<float>& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const Shape s = img.shape();
  const std::size_t ph = round_up16(h), pw = round_up16(w);
  Tensor<float> out(Shape{1, 3, ph, pw});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < ph; ++y)
      for (std::size_t x = 0; x < pw; ++x)
        out.at(0, c, y, x) = img.at(0, c, std::min(y0 + std::min(y, h - 1), s.h - 1), std::min(x0 + std::min(x, w - 1), s.w - 1));
  return out;
}

}  // namespace infer_detail

/// Tile-and-stitch: every pixel gets the mean over the windows covering it.
inline ProbabilityMaps tiled_predict(const Tensor<float>& image, const TileConfig& tiles, const WindowPredictor& predict) {
  tiles.validate();
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw DimensionError("C", "tiled_predict expects one 3-channel image, got " + s.str());
  const std::size_t th = std::min<std::size_t>(tiles.tile, s.h), tw = std::min<std::size_t>(tiles.tile, s.w);
  std::vector<double> sum_n(s.h * s.w, 0.0), sum_c(s.h * s.w, 0.0), count(s.h * s.w, 0.0);
  for (std::size_t y0 : infer_detail::window_starts(s.h, th, std::size_t(tiles.stride)))
    for (std::size_t x0 : infer_detail::window_starts(s.w, tw, std::size_t(tiles.stride))) {
      const ProbabilityMaps p = predict(infer_detail::window(image, y0, x0, th, tw));
      for (std::size_t y = 0; y < th; ++y)
        for (std::size_t x = 0; x < tw; ++x) {
          const std::size_t i = (y0 + y) * s.w + x0 + x;
          sum_n[i] += p.nuclei(y, x);
          sum_c[i] += p.contour(y, x);
          count[i] += 1;
        }
    }
  ProbabilityMaps out{FloatMap(s.h, s.w), FloatMap(s.h, s.w)};
  for (std::size_t i = 0; i < count.size(); ++i) {
    out.nuclei[i] = float(sum_n[i] / count[i]);
    out.contour[i] = float(sum_c[i] / count[i]);
  }
  return out;
}

/// Eval-mode network as a window predictor.
inline WindowPredictor network_predictor(const CIANetParams<float>& params) {
  return [&params](const Tensor<float>& x) {
    const Prediction<float> p = predict(params, x);
    return ProbabilityMaps{tensor_plane(p.nuclei), tensor_plane(p.contour)};
  };
}

inline ProbabilityMaps predict_image(const CIANetParams<float>& params, const RgbImage& image, const TileConfig& tiles = {}) {
  return tiled_predict(image_to_tensor<float>(image), tiles, network_predictor(params));
}

/// Runs the network and post-processing over the given splits, handing each
/// result to `sink` (may be empty) and scoring it against the corpus labels.
inline MetricsReport evaluate_checkpoint(
    const CIANetParams<float>& params, const Corpus& corpus, const std::vector<Split>& splits,
    const PostConfig& post = {}, const TileConfig& tiles = {},
    const std::function<void(const CorpusEntry&, const ProbabilityMaps&, const LabelMap&)>& sink = {}) {
  post.validate();
  MetricsReport report;
  std::size_t selected = 0;
  for (const auto& e : corpus.manifest.samples) {
    if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) continue;
    ++selected;
    const ProbabilityMaps maps = predict_image(params, corpus.image(e), tiles);
    const LabelMap pred = extract_instances(maps.nuclei, maps.contour, post);
    if (sink) sink(e, maps, pred);
    report.add(std::filesystem::path(e.labels).filename().string(), e.split, corpus.labels(e), pred);
  }
  if (selected == 0) throw ConfigError("no corpus samples in the requested splits");
  return report;
}

}  // namespace cianet
