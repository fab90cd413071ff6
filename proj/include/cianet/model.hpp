#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/losses.hpp"
#include "cianet/ops.hpp"
#include "cianet/tape.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

/// Architecture hyperparameters. Four dense modules, each followed by a
/// transition except the last.
struct CIANetConfig {
  int growth_rate = 8;
  std::vector<int> block_sizes{2, 2, 2, 2};
  int stem_channels = 16;
  double compression = 0.5;
  int decoder_width = 32;
  bool use_iam = true;
  int input_channels = 3;

  static CIANetConfig toy() { return {}; }
  static CIANetConfig full_scale() { return {32, {6, 12, 24, 16}, 64, 0.5, 128, true, 3}; }

  void validate() const {
    if (block_sizes.size() != 4)
      throw ConfigError("model.block_sizes must list exactly 4 dense modules, got " +
                        std::to_string(block_sizes.size()));
    for (int b : block_sizes)
      if (b < 0) throw ConfigError("model.block_sizes entries must be non-negative");
    if (growth_rate < 1) throw ConfigError("model.growth_rate must be positive");
    if (stem_channels < 1) throw ConfigError("model.stem_channels must be positive");
    if (!(compression > 0.0 && compression <= 1.0)) throw ConfigError("model.compression must lie in (0, 1]");
    if (decoder_width < 1) throw ConfigError("model.decoder_width must be positive");
    if (input_channels != 3) throw ConfigError("model.input_channels must be 3");
    int c = stem_channels;
    for (int b = 0; b < 3; ++b) {
      c += block_sizes[b] * growth_rate;
      c = static_cast<int>(std::floor(compression * c));
      if (c < 1) throw ConfigError("model.compression leaves a transition with no channels");
    }
  }

  bool operator==(const CIANetConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const CIANetConfig& c) {
  j = nlohmann::json{{"growth_rate", c.growth_rate},       {"block_sizes", c.block_sizes},
                     {"stem_channels", c.stem_channels},   {"compression", c.compression},
                     {"decoder_width", c.decoder_width},   {"use_iam", c.use_iam},
                     {"input_channels", c.input_channels}};
}

inline void from_json(const nlohmann::json& j, CIANetConfig& c) {
  CIANetConfig d;
  c.growth_rate = j.value("growth_rate", d.growth_rate);
  c.block_sizes = j.value("block_sizes", d.block_sizes);
  c.stem_channels = j.value("stem_channels", d.stem_channels);
  c.compression = j.value("compression", d.compression);
  c.decoder_width = j.value("decoder_width", d.decoder_width);
  c.use_iam = j.value("use_iam", d.use_iam);
  c.input_channels = j.value("input_channels", d.input_channels);
}

/// Named tensors in insertion order. Trainable entries are optimized;
/// batch-norm running statistics live in `stats`.
template <class T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> t) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(t));
  }
  void add_stats(const std::string& name, std::size_t channels) {
    if (stats_.count(name)) throw ContractError("duplicate batch-norm " + name);
    stats_order_.push_back(name);
    stats_.emplace(name, RunningStats<T>(channels));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return it->second;
  }
  Tensor<T>& get(const std::string& name) { return tensors_[index(name)]; }
  const Tensor<T>& get(const std::string& name) const { return tensors_[index(name)]; }

  RunningStats<T>& stats(const std::string& name) { return stats_.at(name); }
  const RunningStats<T>& stats(const std::string& name) const { return stats_.at(name); }

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor<T>& at(std::size_t i) { return tensors_[i]; }
  const Tensor<T>& at(std::size_t i) const { return tensors_[i]; }
  const std::vector<std::string>& stats_names() const { return stats_order_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.numel();
    return n;
  }

  bool operator==(const ParamStore& o) const {
    if (names_ != o.names_ || tensors_ != o.tensors_ || stats_order_ != o.stats_order_) return false;
    for (const auto& [k, v] : stats_) {
      const auto& w = o.stats_.at(k);
      if (!(v.mean == w.mean) || !(v.var == w.var)) return false;
    }
    return true;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::string> stats_order_;
  std::map<std::string, RunningStats<T>> stats_;
};

template <class T>
struct CIANetParams {
  CIANetConfig config;
  ParamStore<T> store;
};

/// Output channel count of each dense module for a config.
inline std::array<int, 4> encoder_channels(const CIANetConfig& cfg) {
  std::array<int, 4> out{};
  int c = cfg.stem_channels;
  for (int b = 0; b < 4; ++b) {
    c += cfg.block_sizes[b] * cfg.growth_rate;
    out[b] = c;
    if (b < 3) c = static_cast<int>(std::floor(cfg.compression * c));
  }
  return out;
}

inline constexpr std::array<const char*, 2> kBranches{"nuc", "con"};
inline constexpr int kDecoderLevels = 3;

namespace detail {

template <class T>
class ParamBuilder {
 public:
  ParamBuilder(ParamStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  void conv(const std::string& name, int out_c, int in_c, int k, bool bias) {
    Tensor<T> w(Shape{std::size_t(out_c), std::size_t(in_c), std::size_t(k), std::size_t(k)});
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(in_c * k * k)));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = T(dist(rng_));
    store_.add(name + ".w", std::move(w));
    if (bias) store_.add(name + ".b", Tensor<T>(Shape{1, std::size_t(out_c), 1, 1}, T(0)));
  }
  void bn(const std::string& name, int c) {
    store_.add(name + ".scale", Tensor<T>(Shape{1, std::size_t(c), 1, 1}, T(1)));
    store_.add(name + ".shift", Tensor<T>(Shape{1, std::size_t(c), 1, 1}, T(0)));
    store_.add_stats(name, std::size_t(c));
  }

 private:
  ParamStore<T>& store_;
  std::mt19937_64 rng_;
};

inline std::string layer_name(int block, int layer) {
  return "db" + std::to_string(block + 1) + ".l" + std::to_string(layer);
}

}  // namespace detail

/// Allocates every parameter of the network. Convolution weights are
/// He-normal, biases and BN shifts zero, BN scales one.
template <class T = float>
CIANetParams<T> build(const CIANetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CIANetParams<T> params{cfg, {}};
  detail::ParamBuilder<T> b(params.store, seed);
  const int k = cfg.growth_rate;
  b.conv("stem.conv", cfg.stem_channels, cfg.input_channels, 7, false);
  b.bn("stem.bn", cfg.stem_channels);
  int c = cfg.stem_channels;
  for (int blk = 0; blk < 4; ++blk) {
    for (int l = 0; l < cfg.block_sizes[blk]; ++l) {
      const std::string n = detail::layer_name(blk, l);
      b.bn(n + ".bn1", c);
      b.conv(n + ".conv1", 4 * k, c, 1, false);
      b.bn(n + ".bn2", 4 * k);
      b.conv(n + ".conv2", k, 4 * k, 3, false);
      c += k;
    }
    if (blk < 3) {
      const std::string n = "tm" + std::to_string(blk + 1);
      const int out = static_cast<int>(std::floor(cfg.compression * c));
      b.bn(n + ".bn", c);
      b.conv(n + ".conv", out, c, 1, false);
      c = out;
    }
  }
  const auto enc = encoder_channels(cfg);
  const int d = cfg.decoder_width;
  for (const char* br : kBranches) {
    const std::string p = std::string("dec.") + br;
    b.conv(p + ".top", d, enc[3], 3, true);
    for (int lvl = 1; lvl <= kDecoderLevels; ++lvl) {
      const std::string s = std::to_string(lvl);
      b.conv(p + ".lat" + s, d, enc[3 - lvl], 1, true);
      b.conv(p + ".smooth" + s, d, d, 3, true);
      b.conv(p + ".cls" + s, 1, d, 1, true);
      // The finest level's aggregated maps would feed no further level.
      if (cfg.use_iam && lvl < kDecoderLevels) b.conv(p + ".iam" + s, d, 2 * d, 3, true);
    }
  }
  return params;
}

/// Probability maps produced by one forward pass. `aux` holds the decoder
/// levels at 1/8, 1/4 and 1/2 of the input; `final` is the 1/2 level
/// upsampled to full resolution.
struct ForwardOutputs {
  std::array<LevelPrediction, kDecoderLevels> aux;
  LevelPrediction final;

  /// Supervised levels, coarsest first, matching LossConfig::level_weights.
  std::vector<LevelPrediction> levels() const { return {aux[0], aux[1], aux[2], final}; }
};

/// Leaf vars for every parameter of a store, bound to one tape.
template <class T>
class BoundParams {
 public:
  BoundParams(Tape<T>& tape, const ParamStore<T>& store, bool requires_grad) : vars_(store.size()) {
    for (std::size_t i = 0; i < store.size(); ++i) {
      vars_[i] = tape.leaf(store.at(i), requires_grad);
      index_.emplace(store.name(i), i);
    }
  }
  Var operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("parameter not bound: " + name);
    return vars_[it->second];
  }
  Var at(std::size_t i) const { return vars_[i]; }
  std::size_t size() const { return vars_.size(); }

 private:
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Network forward over a bound parameter set. Running statistics are
/// updated only when `stats_update` is non-null and the mode is train.
template <class T>
class CIANet {
 public:
  CIANet(Tape<T>& tape, const CIANetParams<T>& params, const BoundParams<T>& vars, Mode mode,
         ParamStore<T>* stats_update = nullptr)
      : tape_(tape), params_(params), vars_(vars), mode_(mode), stats_update_(stats_update) {}

  Var conv(Var x, const std::string& name, std::size_t stride, std::size_t pad) const {
    const std::optional<Var> bias =
        params_.store.contains(name + ".b") ? std::optional<Var>(vars_[name + ".b"]) : std::nullopt;
    return conv2d(tape_, x, vars_[name + ".w"], bias, stride, pad);
  }

  Var bn(Var x, const std::string& name) const {
    if (stats_update_)
      return batch_norm(tape_, x, vars_[name + ".scale"], vars_[name + ".shift"], stats_update_->stats(name), mode_);
    return batch_norm(tape_, x, vars_[name + ".scale"], vars_[name + ".shift"], params_.store.stats(name), mode_);
  }

  /// BN→ReLU→1×1 conv (4k)→BN→ReLU→3×3 conv (k).
  Var bottleneck(Var x, const std::string& name) const {
    Var h = relu(tape_, bn(x, name + ".bn1"));
    h = conv(h, name + ".conv1", 1, 0);
    h = relu(tape_, bn(h, name + ".bn2"));
    return conv(h, name + ".conv2", 1, 1);
  }

  Var dense_module(Var x, int block) const {
    for (int l = 0; l < params_.config.block_sizes[block]; ++l) {
      const Var y = bottleneck(x, detail::layer_name(block, l));
      x = concat_channels(tape_, {x, y});
    }
    return x;
  }

  /// BN→ReLU→1×1 conv (compression)→2×2 average pool.
  Var transition(Var x, int index) const {
    const std::string n = "tm" + std::to_string(index);
    const Shape s = tape_.shape(x);
    if (s.h % 2 != 0) throw DimensionError("H", "transition needs even height");
    if (s.w % 2 != 0) throw DimensionError("W", "transition needs even width");
    Var h = relu(tape_, bn(x, n + ".bn"));
    h = conv(h, n + ".conv", 1, 0);
    return avg_pool2d(tape_, h);
  }

  /// D = upsample2x(M_prev) + lateral 1×1 conv of the encoder feature.
  Var lateral_merge(Var encoder_feat, Var upper, const std::string& lat_name) const {
    const Var up = bilinear_upsample2x(tape_, upper);
    const Var lat = conv(encoder_feat, lat_name, 1, 0);
    const Shape a = tape_.shape(up), b = tape_.shape(lat);
    if (a.h != b.h) throw DimensionError("H", "lateral merge: upsampled " + a.str() + " vs encoder " + b.str());
    if (a.w != b.w) throw DimensionError("W", "lateral merge: upsampled " + a.str() + " vs encoder " + b.str());
    return add(tape_, up, lat);
  }

  struct IamOutputs {
    Var f_nuclei, f_contour, m_nuclei, m_contour;
  };

  /// Smooth 3×3 convs per branch; with aggregation enabled the two smoothed
  /// maps are concatenated and each branch's next-level map is a 3×3 conv
  /// (then ReLU) of the concatenation. Without it, M = F per branch.
  IamOutputs iam(Var d_nuclei, Var d_contour, int level, bool produce_next) const {
    detail::require_same_shape(tape_.shape(d_nuclei), tape_.shape(d_contour), "iam");
    const std::string s = std::to_string(level);
    IamOutputs o{};
    o.f_nuclei = conv(d_nuclei, "dec.nuc.smooth" + s, 1, 1);
    o.f_contour = conv(d_contour, "dec.con.smooth" + s, 1, 1);
    if (!produce_next) return o;
    if (!params_.config.use_iam) {
      o.m_nuclei = o.f_nuclei;
      o.m_contour = o.f_contour;
      return o;
    }
    const Var cat = concat_channels(tape_, {o.f_nuclei, o.f_contour});
    o.m_nuclei = relu(tape_, conv(cat, "dec.nuc.iam" + s, 1, 1));
    o.m_contour = relu(tape_, conv(cat, "dec.con.iam" + s, 1, 1));
    return o;
  }

  Var classifier(Var f, const std::string& name) const { return sigmoid(tape_, conv(f, name, 1, 0)); }

  ForwardOutputs forward(Var input) const {
    const Shape s = tape_.shape(input);
    if (s.c != std::size_t(params_.config.input_channels))
      throw DimensionError("C", "network input must have " + std::to_string(params_.config.input_channels) +
                                    " channels, got " + s.str());
    if (s.h % 16 != 0) throw DimensionError("H", "network input height must be divisible by 16, got " + s.str());
    if (s.w % 16 != 0) throw DimensionError("W", "network input width must be divisible by 16, got " + s.str());

    Var x = relu(tape_, bn(conv(input, "stem.conv", 2, 3), "stem.bn"));
    std::array<Var, 4> enc;
    for (int b = 0; b < 4; ++b) {
      x = dense_module(x, b);
      enc[b] = x;
      if (b < 3) x = transition(x, b + 1);
    }
    Var m_nuc = relu(tape_, conv(enc[3], "dec.nuc.top", 1, 1));
    Var m_con = relu(tape_, conv(enc[3], "dec.con.top", 1, 1));
    ForwardOutputs out;
    for (int lvl = 1; lvl <= kDecoderLevels; ++lvl) {
      const std::string sl = std::to_string(lvl);
      const Var feat = enc[3 - lvl];
      const Var d_nuc = lateral_merge(feat, m_nuc, "dec.nuc.lat" + sl);
      const Var d_con = lateral_merge(feat, m_con, "dec.con.lat" + sl);
      const IamOutputs io = iam(d_nuc, d_con, lvl, lvl < kDecoderLevels);
      out.aux[lvl - 1] = {classifier(io.f_nuclei, "dec.nuc.cls" + sl), classifier(io.f_contour, "dec.con.cls" + sl)};
      m_nuc = io.m_nuclei;
      m_con = io.m_contour;
    }
    out.final = {bilinear_upsample2x(tape_, out.aux[2].nuclei), bilinear_upsample2x(tape_, out.aux[2].contour)};
    return out;
  }

 private:
  Tape<T>& tape_;
  const CIANetParams<T>& params_;
  const BoundParams<T>& vars_;
  Mode mode_;
  ParamStore<T>* stats_update_;
};

/// Full-resolution probability maps from an eval-mode pass.
template <class T>
struct Prediction {
  Tensor<T> nuclei;
  Tensor<T> contour;
};

template <class T>
Prediction<T> predict(const CIANetParams<T>& params, const Tensor<T>& batch) {
  Tape<T> tape;
  const BoundParams<T> vars(tape, params.store, false);
  const Var x = tape.leaf(batch, false);
  const ForwardOutputs out = CIANet<T>(tape, params, vars, Mode::eval).forward(x);
  return {tape.value(out.final.nuclei), tape.value(out.final.contour)};
}

}  // namespace cianet
