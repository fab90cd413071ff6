#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <functional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/ops.hpp"
#include "cianet/tape.hpp"

namespace cianet {

enum class NucleiLoss { bce, bootstrapped, truncated, smooth_truncated };

inline std::string to_string(NucleiLoss l) {
  switch (l) {
    case NucleiLoss::bce:
      return "bce";
    case NucleiLoss::bootstrapped:
      return "bootstrapped";
    case NucleiLoss::truncated:
      return "truncated";
    case NucleiLoss::smooth_truncated:
      return "smooth_truncated";
  }
  return "?";
}

inline NucleiLoss parse_nuclei_loss(std::string_view s) {
  if (s == "bce") return NucleiLoss::bce;
  if (s == "bootstrapped") return NucleiLoss::bootstrapped;
  if (s == "truncated") return NucleiLoss::truncated;
  if (s == "smooth_truncated") return NucleiLoss::smooth_truncated;
  throw ConfigError("unknown loss '" + std::string(s) + "' (bce|bootstrapped|truncated|smooth_truncated)");
}

struct LossConfig {
  double gamma = 0.2;
  double lambda = 0.42;
  NucleiLoss nuclei_loss = NucleiLoss::smooth_truncated;
  double bootstrap_beta = 0.95;
  /// One weight per supervised level, coarsest first; the last is the
  /// full-resolution output.
  std::vector<double> level_weights{1.0, 1.0, 1.0, 1.0};

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 0.5)) throw ConfigError("loss.gamma must lie in [0, 0.5]");
    if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be non-negative");
    if (!(bootstrap_beta > 0.0 && bootstrap_beta <= 1.0)) throw ConfigError("loss.bootstrap_beta must lie in (0, 1]");
    if (level_weights.empty()) throw ConfigError("loss.level_weights must not be empty");
    double total = 0;
    for (double w : level_weights) {
      if (!(w >= 0.0)) throw ConfigError("loss.level_weights must be non-negative");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("loss.level_weights must not all be zero");
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"gamma", c.gamma},
                     {"lambda", c.lambda},
                     {"nuclei_loss", to_string(c.nuclei_loss)},
                     {"bootstrap_beta", c.bootstrap_beta},
                     {"level_weights", c.level_weights}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
  const LossConfig d;
  c.gamma = j.value("gamma", d.gamma);
  c.lambda = j.value("lambda", d.lambda);
  c.nuclei_loss = parse_nuclei_loss(j.value("nuclei_loss", to_string(d.nuclei_loss)));
  c.bootstrap_beta = j.value("bootstrap_beta", d.bootstrap_beta);
  c.level_weights = j.value("level_weights", d.level_weights);
}

/// Per-pixel loss value and its derivative with respect to p.
template <class T>
struct PixelLoss {
  T value;
  T grad;
};

namespace loss {

template <class T>
void check_probability(T p) {
  if (!(p > T(0) && p < T(1))) throw DomainError("probability must lie in (0, 1), got " + std::to_string(p));
}

/// −log p_t.
template <class T>
PixelLoss<T> bce(T p, int t) {
  check_probability(p);
  const T pt = t ? p : T(1) - p;
  const T sign = t ? T(1) : T(-1);
  return {-std::log(pt), -sign / pt};
}

/// min(−log p_t, −log γ). The derivative on the flat side, and at the kink
/// p_t = γ, is zero.
template <class T>
PixelLoss<T> truncated(T p, int t, T gamma) {
  check_probability(p);
  if (!(gamma > T(0) && gamma <= T(0.5))) throw DomainError("truncated loss needs gamma in (0, 0.5]");
  const T pt = t ? p : T(1) - p;
  const T sign = t ? T(1) : T(-1);
  if (pt <= gamma) return {-std::log(gamma), T(0)};
  return {-std::log(pt), -sign / pt};
}

/// Negative log-likelihood above γ, and below it the quadratic
/// −log γ + ½(1 − p_t²/γ²) that meets it with equal value and slope.
/// γ = 0 is plain BCE.
template <class T>
PixelLoss<T> smooth_truncated(T p, int t, T gamma) {
  if (gamma == T(0)) return bce(p, t);
  check_probability(p);
  if (!(gamma > T(0) && gamma <= T(0.5))) throw DomainError("smooth truncated loss needs gamma in [0, 0.5]");
  const T pt = t ? p : T(1) - p;
  const T sign = t ? T(1) : T(-1);
  if (pt < gamma) {
    const T g2 = gamma * gamma;
    return {-std::log(gamma) + T(0.5) * (T(1) - pt * pt / g2), -sign * pt / g2};
  }
  return {-std::log(pt), -sign / pt};
}

/// Soft bootstrapping: cross-entropy against the blended target
/// β·t + (1−β)·p. The derivative includes the dependence of the target on p.
template <class T>
PixelLoss<T> bootstrapped_soft(T p, int t, T beta) {
  check_probability(p);
  if (!(beta > T(0) && beta <= T(1))) throw DomainError("bootstrap beta must lie in (0, 1]");
  const T tt = T(t ? 1 : 0);
  const T y = beta * tt + (T(1) - beta) * p;
  const T lp = std::log(p), lq = std::log(T(1) - p);
  const T value = -y * lp - (T(1) - y) * lq;
  const T grad = -(T(1) - beta) * lp - y / p + (T(1) - beta) * lq + (T(1) - y) / (T(1) - p);
  return {value, grad};
}

template <class T>
PixelLoss<T> nuclei_pixel(const LossConfig& cfg, T p, int t) {
  switch (cfg.nuclei_loss) {
    case NucleiLoss::bce:
      return bce(p, t);
    case NucleiLoss::bootstrapped:
      return bootstrapped_soft(p, t, T(cfg.bootstrap_beta));
    case NucleiLoss::truncated:
      if (cfg.gamma == 0.0) return bce(p, t);
      return truncated(p, t, T(cfg.gamma));
    case NucleiLoss::smooth_truncated:
      return smooth_truncated(p, t, T(cfg.gamma));
  }
  return bce(p, t);
}

template <class T>
struct DiceResult {
  T value;
  std::vector<T> grad;
};

/// 1 − 2Σpq / (Σp² + Σq²); zero when both sums vanish.
template <class T>
DiceResult<T> soft_dice(std::span<const T> p, std::span<const T> q) {
  if (p.size() != q.size()) throw DimensionError("numel", "soft_dice inputs differ in size");
  T spq = 0, spp = 0, sqq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    spq += p[i] * q[i];
    spp += p[i] * p[i];
    sqq += q[i] * q[i];
  }
  const T denom = spp + sqq;
  DiceResult<T> r{T(0), std::vector<T>(p.size(), T(0))};
  if (denom == T(0)) return r;
  r.value = T(1) - T(2) * spq / denom;
  const T d2 = denom * denom;
  for (std::size_t i = 0; i < p.size(); ++i) r.grad[i] = -T(2) * q[i] / denom + T(4) * spq * p[i] / d2;
  return r;
}

}  // namespace loss

/// Mean per-pixel nuclei loss of probability map `p` against binary `target`.
template <class T>
Var pixel_loss_mean(Tape<T>& tape, Var p, const Tensor<T>& target, const LossConfig& cfg) {
  detail::require_same_shape(tape.shape(p), target.shape(), "pixel_loss_mean");
  const Tensor<T>& pv = tape.value(p);
  const std::size_t n = pv.numel();
  std::vector<T> grad(n);
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto l = loss::nuclei_pixel(cfg, pv[i], target[i] > T(0.5) ? 1 : 0);
    acc += l.value;
    grad[i] = l.grad / T(n);
  }
  return tape.record(Tensor<T>::scalar(acc / T(n)), {p},
                     [p, grad = std::move(grad)](Tape<T>& tp, const Tensor<T>& dy) {
                       T* d = tp.grad_ptr(p);
                       for (std::size_t i = 0; i < grad.size(); ++i) d[i] += dy[0] * grad[i];
                     });
}

/// Soft Dice computed per image (over C×H×W) and averaged over the batch.
template <class T>
Var soft_dice_mean(Tape<T>& tape, Var p, const Tensor<T>& target) {
  const Shape s = tape.shape(p);
  detail::require_same_shape(s, target.shape(), "soft_dice_mean");
  const Tensor<T>& pv = tape.value(p);
  const std::size_t per = s.c * s.plane();
  std::vector<T> grad(pv.numel());
  T acc = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto r = loss::soft_dice<T>(std::span<const T>(pv.data() + n * per, per),
                                      std::span<const T>(target.data() + n * per, per));
    acc += r.value;
    for (std::size_t i = 0; i < per; ++i) grad[n * per + i] = r.grad[i] / T(s.n);
  }
  return tape.record(Tensor<T>::scalar(acc / T(s.n)), {p},
                     [p, grad = std::move(grad)](Tape<T>& tp, const Tensor<T>& dy) {
                       T* d = tp.grad_ptr(p);
                       for (std::size_t i = 0; i < grad.size(); ++i) d[i] += dy[0] * grad[i];
                     });
}

/// Nuclei and contour probability maps at one supervised resolution.
struct LevelPrediction {
  Var nuclei;
  Var contour;
};

template <class T>
struct LevelTargets {
  Tensor<T> nuclei;
  Tensor<T> contour;
};

/// Σ_ℓ w_ℓ·[nuclei_loss_ℓ + λ·dice_ℓ] / Σ_ℓ w_ℓ. Weight decay is applied by
/// the optimizer and is not part of this scalar.
template <class T>
Var total_loss(Tape<T>& tape, std::span<const LevelPrediction> levels, std::span<const LevelTargets<T>> targets,
               const LossConfig& cfg) {
  cfg.validate();
  if (levels.size() != targets.size())
    throw DimensionError("levels", "total_loss got " + std::to_string(levels.size()) + " predictions but " +
                                       std::to_string(targets.size()) + " targets");
  if (levels.size() != cfg.level_weights.size())
    throw DimensionError("levels", "total_loss got " + std::to_string(levels.size()) + " levels but " +
                                       std::to_string(cfg.level_weights.size()) + " weights");
  double wsum = 0;
  for (double w : cfg.level_weights) wsum += w;
  std::vector<Var> terms;
  std::vector<double> weights;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const double w = cfg.level_weights[l] / wsum;
    terms.push_back(pixel_loss_mean(tape, levels[l].nuclei, targets[l].nuclei, cfg));
    weights.push_back(w);
    terms.push_back(soft_dice_mean(tape, levels[l].contour, targets[l].contour));
    weights.push_back(w * cfg.lambda);
  }
  return weighted_sum<T>(tape, terms, weights);
}

/// Sorted cumulative distribution of normalized loss: losses in descending
/// order, point k carrying (k/n, Σ_{i≤k} l_i / Σ l).
struct LossCdf {
  std::vector<double> fraction;
  std::vector<double> cumulative;
  bool degenerate = false;

  /// Share of the total loss carried by the top `frac` of samples.
  double top_share(double frac) const {
    if (fraction.empty()) return 0.0;
    const std::size_t n = fraction.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);
    return cumulative[k - 1];
  }

  /// CSV with header `fraction,cumulative_loss`. With max_points > 0 the
  /// curve is subsampled evenly; the final point is always kept.
  void write_csv(std::ostream& os, std::size_t max_points = 0) const {
    os << "fraction,cumulative_loss\n";
    const std::size_t n = fraction.size();
    const std::size_t step = (max_points == 0 || n <= max_points) ? 1 : (n + max_points - 1) / max_points;
    char buf[64];
    for (std::size_t i = 0; i < n; ++i) {
      if (i % step != 0 && i + 1 != n) continue;
      std::snprintf(buf, sizeof buf, "%.9g,%.17g\n", fraction[i], cumulative[i]);
      os << buf;
    }
  }
};

inline LossCdf loss_cdf(std::span<const double> losses) {
  if (losses.empty()) throw ContractError("loss_cdf needs at least one loss value");
  std::vector<double> sorted(losses.begin(), losses.end());
  for (double v : sorted)
    if (!(v >= 0.0) || !std::isfinite(v)) throw DomainError("loss_cdf needs finite non-negative losses");
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = sorted.size();
  LossCdf cdf;
  cdf.fraction.resize(n);
  cdf.cumulative.resize(n);
  std::vector<double> prefix(n);
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += sorted[i];
    prefix[i] = acc;
    cdf.fraction[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  }
  if (acc == 0.0) {
    cdf.degenerate = true;
    cdf.cumulative[n - 1] = 1.0;
    return cdf;
  }
  for (std::size_t i = 0; i < n; ++i) cdf.cumulative[i] = prefix[i] / acc;
  return cdf;
}

}  // namespace cianet
