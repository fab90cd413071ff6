#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "cianet/errors.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 0.0;  // 0 disables gradient clipping

  void validate() const {
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("adamw betas must lie in [0, 1)");
    if (!(eps > 0) || weight_decay < 0 || clip_norm < 0) throw ConfigError("adamw eps/decay/clip are invalid");
  }
};

inline void to_json(nlohmann::json& j, const AdamWConfig& a) {
  j = nlohmann::json{{"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
                     {"clip_norm", a.clip_norm}};
}
inline void from_json(const nlohmann::json& j, AdamWConfig& a) {
  const AdamWConfig d;
  a.beta1 = j.value("beta1", d.beta1);
  a.beta2 = j.value("beta2", d.beta2);
  a.eps = j.value("eps", d.eps);
  a.weight_decay = j.value("weight_decay", d.weight_decay);
  a.clip_norm = j.value("clip_norm", d.clip_norm);
}

/// Cosine annealing with warm restarts; cycle i lasts t0·t_mult^i steps.
struct LRSchedule {
  double eta_max = 1e-3;
  double eta_min = 1e-5;
  std::int64_t t0 = 1;
  double t_mult = 2.0;

  void validate() const {
    if (!(eta_min < eta_max) || eta_min < 0) throw ConfigError("lr schedule needs 0 <= eta_min < eta_max");
    if (t0 < 1) throw ConfigError("lr schedule t0 must be at least 1");
    if (!(t_mult >= 1)) throw ConfigError("lr schedule t_mult must be at least 1");
  }
};

/// Learning rate at a global step (0-based).
inline double lr_at(std::int64_t step, const LRSchedule& s) {
  if (step < 0) throw DomainError("lr_at: negative step");
  double t_i = double(s.t0);
  double t_cur = double(step);
  while (t_cur >= t_i) {
    t_cur -= t_i;
    t_i = std::floor(t_i * s.t_mult);
  }
  return s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1 + std::cos(std::numbers::pi * t_cur / t_i));
}

/// Linear ramp multiplier (step+1)/warmup_steps, 1 once warm or with no warmup.
inline double warmup_factor(std::int64_t step, std::int64_t warmup_steps) {
  if (step < 0) throw DomainError("warmup_factor: negative step");
  if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
  return double(step + 1) / double(warmup_steps);
}

/// Per-parameter moments and the step count, mirroring a list of tensors.
template <class T>
struct OptimizerState {
  std::vector<Tensor<T>> m, v;
  std::int64_t t = 0;

  static OptimizerState like(const std::vector<Tensor<T>*>& params) {
    OptimizerState s;
    for (const auto* p : params) {
      s.m.emplace_back(p->shape(), T(0));
      s.v.emplace_back(p->shape(), T(0));
    }
    return s;
  }
};

struct StepReport {
  bool applied = false;
  double grad_norm = 0.0;  // before clipping
};

/// One AdamW update with decoupled weight decay. A non-finite gradient
/// leaves parameters and state untouched and reports applied = false.
template <class T>
StepReport adamw_step(std::vector<Tensor<T>*> params, const std::vector<const Tensor<T>*>& grads,
                      OptimizerState<T>& state, double lr, const AdamWConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw DimensionError("params", "adamw: parameter, gradient and state counts differ");
  double sq = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!(grads[i]->shape() == params[i]->shape()) || !(state.m[i].shape() == params[i]->shape()))
      throw DimensionError("params", "adamw: shape mismatch for parameter " + std::to_string(i));
    for (std::size_t k = 0; k < grads[i]->numel(); ++k) sq += double((*grads[i])[k]) * double((*grads[i])[k]);
  }
  StepReport r{false, std::sqrt(sq)};
  if (!std::isfinite(r.grad_norm)) return r;
  const double clip = cfg.clip_norm > 0 && r.grad_norm > cfg.clip_norm ? cfg.clip_norm / r.grad_norm : 1.0;
  ++state.t;
  const double bc1 = 1 - std::pow(cfg.beta1, double(state.t));
  const double bc2 = 1 - std::pow(cfg.beta2, double(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* w = params[i]->data();
    const T* g = grads[i]->data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t k = 0; k < params[i]->numel(); ++k) {
      const double gk = double(g[k]) * clip;
      const double mk = cfg.beta1 * double(m[k]) + (1 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * double(v[k]) + (1 - cfg.beta2) * gk * gk;
      m[k] = T(mk);
      v[k] = T(vk);
      const double update = (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
      w[k] = T(double(w[k]) - lr * update - lr * cfg.weight_decay * double(w[k]));
    }
  }
  r.applied = true;
  return r;
}

}  // namespace cianet
