#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cianet/errors.hpp"
#include "cianet/gemm.hpp"
#include "cianet/tape.hpp"
#include "cianet/tensor.hpp"

namespace cianet {

enum class Mode { train, eval };

namespace detail {

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.n != b.n) throw DimensionError("N", std::string(op) + ": " + a.str() + " vs " + b.str());
  if (a.c != b.c) throw DimensionError("C", std::string(op) + ": " + a.str() + " vs " + b.str());
  if (a.h != b.h) throw DimensionError("H", std::string(op) + ": " + a.str() + " vs " + b.str());
  if (a.w != b.w) throw DimensionError("W", std::string(op) + ": " + a.str() + " vs " + b.str());
}

struct ConvGeometry {
  std::size_t in_c, kh, kw, stride, pad, h, w, out_h, out_w;
  std::size_t col_rows() const { return in_c * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
  bool direct() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    const T* plane = x + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeometry& g, T* dx) {
  const std::size_t cols = g.col_cols();
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    T* plane = dx + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.kh; ++ky) {
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// Half-pixel-center taps for output index i of a ×2 upsample over n inputs:
// even i -> 0.25·src[i/2-1] + 0.75·src[i/2]; odd i -> 0.75·src[i/2] + 0.25·src[i/2+1].
struct Taps {
  std::size_t a, b;
  double wa, wb;
};
inline Taps upsample_taps(std::size_t i, std::size_t n) {
  const std::size_t j = i / 2;
  if (i % 2 == 0) {
    const std::size_t lo = j == 0 ? 0 : j - 1;
    return {lo, j, 0.25, 0.75};
  }
  const std::size_t hi = std::min(j + 1, n - 1);
  return {j, hi, 0.75, 0.25};
}

}  // namespace detail

/// Cross-correlation of `input` (N×I×H×W) with `weight` (O×I×kH×kW).
template <class T>
Var conv2d(Tape<T>& tape, Var input, Var weight, std::optional<Var> bias, std::size_t stride, std::size_t padding) {
  const Shape xs = tape.shape(input);
  const Shape ws = tape.shape(weight);
  if (stride == 0) throw DimensionError("stride", "conv2d stride must be positive");
  if (xs.c != ws.c)
    throw DimensionError("C", "conv2d input channels " + std::to_string(xs.c) + " != weight input channels " +
                                  std::to_string(ws.c));
  auto valid_k = [](std::size_t k) { return k == 1 || k == 3 || k == 7; };
  if (!valid_k(ws.h)) throw DimensionError("kH", "conv2d kernel height must be 1, 3 or 7");
  if (!valid_k(ws.w)) throw DimensionError("kW", "conv2d kernel width must be 1, 3 or 7");
  if (xs.h + 2 * padding < ws.h) throw DimensionError("H", "conv2d kernel larger than padded input");
  if (xs.w + 2 * padding < ws.w) throw DimensionError("W", "conv2d kernel larger than padded input");
  if (bias) {
    const Shape bs = tape.shape(*bias);
    if (bs.numel() != ws.n) throw DimensionError("O", "conv2d bias length does not match output channels");
  }
  const detail::ConvGeometry g{xs.c,    ws.h, ws.w, stride, padding, xs.h, xs.w,
                               (xs.h + 2 * padding - ws.h) / stride + 1,
                               (xs.w + 2 * padding - ws.w) / stride + 1};
  const std::size_t out_c = ws.n;
  Tensor<T> out(Shape{xs.n, out_c, g.out_h, g.out_w});
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& w = tape.value(weight);
  const int m = static_cast<int>(out_c);
  const int ncols = static_cast<int>(g.col_cols());
  const int k = static_cast<int>(g.col_rows());
  std::vector<T> col(g.direct() ? 0 : g.col_rows() * g.col_cols());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* xn = x.plane_ptr(n, 0);
    const T* src = xn;
    if (!g.direct()) {
      detail::im2col(xn, g, col.data());
      src = col.data();
    }
    T* yn = out.plane_ptr(n, 0);
    blas::gemm<T>(false, false, m, ncols, k, T(1), w.data(), k, src, ncols, T(0), yn, ncols);
    if (bias) {
      const Tensor<T>& b = tape.value(*bias);
      for (std::size_t o = 0; o < out_c; ++o) {
        T* p = yn + o * g.col_cols();
        const T bo = b[o];
        for (std::size_t i = 0; i < g.col_cols(); ++i) p[i] += bo;
      }
    }
  }
  std::vector<Var> inputs{input, weight};
  if (bias) inputs.push_back(*bias);
  return tape.record(std::move(out), std::move(inputs), [=](Tape<T>& tp, const Tensor<T>& dy) {
    const Tensor<T>& xv = tp.value(input);
    const Tensor<T>& wv = tp.value(weight);
    T* dx = tp.grad_ptr(input);
    T* dw = tp.grad_ptr(weight);
    T* db = bias ? tp.grad_ptr(*bias) : nullptr;
    std::vector<T> colb(g.direct() ? 0 : g.col_rows() * g.col_cols());
    std::vector<T> dcol(dx && !g.direct() ? g.col_rows() * g.col_cols() : 0);
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* dyn = dy.plane_ptr(n, 0);
      if (dw) {
        const T* src = xv.plane_ptr(n, 0);
        if (!g.direct()) {
          detail::im2col(src, g, colb.data());
          src = colb.data();
        }
        blas::gemm<T>(false, true, m, k, ncols, T(1), dyn, ncols, src, ncols, T(1), dw, k);
      }
      if (dx) {
        T* dxn = dx + n * xs.c * xs.plane();
        if (g.direct()) {
          blas::gemm<T>(true, false, k, ncols, m, T(1), wv.data(), k, dyn, ncols, T(1), dxn, ncols);
        } else {
          blas::gemm<T>(true, false, k, ncols, m, T(1), wv.data(), k, dyn, ncols, T(0), dcol.data(), ncols);
          detail::col2im_add(dcol.data(), g, dxn);
        }
      }
      if (db) {
        for (std::size_t o = 0; o < out_c; ++o) {
          const T* p = dyn + o * g.col_cols();
          T s = 0;
          for (std::size_t i = 0; i < g.col_cols(); ++i) s += p[i];
          db[o] += s;
        }
      }
    }
  });
}

/// 2×2 mean pooling with stride 2.
template <class T>
Var avg_pool2d(Tape<T>& tape, Var input) {
  const Shape s = tape.shape(input);
  if (s.h % 2 != 0) throw DimensionError("H", "avg_pool2d needs even height, got " + s.str());
  if (s.w % 2 != 0) throw DimensionError("W", "avg_pool2d needs even width, got " + s.str());
  const Tensor<T>& x = tape.value(input);
  const std::size_t oh = s.h / 2, ow = s.w / 2;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = x.data() + nc * s.plane();
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const T* p = src + 2 * y * s.w + 2 * xx;
        dst[y * ow + xx] = (p[0] + p[1] + p[s.w] + p[s.w + 1]) * T(0.25);
      }
  }
  return tape.record(std::move(out), {input}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    T* dx = tp.grad_ptr(input);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const T* g = dy.data() + nc * oh * ow;
      T* d = dx + nc * s.plane();
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const T v = g[y * ow + xx] * T(0.25);
          T* p = d + 2 * y * s.w + 2 * xx;
          p[0] += v;
          p[1] += v;
          p[s.w] += v;
          p[s.w + 1] += v;
        }
    }
  });
}

/// Bilinear ×2 upsampling, half-pixel centers, clamped at the borders.
/// Applied separably: rows first, then columns.
template <class T>
Tensor<T> upsample2x_values(const Tensor<T>& x) {
  const Shape s = x.shape();
  const std::size_t oh = 2 * s.h, ow = 2 * s.w;
  Tensor<T> out(Shape{s.n, s.c, oh, ow});
  std::vector<T> tmp(s.h * ow);
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* src = x.data() + nc * s.plane();
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t xo = 0; xo < ow; ++xo) {
        const auto t = detail::upsample_taps(xo, s.w);
        tmp[y * ow + xo] = T(t.wa) * src[y * s.w + t.a] + T(t.wb) * src[y * s.w + t.b];
      }
    T* dst = out.data() + nc * oh * ow;
    for (std::size_t yo = 0; yo < oh; ++yo) {
      const auto t = detail::upsample_taps(yo, s.h);
      for (std::size_t xo = 0; xo < ow; ++xo)
        dst[yo * ow + xo] = T(t.wa) * tmp[t.a * ow + xo] + T(t.wb) * tmp[t.b * ow + xo];
    }
  }
  return out;
}

template <class T>
Var bilinear_upsample2x(Tape<T>& tape, Var input) {
  const Shape s = tape.shape(input);
  Tensor<T> out = upsample2x_values(tape.value(input));
  return tape.record(std::move(out), {input}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    T* dx = tp.grad_ptr(input);
    const std::size_t oh = 2 * s.h, ow = 2 * s.w;
    std::vector<T> tmp(s.h * ow);
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      std::fill(tmp.begin(), tmp.end(), T(0));
      const T* g = dy.data() + nc * oh * ow;
      for (std::size_t yo = 0; yo < oh; ++yo) {
        const auto t = detail::upsample_taps(yo, s.h);
        for (std::size_t xo = 0; xo < ow; ++xo) {
          tmp[t.a * ow + xo] += T(t.wa) * g[yo * ow + xo];
          tmp[t.b * ow + xo] += T(t.wb) * g[yo * ow + xo];
        }
      }
      T* d = dx + nc * s.plane();
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          const auto t = detail::upsample_taps(xo, s.w);
          d[y * s.w + t.a] += T(t.wa) * tmp[y * ow + xo];
          d[y * s.w + t.b] += T(t.wb) * tmp[y * ow + xo];
        }
    }
  });
}

/// Per-channel running mean/variance, each stored as 1×C×1×1.
template <class T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit RunningStats(std::size_t channels = 1)
      : mean(Shape{1, channels, 1, 1}, T(0)), var(Shape{1, channels, 1, 1}, T(1)) {}
};

inline constexpr double kBatchNormMomentum = 0.9;
inline constexpr double kBatchNormEpsilon = 1e-5;

namespace detail {

template <class T>
Var batch_norm_impl(Tape<T>& tape, Var input, Var scale, Var shift, const RunningStats<T>& stats,
                    RunningStats<T>* update, Mode mode, double epsilon) {
  const Shape s = tape.shape(input);
  if (tape.shape(scale).numel() != s.c) throw DimensionError("C", "batch_norm scale length != channels");
  if (tape.shape(shift).numel() != s.c) throw DimensionError("C", "batch_norm shift length != channels");
  if (stats.mean.numel() != s.c) throw DimensionError("C", "batch_norm running stats length != channels");
  if (!(epsilon > 0)) throw DomainError("batch_norm epsilon must be positive");
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& gamma = tape.value(scale);
  const Tensor<T>& beta = tape.value(shift);
  const std::size_t count = s.n * s.plane();
  std::vector<T> mean(s.c), inv_std(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (mode == Mode::train) {
      T sum = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane_ptr(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sum += p[i];
      }
      const T mu = sum / T(count);
      T sq = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x.plane_ptr(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const T var = sq / T(count);
      mean[c] = mu;
      inv_std[c] = T(1) / std::sqrt(var + T(epsilon));
      if (update) {
        const T unbiased = count > 1 ? sq / T(count - 1) : var;
        update->mean[c] = T(kBatchNormMomentum) * update->mean[c] + T(1 - kBatchNormMomentum) * mu;
        update->var[c] = T(kBatchNormMomentum) * update->var[c] + T(1 - kBatchNormMomentum) * unbiased;
      }
    } else {
      mean[c] = stats.mean[c];
      inv_std[c] = T(1) / std::sqrt(stats.var[c] + T(epsilon));
    }
  }
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.plane_ptr(n, c);
      T* q = out.plane_ptr(n, c);
      const T a = gamma[c] * inv_std[c];
      const T b = beta[c] - mean[c] * a;
      for (std::size_t i = 0; i < s.plane(); ++i) q[i] = p[i] * a + b;
    }
  return tape.record(std::move(out), {input, scale, shift},
                     [=, mean = std::move(mean), inv_std = std::move(inv_std)](Tape<T>& tp, const Tensor<T>& dy) {
    const Tensor<T>& xv = tp.value(input);
    const Tensor<T>& gv = tp.value(scale);
    T* dx = tp.grad_ptr(input);
    T* dgamma = tp.grad_ptr(scale);
    T* dbeta = tp.grad_ptr(shift);
    for (std::size_t c = 0; c < s.c; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = xv.plane_ptr(n, c);
        const T* g = dy.plane_ptr(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          sum_dy += g[i];
          sum_dy_xhat += g[i] * (p[i] - mean[c]) * inv_std[c];
        }
      }
      if (dgamma) dgamma[c] += sum_dy_xhat;
      if (dbeta) dbeta[c] += sum_dy;
      if (!dx) continue;
      const T a = gv[c] * inv_std[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = xv.plane_ptr(n, c);
        const T* g = dy.plane_ptr(n, c);
        T* d = dx + (n * s.c + c) * s.plane();
        if (mode == Mode::train) {
          const T inv_count = T(1) / T(count);
          for (std::size_t i = 0; i < s.plane(); ++i) {
            const T xhat = (p[i] - mean[c]) * inv_std[c];
            d[i] += a * (g[i] - inv_count * sum_dy - xhat * inv_count * sum_dy_xhat);
          }
        } else {
          for (std::size_t i = 0; i < s.plane(); ++i) d[i] += a * g[i];
        }
      }
    }
  });
}

}  // namespace detail

/// Batch normalization over (N, H, W) per channel. Train mode normalizes by
/// batch statistics and folds them into `stats` (running = 0.9·running +
/// 0.1·batch, unbiased variance); eval mode normalizes by `stats`.
template <class T>
Var batch_norm(Tape<T>& tape, Var input, Var scale, Var shift, RunningStats<T>& stats, Mode mode,
               double epsilon = kBatchNormEpsilon) {
  return detail::batch_norm_impl<T>(tape, input, scale, shift, stats, mode == Mode::train ? &stats : nullptr, mode,
                                 epsilon);
}

/// Read-only variant: eval mode, or train mode without touching `stats`.
template <class T>
Var batch_norm(Tape<T>& tape, Var input, Var scale, Var shift, const RunningStats<T>& stats, Mode mode,
               double epsilon = kBatchNormEpsilon) {
  return detail::batch_norm_impl<T>(tape, input, scale, shift, stats, nullptr, mode, epsilon);
}

enum class Activation { relu, sigmoid };

template <class T>
T sigmoid_value(T x) {
  // Clamped so probabilities stay strictly inside (0, 1) in either precision.
  constexpr T eps = std::numeric_limits<T>::epsilon();
  const T s = x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
  return std::clamp(s, eps, T(1) - eps);
}

template <class T>
Var pointwise_activation(Tape<T>& tape, Var input, Activation kind) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = sigmoid_value(x[i]);
  }
  return tape.record(std::move(out), {input}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    const Tensor<T>& xv = tp.value(input);
    const Tensor<T>& yv = tp.output();
    T* dx = tp.grad_ptr(input);
    if (kind == Activation::relu) {
      for (std::size_t i = 0; i < dy.numel(); ++i)
        if (xv[i] > T(0)) dx[i] += dy[i];
    } else {
      for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * yv[i] * (T(1) - yv[i]);
    }
  });
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  return pointwise_activation(tape, x, Activation::relu);
}
template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  return pointwise_activation(tape, x, Activation::sigmoid);
}

/// Channel concatenation in argument order.
template <class T>
Var concat_channels(Tape<T>& tape, std::span<const Var> inputs) {
  if (inputs.empty()) throw ContractError("concat_channels needs at least one input");
  const Shape s0 = tape.shape(inputs[0]);
  std::size_t total_c = 0;
  for (Var v : inputs) {
    const Shape s = tape.shape(v);
    if (s.n != s0.n) throw DimensionError("N", "concat_channels batch mismatch");
    if (s.h != s0.h) throw DimensionError("H", "concat_channels height mismatch");
    if (s.w != s0.w) throw DimensionError("W", "concat_channels width mismatch");
    total_c += s.c;
  }
  Tensor<T> out(Shape{s0.n, total_c, s0.h, s0.w});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (Var v : inputs) {
    const Tensor<T>& x = tape.value(v);
    const std::size_t c = x.shape().c;
    for (std::size_t n = 0; n < s0.n; ++n)
      std::copy(x.plane_ptr(n, 0), x.plane_ptr(n, 0) + c * s0.plane(), out.plane_ptr(n, off));
    offsets.push_back(off);
    off += c;
  }
  std::vector<Var> ins(inputs.begin(), inputs.end());
  return tape.record(std::move(out), ins, [=](Tape<T>& tp, const Tensor<T>& dy) {
    for (std::size_t k = 0; k < ins.size(); ++k) {
      T* dx = tp.grad_ptr(ins[k]);
      if (!dx) continue;
      const std::size_t c = tp.shape(ins[k]).c;
      for (std::size_t n = 0; n < s0.n; ++n) {
        const T* g = dy.plane_ptr(n, offsets[k]);
        T* d = dx + n * c * s0.plane();
        for (std::size_t i = 0; i < c * s0.plane(); ++i) d[i] += g[i];
      }
    }
  });
}

template <class T>
Var concat_channels(Tape<T>& tape, std::initializer_list<Var> inputs) {
  return concat_channels(tape, std::span<const Var>(inputs.begin(), inputs.size()));
}

/// Channels [begin, begin+count) of `input`.
template <class T>
Var slice_channels(Tape<T>& tape, Var input, std::size_t begin, std::size_t count) {
  const Shape s = tape.shape(input);
  if (count == 0 || begin + count > s.c) throw DimensionError("C", "slice_channels range out of bounds");
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n)
    std::copy(x.plane_ptr(n, begin), x.plane_ptr(n, begin) + count * s.plane(), out.plane_ptr(n, 0));
  return tape.record(std::move(out), {input}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    T* dx = tp.grad_ptr(input);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* g = dy.plane_ptr(n, 0);
      T* d = dx + (n * s.c + begin) * s.plane();
      for (std::size_t i = 0; i < count * s.plane(); ++i) d[i] += g[i];
    }
  });
}

enum class Elementwise { add, sub, mul };

template <class T>
Var elementwise(Tape<T>& tape, Var a, Var b, Elementwise kind) {
  detail::require_same_shape(tape.shape(a), tape.shape(b), "elementwise");
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  Tensor<T> out(x.shape());
  switch (kind) {
    case Elementwise::add:
      for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] + y[i];
      break;
    case Elementwise::sub:
      for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] - y[i];
      break;
    case Elementwise::mul:
      for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * y[i];
      break;
  }
  return tape.record(std::move(out), {a, b}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    T* da = tp.grad_ptr(a);
    T* db = tp.grad_ptr(b);
    const std::size_t n = dy.numel();
    if (kind == Elementwise::mul) {
      const Tensor<T>& av = tp.value(a);
      const Tensor<T>& bv = tp.value(b);
      if (da)
        for (std::size_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
      if (db)
        for (std::size_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
      return;
    }
    if (da)
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
    if (db) {
      const T sign = kind == Elementwise::add ? T(1) : T(-1);
      for (std::size_t i = 0; i < n; ++i) db[i] += sign * dy[i];
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  return elementwise(tape, a, b, Elementwise::add);
}
template <class T>
Var sub(Tape<T>& tape, Var a, Var b) {
  return elementwise(tape, a, b, Elementwise::sub);
}
template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  return elementwise(tape, a, b, Elementwise::mul);
}

/// Sum of all elements into a 1×1×1×1 scalar, accumulated in index order.
template <class T>
Var sum(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  T acc = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x[i];
  return tape.record(Tensor<T>::scalar(acc), {input}, [=](Tape<T>& tp, const Tensor<T>& dy) {
    T* dx = tp.grad_ptr(input);
    const std::size_t n = tp.shape(input).numel();
    for (std::size_t i = 0; i < n; ++i) dx[i] += dy[0];
  });
}

/// Σ weights[i]·scalars[i] over 1×1×1×1 inputs.
template <class T>
Var weighted_sum(Tape<T>& tape, std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.size() != weights.size()) throw DimensionError("count", "weighted_sum needs one weight per term");
  if (scalars.empty()) throw ContractError("weighted_sum needs at least one term");
  T acc = 0;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    if (tape.shape(scalars[i]) != Shape{1, 1, 1, 1}) throw DimensionError("numel", "weighted_sum term is not scalar");
    acc += T(weights[i]) * tape.value(scalars[i])[0];
  }
  std::vector<Var> ins(scalars.begin(), scalars.end());
  std::vector<double> ws(weights.begin(), weights.end());
  return tape.record(Tensor<T>::scalar(acc), ins, [=](Tape<T>& tp, const Tensor<T>& dy) {
    for (std::size_t i = 0; i < ins.size(); ++i)
      if (T* d = tp.grad_ptr(ins[i])) d[0] += T(ws[i]) * dy[0];
  });
}

}  // namespace cianet
