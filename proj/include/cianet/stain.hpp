#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "cianet/errors.hpp"
#include "cianet/image.hpp"

namespace cianet {

using StainVector = std::array<double, 3>;

/// Target stain basis (hematoxylin first) and 99th-percentile concentrations.
struct StainReference {
  std::array<StainVector, 2> stain_matrix;
  std::array<double, 2> max_concentrations;

  /// Widely used H&E reference values.
  static StainReference standard() {
    return {{{{0.5626, 0.7201, 0.4062}, {0.2159, 0.8012, 0.5581}}}, {1.9705, 1.0308}};
  }
};

struct MacenkoParams {
  double beta_od = 0.15;       // tissue threshold on the OD norm
  double angle_percentile = 1.0;  // stain angles at this and 100 minus it
  double max_percentile = 99.0;
  int min_tissue_pixels = 50;
};

/// Stain basis, per-pixel concentrations, and robust maxima of one image.
struct StainEstimate {
  std::array<StainVector, 2> stains{};
  std::vector<std::array<double, 2>> concentrations;
  std::array<double, 2> max_concentrations{};
  bool degenerate = false;
};

struct NormalizeResult {
  RgbImage image;
  std::vector<std::array<double, 2>> concentrations;  // after rescaling
  bool degenerate = false;
};

namespace stain_detail {

/// Linear-interpolated percentile (0..100) of unsorted values.
inline double percentile(std::vector<double> v, double pct) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = pct / 100.0 * double(v.size() - 1);
  const std::size_t lo = std::size_t(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

inline std::array<double, 3> optical_density(const RgbImage& img, std::size_t i) {
  const auto& px = img.vec();
  return {-std::log10((px[3 * i] + 1.0) / 256.0), -std::log10((px[3 * i + 1] + 1.0) / 256.0),
          -std::log10((px[3 * i + 2] + 1.0) / 256.0)};
}

inline StainVector unit(const Eigen::Vector3d& v) {
  const Eigen::Vector3d u = v.normalized();
  return {u[0], u[1], u[2]};
}

/// Least-squares concentrations of every pixel in the given basis.
inline std::vector<std::array<double, 2>> solve_concentrations(const RgbImage& img,
                                                               const std::array<StainVector, 2>& basis) {
  Eigen::Matrix<double, 3, 2> s;
  for (int r = 0; r < 3; ++r) {
    s(r, 0) = basis[0][r];
    s(r, 1) = basis[1][r];
  }
  const Eigen::Matrix2d normal = s.transpose() * s;
  const Eigen::Matrix2d inv = normal.inverse();
  const std::size_t n = img.height() * img.width();
  std::vector<std::array<double, 2>> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto od = optical_density(img, i);
    const Eigen::Vector2d rhs = s.transpose() * Eigen::Vector3d(od[0], od[1], od[2]);
    const Eigen::Vector2d sol = inv * rhs;
    c[i] = {sol[0], sol[1]};
  }
  return c;
}

inline std::array<double, 2> max_concentrations(const std::vector<std::array<double, 2>>& c, double pct) {
  std::vector<double> a(c.size()), b(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    a[i] = c[i][0];
    b[i] = c[i][1];
  }
  return {percentile(std::move(a), pct), percentile(std::move(b), pct)};
}

}  // namespace stain_detail

/// Macenko stain estimation: OD plane from the two leading eigenvectors of
/// the tissue OD covariance, stains at the extreme percentile angles in it.
inline StainEstimate estimate_stains(const RgbImage& img, const MacenkoParams& params = {}) {
  StainEstimate est;
  const std::size_t n = img.height() * img.width();
  std::vector<Eigen::Vector3d> tissue;
  for (std::size_t i = 0; i < n; ++i) {
    const auto od = stain_detail::optical_density(img, i);
    const Eigen::Vector3d v(od[0], od[1], od[2]);
    if (v.norm() > params.beta_od) tissue.push_back(v);
  }
  if (tissue.size() < std::size_t(params.min_tissue_pixels)) {
    est.degenerate = true;
    return est;
  }
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& v : tissue) mean += v;
  mean /= double(tissue.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& v : tissue) cov += (v - mean) * (v - mean).transpose();
  cov /= double(tissue.size() > 1 ? tissue.size() - 1 : 1);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  Eigen::Vector3d e1 = eig.eigenvectors().col(2), e2 = eig.eigenvectors().col(1);
  if (e1.sum() < 0) e1 = -e1;
  if (e2.sum() < 0) e2 = -e2;

  std::vector<double> angles(tissue.size());
  for (std::size_t i = 0; i < tissue.size(); ++i) angles[i] = std::atan2(tissue[i].dot(e2), tissue[i].dot(e1));
  const double lo = stain_detail::percentile(angles, params.angle_percentile);
  const double hi = stain_detail::percentile(angles, 100.0 - params.angle_percentile);
  Eigen::Vector3d v_lo = e1 * std::cos(lo) + e2 * std::sin(lo);
  Eigen::Vector3d v_hi = e1 * std::cos(hi) + e2 * std::sin(hi);
  if (v_lo.sum() < 0) v_lo = -v_lo;
  if (v_hi.sum() < 0) v_hi = -v_hi;
  // Hematoxylin absorbs more red than eosin does.
  if (v_lo.normalized()[0] >= v_hi.normalized()[0]) {
    est.stains = {stain_detail::unit(v_lo), stain_detail::unit(v_hi)};
  } else {
    est.stains = {stain_detail::unit(v_hi), stain_detail::unit(v_lo)};
  }
  est.concentrations = stain_detail::solve_concentrations(img, est.stains);
  est.max_concentrations = stain_detail::max_concentrations(est.concentrations, params.max_percentile);
  return est;
}

/// Reference taken from an image: its stain basis (negative OD components
/// clipped, renormalized) and its concentration maxima in that basis.
inline StainReference fit_stain_reference(const RgbImage& img, const MacenkoParams& params = {}) {
  const StainEstimate est = estimate_stains(img, params);
  if (est.degenerate) throw DomainError("cannot fit a stain reference to an image without tissue");
  StainReference ref{};
  for (int s = 0; s < 2; ++s) {
    Eigen::Vector3d v(std::max(0.0, est.stains[s][0]), std::max(0.0, est.stains[s][1]), std::max(0.0, est.stains[s][2]));
    ref.stain_matrix[s] = stain_detail::unit(v);
  }
  const auto c = stain_detail::solve_concentrations(img, ref.stain_matrix);
  ref.max_concentrations = stain_detail::max_concentrations(c, params.max_percentile);
  return ref;
}

/// Maps the image's stain concentrations onto the reference basis, scaled so
/// their 99th percentiles equal the reference maxima.
inline NormalizeResult macenko_normalize(const RgbImage& img, const StainReference& ref,
                                         const MacenkoParams& params = {}) {
  const StainEstimate est = estimate_stains(img, params);
  if (est.degenerate) return {img, {}, true};
  NormalizeResult out{RgbImage(img.height(), img.width()), est.concentrations, false};
  const std::array<double, 2> scale{
      est.max_concentrations[0] > 0 ? ref.max_concentrations[0] / est.max_concentrations[0] : 1.0,
      est.max_concentrations[1] > 0 ? ref.max_concentrations[1] / est.max_concentrations[1] : 1.0};
  auto& px = out.image.vec();
  for (std::size_t i = 0; i < out.concentrations.size(); ++i) {
    auto& c = out.concentrations[i];
    c[0] *= scale[0];
    c[1] *= scale[1];
    for (int k = 0; k < 3; ++k) {
      const double od = c[0] * ref.stain_matrix[0][k] + c[1] * ref.stain_matrix[1][k];
      const double v = 256.0 * std::pow(10.0, -od) - 1.0;
      px[3 * i + k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
    }
  }
  return out;
}

}  // namespace cianet
