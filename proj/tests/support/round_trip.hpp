#pragma once

// Instance post-processing fed with crisp ground-truth targets, scored
// against the instances the targets came from.

#include <algorithm>
#include <cstdint>

#include "cianet/metrics.hpp"
#include "cianet/postprocess.hpp"
#include "cianet/synth.hpp"
#include "cianet/targets.hpp"

namespace cianet::check {

struct RoundTrip {
  int samples = 0;
  int count_mismatches = 0;
  double mean_aji = 0;
  double min_aji = 1;
};

inline FloatMap as_probability(const Mask& m) {
  FloatMap f(m.height(), m.width(), 0.0f);
  for (std::size_t i = 0; i < m.size(); ++i) f[i] = m[i] ? 1.0f : 0.0f;
  return f;
}

/// Separable samples: no clustering, so instances never touch.
inline GeneratorConfig separable_generator() {
  GeneratorConfig g;
  g.cluster_probability = 0.0;
  return g;
}

inline RoundTrip gt_round_trip(int n, std::uint64_t seed, const GeneratorConfig& g = separable_generator(),
                               const PostConfig& post = {}) {
  RoundTrip r;
  for (int i = 0; i < n; ++i) {
    const LabelMap gt = generate_sample(g, derive_seed(seed, std::uint64_t(i))).instances;
    const TargetPair t = extract_targets(gt);
    const LabelMap rec = extract_instances(as_probability(t.nuclei), as_probability(t.contour), post);
    const double a = aji(gt, rec);
    ++r.samples;
    r.count_mismatches += count_instances(rec) != count_instances(gt);
    r.mean_aji += a;
    r.min_aji = std::min(r.min_aji, a);
  }
  if (n > 0) r.mean_aji /= n;
  return r;
}

}  // namespace cianet::check
