#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cianet/corpus.hpp"
#include "cianet/errors.hpp"
#include "cianet/image.hpp"
#include "cianet/png_io.hpp"

namespace cianet {

/// Pixel counts shared between instances of two label maps.
struct Overlap {
  std::vector<std::int64_t> gt_area, pred_area;  // indexed by label
  std::map<std::int32_t, std::vector<std::pair<std::int32_t, std::int64_t>>> by_gt;  // gt -> (pred, |G∩S|), pred ascending

  Overlap(const LabelMap& gt, const LabelMap& pred) {
    require_same_extent(gt, pred, "instance metrics");
    gt_area.assign(std::size_t(max_label(gt)) + 1, 0);
    pred_area.assign(std::size_t(max_label(pred)) + 1, 0);
    std::vector<std::uint64_t> keys;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] < 0 || pred[i] < 0) throw DomainError("negative instance label");
      ++gt_area[gt[i]];
      ++pred_area[pred[i]];
      if (gt[i] > 0 && pred[i] > 0) keys.push_back(std::uint64_t(gt[i]) << 32 | std::uint64_t(pred[i]));
    }
    std::sort(keys.begin(), keys.end());
    for (std::size_t i = 0; i < keys.size();) {
      std::size_t j = i;
      while (j < keys.size() && keys[j] == keys[i]) ++j;
      by_gt[std::int32_t(keys[i] >> 32)].push_back({std::int32_t(keys[i] & 0xffffffffu), std::int64_t(j - i)});
      i = j;
    }
  }

  std::int64_t union_of(std::int32_t g, std::int32_t p, std::int64_t inter) const {
    return gt_area[g] + pred_area[p] - inter;
  }
};

/// a/b > c/d for positive denominators, exact.
inline bool ratio_greater(std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) { return a * d > c * b; }

struct GtMatch {
  std::int32_t gt = 0;
  std::int32_t pred = 0;  // 0 = no overlapping prediction
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
  double iou() const { return union_ > 0 ? double(intersection) / double(union_) : 0.0; }
};

struct MatchResult {
  std::vector<GtMatch> matches;            // one per GT instance, label order
  std::vector<std::int32_t> unmatched;     // predictions never selected
  std::int64_t unmatched_area = 0;
};

/// Best-IoU prediction for every GT instance. In the literal form each GT
/// chooses independently; with `mark_used` a prediction taken by an earlier
/// GT (label order) is no longer available.
inline MatchResult match_instances(const LabelMap& gt, const LabelMap& pred, bool mark_used = false) {
  const Overlap ov(gt, pred);
  MatchResult r;
  std::vector<bool> used(ov.pred_area.size(), false);
  for (std::int32_t g = 1; g < std::int32_t(ov.gt_area.size()); ++g) {
    if (ov.gt_area[g] == 0) continue;
    GtMatch m{g, 0, 0, ov.gt_area[g]};
    if (auto it = ov.by_gt.find(g); it != ov.by_gt.end()) {
      for (const auto& [p, inter] : it->second) {
        if (mark_used && used[p]) continue;
        const std::int64_t u = ov.union_of(g, p, inter);
        if (m.pred == 0 || ratio_greater(inter, u, m.intersection, m.union_)) m = {g, p, inter, u};
      }
    }
    if (m.pred) used[m.pred] = true;
    r.matches.push_back(m);
  }
  for (std::int32_t p = 1; p < std::int32_t(ov.pred_area.size()); ++p)
    if (ov.pred_area[p] > 0 && !used[p]) {
      r.unmatched.push_back(p);
      r.unmatched_area += ov.pred_area[p];
    }
  return r;
}

/// Aggregated Jaccard Index. Two empty maps score 1.
inline double aji(const LabelMap& gt, const LabelMap& pred, bool mark_used = false) {
  const MatchResult r = match_instances(gt, pred, mark_used);
  std::int64_t num = 0, den = r.unmatched_area;
  for (const auto& m : r.matches) {
    num += m.intersection;
    den += m.union_;
  }
  return den == 0 ? 1.0 : double(num) / double(den);
}

struct DetectionScore {
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t true_positives = 0, gt_count = 0, pred_count = 0;
};

/// One-to-one greedy matching by descending IoU among pairs at or above the
/// threshold. Two empty maps score 1 throughout.
inline DetectionScore f1_detection(const LabelMap& gt, const LabelMap& pred, double iou_threshold = 0.5) {
  const Overlap ov(gt, pred);
  DetectionScore s;
  for (std::size_t g = 1; g < ov.gt_area.size(); ++g) s.gt_count += ov.gt_area[g] > 0;
  for (std::size_t p = 1; p < ov.pred_area.size(); ++p) s.pred_count += ov.pred_area[p] > 0;
  struct Pair {
    std::int32_t g, p;
    std::int64_t inter, uni;
  };
  std::vector<Pair> pairs;
  for (const auto& [g, row] : ov.by_gt)
    for (const auto& [p, inter] : row) {
      const std::int64_t u = ov.union_of(g, p, inter);
      if (double(inter) >= iou_threshold * double(u)) pairs.push_back({g, p, inter, u});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return ratio_greater(a.inter, a.uni, b.inter, b.uni);
  });
  std::vector<bool> g_used(ov.gt_area.size(), false), p_used(ov.pred_area.size(), false);
  for (const auto& pr : pairs) {
    if (g_used[pr.g] || p_used[pr.p]) continue;
    g_used[pr.g] = p_used[pr.p] = true;
    ++s.true_positives;
  }
  if (s.gt_count == 0 && s.pred_count == 0) {
    s.precision = s.recall = s.f1 = 1.0;
    return s;
  }
  s.precision = s.pred_count ? double(s.true_positives) / double(s.pred_count) : 0.0;
  s.recall = s.gt_count ? double(s.true_positives) / double(s.gt_count) : 0.0;
  s.f1 = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

struct ImageMetrics {
  std::string image;
  Split split = Split::train;
  double aji = 0, precision = 0, recall = 0, f1 = 0;
  std::int64_t gt_instances = 0, pred_instances = 0;
};

struct SplitSummary {
  std::size_t images = 0;
  double aji = 0, precision = 0, recall = 0, f1 = 0;
};

struct MetricsReport {
  std::vector<ImageMetrics> images;
  std::vector<std::string> missing;  // expected prediction files that were absent

  ImageMetrics& add(const std::string& name, Split split, const LabelMap& gt, const LabelMap& pred,
                    bool mark_used = false) {
    const auto d = f1_detection(gt, pred);
    images.push_back({name, split, aji(gt, pred, mark_used), d.precision, d.recall, d.f1, d.gt_count, d.pred_count});
    return images.back();
  }

  std::map<std::string, SplitSummary> split_means() const {
    std::map<std::string, SplitSummary> out;
    for (const auto& m : images) {
      for (const std::string& key : {to_string(m.split), std::string("all")}) {
        auto& s = out[key];
        ++s.images;
        s.aji += m.aji;
        s.precision += m.precision;
        s.recall += m.recall;
        s.f1 += m.f1;
      }
    }
    for (auto& [k, s] : out) {
      s.aji /= double(s.images);
      s.precision /= double(s.images);
      s.recall /= double(s.images);
      s.f1 /= double(s.images);
    }
    return out;
  }

  double mean_aji(Split s) const {
    const auto means = split_means();
    const auto it = means.find(to_string(s));
    if (it == means.end()) throw ContractError("report has no images in split " + to_string(s));
    return it->second.aji;
  }

  void write_csv(std::ostream& os) const {
    os << "image,split,aji,precision,recall,f1\n";
    os.precision(10);
    for (const auto& m : images)
      os << m.image << ',' << to_string(m.split) << ',' << m.aji << ',' << m.precision << ',' << m.recall << ','
         << m.f1 << '\n';
  }

  nlohmann::json summary() const {
    nlohmann::json splits = nlohmann::json::object();
    for (const auto& [k, s] : split_means())
      splits[k] = {{"images", s.images}, {"aji", s.aji}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
    std::int64_t gt = 0, pred = 0;
    for (const auto& m : images) {
      gt += m.gt_instances;
      pred += m.pred_instances;
    }
    return {{"splits", splits}, {"missing", missing}, {"gt_instances", gt}, {"pred_instances", pred}};
  }
};

/// Scores prediction maps in `pred_dir` (named like the manifest's label
/// files, without the directory) against a corpus, for the given splits.
inline MetricsReport evaluate_corpus(const Corpus& corpus, const std::filesystem::path& pred_dir,
                                     const std::vector<Split>& splits, bool mark_used = false) {
  MetricsReport report;
  std::size_t selected = 0;
  for (const auto& e : corpus.manifest.samples) {
    if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) continue;
    ++selected;
    const auto name = std::filesystem::path(e.labels).filename();
    const auto pred_path = pred_dir / name;
    if (!std::filesystem::exists(pred_path)) {
      report.missing.push_back(name.string());
      continue;
    }
    report.add(name.string(), e.split, corpus.labels(e), png::read_labels16(pred_path.string()), mark_used);
  }
  if (selected == 0) throw ConfigError("no corpus samples in the requested splits");
  return report;
}

}  // namespace cianet
