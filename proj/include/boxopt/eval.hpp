#pragma once

/// @file eval.hpp
/// PASCAL-style detection evaluation: matching, AP (11-point and all-points),
/// mAP, PR curves and per-object localization histograms.

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "boxopt/geometry.hpp"
#include "boxopt/scoring.hpp"

namespace boxopt {

struct Detection {
  std::string image_id;
  std::string category;
  BoundingBox box;
  double score;
};

/// Ground truth of one category, keyed by image id.
using GroundTruthIndex = std::map<std::string, std::vector<GroundTruthObject>>;

enum class MatchFlag : std::uint8_t { tp, fp, ignored };

struct MatchedDetection {
  Detection det;
  MatchFlag flag;
};

enum class ApMode { eleven_point, all_points };

/// Descending score; ties by image id then lexicographic box order.
inline void sort_detections(std::vector<Detection>& dets) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.image_id != b.image_id) return a.image_id < b.image_id;
    return a.box < b.box;
  });
}

/// Greedy matching in descending score order. A detection is a TP when its
/// best-IoU unmatched, non-difficult GT exceeds the threshold; otherwise it
/// is ignored if it overlaps a difficult GT above the threshold, else FP.
/// Only GTs whose category equals the detection's are considered.
inline std::vector<MatchedDetection> match_detections(
    std::vector<Detection> dets, const GroundTruthIndex& gts,
    double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("match_detections: threshold must lie in (0,1)");
  }
  sort_detections(dets);
  std::map<std::string, std::vector<char>> used;
  for (const auto& [id, objs] : gts) used[id].assign(objs.size(), 0);

  std::vector<MatchedDetection> out;
  out.reserve(dets.size());
  for (auto& d : dets) {
    MatchFlag flag = MatchFlag::fp;
    const auto it = gts.find(d.image_id);
    if (it != gts.end()) {
      const auto& objs = it->second;
      auto& taken = used[d.image_id];
      double best = -1.0;
      std::size_t best_k = objs.size();
      bool near_difficult = false;
      for (std::size_t k = 0; k < objs.size(); ++k) {
        if (objs[k].category != d.category) continue;
        const double o = iou(d.box, objs[k].box);
        if (objs[k].difficult) {
          near_difficult = near_difficult || o > iou_threshold;
          continue;
        }
        if (!taken[k] && o > best) {
          best = o;
          best_k = k;
        }
      }
      if (best_k < objs.size() && best > iou_threshold) {
        taken[best_k] = 1;
        flag = MatchFlag::tp;
      } else if (near_difficult) {
        flag = MatchFlag::ignored;
      }
    }
    out.push_back({std::move(d), flag});
  }
  return out;
}

struct PrPoint {
  double score;
  double precision;
  double recall;
};

/// Precision/recall after each counted (non-ignored) detection, in order.
inline std::vector<PrPoint> pr_curve(const std::vector<MatchedDetection>& matched,
                                     std::size_t n_gt) {
  std::vector<PrPoint> out;
  std::size_t tp = 0, seen = 0;
  for (const auto& m : matched) {
    if (m.flag == MatchFlag::ignored) continue;
    ++seen;
    if (m.flag == MatchFlag::tp) ++tp;
    out.push_back({m.det.score, static_cast<double>(tp) / seen,
                   n_gt ? static_cast<double>(tp) / n_gt : 0.0});
  }
  return out;
}

/// `tp[i]` flags the i-th detection in descending score order.
inline double average_precision(const std::vector<bool>& tp, std::size_t n_gt,
                                ApMode mode = ApMode::eleven_point) {
  if (n_gt == 0) return tp.empty() ? 1.0 : 0.0;
  std::vector<double> prec, rec;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    if (tp[i]) ++hits;
    prec.push_back(static_cast<double>(hits) / (i + 1));
    rec.push_back(static_cast<double>(hits) / n_gt);
  }
  if (mode == ApMode::eleven_point) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double r = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < rec.size(); ++i) {
        // Tolerance keeps e.g. 3/10 >= 0.3 despite rounding of k/10.
        if (rec[i] >= r - 1e-12) p = std::max(p, prec[i]);
      }
      ap += p;
    }
    return ap / 11.0;
  }
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), rec.begin(), rec.end());
  mpre.insert(mpre.end(), prec.begin(), prec.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) {
    mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  }
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i) {
    ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  }
  return ap;
}

inline std::size_t count_positives(const GroundTruthIndex& gts,
                                   const std::string& category) {
  std::size_t n = 0;
  for (const auto& [id, objs] : gts) {
    for (const auto& o : objs) n += (o.category == category && !o.difficult);
  }
  return n;
}

struct CategoryEval {
  double ap = 0.0;
  std::size_t n_gt = 0;
  std::vector<PrPoint> pr;
};

struct EvalResult {
  double iou_threshold = 0.5;
  std::map<std::string, CategoryEval> categories;
  double map = 0.0;
};

/// Categories are those present in the ground truth.
inline EvalResult evaluate(const std::vector<Detection>& dets,
                           const GroundTruthIndex& gts, double iou_threshold,
                           ApMode mode = ApMode::eleven_point) {
  std::set<std::string> cats;
  for (const auto& [id, objs] : gts) {
    for (const auto& o : objs) cats.insert(o.category);
  }
  std::map<std::string, std::vector<Detection>> by_cat;
  for (const auto& d : dets) {
    if (cats.count(d.category)) by_cat[d.category].push_back(d);
  }
  EvalResult res;
  res.iou_threshold = iou_threshold;
  double total = 0.0;
  for (const auto& c : cats) {
    CategoryEval ce;
    ce.n_gt = count_positives(gts, c);
    const auto matched = match_detections(by_cat[c], gts, iou_threshold);
    std::vector<bool> flags;
    for (const auto& m : matched) {
      if (m.flag != MatchFlag::ignored) flags.push_back(m.flag == MatchFlag::tp);
    }
    ce.ap = average_precision(flags, ce.n_gt, mode);
    ce.pr = pr_curve(matched, ce.n_gt);
    total += ce.ap;
    res.categories[c] = std::move(ce);
  }
  res.map = cats.empty() ? 0.0 : total / static_cast<double>(cats.size());
  return res;
}

using LocalizationHistogram = std::array<std::size_t, 10>;

struct LocalizationResult {
  std::map<std::string, LocalizationHistogram> histograms;
  /// Best IoU per GT, in (image, object) order, per category.
  std::map<std::string, std::vector<double>> best_iou;
};

inline std::size_t localization_bin(double v) {
  return std::min<std::size_t>(9, static_cast<std::size_t>(std::max(0.0, v) * 10.0));
}

/// For every non-difficult GT, the best IoU over detections of its category
/// on its image (0 if none), histogrammed into ten bins of width 0.1.
inline LocalizationResult localization_distribution(
    const std::vector<Detection>& dets, const GroundTruthIndex& gts) {
  std::map<std::pair<std::string, std::string>, std::vector<const Detection*>> index;
  for (const auto& d : dets) index[{d.image_id, d.category}].push_back(&d);
  LocalizationResult res;
  for (const auto& [id, objs] : gts) {
    for (const auto& o : objs) {
      if (o.difficult) continue;
      double best = 0.0;
      if (auto it = index.find({id, o.category}); it != index.end()) {
        for (const auto* d : it->second) best = std::max(best, iou(d->box, o.box));
      }
      auto& h = res.histograms[o.category];
      ++h[localization_bin(best)];
      res.best_iou[o.category].push_back(best);
    }
  }
  return res;
}

/// Detection-time post-processing: drop scores <= threshold, then greedy NMS.
inline std::vector<ScoredBox> postprocess(const std::vector<ScoredBox>& boxes,
                                          double score_threshold,
                                          double nms_threshold) {
  std::vector<ScoredBox> kept;
  for (const auto& b : boxes) {
    if (b.score > score_threshold) kept.push_back(b);
  }
  return greedy_nms(kept, nms_threshold);
}

}  // namespace boxopt
