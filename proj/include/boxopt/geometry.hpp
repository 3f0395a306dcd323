#pragma once

/// @file geometry.hpp
/// Axis-aligned bounding boxes: IoU, the scale-normalized coordinate
/// transform used by the GP kernel, and greedy non-maximum suppression.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace boxopt {

/// Box given by its top-left (u1, v1) and bottom-right (u2, v2) corners,
/// in continuous pixel coordinates. Width and height are strictly positive.
class BoundingBox {
 public:
  BoundingBox(double u1, double v1, double u2, double v2)
      : u1_(u1), v1_(v1), u2_(u2), v2_(v2) {
    if (!(std::isfinite(u1) && std::isfinite(v1) && std::isfinite(u2) &&
          std::isfinite(v2)) ||
        !(u2 > u1) || !(v2 > v1)) {
      std::ostringstream msg;
      msg << "invalid bounding box (" << u1 << ", " << v1 << ", " << u2 << ", "
          << v2 << ")";
      throw std::invalid_argument(msg.str());
    }
  }

  /// Builds a box from its center and size.
  static BoundingBox from_center(double cu, double cv, double w, double h) {
    return {cu - 0.5 * w, cv - 0.5 * h, cu + 0.5 * w, cv + 0.5 * h};
  }

  static bool is_valid(double u1, double v1, double u2, double v2) {
    return std::isfinite(u1) && std::isfinite(v1) && std::isfinite(u2) &&
           std::isfinite(v2) && u2 > u1 && v2 > v1;
  }

  double u1() const { return u1_; }
  double v1() const { return v1_; }
  double u2() const { return u2_; }
  double v2() const { return v2_; }

  double center_u() const { return 0.5 * (u1_ + u2_); }
  double center_v() const { return 0.5 * (v1_ + v2_); }
  double width() const { return u2_ - u1_; }
  double height() const { return v2_ - v1_; }
  double area() const { return width() * height(); }

  std::array<double, 4> coords() const { return {u1_, v1_, u2_, v2_}; }

  BoundingBox scaled(double s) const {
    return {s * u1_, s * v1_, s * u2_, s * v2_};
  }

  friend bool operator==(const BoundingBox& a, const BoundingBox& b) {
    return a.coords() == b.coords();
  }
  /// Lexicographic on (u1, v1, u2, v2); used for deterministic tie-breaks.
  friend bool operator<(const BoundingBox& a, const BoundingBox& b) {
    return a.coords() < b.coords();
  }

 private:
  double u1_, v1_, u2_, v2_;
};

inline std::ostream& operator<<(std::ostream& os, const BoundingBox& b) {
  return os << "(" << b.u1() << ", " << b.v1() << ", " << b.u2() << ", "
            << b.v2() << ")";
}

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.u2(), b.u2()) - std::max(a.u1(), b.u1());
  const double ih = std::min(a.v2(), b.v2()) - std::max(a.v1(), b.v1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

/// Intersection over union. Boxes that only touch along an edge have IoU 0.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a == b) return 1.0;
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

/// [center_u / e^z, center_v / e^z, log w, log h]
using TransformedBox = std::array<double, 4>;

inline TransformedBox psi_transform(const BoundingBox& y, double z) {
  const double scale = std::exp(-z);
  return {y.center_u() * scale, y.center_v() * scale, std::log(y.width()),
          std::log(y.height())};
}

/// (center_u, center_v, log w, log h): the unscaled parameterization in which
/// box searches and perturbations are carried out.
using CenterLogSize = std::array<double, 4>;

inline CenterLogSize to_center_log_size(const BoundingBox& y) {
  return {y.center_u(), y.center_v(), std::log(y.width()),
          std::log(y.height())};
}

inline BoundingBox from_center_log_size(const CenterLogSize& p) {
  return BoundingBox::from_center(p[0], p[1], std::exp(p[2]), std::exp(p[3]));
}

struct ScoredBox {
  BoundingBox box;
  double score;
};

/// Greedy NMS: repeatedly keeps the highest-scoring remaining box and drops
/// every box overlapping it with IoU above `overlap_threshold`. Equal scores
/// are ordered lexicographically by box coordinates.
inline std::vector<std::size_t> greedy_nms_indices(
    const std::vector<ScoredBox>& dets, double overlap_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    if (!(dets[a].box == dets[b].box)) return dets[a].box < dets[b].box;
    return a < b;
  });

  std::vector<std::size_t> keep;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t cur = order[i];
    if (suppressed[cur]) continue;
    keep.push_back(cur);
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const std::size_t other = order[j];
      if (!suppressed[other] &&
          iou(dets[cur].box, dets[other].box) > overlap_threshold) {
        suppressed[other] = true;
      }
    }
  }
  return keep;
}

inline std::vector<ScoredBox> greedy_nms(const std::vector<ScoredBox>& dets,
                                         double overlap_threshold) {
  if (overlap_threshold < 0.0 || overlap_threshold > 1.0) {
    throw std::invalid_argument("NMS overlap threshold must lie in [0, 1]");
  }
  std::vector<ScoredBox> out;
  for (std::size_t idx : greedy_nms_indices(dets, overlap_threshold)) {
    out.push_back(dets[idx]);
  }
  return out;
}

}  // namespace boxopt
