#pragma once

/// @file proposals.hpp
/// Initial regions: perturbation-based synthetic proposals, the proposal CSV
/// file, and the local random search baseline.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/fgs.hpp"
#include "boxopt/geometry.hpp"
#include "boxopt/scoring.hpp"

namespace boxopt {

using ProposalMap = std::map<std::string, std::vector<BoundingBox>>;

class ProposalSource {
 public:
  virtual ~ProposalSource() = default;
  virtual std::vector<BoundingBox> proposals(const std::string& image_id,
                                             const std::string& category) const = 0;
};

/// Serves a fixed per-image table (e.g. a loaded proposal file); the
/// category is ignored.
class TableProposalSource : public ProposalSource {
 public:
  explicit TableProposalSource(ProposalMap table) : table_(std::move(table)) {}
  std::vector<BoundingBox> proposals(const std::string& image_id,
                                     const std::string&) const override {
    const auto it = table_.find(image_id);
    return it == table_.end() ? std::vector<BoundingBox>{} : it->second;
  }

 private:
  ProposalMap table_;
};

struct ImageBounds {
  double width;
  double height;
};

struct PerturbConfig {
  std::size_t boxes_per_gt = 30;
  /// Std. dev. of the center shift as a fraction of the GT width/height.
  double center_jitter = 0.15;
  /// Std. dev. of the log width/height perturbation.
  double log_size_jitter = 0.15;
  std::size_t background_count = 50;
  /// Background box side lengths as fractions of the image side.
  double background_min_frac = 0.05;
  double background_max_frac = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(center_jitter >= 0.0) || !(log_size_jitter >= 0.0)) {
      throw ConfigError("proposals: jitter scales must be >= 0");
    }
    if (!(background_min_frac > 0.0 && background_min_frac <= background_max_frac &&
          background_max_frac <= 1.0)) {
      throw ConfigError("proposals: need 0 < background_min_frac <= background_max_frac <= 1");
    }
  }
};

namespace detail {

inline bool clip_to_image(double& u1, double& v1, double& u2, double& v2,
                          const ImageBounds& img) {
  u1 = std::clamp(u1, 0.0, img.width);
  u2 = std::clamp(u2, 0.0, img.width);
  v1 = std::clamp(v1, 0.0, img.height);
  v2 = std::clamp(v2, 0.0, img.height);
  // Reject slivers produced by clipping.
  return u2 - u1 >= 1.0 && v2 - v1 >= 1.0;
}

}  // namespace detail

/// Gaussian jitter of each GT in (center, log size) space, clipped to the
/// image, followed by uniformly placed background boxes.
inline std::vector<BoundingBox> perturbation_proposals(
    const std::vector<BoundingBox>& gts, const PerturbConfig& config,
    const ImageBounds& image) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr int kAttempts = 100;

  std::vector<BoundingBox> out;
  for (const auto& gt : gts) {
    for (std::size_t k = 0; k < config.boxes_per_gt; ++k) {
      for (int a = 0; a < kAttempts; ++a) {
        const double cu = gt.center_u() + config.center_jitter * gt.width() * g(rng);
        const double cv = gt.center_v() + config.center_jitter * gt.height() * g(rng);
        const double w = gt.width() * std::exp(config.log_size_jitter * g(rng));
        const double h = gt.height() * std::exp(config.log_size_jitter * g(rng));
        double u1 = cu - 0.5 * w, v1 = cv - 0.5 * h, u2 = cu + 0.5 * w,
               v2 = cv + 0.5 * h;
        if (config.center_jitter == 0.0 && config.log_size_jitter == 0.0) {
          u1 = gt.u1(); v1 = gt.v1(); u2 = gt.u2(); v2 = gt.v2();
        }
        if (detail::clip_to_image(u1, v1, u2, v2, image)) {
          out.emplace_back(u1, v1, u2, v2);
          break;
        }
      }
    }
  }
  for (std::size_t k = 0; k < config.background_count; ++k) {
    const double lo = config.background_min_frac, hi = config.background_max_frac;
    const double w = image.width * (lo + (hi - lo) * unit(rng));
    const double h = image.height * (lo + (hi - lo) * unit(rng));
    const double u1 = (image.width - w) * unit(rng);
    const double v1 = (image.height - h) * unit(rng);
    out.emplace_back(u1, v1, u1 + w, v1 + h);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Local random search

struct RandomSearchResult {
  ScoredBoxSet boxes;
  std::size_t regions = 0;
  std::size_t requested = 0;
  std::size_t sampled = 0;
  std::vector<std::size_t> sampled_per_region;
};

namespace detail {

/// Uniform draw from a (center, log size) box that contains every box with
/// IoU > rho against y: sizes within a factor 1/rho, centers within the sum
/// of half-sizes.
inline BoundingBox sample_neighbourhood(const BoundingBox& y, double rho,
                                        std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double log_range = std::log(1.0 / rho);
  const double center_range = 0.5 * (1.0 + 1.0 / rho);
  const double cu = y.center_u() + center_range * y.width() * unit(rng);
  const double cv = y.center_v() + center_range * y.height() * unit(rng);
  const double lw = std::log(y.width()) + log_range * unit(rng);
  const double lh = std::log(y.height()) + log_range * unit(rng);
  return BoundingBox::from_center(cu, cv, std::exp(lw), std::exp(lh));
}

}  // namespace detail

/// Region r receives budgets[r] boxes sampled uniformly from a box in
/// (center, log size) space around its local optimum and kept only when
/// IoU > rho with it (100 attempts per needed box).
inline RandomSearchResult local_random_search(
    const Scorer& scorer, const ScoredBoxSet& initial,
    const std::vector<std::size_t>& budgets, double f_prune,
    double nms_threshold, std::uint64_t seed, double rho = 0.3) {
  RandomSearchResult res;
  res.boxes = initial;
  const auto optima = local_optima(initial, f_prune, nms_threshold);
  res.regions = optima.size();
  std::mt19937_64 rng(seed);

  std::vector<BoundingBox> fresh;
  for (std::size_t r = 0; r < optima.size() && r < budgets.size(); ++r) {
    const auto& y = optima[r].box;
    res.requested += budgets[r];
    const std::size_t before = fresh.size();
    for (std::size_t k = 0; k < budgets[r]; ++k) {
      for (int a = 0; a < 100; ++a) {
        const auto cand = detail::sample_neighbourhood(y, rho, rng);
        if (iou(cand, y) > rho) {
          fresh.push_back(cand);
          break;
        }
      }
    }
    res.sampled_per_region.push_back(fresh.size() - before);
  }
  res.sampled = fresh.size();
  if (!fresh.empty()) {
    const auto scores = scorer.score({initial.image_id, initial.category, fresh});
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      res.boxes.items.push_back({fresh[i], scores[i], Provenance::random_search});
    }
  }
  return res;
}

/// Same budget for every region.
inline RandomSearchResult local_random_search(const Scorer& scorer,
                                              const ScoredBoxSet& initial,
                                              std::size_t budget_per_region,
                                              double f_prune,
                                              double nms_threshold,
                                              std::uint64_t seed) {
  const auto n = local_optima(initial, f_prune, nms_threshold).size();
  return local_random_search(scorer, initial,
                             std::vector<std::size_t>(n, budget_per_region),
                             f_prune, nms_threshold, seed);
}

/// Spreads `total` boxes as evenly as possible over `regions`, earlier
/// regions taking the remainder.
inline std::vector<std::size_t> split_budget(std::size_t total,
                                             std::size_t regions) {
  std::vector<std::size_t> out(regions, 0);
  for (std::size_t r = 0; r < regions; ++r) {
    out[r] = total / regions + (r < total % regions ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proposal CSV: header "image_id,u1,v1,u2,v2", one box per row.

inline std::string format_double(double v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == ',') {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

/// `comment`, if given, is written as a leading "# " line; readers skip it.
inline void save_proposals(const std::string& path, const ProposalMap& proposals,
                           const std::string& comment = {}) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  if (!comment.empty()) os << "# " << comment << '\n';
  os << "image_id,u1,v1,u2,v2\n";
  for (const auto& [id, boxes] : proposals) {
    for (const auto& b : boxes) {
      os << id << ',' << format_double(b.u1()) << ',' << format_double(b.v1())
         << ',' << format_double(b.u2()) << ',' << format_double(b.v2()) << '\n';
    }
  }
}

inline ProposalMap load_proposals(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  ProposalMap out;
  std::string line;
  std::size_t lineno = 0;
  bool seen_row = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!seen_row && line.rfind("image_id", 0) == 0) {
      seen_row = true;
      continue;
    }
    seen_row = true;
    const auto f = split_csv_line(line);
    const auto where = path + ":" + std::to_string(lineno);
    if (f.size() != 5) throw DataError(where + ": expected 5 fields");
    double c[4];
    for (int i = 0; i < 4; ++i) {
      if (!parse_double(f[i + 1], c[i])) {
        throw DataError(where + ": cannot parse '" + std::string(f[i + 1]) + "'");
      }
    }
    if (!BoundingBox::is_valid(c[0], c[1], c[2], c[3])) {
      throw DataError(where + ": invalid box (need u1 < u2 and v1 < v2)");
    }
    out[std::string(f[0])].emplace_back(c[0], c[1], c[2], c[3]);
  }
  return out;
}

}  // namespace boxopt
