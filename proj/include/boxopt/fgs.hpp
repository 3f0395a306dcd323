#pragma once

/// @file fgs.hpp
/// Local fine-grained search: repeatedly find local score optima, model the
/// score around each with a GP at several IoU radii, and score the box that
/// maximizes expected improvement.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/geometry.hpp"
#include "boxopt/gp.hpp"
#include "boxopt/scoring.hpp"

namespace boxopt {

struct FgsConfig {
  int t_max = 8;
  std::vector<double> rho_levels{0.3, 0.5, 0.7};
  double f_prune = 0.0;
  /// NMS used to pick local optima, not the final post-processing NMS.
  double nms_threshold = 0.1;
  double min_ei = 1e-4;
  std::size_t max_local_obs = 150;
  /// Padding of the EI search box around the local observations.
  double search_margin = 0.2;
  /// Proposals this close (pixels, every coordinate) to a known box are dropped.
  double duplicate_tolerance = 0.5;
  LatentScaleOptions latent{};
  EiSearchOptions ei{};

  void validate() const {
    if (t_max < 0) throw ConfigError("fgs.t_max must be >= 0");
    if (rho_levels.empty()) throw ConfigError("fgs.rho_levels must be non-empty");
    for (std::size_t i = 0; i < rho_levels.size(); ++i) {
      if (!(rho_levels[i] > 0.0 && rho_levels[i] < 1.0)) {
        throw ConfigError("fgs.rho_levels entries must lie in (0,1)");
      }
      if (i > 0 && !(rho_levels[i] > rho_levels[i - 1])) {
        throw ConfigError("fgs.rho_levels must be strictly increasing");
      }
    }
    if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) {
      throw ConfigError("fgs.nms_threshold must lie in [0,1]");
    }
    if (max_local_obs < 1) throw ConfigError("fgs.max_local_obs must be >= 1");
    if (!(min_ei >= 0.0)) throw ConfigError("fgs.min_ei must be >= 0");
    if (!(search_margin >= 0.0)) throw ConfigError("fgs.search_margin must be >= 0");
  }
};

struct FgsResult {
  ScoredBoxSet boxes;
  /// best_score_trace[t] is max score in D after t iterations (t = 0: input).
  std::vector<double> best_score_trace;
  int iterations = 0;
  bool pruned_empty = false;
  std::size_t proposals_added = 0;
  /// Sum over executed iterations of |NMS survivors| * |rho_levels|.
  std::size_t proposal_bound = 0;
  std::size_t gp_failures = 0;
  std::size_t rejected_low_ei = 0;
  std::size_t rejected_duplicate = 0;
  std::vector<std::size_t> local_set_sizes;
};

/// D_local = {(y, f) in D : IoU(y, y_best) > rho}, deduplicated. Above `cap`
/// only the highest-scored boxes are kept, y_best always among them.
inline ObservationSet build_local_set(const ScoredBoxSet& all,
                                      const BoundingBox& y_best, double rho,
                                      std::size_t cap) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw std::invalid_argument("build_local_set: rho must lie in (0,1)");
  }
  std::vector<const ScoredCandidate*> near;
  for (const auto& c : all.items) {
    if (iou(c.box, y_best) > rho) near.push_back(&c);
  }
  std::sort(near.begin(), near.end(), [](const auto* a, const auto* b) {
    if (a->score != b->score) return a->score > b->score;
    return a->box < b->box;
  });
  ObservationSet obs;
  // Score of y_best as recorded in D; it may be absent when called directly.
  const auto self = std::find_if(near.begin(), near.end(),
                                 [&](const auto* c) { return c->box == y_best; });
  if (self != near.end() && cap >= 1) obs.add((*self)->box, (*self)->score);
  for (const auto* c : near) {
    if (obs.size() >= cap) break;
    obs.add(c->box, c->score);
  }
  return obs;
}

/// Boxes of D scoring above f_prune, reduced to local optima by greedy NMS.
inline std::vector<ScoredBox> local_optima(const ScoredBoxSet& d,
                                           double f_prune,
                                           double nms_threshold) {
  std::vector<ScoredBox> pruned;
  for (const auto& c : d.items) {
    if (c.score > f_prune) pruned.push_back({c.box, c.score});
  }
  return greedy_nms(pruned, nms_threshold);
}

namespace detail {

inline bool near_duplicate(const BoundingBox& a, const BoundingBox& b,
                           double tol) {
  const auto ca = a.coords(), cb = b.coords();
  for (int i = 0; i < 4; ++i) {
    if (std::abs(ca[i] - cb[i]) > tol) return false;
  }
  return true;
}

}  // namespace detail

inline FgsResult local_fgs(const Scorer& scorer, const ScoredBoxSet& initial,
                           const GpHyperParams& hyper,
                           const FgsConfig& config = {}) {
  config.validate();
  if (initial.empty()) throw DataError("local_fgs: initial box set is empty");

  FgsResult res;
  res.boxes = initial;
  ScoredBoxSet& d = res.boxes;
  res.best_score_trace.push_back(d.best_score());

  for (int t = 1; t <= config.t_max; ++t) {
    const auto optima = local_optima(d, config.f_prune, config.nms_threshold);
    if (optima.empty()) {
      res.pruned_empty = true;
      break;
    }
    res.iterations = t;
    res.proposal_bound += optima.size() * config.rho_levels.size();

    std::vector<BoundingBox> proposals;
    for (const auto& opt : optima) {
      for (double rho : config.rho_levels) {
        const auto local = build_local_set(d, opt.box, rho, config.max_local_obs);
        res.local_set_sizes.push_back(local.size());
        EiMaximum best{opt.box, 0.0};
        try {
          const auto model = GpModel::fit(hyper, local, config.latent);
          const auto bounds =
              SearchBounds::around(local, opt.box, config.search_margin);
          // The local region is the IoU neighbourhood, not the hull.
          const auto region = [&](const BoundingBox& y) {
            return iou(y, opt.box) > rho;
          };
          best = maximize_ei(model, bounds, config.ei, region);
        } catch (const ConditioningError&) {
          ++res.gp_failures;
          continue;
        }
        if (!(best.ei >= config.min_ei)) {
          ++res.rejected_low_ei;
          continue;
        }
        const auto dup = [&](const BoundingBox& b) {
          return detail::near_duplicate(b, best.box, config.duplicate_tolerance);
        };
        if (std::any_of(d.items.begin(), d.items.end(),
                        [&](const auto& c) { return dup(c.box); }) ||
            std::any_of(proposals.begin(), proposals.end(), dup)) {
          ++res.rejected_duplicate;
          continue;
        }
        proposals.push_back(best.box);
      }
    }

    if (!proposals.empty()) {
      const auto scores = scorer.score({d.image_id, d.category, proposals});
      for (std::size_t i = 0; i < proposals.size(); ++i) {
        if (!std::isfinite(scores[i])) {
          throw DataError("scorer returned a non-finite score on image '" +
                          d.image_id + "'");
        }
        d.items.push_back({proposals[i], scores[i], Provenance::fgs});
      }
      res.proposals_added += proposals.size();
    }
    res.best_score_trace.push_back(d.best_score());
    // D is unchanged, so every later iteration would repeat this one.
    if (proposals.empty()) break;
  }
  return res;
}

}  // namespace boxopt
