#pragma once

/// @file gp_training.hpp
/// Observation sets for learning GP hyperparameters: for every annotated
/// object, the scored boxes that overlap it.

#include <random>
#include <vector>

#include "boxopt/gp.hpp"
#include "boxopt/harness/dataset.hpp"
#include "boxopt/proposals.hpp"
#include "boxopt/scoring.hpp"

namespace boxopt::harness {

struct GpTrainingSets {
  std::vector<ObservationSet> sets;
  std::size_t dropped = 0;
};

/// Per non-difficult object y_i: {y_i} plus proposals plus `random_extra`
/// random boxes from the neighbourhood of y_i, kept when IoU(., y_i) > rho
/// and scored for the object's category. Sets with fewer than 3 distinct
/// boxes are dropped.
inline GpTrainingSets build_gp_training_sets(const DatasetManifest& manifest,
                                             const ProposalMap& proposals,
                                             const Scorer& scorer, double rho,
                                             std::size_t random_extra,
                                             std::uint64_t seed) {
  if (!(rho > 0.0 && rho < 1.0)) throw ConfigError("gp_training: rho must lie in (0,1)");
  GpTrainingSets out;
  std::mt19937_64 rng(seed);
  for (const auto& im : manifest.images) {
    const auto pit = proposals.find(im.id);
    for (const auto& obj : im.objects) {
      if (obj.difficult) continue;
      std::vector<BoundingBox> boxes{obj.box};
      if (pit != proposals.end()) {
        for (const auto& b : pit->second) {
          if (iou(b, obj.box) > rho) boxes.push_back(b);
        }
      }
      for (std::size_t k = 0; k < random_extra; ++k) {
        const auto b = boxopt::detail::sample_neighbourhood(obj.box, rho, rng);
        if (iou(b, obj.box) > rho) boxes.push_back(b);
      }
      const auto scores = scorer.score({im.id, obj.category, boxes});
      ObservationSet set;
      for (std::size_t i = 0; i < boxes.size(); ++i) set.add(boxes[i], scores[i]);
      if (set.size() < 3) {
        ++out.dropped;
        continue;
      }
      out.sets.push_back(std::move(set));
    }
  }
  return out;
}

}  // namespace boxopt::harness
