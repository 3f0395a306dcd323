#pragma once

// Random problem generators shared by the unit tests and the acceptance run.

#include <random>
#include <vector>

#include "boxopt/gp.hpp"
#include "boxopt/structsvm.hpp"
#include "oracles.hpp"

namespace fixtures {

using boxopt::BoundingBox;
using boxopt::GpHyperParams;
using boxopt::ObservationSet;
using boxopt::StructuredLabel;
using boxopt::TrainingExample;
using Eigen::VectorXd;

inline oracle::Theta natural(const GpHyperParams& h) {
  return {h.beta(), h.m0, h.eta(), {h.lambda(0), h.lambda(1), h.lambda(2), h.lambda(3)}};
}

inline std::vector<oracle::Obs> to_oracle(const ObservationSet& s) {
  std::vector<oracle::Obs> out;
  for (const auto& o : s) out.push_back({o.box, o.score});
  return out;
}

inline BoundingBox jittered_box(std::mt19937_64& rng, double cu, double cv, double w,
                         double h, double center_sd, double log_sd) {
  std::normal_distribution<double> g(0.0, 1.0);
  return BoundingBox::from_center(cu + center_sd * w * g(rng),
                                  cv + center_sd * h * g(rng),
                                  w * std::exp(log_sd * g(rng)),
                                  h * std::exp(log_sd * g(rng)));
}

inline ObservationSet random_set(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ObservationSet s;
  while (static_cast<int>(s.size()) < n) {
    s.add(jittered_box(rng, 50, 40, 30, 20, 0.2, 0.2), u(rng));
  }
  return s;
}

inline GpHyperParams random_hyper(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return GpHyperParams::from_natural(
      std::exp(2.0 + 3.0 * u(rng)), u(rng) - 0.5, 0.2 + u(rng),
      {0.05 + u(rng), 0.05 + u(rng), 1.0 + 10.0 * u(rng), 1.0 + 10.0 * u(rng)});
}

inline TrainingExample to_example(const oracle::SvmExample& e) {
  TrainingExample ex;
  ex.image_id = "x";
  const auto d = e.positive ? e.gt.size() : (e.cands.empty() ? 0 : e.cands.front().size());
  ex.candidate_features.resize(static_cast<Eigen::Index>(e.cands.size()), d);
  for (std::size_t j = 0; j < e.cands.size(); ++j) {
    ex.candidate_features.row(static_cast<Eigen::Index>(j)) = e.cands[j].transpose();
    ex.output_set.emplace_back(0, 0, 1.0 + j, 1);
  }
  if (e.positive) {
    ex.label = StructuredLabel::object({0, 0, 1, 1});
    ex.gt_features = e.gt;
    ex.delta = Eigen::Map<const VectorXd>(e.delta.data(), static_cast<Eigen::Index>(e.delta.size()));
  }
  return ex;
}

inline std::vector<TrainingExample> to_examples(const std::vector<oracle::SvmExample>& v) {
  std::vector<TrainingExample> out;
  for (const auto& e : v) out.push_back(to_example(e));
  return out;
}

inline VectorXd randn(std::mt19937_64& rng, int d, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  VectorXd v(d);
  for (int k = 0; k < d; ++k) v[k] = g(rng);
  return v;
}

/// Positives have gt features around +mu, negatives candidates around -mu.
inline std::vector<oracle::SvmExample> svm_data(std::mt19937_64& rng, int m, int max_cands, int d) {
  std::uniform_int_distribution<int> nc(1, max_cands);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const VectorXd mu = randn(rng, d);
  std::vector<oracle::SvmExample> out;
  for (int i = 0; i < m; ++i) {
    oracle::SvmExample e;
    e.positive = i % 2 == 0;
    const int n = nc(rng);
    if (e.positive) {
      e.gt = mu + randn(rng, d, 0.5);
      for (int j = 0; j < n; ++j) {
        const double o = u(rng);
        e.cands.push_back(o * e.gt + (1 - o) * randn(rng, d, 0.5));
        e.delta.push_back(1 - o);
      }
    } else {
      for (int j = 0; j < n; ++j) e.cands.push_back(-0.3 * mu + randn(rng, d, 0.7));
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace fixtures
