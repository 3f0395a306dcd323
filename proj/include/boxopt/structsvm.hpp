#pragma once

/// @file structsvm.hpp
/// Localization-aware linear structured SVM. The constrained problem is never
/// built; training minimizes
///   1/2 |w|^2 + (1/M) (C1 sum_pos h_pos + C2 sum_neg h_neg)
/// with L-BFGS on subgradients, optionally with hard-example mining.

#include <Eigen/Core>
#include <algorithm>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/geometry.hpp"
#include "boxopt/lbfgs.hpp"
#include "boxopt/scoring.hpp"

namespace boxopt {

/// (l, box): l = +1 with a box, or l = -1 with no box.
struct StructuredLabel {
  int l = -1;
  std::optional<BoundingBox> box;

  static StructuredLabel object(const BoundingBox& b) { return {+1, b}; }
  static StructuredLabel none() { return {-1, std::nullopt}; }
  bool positive() const { return l == +1; }
};

/// 1 - IoU if both labels are positive, 0 if both negative, 1 otherwise.
inline double structured_loss(const StructuredLabel& y,
                              const StructuredLabel& yi) {
  if (y.positive() != yi.positive()) return 1.0;
  if (!y.positive()) return 0.0;
  return 1.0 - iou(*y.box, *yi.box);
}

/// One image (crop) with its candidate boxes Y_i and their features.
/// Positives carry exactly one ground-truth box.
struct TrainingExample {
  std::string image_id;
  StructuredLabel label;
  std::vector<BoundingBox> output_set;
  /// Row j holds phi(x_i, output_set[j]).
  Eigen::MatrixXd candidate_features;
  /// phi(x_i, y_i); empty for negatives.
  Eigen::VectorXd gt_features;
  /// Localization loss 1 - IoU(y_j, y_i) per candidate; empty for negatives.
  Eigen::VectorXd delta;

  bool positive() const { return label.positive(); }
  std::size_t candidates() const { return output_set.size(); }
  Eigen::Index dim() const {
    return positive() ? gt_features.size() : candidate_features.cols();
  }

  static TrainingExample make_positive(const std::string& image_id,
                                       const BoundingBox& gt,
                                       std::vector<BoundingBox> candidates,
                                       const FeatureProvider& provider) {
    TrainingExample ex;
    ex.image_id = image_id;
    ex.label = StructuredLabel::object(gt);
    ex.gt_features = provider.features(image_id, gt);
    ex.fill_candidates(std::move(candidates), provider);
    ex.delta.resize(static_cast<Eigen::Index>(ex.output_set.size()));
    for (std::size_t j = 0; j < ex.output_set.size(); ++j) {
      ex.delta[static_cast<Eigen::Index>(j)] =
          structured_loss(StructuredLabel::object(ex.output_set[j]), ex.label);
    }
    return ex;
  }

  static TrainingExample make_negative(const std::string& image_id,
                                       std::vector<BoundingBox> candidates,
                                       const FeatureProvider& provider) {
    TrainingExample ex;
    ex.image_id = image_id;
    ex.label = StructuredLabel::none();
    ex.fill_candidates(std::move(candidates), provider);
    if (ex.output_set.empty()) {
      ex.candidate_features.resize(0, static_cast<Eigen::Index>(provider.dim()));
    }
    return ex;
  }

 private:
  void fill_candidates(std::vector<BoundingBox> boxes,
                       const FeatureProvider& provider) {
    output_set = std::move(boxes);
    candidate_features.resize(static_cast<Eigen::Index>(output_set.size()),
                              static_cast<Eigen::Index>(provider.dim()));
    for (std::size_t j = 0; j < output_set.size(); ++j) {
      candidate_features.row(static_cast<Eigen::Index>(j)) =
          provider.features(image_id, output_set[j]).transpose();
    }
  }
};

struct TrainConfig {
  double C1 = 2.0;
  double C2 = 1.0;
  std::size_t update_threshold = 5000;
  int epochs = 2;
  double eps1 = 1e-4;
  double eps2 = 0.2;
  double gradient_tolerance = 1e-6;
  int max_iterations = 500;
  /// Limit positives to the number of active negative images at first-epoch
  /// updates.
  bool balance_first_epoch = true;
  /// Keep making passes after `epochs` until one activates nothing (capped at
  /// max_passes). Off by default.
  bool until_stable = false;
  int max_passes = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(C1 > 0.0) || !(C2 > 0.0)) throw ConfigError("train: C1 and C2 must be > 0");
    if (!(eps1 >= 0.0) || !(eps2 >= 0.0)) throw ConfigError("train: eps1 and eps2 must be >= 0");
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (update_threshold < 1) throw ConfigError("train: update_threshold must be >= 1");
    if (max_iterations < 1) throw ConfigError("train: max_iterations must be >= 1");
    if (max_passes < 1) throw ConfigError("train: max_passes must be >= 1");
  }
};

namespace detail {

inline void check_dim(const Eigen::VectorXd& w, const TrainingExample& ex) {
  if (ex.dim() != w.size() ||
      (ex.candidates() > 0 && ex.candidate_features.cols() != w.size())) {
    throw DataError("feature dimension of '" + ex.image_id + "' (" +
                    std::to_string(ex.dim()) + ") does not match w (" +
                    std::to_string(w.size()) + ")");
  }
}

/// The hinge terms an objective sums over: an example and which of its
/// candidates take part (null = all). `margin` toggles the positive margin
/// term (the (x_i, y_i) pair of the active set).
struct HingeTerm {
  const TrainingExample* ex;
  const std::vector<int>* active = nullptr;
  bool margin = true;
};

struct HingeEval {
  double value = 0.0;
  /// -1: inactive, -2: margin term, otherwise the maximizing candidate.
  int argmax = -1;
};

template <typename F>
void for_each_candidate(const HingeTerm& t, F&& f) {
  if (t.active) {
    for (int j : *t.active) f(j);
  } else {
    for (int j = 0; j < static_cast<int>(t.ex->candidates()); ++j) f(j);
  }
}

inline HingeEval eval_pos(const Eigen::VectorXd& w, const HingeTerm& t) {
  const auto& ex = *t.ex;
  const double s_gt = w.dot(ex.gt_features);
  HingeEval h;
  if (t.margin && 1.0 - s_gt > h.value) {
    h.value = 1.0 - s_gt;
    h.argmax = -2;
  }
  for_each_candidate(t, [&](int j) {
    const double v = ex.candidate_features.row(j).dot(w) - s_gt + ex.delta[j];
    if (v > h.value) {
      h.value = v;
      h.argmax = j;
    }
  });
  return h;
}

inline HingeEval eval_neg(const Eigen::VectorXd& w, const HingeTerm& t) {
  const auto& ex = *t.ex;
  HingeEval h;
  for_each_candidate(t, [&](int j) {
    const double v = 1.0 + ex.candidate_features.row(j).dot(w);
    if (v > h.value) {
      h.value = v;
      h.argmax = j;
    }
  });
  return h;
}

inline double objective_terms(const Eigen::VectorXd& w,
                              const std::vector<HingeTerm>& terms,
                              std::size_t m, const TrainConfig& c,
                              Eigen::VectorXd* grad) {
  double pos = 0.0, neg = 0.0;
  Eigen::VectorXd gp, gn;
  if (grad) {
    gp = Eigen::VectorXd::Zero(w.size());
    gn = Eigen::VectorXd::Zero(w.size());
  }
  for (const auto& t : terms) {
    check_dim(w, *t.ex);
    if (t.ex->positive()) {
      const auto h = eval_pos(w, t);
      pos += h.value;
      if (grad && h.argmax == -2) gp -= t.ex->gt_features;
      if (grad && h.argmax >= 0) {
        gp += t.ex->candidate_features.row(h.argmax).transpose() - t.ex->gt_features;
      }
    } else {
      const auto h = eval_neg(w, t);
      neg += h.value;
      if (grad && h.argmax >= 0) gn += t.ex->candidate_features.row(h.argmax).transpose();
    }
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  if (grad) *grad = w + inv_m * (c.C1 * gp + c.C2 * gn);
  return 0.5 * w.squaredNorm() + inv_m * (c.C1 * pos + c.C2 * neg);
}

inline std::vector<HingeTerm> full_terms(const std::vector<TrainingExample>& data) {
  std::vector<HingeTerm> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back({&ex, nullptr, true});
  return out;
}

}  // namespace detail

inline double hinge_pos(const Eigen::VectorXd& w, const TrainingExample& ex) {
  if (!ex.positive()) throw std::invalid_argument("hinge_pos: negative example");
  detail::check_dim(w, ex);
  return detail::eval_pos(w, {&ex}).value;
}

inline double hinge_neg(const Eigen::VectorXd& w, const TrainingExample& ex) {
  if (ex.positive()) throw std::invalid_argument("hinge_neg: positive example");
  detail::check_dim(w, ex);
  return detail::eval_neg(w, {&ex}).value;
}

inline double objective(const Eigen::VectorXd& w,
                        const std::vector<TrainingExample>& data,
                        const TrainConfig& config = {}) {
  if (data.empty()) throw DataError("objective: empty training data");
  return detail::objective_terms(w, detail::full_terms(data), data.size(), config,
                                 nullptr);
}

/// w + (1/M)(C1 sum g_pos + C2 sum g_neg); at kinks the margin term wins,
/// then the lowest-index maximizing candidate.
inline Eigen::VectorXd subgradient(const Eigen::VectorXd& w,
                                   const std::vector<TrainingExample>& data,
                                   const TrainConfig& config = {}) {
  if (data.empty()) throw DataError("subgradient: empty training data");
  Eigen::VectorXd g;
  detail::objective_terms(w, detail::full_terms(data), data.size(), config, &g);
  return g;
}

struct TrainResult {
  Eigen::VectorXd w;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Mining only: active candidates per example at the end.
  std::vector<std::vector<int>> active;
  std::size_t updates = 0;
};

namespace detail {

/// Scaled subgradients of the pieces of each hinge term that lie within
/// `tau` of that term's maximum (the zero piece included).
inline std::vector<std::vector<Eigen::VectorXd>> near_active_pieces(
    const Eigen::VectorXd& w, const std::vector<HingeTerm>& terms, std::size_t m,
    const TrainConfig& c, double tau) {
  std::vector<std::vector<Eigen::VectorXd>> out;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (const auto& t : terms) {
    const auto& ex = *t.ex;
    const bool pos = ex.positive();
    const double scale = inv_m * (pos ? c.C1 : c.C2);
    const double s_gt = pos ? w.dot(ex.gt_features) : 0.0;
    const double top = pos ? eval_pos(w, t).value : eval_neg(w, t).value;
    std::vector<Eigen::VectorXd> pieces;
    if (top <= tau) pieces.push_back(Eigen::VectorXd::Zero(w.size()));
    if (pos && t.margin && 1.0 - s_gt >= top - tau) pieces.push_back(-scale * ex.gt_features);
    for_each_candidate(t, [&](int j) {
      const double s = ex.candidate_features.row(j).dot(w);
      const double v = pos ? s - s_gt + ex.delta[j] : 1.0 + s;
      if (v < top - tau) return;
      Eigen::VectorXd g = ex.candidate_features.row(j).transpose();
      if (pos) g -= ex.gt_features;
      pieces.push_back(scale * g);
    });
    if (pieces.size() > 1) out.push_back(std::move(pieces));
    else if (!pieces.front().isZero(0.0)) out.push_back(std::move(pieces));
  }
  return out;
}

/// Minimum-norm element of w + sum_i conv(pieces_i), by block-coordinate
/// Frank-Wolfe with exact line search.
inline Eigen::VectorXd min_norm_subgradient(const Eigen::VectorXd& w,
                                            const std::vector<std::vector<Eigen::VectorXd>>& blocks) {
  std::vector<Eigen::VectorXd> v;
  Eigen::VectorXd u = w;
  for (const auto& b : blocks) {
    v.push_back(b.front());
    u += b.front();
  }
  for (int pass = 0; pass < 200; ++pass) {
    double gap = 0.0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (blocks[i].size() == 1) continue;
      std::size_t best = 0;
      double best_dot = blocks[i][0].dot(u);
      for (std::size_t k = 1; k < blocks[i].size(); ++k) {
        const double d = blocks[i][k].dot(u);
        if (d < best_dot) {
          best_dot = d;
          best = k;
        }
      }
      const Eigen::VectorXd dir = blocks[i][best] - v[i];
      const double slope = u.dot(dir);
      const double curv = dir.squaredNorm();
      if (slope >= 0.0 || curv == 0.0) continue;
      gap -= slope;
      const double step = std::min(1.0, -slope / curv);
      v[i] += step * dir;
      u += step * dir;
    }
    if (gap <= 1e-15 * std::max(1.0, u.squaredNorm())) break;
  }
  return u;
}

inline TrainResult minimize_terms(const std::vector<HingeTerm>& terms,
                                  std::size_t m, const TrainConfig& c,
                                  Eigen::VectorXd w0) {
  Objective fn = [&](const Eigen::VectorXd& w, Eigen::VectorXd& g) {
    return objective_terms(w, terms, m, c, &g);
  };
  LbfgsOptions opt;
  opt.max_iterations = c.max_iterations;
  opt.gradient_tolerance = c.gradient_tolerance;
  opt.max_restarts = 5;
  auto r = lbfgs_minimize(fn, std::move(w0), opt);
  TrainResult out;
  out.iterations = r.iterations;
  out.converged = r.converged;

  // L-BFGS can stall on a kink, where no single subgradient gives descent.
  // Polish by stepping along the minimum-norm element of the subgradients of
  // near-maximal pieces, shrinking the tolerance; a vanishing element at
  // tolerance tau bounds the suboptimality by about (C1 + C2) * tau.
  Eigen::VectorXd w = r.x, g(w.size());
  double f = r.value;
  bool stationary = false;
  for (double tau = 1e-2; tau >= 1e-9; tau *= 0.1) {
    stationary = false;
    for (int round = 0; round < 50; ++round) {
      const Eigen::VectorXd u = min_norm_subgradient(w, near_active_pieces(w, terms, m, c, tau));
      if (u.lpNorm<Eigen::Infinity>() <= c.gradient_tolerance) {
        stationary = true;
        break;
      }
      bool moved = false;
      for (double t = 1.0; t > 1e-12; t *= 0.5) {
        const Eigen::VectorXd x = w - t * u;
        const double fx = objective_terms(x, terms, m, c, nullptr);
        if (fx <= f - 1e-4 * t * u.squaredNorm()) {
          w = x;
          f = fx;
          moved = true;
          break;
        }
      }
      if (!moved) break;
      r = lbfgs_minimize(fn, w, opt);
      out.iterations += r.iterations;
      if (r.value < f) {
        w = r.x;
        f = r.value;
      }
    }
  }
  out.w = std::move(w);
  out.objective = f;
  out.converged = out.converged || stationary;
  return out;
}

inline Eigen::Index common_dim(const std::vector<TrainingExample>& data) {
  if (data.empty()) throw DataError("train: empty training data");
  const Eigen::Index d = data.front().dim();
  for (const auto& ex : data) {
    if (ex.dim() != d || (ex.candidates() > 0 && ex.candidate_features.cols() != d)) {
      throw DataError("train: examples have inconsistent feature dimensions");
    }
  }
  return d;
}

inline void require_both_labels(const std::vector<TrainingExample>& data) {
  const bool pos = std::any_of(data.begin(), data.end(), [](auto& e) { return e.positive(); });
  const bool neg = std::any_of(data.begin(), data.end(), [](auto& e) { return !e.positive(); });
  if (!pos || !neg) {
    throw DataError("train: need at least one positive and one negative example");
  }
}

}  // namespace detail

/// Minimizes the full objective from w = 0 (or `w0`). `converged` is false
/// when the iteration cap was hit; w is then the best iterate.
inline TrainResult train(const std::vector<TrainingExample>& data,
                         const TrainConfig& config = {},
                         std::optional<Eigen::VectorXd> w0 = std::nullopt) {
  config.validate();
  const auto d = detail::common_dim(data);
  detail::require_both_labels(data);
  return detail::minimize_terms(detail::full_terms(data), data.size(), config,
                                w0.value_or(Eigen::VectorXd::Zero(d)));
}

/// Alternates training on an active set with adding candidates that pass the
/// activation tests and evicting those that pass the eviction tests.
inline TrainResult train_with_mining(const std::vector<TrainingExample>& data,
                                     const TrainConfig& config = {},
                                     std::optional<Eigen::VectorXd> w0 = std::nullopt) {
  config.validate();
  const auto d = detail::common_dim(data);
  detail::require_both_labels(data);
  const std::size_t m = data.size();

  Eigen::VectorXd w = w0.value_or(Eigen::VectorXd::Zero(d));
  std::vector<std::vector<char>> in_active(m);
  for (std::size_t i = 0; i < m; ++i) in_active[i].assign(data[i].candidates(), 0);
  std::size_t pending = 0;
  TrainResult res;

  auto active_lists = [&] {
    std::vector<std::vector<int>> lists(m);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < in_active[i].size(); ++j) {
        if (in_active[i][j]) lists[i].push_back(static_cast<int>(j));
      }
    }
    return lists;
  };

  auto update = [&](int epoch) {
    const auto lists = active_lists();
    std::size_t active_neg = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (!data[i].positive() && !lists[i].empty()) ++active_neg;
    }
    // Every positive contributes its ground-truth pair; in the first epoch
    // only the first `active_neg` positives (data order) do.
    std::size_t pos_budget = m;
    if (epoch == 1 && config.balance_first_epoch && active_neg > 0) {
      pos_budget = active_neg;
    }
    std::vector<detail::HingeTerm> terms;
    std::size_t pos_used = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (data[i].positive()) {
        if (pos_used >= pos_budget) continue;
        ++pos_used;
        terms.push_back({&data[i], &lists[i], true});
      } else if (!lists[i].empty()) {
        terms.push_back({&data[i], &lists[i], true});
      }
    }
    auto r = detail::minimize_terms(terms, m, config, w);
    w = r.w;
    res.iterations += r.iterations;
    res.converged = r.converged;
    ++res.updates;

    for (std::size_t i = 0; i < m; ++i) {
      const auto& ex = data[i];
      const double s_gt = ex.positive() ? w.dot(ex.gt_features) : 0.0;
      for (std::size_t j = 0; j < in_active[i].size(); ++j) {
        if (!in_active[i][j]) continue;
        const double s = ex.candidate_features.row(static_cast<Eigen::Index>(j)).dot(w);
        const bool evict =
            ex.positive()
                ? s - s_gt + ex.delta[static_cast<Eigen::Index>(j)] <=
                      std::min(0.0, 1.0 - s_gt) - config.eps2
                : 1.0 + s <= -config.eps2;
        if (evict) in_active[i][j] = 0;
      }
    }
  };

  const int last = config.until_stable ? std::max(config.epochs, config.max_passes) : config.epochs;
  for (int epoch = 1; epoch <= last; ++epoch) {
    std::size_t activated = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& ex = data[i];
      const double s_gt = ex.positive() ? w.dot(ex.gt_features) : 0.0;
      for (std::size_t j = 0; j < in_active[i].size(); ++j) {
        if (in_active[i][j]) continue;
        const double s = ex.candidate_features.row(static_cast<Eigen::Index>(j)).dot(w);
        const bool activate =
            ex.positive()
                ? s - s_gt + ex.delta[static_cast<Eigen::Index>(j)] >=
                      std::max(0.0, 1.0 - s_gt) - config.eps1
                : 1.0 + s >= -config.eps1;
        if (activate) {
          in_active[i][j] = 1;
          ++pending;
          ++activated;
        }
      }
      if (pending >= config.update_threshold || i + 1 == m) {
        pending = 0;
        update(epoch);
      }
    }
    // Stable once a pass activates nothing under weights from an unbalanced
    // update.
    const bool checked_balanced = epoch <= 2 && config.balance_first_epoch;
    if (epoch >= config.epochs && !checked_balanced && activated == 0) break;
  }
  res.w = w;
  res.objective = objective(w, data, config);
  res.active = active_lists();
  return res;
}

}  // namespace boxopt
