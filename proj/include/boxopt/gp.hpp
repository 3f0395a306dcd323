#pragma once

/// @file gp.hpp
/// Gaussian-process regression over bounding boxes.
///
/// Scores f(y) are modelled as a GP with constant mean m0 and an SEard kernel
/// on the scale-normalized coordinates psi_z(y):
///
///   k(a, b) = eta * exp(-1/2 * sum_d lambda_d * (psi_z(a)_d - psi_z(b)_d)^2)
///
/// plus i.i.d. Gaussian observation noise of precision beta. The latent scale
/// z is fitted per observation set by marginal likelihood, which makes the
/// model invariant to a uniform rescaling of the image. Proposals are chosen
/// by maximizing closed-form expected improvement.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <vector>

#include "boxopt/errors.hpp"
#include "boxopt/geometry.hpp"
#include "boxopt/lbfgs.hpp"

namespace boxopt {

/// theta = (beta, m0, eta, lambda_1..4). Positive parameters are stored as
/// logs so that optimizers can work unconstrained.
struct GpHyperParams {
  static constexpr int kDim = 7;

  double log_beta = std::log(100.0);
  double m0 = 0.0;
  double log_eta = 0.0;
  std::array<double, 4> log_lambda{0.0, 0.0, 0.0, 0.0};

  static GpHyperParams from_natural(double beta, double m0, double eta,
                                    const std::array<double, 4>& lambda) {
    if (!(beta > 0.0) || !(eta > 0.0)) {
      throw std::invalid_argument("beta and eta must be positive");
    }
    GpHyperParams p;
    p.log_beta = std::log(beta);
    p.m0 = m0;
    p.log_eta = std::log(eta);
    for (int d = 0; d < 4; ++d) {
      if (!(lambda[d] > 0.0)) {
        throw std::invalid_argument("lambda entries must be positive");
      }
      p.log_lambda[d] = std::log(lambda[d]);
    }
    return p;
  }

  double beta() const { return std::exp(log_beta); }
  double eta() const { return std::exp(log_eta); }
  double lambda(int d) const { return std::exp(log_lambda[d]); }
  double noise_variance() const { return std::exp(-log_beta); }

  /// Layout: [log beta, m0, log eta, log lambda_1..4].
  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(kDim);
    v << log_beta, m0, log_eta, log_lambda[0], log_lambda[1], log_lambda[2],
        log_lambda[3];
    return v;
  }
  static GpHyperParams from_vector(const Eigen::VectorXd& v) {
    GpHyperParams p;
    p.log_beta = v[0];
    p.m0 = v[1];
    p.log_eta = v[2];
    for (int d = 0; d < 4; ++d) p.log_lambda[d] = v[3 + d];
    return p;
  }
};

struct Observation {
  BoundingBox box;
  double score;
};

/// D_N. Adding a box that is already present keeps the larger score.
class ObservationSet {
 public:
  ObservationSet() = default;
  ObservationSet(std::initializer_list<Observation> init) {
    for (const auto& o : init) add(o.box, o.score);
  }

  void add(const BoundingBox& box, double score) {
    for (auto& o : obs_) {
      if (o.box == box) {
        o.score = std::max(o.score, score);
        return;
      }
    }
    obs_.push_back({box, score});
  }

  std::size_t size() const { return obs_.size(); }
  bool empty() const { return obs_.empty(); }
  const Observation& operator[](std::size_t i) const { return obs_[i]; }
  auto begin() const { return obs_.begin(); }
  auto end() const { return obs_.end(); }

  double best_score() const {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& o : obs_) best = std::max(best, o.score);
    return best;
  }

  Eigen::VectorXd scores() const {
    Eigen::VectorXd f(obs_.size());
    for (std::size_t i = 0; i < obs_.size(); ++i) f[i] = obs_[i].score;
    return f;
  }

  ObservationSet scaled(double s) const {
    ObservationSet out;
    for (const auto& o : obs_) out.obs_.push_back({o.box.scaled(s), o.score});
    return out;
  }

 private:
  std::vector<Observation> obs_;
};

inline double kernel_seard(const BoundingBox& a, const BoundingBox& b,
                           double z, const GpHyperParams& hyper) {
  const auto pa = psi_transform(a, z);
  const auto pb = psi_transform(b, z);
  double q = 0.0;
  for (int d = 0; d < 4; ++d) {
    const double diff = pa[d] - pb[d];
    q += hyper.lambda(d) * diff * diff;
  }
  return hyper.eta() * std::exp(-0.5 * q);
}

namespace detail {

using PsiMatrix = Eigen::Matrix<double, Eigen::Dynamic, 4>;

inline PsiMatrix psi_rows(const ObservationSet& obs, double z) {
  PsiMatrix m(obs.size(), 4);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto p = psi_transform(obs[i].box, z);
    for (int d = 0; d < 4; ++d) m(i, d) = p[d];
  }
  return m;
}

/// Noise-free kernel matrix [k(y_i, y_j)].
inline Eigen::MatrixXd gram(const PsiMatrix& psi, const GpHyperParams& hyper) {
  const Eigen::Index n = psi.rows();
  std::array<double, 4> lam{};
  for (int d = 0; d < 4; ++d) lam[d] = hyper.lambda(d);
  const double eta = hyper.eta();
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = eta;
    for (Eigen::Index j = 0; j < i; ++j) {
      double q = 0.0;
      for (int d = 0; d < 4; ++d) {
        const double diff = psi(i, d) - psi(j, d);
        q += lam[d] * diff * diff;
      }
      k(i, j) = k(j, i) = eta * std::exp(-0.5 * q);
    }
  }
  return k;
}

/// Cholesky of K with escalating diagonal jitter: 0, then 1e-10*eta growing
/// tenfold up to 1e-4*eta.
inline Eigen::LLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& k,
                                             double eta) {
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() == Eigen::Success) return llt;
  for (double jitter = 1e-10; jitter <= 1e-4 * (1.0 + 1e-9); jitter *= 10.0) {
    Eigen::MatrixXd kj = k;
    kj.diagonal().array() += jitter * eta;
    llt.compute(kj);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw ConditioningError("K_N is not positive definite even with jitter");
}

inline Eigen::MatrixXd noisy_gram(const PsiMatrix& psi,
                                  const GpHyperParams& hyper,
                                  Eigen::MatrixXd* kernel_only = nullptr) {
  Eigen::MatrixXd kf = gram(psi, hyper);
  Eigen::MatrixXd k = kf;
  k.diagonal().array() += hyper.noise_variance();
  if (kernel_only) *kernel_only = std::move(kf);
  return k;
}

inline double log_det_from(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace detail

/// log N(f; m0 * 1, K_N).
inline double log_marginal_likelihood(const ObservationSet& obs, double z,
                                      const GpHyperParams& hyper) {
  if (obs.empty()) throw std::invalid_argument("empty observation set");
  const auto psi = detail::psi_rows(obs, z);
  const auto k = detail::noisy_gram(psi, hyper);
  const auto llt = detail::factorize(k, hyper.eta());
  const Eigen::VectorXd r = obs.scores().array() - hyper.m0;
  const Eigen::VectorXd alpha = llt.solve(r);
  const double n = static_cast<double>(obs.size());
  return -0.5 * r.dot(alpha) - 0.5 * detail::log_det_from(llt) -
         0.5 * n * std::log(2.0 * std::numbers::pi);
}

struct LikelihoodGradient {
  double value = 0.0;
  /// d/d[log beta, m0, log eta, log lambda_1..4]
  Eigen::VectorXd d_hyper = Eigen::VectorXd::Zero(GpHyperParams::kDim);
  double d_z = 0.0;
};

inline LikelihoodGradient log_marginal_likelihood_with_gradient(
    const ObservationSet& obs, double z, const GpHyperParams& hyper) {
  if (obs.empty()) throw std::invalid_argument("empty observation set");
  const auto psi = detail::psi_rows(obs, z);
  Eigen::MatrixXd kf;
  const auto k = detail::noisy_gram(psi, hyper, &kf);
  const auto llt = detail::factorize(k, hyper.eta());
  const Eigen::Index n = psi.rows();
  const Eigen::VectorXd r = obs.scores().array() - hyper.m0;
  const Eigen::VectorXd alpha = llt.solve(r);

  LikelihoodGradient out;
  out.value = -0.5 * r.dot(alpha) - 0.5 * detail::log_det_from(llt) -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // dL/dp = 1/2 tr(W dK/dp) with W = alpha alpha^T - K^-1.
  const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  const Eigen::MatrixXd w = alpha * alpha.transpose() - kinv;
  const Eigen::MatrixXd wk = w.cwiseProduct(kf);

  out.d_hyper[0] = -0.5 * hyper.noise_variance() * w.trace();
  out.d_hyper[1] = alpha.sum();
  out.d_hyper[2] = 0.5 * wk.sum();

  std::array<double, 4> lam{};
  for (int d = 0; d < 4; ++d) lam[d] = hyper.lambda(d);
  std::array<double, 4> acc{0.0, 0.0, 0.0, 0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < i; ++j) {
      const double c = wk(i, j);
      for (int d = 0; d < 4; ++d) {
        const double diff = psi(i, d) - psi(j, d);
        acc[d] += c * diff * diff;
      }
    }
  }
  // Off-diagonal sums counted once above; the full trace doubles them.
  for (int d = 0; d < 4; ++d) out.d_hyper[3 + d] = -0.5 * lam[d] * acc[d];
  // Only the two center coordinates depend on z: d(diff^2)/dz = -2 diff^2.
  out.d_z = lam[0] * acc[0] + lam[1] * acc[1];
  return out;
}

struct LatentScaleOptions {
  double lower = -5.0;
  double upper = 5.0;
  int grid_points = 17;
  double tolerance = 1e-9;
  int max_refine_iterations = 60;
};

/// z-hat = argmax_z log p(f | y; theta) over [lower, upper]: a grid pre-scan
/// picks a bracket, then the root of dL/dz inside it is located by a
/// safeguarded secant (Illinois) iteration.
inline double fit_latent_scale(const ObservationSet& obs,
                               const GpHyperParams& hyper,
                               const LatentScaleOptions& opt = {}) {
  if (obs.empty()) throw std::invalid_argument("empty observation set");
  if (obs.size() == 1) return 0.0;

  const int m = std::max(opt.grid_points, 2);
  const double step = (opt.upper - opt.lower) / (m - 1);
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < m; ++i) {
    const double zi = opt.lower + step * i;
    const double v = log_marginal_likelihood(obs, zi, hyper);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }

  const double z_best = opt.lower + step * best;
  auto value = [&](double z) { return log_marginal_likelihood(obs, z, hyper); };
  auto deriv = [&](double z) {
    return log_marginal_likelihood_with_gradient(obs, z, hyper).d_z;
  };

  // The slope at the best grid point tells which neighbouring cell holds the
  // local maximum.
  const double d_best = deriv(z_best);
  std::optional<double> root;
  double a = z_best, b = z_best, da = d_best, db = d_best;
  if (d_best > 0.0 && best + 1 < m) {
    b = z_best + step;
    db = deriv(b);
  } else if (d_best < 0.0 && best > 0) {
    a = z_best - step;
    da = deriv(a);
  }
  if (a < b && da > 0.0 && db < 0.0) {
    int side = 0;
    for (int it = 0; it < opt.max_refine_iterations && b - a > opt.tolerance;
         ++it) {
      double c = (a * db - b * da) / (db - da);
      if (!(c > a && c < b)) c = 0.5 * (a + b);
      const double dc = deriv(c);
      if (dc == 0.0) {
        a = b = c;
        break;
      }
      if (dc > 0.0) {
        a = c;
        da = dc;
        if (side == -1) db *= 0.5;
        side = -1;
      } else {
        b = c;
        db = dc;
        if (side == 1) da *= 0.5;
        side = 1;
      }
    }
    root = 0.5 * (a + b);
  } else if (a < b) {
    // Slopes do not bracket a stationary point; golden-section on the value.
    const double g = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - g * (b - a), d = a + g * (b - a);
    double fc = value(c), fd = value(d);
    for (int it = 0; it < 4 * opt.max_refine_iterations && b - a > opt.tolerance;
         ++it) {
      if (fc > fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - g * (b - a);
        fc = value(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + g * (b - a);
        fd = value(d);
      }
    }
    root = 0.5 * (a + b);
  }

  // Compare the refined root against the endpoints that can be maxima.
  std::vector<double> candidates{z_best};
  if (root) candidates.push_back(*root);
  double z_hat = z_best;
  double v_hat = best_val;
  for (double c : candidates) {
    const double v = value(c);
    if (v > v_hat) {
      v_hat = v;
      z_hat = c;
    }
  }
  return z_hat;
}

struct HyperFitOptions {
  LbfgsOptions lbfgs{.max_iterations = 100, .gradient_tolerance = 1e-6};
  LatentScaleOptions latent{};
  /// Log-parameters are confined to [-bound, bound]; the joint likelihood is
  /// unbounded for degenerate data (e.g. identical scores).
  double log_param_bound = 15.0;
  std::optional<GpHyperParams> initial;
};

struct HyperFitResult {
  GpHyperParams hyper;
  double objective = 0.0;  ///< sum of per-set log marginal likelihoods
  std::vector<double> latent_scales;
  int iterations = 0;
  std::vector<double> objective_trace;  ///< accepted iterates, in order
};

/// Joint objective sum_i max_z log p(D_i; theta, z) and its gradient w.r.t.
/// the log-parameterized theta. By the envelope theorem the gradient is the
/// partial derivative at each set's z-hat.
inline double joint_log_likelihood(const std::vector<ObservationSet>& sets,
                                   const GpHyperParams& hyper,
                                   Eigen::VectorXd* grad,
                                   std::vector<double>* scales = nullptr,
                                   const LatentScaleOptions& latent = {}) {
  double total = 0.0;
  if (grad) grad->setZero(GpHyperParams::kDim);
  if (scales) scales->clear();
  for (const auto& s : sets) {
    const double z = fit_latent_scale(s, hyper, latent);
    if (scales) scales->push_back(z);
    if (grad) {
      const auto lg = log_marginal_likelihood_with_gradient(s, z, hyper);
      total += lg.value;
      *grad += lg.d_hyper;
    } else {
      total += log_marginal_likelihood(s, z, hyper);
    }
  }
  return total;
}

/// Data-driven starting point: mean/variance of the pooled scores.
inline GpHyperParams default_initial_hyper(
    const std::vector<ObservationSet>& sets) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& s : sets) {
    for (const auto& o : s) {
      sum += o.score;
      sq += o.score * o.score;
      ++n;
    }
  }
  const double mean = n ? sum / n : 0.0;
  const double var = n ? std::max(sq / n - mean * mean, 1e-6) : 1.0;
  return GpHyperParams::from_natural(10.0 / var, mean, var,
                                     {1.0, 1.0, 10.0, 10.0});
}

inline HyperFitResult fit_gp_hyperparameters(
    const std::vector<ObservationSet>& sets, const HyperFitOptions& opt = {}) {
  if (sets.empty()) throw std::invalid_argument("no training sets");
  for (const auto& s : sets) {
    if (s.size() < 2) {
      throw std::invalid_argument("each training set needs at least 2 boxes");
    }
  }
  const GpHyperParams init = opt.initial ? *opt.initial
                                         : default_initial_hyper(sets);
  HyperFitResult res;

  Objective neg = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    for (int i = 0; i < x.size(); ++i) {
      if (i == 1) continue;  // m0 is not a log-parameter
      if (std::abs(x[i]) > opt.log_param_bound) {
        g.setZero(x.size());
        return std::numeric_limits<double>::infinity();
      }
    }
    try {
      const double v = joint_log_likelihood(sets, GpHyperParams::from_vector(x),
                                            &g, nullptr, opt.latent);
      g = -g;
      return -v;
    } catch (const ConditioningError&) {
      g.setZero(x.size());
      return std::numeric_limits<double>::infinity();
    }
  };

  // Every strict improvement seen by the optimizer, in evaluation order.
  double best = std::numeric_limits<double>::infinity();
  Objective traced = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
    const double v = neg(x, g);
    if (v < best) {
      best = v;
      res.objective_trace.push_back(-v);
    }
    return v;
  };

  const auto out = lbfgs_minimize(traced, init.to_vector(), opt.lbfgs);
  res.hyper = GpHyperParams::from_vector(out.x);
  res.iterations = out.iterations;
  res.objective =
      joint_log_likelihood(sets, res.hyper, nullptr, &res.latent_scales,
                           opt.latent);
  return res;
}

struct Posterior {
  double mu = 0.0;
  double sigma2 = 0.0;
};

/// Below this standard deviation EI degenerates to max(0, mu - f_best).
inline constexpr double kSigmaFloor = 1e-9;

inline double standard_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
inline double standard_normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// sigma * (gamma * Phi(gamma) + phi(gamma)), gamma = (mu - f_best) / sigma.
inline double expected_improvement(double mu, double sigma, double f_best) {
  if (sigma < kSigmaFloor) return std::max(0.0, mu - f_best);
  const double gamma = (mu - f_best) / sigma;
  const double ei =
      sigma * (gamma * standard_normal_cdf(gamma) + standard_normal_pdf(gamma));
  return std::max(0.0, ei);
}

/// Hyper-rectangle in (center_u, center_v, log w, log h) coordinates.
struct SearchBounds {
  CenterLogSize lower;
  CenterLogSize upper;

  bool contains(const CenterLogSize& p, double tol = 1e-12) const {
    for (int d = 0; d < 4; ++d) {
      if (p[d] < lower[d] - tol || p[d] > upper[d] + tol) return false;
    }
    return true;
  }

  CenterLogSize clamp(CenterLogSize p) const {
    for (int d = 0; d < 4; ++d) p[d] = std::clamp(p[d], lower[d], upper[d]);
    return p;
  }

  /// Hull of the observed boxes, widened by `margin` times the reference
  /// width/height on the center axes and by `margin` on the log-size axes.
  static SearchBounds around(const ObservationSet& obs,
                             const BoundingBox& reference, double margin) {
    SearchBounds b;
    b.lower.fill(std::numeric_limits<double>::infinity());
    b.upper.fill(-std::numeric_limits<double>::infinity());
    for (const auto& o : obs) {
      const auto p = to_center_log_size(o.box);
      for (int d = 0; d < 4; ++d) {
        b.lower[d] = std::min(b.lower[d], p[d]);
        b.upper[d] = std::max(b.upper[d], p[d]);
      }
    }
    const std::array<double, 4> pad{margin * reference.width(),
                                    margin * reference.height(), margin,
                                    margin};
    for (int d = 0; d < 4; ++d) {
      b.lower[d] -= pad[d];
      b.upper[d] += pad[d];
    }
    return b;
  }
};

/// A GP conditioned on an observation set with fixed theta and z.
class GpModel {
 public:
  GpModel(GpHyperParams hyper, double z, ObservationSet obs)
      : hyper_(hyper), z_(z), obs_(std::move(obs)) {
    if (obs_.empty()) throw std::invalid_argument("GpModel needs N >= 1");
    psi_ = detail::psi_rows(obs_, z_);
    const auto k = detail::noisy_gram(psi_, hyper_);
    llt_ = detail::factorize(k, hyper_.eta());
    const Eigen::VectorXd r = obs_.scores().array() - hyper_.m0;
    alpha_ = llt_.solve(r);
    f_best_ = obs_.best_score();
    for (int d = 0; d < 4; ++d) lambda_[d] = hyper_.lambda(d);
  }

  /// Fits z-hat on `obs` before conditioning.
  static GpModel fit(const GpHyperParams& hyper, ObservationSet obs,
                     const LatentScaleOptions& latent = {}) {
    const double z = fit_latent_scale(obs, hyper, latent);
    return GpModel(hyper, z, std::move(obs));
  }

  const GpHyperParams& hyper() const { return hyper_; }
  double latent_scale() const { return z_; }
  const ObservationSet& observations() const { return obs_; }
  double best_score() const { return f_best_; }

  Posterior posterior(const BoundingBox& y) const {
    return posterior_at(to_center_log_size(y));
  }

  Posterior posterior_at(const CenterLogSize& q) const {
    const Eigen::VectorXd k = cross_kernel(q);
    Posterior p;
    p.mu = hyper_.m0 + k.dot(alpha_);
    const Eigen::VectorXd v = llt_.matrixL().solve(k);
    p.sigma2 = std::max(0.0, hyper_.noise_variance() + hyper_.eta() -
                                 v.squaredNorm());
    return p;
  }

  double expected_improvement(const BoundingBox& y) const {
    return expected_improvement_at(to_center_log_size(y));
  }

  double expected_improvement_at(const CenterLogSize& q) const {
    const auto p = posterior_at(q);
    return boxopt::expected_improvement(p.mu, std::sqrt(p.sigma2), f_best_);
  }

  /// EI and its gradient w.r.t. (center_u, center_v, log w, log h).
  double expected_improvement_at(const CenterLogSize& q,
                                 std::array<double, 4>& grad) const {
    const Eigen::Index n = psi_.rows();
    const auto pq = query_psi(q);
    Eigen::VectorXd k(n);
    Eigen::Matrix<double, Eigen::Dynamic, 4> dk(n, 4);
    const std::array<double, 4> chain{std::exp(-z_), std::exp(-z_), 1.0, 1.0};
    for (Eigen::Index j = 0; j < n; ++j) {
      double quad = 0.0;
      std::array<double, 4> diff{};
      for (int d = 0; d < 4; ++d) {
        diff[d] = pq[d] - psi_(j, d);
        quad += lambda_[d] * diff[d] * diff[d];
      }
      k[j] = hyper_.eta() * std::exp(-0.5 * quad);
      for (int d = 0; d < 4; ++d) {
        dk(j, d) = -k[j] * lambda_[d] * diff[d] * chain[d];
      }
    }
    const double mu = hyper_.m0 + k.dot(alpha_);
    const Eigen::VectorXd kinv_k = llt_.solve(k);
    const double sigma2 = std::max(
        0.0, hyper_.noise_variance() + hyper_.eta() - k.dot(kinv_k));
    const double sigma = std::sqrt(sigma2);
    grad.fill(0.0);
    if (sigma < kSigmaFloor) {
      if (mu > f_best_) {
        for (int d = 0; d < 4; ++d) grad[d] = dk.col(d).dot(alpha_);
      }
      return std::max(0.0, mu - f_best_);
    }
    const double gamma = (mu - f_best_) / sigma;
    const double cdf = standard_normal_cdf(gamma);
    const double pdf = standard_normal_pdf(gamma);
    for (int d = 0; d < 4; ++d) {
      const double dmu = dk.col(d).dot(alpha_);
      const double dsigma2 = -2.0 * dk.col(d).dot(kinv_k);
      grad[d] = cdf * dmu + pdf * dsigma2 / (2.0 * sigma);
    }
    return std::max(0.0, sigma * (gamma * cdf + pdf));
  }

 private:
  std::array<double, 4> query_psi(const CenterLogSize& q) const {
    const double s = std::exp(-z_);
    return {q[0] * s, q[1] * s, q[2], q[3]};
  }

  Eigen::VectorXd cross_kernel(const CenterLogSize& q) const {
    const auto pq = query_psi(q);
    Eigen::VectorXd k(psi_.rows());
    for (Eigen::Index j = 0; j < psi_.rows(); ++j) {
      double quad = 0.0;
      for (int d = 0; d < 4; ++d) {
        const double diff = pq[d] - psi_(j, d);
        quad += lambda_[d] * diff * diff;
      }
      k[j] = hyper_.eta() * std::exp(-0.5 * quad);
    }
    return k;
  }

  GpHyperParams hyper_;
  double z_;
  ObservationSet obs_;
  detail::PsiMatrix psi_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd alpha_;
  double f_best_ = 0.0;
  std::array<double, 4> lambda_{};
};

inline Posterior posterior(const GpModel& model, const BoundingBox& y) {
  return model.posterior(y);
}

inline double expected_improvement(const GpModel& model, const BoundingBox& y) {
  return model.expected_improvement(y);
}

struct EiSearchOptions {
  /// Number of best-scoring seeds that get a full gradient ascent.
  int ascent_starts = 8;
  int max_ascent_iterations = 100;
  double step_tolerance = 1e-10;
};

/// Optional extra constraint on the search region (e.g. an IoU neighbourhood).
/// Seeds outside it are dropped and ascent steps may not leave it.
using EiRegion = std::function<bool(const BoundingBox&)>;

struct EiMaximum {
  BoundingBox box;
  double ei;
};

namespace detail {

// Projected gradient ascent on [0,1]^4 (bounds-normalized coordinates) with
// Armijo backtracking and step growth after each accepted move.
inline std::pair<CenterLogSize, double> ascend_ei(const GpModel& model,
                                                  const SearchBounds& bounds,
                                                  CenterLogSize start,
                                                  const EiSearchOptions& opt,
                                                  const EiRegion& region) {
  std::array<double, 4> span{};
  for (int d = 0; d < 4; ++d) span[d] = bounds.upper[d] - bounds.lower[d];

  CenterLogSize x = start;
  std::array<double, 4> gq{};
  double fx = model.expected_improvement_at(x, gq);
  double step = 0.1;
  for (int it = 0; it < opt.max_ascent_iterations; ++it) {
    std::array<double, 4> g{};
    double gnorm = 0.0;
    for (int d = 0; d < 4; ++d) {
      g[d] = gq[d] * span[d];
      gnorm = std::max(gnorm, std::abs(g[d]));
    }
    if (gnorm == 0.0) break;
    bool moved = false;
    while (!moved && step > opt.step_tolerance) {
      CenterLogSize cand = x;
      double pred = 0.0;
      for (int d = 0; d < 4; ++d) {
        if (span[d] <= 0.0) continue;
        cand[d] = std::clamp(x[d] + step * (g[d] / gnorm) * span[d],
                             bounds.lower[d], bounds.upper[d]);
        pred += gq[d] * (cand[d] - x[d]);
      }
      if (region && !region(from_center_log_size(cand))) {
        step *= 0.5;
        continue;
      }
      std::array<double, 4> gc{};
      const double fc = model.expected_improvement_at(cand, gc);
      if (pred > 0.0 && fc >= fx + 1e-4 * pred) {
        moved = true;
        x = cand;
        fx = fc;
        gq = gc;
        step = std::min(step * 2.0, 1.0);
      } else {
        step *= 0.5;
      }
    }
    if (!moved) break;
  }
  return {x, fx};
}

}  // namespace detail

/// y-hat = argmax_y EI(y | D) inside `bounds`. Seeds are every observed box
/// and the midpoint of the two best-scored boxes (or axis offsets around a
/// single observation); the best `ascent_starts`
/// seeds (by EI) are refined by projected gradient ascent in
/// (center_u, center_v, log w, log h) space. With a `region`, seeds outside
/// it are skipped; if none remain the best observation is returned as is.
inline EiMaximum maximize_ei(const GpModel& model, const SearchBounds& bounds,
                             const EiSearchOptions& opt = {},
                             const EiRegion& region = {}) {
  const auto& obs = model.observations();
  std::vector<CenterLogSize> seeds;
  for (const auto& o : obs) seeds.push_back(to_center_log_size(o.box));
  if (obs.size() >= 2) {
    std::vector<std::size_t> idx(obs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + 2, idx.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (obs[a].score != obs[b].score) {
                          return obs[a].score > obs[b].score;
                        }
                        return obs[a].box < obs[b].box;
                      });
    const auto& a = obs[idx[0]].box;
    const auto& b = obs[idx[1]].box;
    seeds.push_back(to_center_log_size(
        BoundingBox(0.5 * (a.u1() + b.u1()), 0.5 * (a.v1() + b.v1()),
                    0.5 * (a.u2() + b.u2()), 0.5 * (a.v2() + b.v2()))));
  } else {
    // A lone observation is a stationary point (a local minimum) of EI, so
    // add seeds half-way towards each face of the bounds.
    const auto c = seeds.front();
    for (int d = 0; d < 4; ++d) {
      for (const double face : {bounds.lower[d], bounds.upper[d]}) {
        auto p = c;
        p[d] = 0.5 * (c[d] + face);
        seeds.push_back(p);
      }
    }
  }

  std::vector<std::pair<double, CenterLogSize>> scored;
  scored.reserve(seeds.size());
  for (const auto& s : seeds) {
    const auto c = bounds.clamp(s);
    if (region && !region(from_center_log_size(c))) continue;
    scored.emplace_back(model.expected_improvement_at(c), c);
  }
  if (scored.empty()) {
    const auto& top = *std::max_element(
        obs.begin(), obs.end(),
        [](const auto& a, const auto& b) { return a.score < b.score; });
    return {top.box, model.expected_improvement(top.box)};
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  CenterLogSize best = scored.front().second;
  double best_ei = scored.front().first;
  const std::size_t starts =
      std::min<std::size_t>(scored.size(), std::max(opt.ascent_starts, 1));
  for (std::size_t i = 0; i < starts; ++i) {
    auto [x, v] = detail::ascend_ei(model, bounds, scored[i].second, opt, region);
    if (v > best_ei) {
      best_ei = v;
      best = x;
    }
  }
  return {from_center_log_size(bounds.clamp(best)), best_ei};
}

}  // namespace boxopt
