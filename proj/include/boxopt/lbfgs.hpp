#pragma once

/// @file lbfgs.hpp
/// Limited-memory BFGS with a weak-Wolfe bracketing line search. The weak
/// Wolfe conditions only need directional derivatives at the trial points,
/// so the same routine serves smooth objectives (GP likelihoods) and
/// piecewise-linear-plus-quadratic ones (structured hinge losses), where the
/// "gradient" is any subgradient.

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace boxopt {

struct LbfgsOptions {
  int memory = 10;
  int max_iterations = 100;
  double gradient_tolerance = 1e-6;
  /// Stop once the objective decrease over `stall_window` iterations is below
  /// this (relative to max(1, |f|)).
  double relative_decrease_tolerance = 1e-14;
  int stall_window = 5;
  int max_line_search_steps = 60;
  double armijo = 1e-4;
  double curvature = 0.9;
  /// Memory resets allowed after a failed line search before giving up.
  int max_restarts = 3;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

/// Objective: returns f(x) and writes a (sub)gradient into `grad`.
using Objective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

namespace detail {

struct LineSearchOutcome {
  bool ok = false;
  double step = 0.0;
  double value = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
};

// Lewis-Overton bracketing: shrink on Armijo failure, expand on curvature
// failure, bisect once bracketed.
inline LineSearchOutcome weak_wolfe_search(const Objective& fn,
                                           const Eigen::VectorXd& x0,
                                           double f0,
                                           const Eigen::VectorXd& g0,
                                           const Eigen::VectorXd& dir,
                                           double initial_step,
                                           const LbfgsOptions& opt,
                                           int& evaluations) {
  const double slope0 = g0.dot(dir);
  LineSearchOutcome best;
  double lo = 0.0;
  double hi = std::numeric_limits<double>::infinity();
  double t = initial_step;
  Eigen::VectorXd grad(x0.size());
  for (int k = 0; k < opt.max_line_search_steps; ++k) {
    Eigen::VectorXd x = x0 + t * dir;
    const double f = fn(x, grad);
    ++evaluations;
    if (std::isfinite(f) && f < f0 && (!best.ok || f < best.value)) {
      best.ok = true;
      best.step = t;
      best.value = f;
      best.x = x;
      best.grad = grad;
    }
    if (!std::isfinite(f) || f > f0 + opt.armijo * t * slope0) {
      hi = t;
    } else if (grad.dot(dir) < opt.curvature * slope0) {
      lo = t;
    } else {
      best.ok = true;
      best.step = t;
      best.value = f;
      best.x = std::move(x);
      best.grad = grad;
      return best;
    }
    t = std::isinf(hi) ? 2.0 * lo : 0.5 * (lo + hi);
  }
  // Wolfe point not found; a strict decrease still counts as progress.
  return best;
}

}  // namespace detail

inline LbfgsResult lbfgs_minimize(const Objective& fn, Eigen::VectorXd x,
                                  const LbfgsOptions& opt = {}) {
  LbfgsResult res;
  Eigen::VectorXd g(x.size());
  double f = fn(x, g);
  res.evaluations = 1;

  std::deque<Eigen::VectorXd> s_hist, y_hist;
  std::deque<double> rho_hist;
  std::deque<double> recent;
  int restarts = 0;

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter;
    if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    Eigen::VectorXd q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    double gamma = 1.0;
    if (!s_hist.empty()) {
      gamma = s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
    }
    Eigen::VectorXd dir = gamma * q;
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(dir);
      dir += s_hist[i] * (alpha[i] - beta);
    }
    dir = -dir;
    if (g.dot(dir) >= 0.0) {
      dir = -g;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    const double t0 =
        s_hist.empty() ? std::min(1.0, 1.0 / std::max(g.norm(), 1e-300)) : 1.0;
    auto ls = detail::weak_wolfe_search(fn, x, f, g, dir, t0, opt,
                                        res.evaluations);
    if (!ls.ok) {
      if (s_hist.empty() || restarts >= opt.max_restarts) break;
      ++restarts;
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
      continue;
    }

    Eigen::VectorXd s = ls.x - x;
    Eigen::VectorXd y = ls.grad - g;
    const double sy = s.dot(y);
    x = std::move(ls.x);
    g = std::move(ls.grad);
    const double prev = f;
    f = ls.value;

    if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
      s_hist.push_back(std::move(s));
      y_hist.push_back(std::move(y));
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opt.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    recent.push_back(prev - f);
    if (static_cast<int>(recent.size()) > opt.stall_window) recent.pop_front();
    if (static_cast<int>(recent.size()) == opt.stall_window) {
      double total = 0.0;
      for (double d : recent) total += d;
      if (total <= opt.relative_decrease_tolerance * std::max(1.0, std::abs(f))) {
        res.converged = true;
        res.iterations = iter + 1;
        break;
      }
    }
    res.iterations = iter + 1;
  }
  res.x = std::move(x);
  res.value = f;
  return res;
}

}  // namespace boxopt
