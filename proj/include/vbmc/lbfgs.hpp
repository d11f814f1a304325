#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>

namespace vbmc {

struct LbfgsOptions {
  int max_iters = 500;
  int memory = 8;
  double grad_tol = 1e-6;   // scaled by 1 + |f|
  double step_tol = 1e-11;  // relative parameter change
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iters = 0;
  bool converged = false;
};

// Limited-memory BFGS minimizer with Armijo backtracking. The objective
// callback fills the gradient and returns f; non-finite values are treated
// as line-search rejections so the minimizer never leaves the finite region
// it started in.
inline LbfgsResult lbfgs_minimize(
    const std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>& fg,
    Eigen::VectorXd x, const LbfgsOptions& opts = {}) {
  using Vec = Eigen::VectorXd;
  const int n = static_cast<int>(x.size());

  LbfgsResult res;
  Vec g(n);
  double f = fg(x, g);
  if (!std::isfinite(f) || !g.allFinite()) {
    res.x = std::move(x);
    res.f = f;
    return res;
  }

  std::deque<Vec> s_hist, y_hist;
  std::deque<double> rho_hist;
  Vec q(n), dir(n), x_new(n), g_new(n);

  for (int iter = 0; iter < opts.max_iters; ++iter) {
    res.iters = iter;
    if (g.lpNorm<Eigen::Infinity>() <= opts.grad_tol * (1.0 + std::abs(f))) {
      res.converged = true;
      break;
    }

    // Two-loop recursion.
    q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = static_cast<int>(s_hist.size()) - 1; i >= 0; --i) {
      alpha[i] = rho_hist[i] * s_hist[i].dot(q);
      q -= alpha[i] * y_hist[i];
    }
    if (!s_hist.empty()) {
      const Vec& s_last = s_hist.back();
      const Vec& y_last = y_hist.back();
      q *= s_last.dot(y_last) / y_last.squaredNorm();
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double beta = rho_hist[i] * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    dir = -q;

    double slope = g.dot(dir);
    if (!(slope < 0.0)) {  // not a descent direction; fall back
      dir = -g;
      slope = -g.squaredNorm();
      s_hist.clear();
      y_hist.clear();
      rho_hist.clear();
    }

    // Armijo backtracking.
    double step = 1.0;
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int bt = 0; bt < 50; ++bt) {
      x_new = x + step * dir;
      f_new = fg(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() &&
          f_new <= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;

    Vec s = x_new - x;
    Vec yv = g_new - g;
    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      s_hist.push_back(s);
      y_hist.push_back(yv);
      rho_hist.push_back(1.0 / sy);
      if (static_cast<int>(s_hist.size()) > opts.memory) {
        s_hist.pop_front();
        y_hist.pop_front();
        rho_hist.pop_front();
      }
    }

    const double dx = s.lpNorm<Eigen::Infinity>();
    x.swap(x_new);
    g.swap(g_new);
    f = f_new;
    if (dx <= opts.step_tol * (1.0 + x.lpNorm<Eigen::Infinity>())) {
      res.converged = true;
      break;
    }
  }

  res.x = std::move(x);
  res.f = f;
  return res;
}

}  // namespace vbmc
