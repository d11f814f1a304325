#include "vbmc/gp.hpp"

#include <cmath>
#include <limits>

#include "vbmc/errors.hpp"
#include "vbmc/lbfgs.hpp"
#include "vbmc/rng.hpp"

namespace vbmc {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLog10 = 2.302585092994045684017991454684;

// Cholesky with an escalating jitter ladder 1e-10..1e-4 scaled by the mean
// diagonal. Returns the applied jitter through `jitter`.
Mat chol_with_jitter(const Mat& K, double& jitter) {
  const double scale = K.diagonal().mean();
  Mat A = K;
  double level = 1e-10;
  for (int attempt = 0; attempt < 8; ++attempt) {
    if (attempt > 0) {
      A = K;
      A.diagonal().array() += level * scale;
      jitter = level * scale;
      level *= 10.0;
    } else {
      jitter = 0.0;
    }
    Eigen::LLT<Mat> llt(A);
    if (llt.info() == Eigen::Success) {
      Mat L = llt.matrixL();
      if (L.diagonal().minCoeff() > 0.0 && L.allFinite()) return L;
    }
  }
  throw NumericalError(
      "covariance factorization failed after jitter escalation");
}

// K_SE + diag(noise_floor^2 + s_n^2)
Mat covariance(const GpHyperparams& hyper, const TrainingSet& data) {
  const Vec inv_len2 = (-2.0 * hyper.log_lengthscales.array()).exp();
  Mat K;
  kernels::se_cross(data.X, data.X, inv_len2, hyper.outputscale2(), K,
                    kernels::Exec::Serial);
  const double nf2 = hyper.noise_floor2();
  for (int n = 0; n < data.size(); ++n) {
    K(n, n) += nf2 + data.s[n] * data.s[n];
  }
  return K;
}

}  // namespace

TrainingSet::TrainingSet(Mat X_, Vec y_)
    : TrainingSet(std::move(X_), std::move(y_), Vec()) {}

TrainingSet::TrainingSet(Mat X_, Vec y_, Vec s_)
    : X(std::move(X_)), y(std::move(y_)), s(std::move(s_)) {
  if (s.size() == 0) s = Vec::Zero(y.size());
  if (y.size() < 1 || X.rows() != y.size() || s.size() != y.size()) {
    throw DomainError("training set shapes are inconsistent");
  }
  if (!X.allFinite() || !y.allFinite() || !s.allFinite() ||
      !(s.array() >= 0.0).all()) {
    throw DomainError("training set requires finite values and s >= 0");
  }
}

Vec GpHyperparams::pack() const {
  const int D = dim();
  Vec theta(n_params());
  theta.segment(0, D) = log_lengthscales;
  theta[D] = log_outputscale;
  theta[D + 1] = log_noise_floor;
  theta[D + 2] = m0;
  theta.segment(D + 3, D) = x_m;
  theta.segment(2 * D + 3, D) = log_omega;
  return theta;
}

GpHyperparams GpHyperparams::unpack(const Vec& theta, int D) {
  GpHyperparams h;
  h.log_lengthscales = theta.segment(0, D);
  h.log_outputscale = theta[D];
  h.log_noise_floor = theta[D + 1];
  h.m0 = theta[D + 2];
  h.x_m = theta.segment(D + 3, D);
  h.log_omega = theta.segment(2 * D + 3, D);
  return h;
}

double GpHyperparams::mean_at(const Vec& x) const {
  const Vec inv_om2 = (-2.0 * log_omega.array()).exp();
  double quad = 0.0;
  for (int d = 0; d < dim(); ++d) {
    const double diff = x[d] - x_m[d];
    quad += inv_om2[d] * diff * diff;
  }
  return m0 - 0.5 * quad;
}

Vec GpHyperparams::mean_batch(const Mat& X, kernels::Exec exec) const {
  Vec out;
  kernels::negquad_mean(X, m0, x_m, (-2.0 * log_omega.array()).exp(), out,
                        exec);
  return out;
}

double se_kernel(const Vec& x1, const Vec& x2, const GpHyperparams& hyper) {
  const Vec inv_len2 = (-2.0 * hyper.log_lengthscales.array()).exp();
  double d2 = 0.0;
  for (int d = 0; d < hyper.dim(); ++d) {
    const double diff = x1[d] - x2[d];
    d2 += inv_len2[d] * diff * diff;
  }
  return hyper.outputscale2() * std::exp(-0.5 * d2);
}

GpHyperprior GpHyperprior::build(const Vec& plausible_lo,
                                 const Vec& plausible_hi, const Vec& y) {
  const int D = static_cast<int>(plausible_lo.size());
  const Vec range = plausible_hi - plausible_lo;
  const double y_max = y.maxCoeff();
  const double y_spread = y_max - y.minCoeff();
  const double y_sd = y.size() > 1
                          ? std::sqrt((y.array() - y.mean()).square().sum() /
                                      (y.size() - 1))
                          : 1.0;

  GpHyperprior p;
  p.center.resize(3 * D + 3);
  p.sd.resize(3 * D + 3);
  for (int d = 0; d < D; ++d) {
    p.center[d] = std::log(range[d] / std::sqrt(10.0));
    p.sd[d] = kLog10;
  }
  p.center[D] = std::log(y_sd + 1e-3);
  p.sd[D] = kLog10;
  p.center[D + 1] = std::log(1e-3);
  p.sd[D + 1] = kLog10;
  p.center[D + 2] = y_max;
  p.sd[D + 2] = std::max(1.0, y_spread);
  for (int d = 0; d < D; ++d) {
    p.center[D + 3 + d] = 0.5 * (plausible_lo[d] + plausible_hi[d]);
    p.sd[D + 3 + d] = range[d];
    p.center[2 * D + 3 + d] = std::log(range[d]);
    p.sd[2 * D + 3 + d] = kLog10;
  }
  return p;
}

double GpHyperprior::log_pdf(const Vec& theta) const {
  return -0.5 * ((theta - center).array() / sd.array()).square().sum();
}

Vec GpHyperprior::grad(const Vec& theta) const {
  return (-(theta - center).array() / sd.array().square()).matrix();
}

std::pair<double, Vec> log_marginal_likelihood(const GpHyperparams& hyper,
                                               const TrainingSet& data) {
  const int N = data.size();
  const int D = data.dim();
  const Vec lengthscales = hyper.lengthscales();
  const Vec inv_len2 = (-2.0 * hyper.log_lengthscales.array()).exp();

  Mat Kse;
  kernels::se_cross(data.X, data.X, inv_len2, hyper.outputscale2(), Kse,
                    kernels::Exec::Serial);
  Mat K = Kse;
  const double nf2 = hyper.noise_floor2();
  for (int n = 0; n < N; ++n) K(n, n) += nf2 + data.s[n] * data.s[n];

  double jitter = 0.0;
  const Mat L = chol_with_jitter(K, jitter);

  const Vec mean = hyper.mean_batch(data.X);
  const Vec r = data.y - mean;
  Vec alpha = L.triangularView<Eigen::Lower>().solve(r);
  const double quad = alpha.squaredNorm();
  const double log_det_half = L.diagonal().array().log().sum();
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(alpha);

  const double value = -0.5 * quad - log_det_half - 0.5 * N * kLog2Pi;

  // A = alpha alpha^T - K^{-1}; gradient of kernel parameters is
  // 0.5 * sum_ij A_ij dK_ij/dtheta.
  Mat Kinv = Mat::Identity(N, N);
  L.triangularView<Eigen::Lower>().solveInPlace(Kinv);
  L.transpose().triangularView<Eigen::Upper>().solveInPlace(Kinv);
  Mat A = alpha * alpha.transpose() - Kinv;

  Vec grad(hyper.n_params());
  for (int d = 0; d < D; ++d) {
    double acc = 0.0;
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) {
        const double diff = data.X(i, d) - data.X(j, d);
        acc += A(i, j) * Kse(i, j) * diff * diff;
      }
    }
    grad[d] = 0.5 * acc * inv_len2[d];
  }
  grad[D] = (A.array() * Kse.array()).sum();  // d/dlog sf: 2*Kse, times 0.5
  grad[D + 1] = nf2 * A.trace();              // d/dlog sn: diag(2 nf2)

  // Mean-function parameters enter through the residual: grad = dm/dtheta^T alpha.
  const Vec inv_om2 = (-2.0 * hyper.log_omega.array()).exp();
  grad[D + 2] = alpha.sum();
  for (int d = 0; d < D; ++d) {
    double acc_c = 0.0, acc_w = 0.0;
    for (int i = 0; i < N; ++i) {
      const double diff = data.X(i, d) - hyper.x_m[d];
      acc_c += alpha[i] * diff;
      acc_w += alpha[i] * diff * diff;
    }
    grad[D + 3 + d] = acc_c * inv_om2[d];
    grad[2 * D + 3 + d] = acc_w * inv_om2[d];
  }
  return {value, grad};
}

GpHyperparams fit_hyperparams(const TrainingSet& data,
                              const GpHyperprior& prior,
                              std::optional<GpHyperparams> prev,
                              const GpFitOptions& opts) {
  const int D = data.dim();
  if (data.size() < D + 2) {
    throw FitError("need at least D+2 observations to fit hyperparameters");
  }

  // MAP objective: negative (marginal likelihood + hyperprior).
  auto objective = [&](const Vec& theta, Vec& grad) -> double {
    GpHyperparams h = GpHyperparams::unpack(theta, D);
    try {
      auto [lml, lml_grad] = log_marginal_likelihood(h, data);
      grad = -(lml_grad + prior.grad(theta));
      return -(lml + prior.log_pdf(theta));
    } catch (const NumericalError&) {
      grad.setZero(theta.size());
      return std::numeric_limits<double>::infinity();
    }
  };

  Vec init = prior.center;
  {
    // center the quadratic mean on the best observation
    int best = 0;
    data.y.maxCoeff(&best);
    init.segment(D + 3, D) = data.X.row(best).transpose();
    init[D + 2] = data.y.maxCoeff();
  }
  if (prev && prev->dim() == D) init = prev->pack();

  LbfgsOptions lopts;
  lopts.max_iters = opts.max_iters;

  Rng rng(mix_seed(opts.seed, 0x67705f666974ULL));
  double best_f = std::numeric_limits<double>::infinity();
  Vec best_x;
  for (int r = 0; r < opts.restarts; ++r) {
    Vec x0 = init;
    if (r > 0) x0 += 0.3 * rng.normal_vec(static_cast<int>(init.size()));
    LbfgsResult res = lbfgs_minimize(objective, x0, lopts);
    if (std::isfinite(res.f) && res.f < best_f) {
      best_f = res.f;
      best_x = res.x;
    }
  }
  if (!std::isfinite(best_f)) {
    throw FitError("all hyperparameter fit restarts failed");
  }
  return GpHyperparams::unpack(best_x, D);
}

GpHyperparams fit_hyperparams(const TrainingSet& data,
                              const BoundedSpace& space,
                              std::optional<GpHyperparams> prev,
                              const GpFitOptions& opts) {
  // Hyperprior scales live in inference space.
  const Vec lo = space.to_unbounded(space.plausible_lower());
  const Vec hi = space.to_unbounded(space.plausible_upper());
  return fit_hyperparams(data, GpHyperprior::build(lo, hi, data.y), prev,
                         opts);
}

GpSurrogate GpSurrogate::build(GpHyperparams hyper, TrainingSet data) {
  GpSurrogate gp;
  const Mat K = covariance(hyper, data);
  gp.L_ = chol_with_jitter(K, gp.jitter_);
  const Vec r = data.y - hyper.mean_batch(data.X);
  gp.alpha_ = gp.L_.triangularView<Eigen::Lower>().solve(r);
  gp.L_.transpose().triangularView<Eigen::Upper>().solveInPlace(gp.alpha_);
  gp.hyper_ = std::move(hyper);
  gp.data_ = std::move(data);
  return gp;
}

std::pair<Vec, Vec> GpSurrogate::predict(const Mat& Xq,
                                         kernels::Exec exec) const {
  const Vec inv_len2 = (-2.0 * hyper_.log_lengthscales.array()).exp();
  Mat Kxq;  // N x Q
  kernels::se_cross(data_.X, Xq, inv_len2, hyper_.outputscale2(), Kxq, exec);
  Vec mean = hyper_.mean_batch(Xq, exec) + Kxq.transpose() * alpha_;
  Vec var;
  kernels::predict_var(L_, Kxq, hyper_.outputscale2(), 1e-12, var, exec);
  return {std::move(mean), std::move(var)};
}

double GpSurrogate::posterior_cov(const Vec& a, const Vec& b) const {
  const Vec inv_len2 = (-2.0 * hyper_.log_lengthscales.array()).exp();
  Mat ka, kb;
  kernels::se_cross(data_.X, a.transpose(), inv_len2, hyper_.outputscale2(),
                    ka, kernels::Exec::Serial);
  kernels::se_cross(data_.X, b.transpose(), inv_len2, hyper_.outputscale2(),
                    kb, kernels::Exec::Serial);
  Vec va = L_.triangularView<Eigen::Lower>().solve(ka.col(0));
  Vec vb = L_.triangularView<Eigen::Lower>().solve(kb.col(0));
  return se_kernel(a, b, hyper_) - va.dot(vb);
}

Vec GpSurrogate::solve_K(const Vec& v) const {
  Vec out = L_.triangularView<Eigen::Lower>().solve(v);
  L_.transpose().triangularView<Eigen::Upper>().solveInPlace(out);
  return out;
}

GpSurrogate GpSurrogate::with_extra_point(const Vec& x, double y,
                                          double s) const {
  TrainingSet d = data_;
  const int N = d.size();
  d.X.conservativeResize(N + 1, Eigen::NoChange);
  d.X.row(N) = x.transpose();
  d.y.conservativeResize(N + 1);
  d.y[N] = y;
  d.s.conservativeResize(N + 1);
  d.s[N] = s;
  return build(hyper_, std::move(d));
}

}  // namespace vbmc
