#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <utility>

#include "vbmc/bounded_space.hpp"
#include "vbmc/kernels.hpp"

namespace vbmc {

// Squared-exponential ARD kernel plus a negative-quadratic mean
//   m(x) = m0 - 0.5 * sum_d (x_d - x_m[d])^2 / omega_d^2
// so that exp(surrogate) stays integrable far from the data.
struct GpHyperparams {
  Vec log_lengthscales;  // D
  double log_outputscale = 0.0;
  double log_noise_floor = 0.0;
  double m0 = 0.0;
  Vec x_m;        // D
  Vec log_omega;  // D

  int dim() const { return static_cast<int>(log_lengthscales.size()); }
  int n_params() const { return 3 * dim() + 3; }
  Vec pack() const;
  static GpHyperparams unpack(const Vec& theta, int D);

  Vec lengthscales() const { return log_lengthscales.array().exp(); }
  double outputscale2() const { return std::exp(2.0 * log_outputscale); }
  double noise_floor2() const { return std::exp(2.0 * log_noise_floor); }
  Vec omega() const { return log_omega.array().exp(); }
  double mean_at(const Vec& x) const;
  Vec mean_batch(const Mat& X,
                 kernels::Exec exec = kernels::Exec::Serial) const;
};

// Observations in inference space: y holds the transformed log joint, s the
// user-reported noise standard deviation per observation (0 when noiseless).
struct TrainingSet {
  Mat X;  // N x D
  Vec y;  // N
  Vec s;  // N, >= 0

  TrainingSet() = default;
  TrainingSet(Mat X_, Vec y_);          // s defaults to zeros
  TrainingSet(Mat X_, Vec y_, Vec s_);
  int size() const { return static_cast<int>(y.size()); }
  int dim() const { return static_cast<int>(X.cols()); }
};

double se_kernel(const Vec& x1, const Vec& x2, const GpHyperparams& hyper);

// Gaussian hyperpriors for the MAP fit; centers and scales derive from the
// plausible box and the observed y values.
struct GpHyperprior {
  Vec center;  // packed order
  Vec sd;
  static GpHyperprior build(const Vec& plausible_lo, const Vec& plausible_hi,
                            const Vec& y);
  double log_pdf(const Vec& theta) const;
  Vec grad(const Vec& theta) const;
};

// Log marginal likelihood of y under the GP and its exact gradient with
// respect to the packed hyperparameters.
std::pair<double, Vec> log_marginal_likelihood(const GpHyperparams& hyper,
                                               const TrainingSet& data);

struct GpFitOptions {
  int restarts = 3;  // 1 warm start + 2 perturbed
  int max_iters = 500;
  std::uint64_t seed = 0;
};

GpHyperparams fit_hyperparams(const TrainingSet& data,
                              const GpHyperprior& prior,
                              std::optional<GpHyperparams> prev = {},
                              const GpFitOptions& opts = {});
// Convenience overload: hyperprior from the space's plausible box.
GpHyperparams fit_hyperparams(const TrainingSet& data,
                              const BoundedSpace& space,
                              std::optional<GpHyperparams> prev = {},
                              const GpFitOptions& opts = {});

// Immutable GP posterior: hyperparameters, data and the cached Cholesky
// factorization of K + diag(noise) + jitter.
class GpSurrogate {
 public:
  static GpSurrogate build(GpHyperparams hyper, TrainingSet data);

  const GpHyperparams& hyper() const { return hyper_; }
  const TrainingSet& data() const { return data_; }
  const Mat& chol_lower() const { return L_; }
  const Vec& alpha() const { return alpha_; }  // K^{-1}(y - m(X))
  double jitter() const { return jitter_; }
  double max_y() const { return data_.y.maxCoeff(); }

  // Latent posterior mean and variance at the query rows.
  std::pair<Vec, Vec> predict(const Mat& Xq,
                              kernels::Exec exec = kernels::Exec::Parallel) const;
  // Posterior covariance between two points.
  double posterior_cov(const Vec& a, const Vec& b) const;
  Vec solve_K(const Vec& v) const;

  // New surrogate conditioned on one extra observation (same
  // hyperparameters); used to fantasize batch selections.
  GpSurrogate with_extra_point(const Vec& x, double y, double s) const;

 private:
  GpSurrogate() = default;
  GpHyperparams hyper_;
  TrainingSet data_;
  Mat L_;
  Vec alpha_;
  double jitter_ = 0.0;
};

}  // namespace vbmc
