#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "vbmc/kernels.hpp"

namespace vbmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Mixture-of-Gaussians posterior approximation. Component k has mean
// means.row(k) and diagonal covariance (sigma[k] * lambda[d])^2: one scalar
// scale per component, one shared scale per dimension.
class VariationalPosterior {
 public:
  VariationalPosterior(Mat means, Vec weights, Vec sigma, Vec lambda);

  int K() const { return static_cast<int>(weights_.size()); }
  int D() const { return static_cast<int>(lambda_.size()); }
  const Mat& means() const { return means_; }
  const Vec& weights() const { return weights_; }
  const Vec& sigma() const { return sigma_; }
  const Vec& lambda() const { return lambda_; }

  double log_pdf(const Vec& x) const;
  Vec log_pdf_batch(const Mat& X,
                    kernels::Exec exec = kernels::Exec::Parallel) const;

  // n i.i.d. draws, rows in inference space; deterministic given seed.
  Mat sample(int n, std::uint64_t seed) const;

  // Exact mixture mean and covariance.
  std::pair<Vec, Mat> moments() const;

  // Drops components with weight below min_weight (keeping at least the
  // heaviest one) and renormalizes.
  VariationalPosterior pruned(double min_weight = 1e-8) const;

  // Unconstrained parameterization used by the ELBO optimizer:
  // [log-weights (K), means row-major (K*D), log sigma (K), log lambda (D)].
  Vec to_unconstrained() const;
  static VariationalPosterior from_unconstrained(const Vec& theta, int K,
                                                 int D);
  int n_params() const { return K() * 2 + K() * D() + D(); }

 private:
  Mat means_;   // K x D
  Vec weights_; // K, simplex
  Vec sigma_;   // K
  Vec lambda_;  // D
};

// Symmetrized Monte-Carlo KL divergence 0.5*(KL(a||b) + KL(b||a)) from n
// samples of each posterior; deterministic given seed.
double divergence_between(const VariationalPosterior& a,
                          const VariationalPosterior& b, int n,
                          std::uint64_t seed);

}  // namespace vbmc
