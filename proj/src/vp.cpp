#include "vbmc/vp.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "vbmc/errors.hpp"
#include "vbmc/rng.hpp"

namespace vbmc {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

// inv_var(k,d) = 1/(sigma_k lambda_d)^2 and the log normalizers
// log w_k - sum_d log(sigma_k lambda_d) - D/2 log(2 pi).
void component_constants(const Vec& weights, const Vec& sigma,
                         const Vec& lambda, Mat& inv_var, Vec& log_norm) {
  const auto K = weights.size();
  const auto D = lambda.size();
  inv_var.resize(K, D);
  log_norm.resize(K);
  const double log_lambda_sum = lambda.array().log().sum();
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index d = 0; d < D; ++d) {
      const double sd = sigma[k] * lambda[d];
      inv_var(k, d) = 1.0 / (sd * sd);
    }
    const double logw =
        weights[k] > 0.0 ? std::log(weights[k])
                         : -std::numeric_limits<double>::infinity();
    log_norm[k] = logw - D * std::log(sigma[k]) - log_lambda_sum -
                  0.5 * D * kLog2Pi;
  }
}
}  // namespace

VariationalPosterior::VariationalPosterior(Mat means, Vec weights, Vec sigma,
                                           Vec lambda)
    : means_(std::move(means)),
      weights_(std::move(weights)),
      sigma_(std::move(sigma)),
      lambda_(std::move(lambda)) {
  const auto K = weights_.size();
  const auto D = lambda_.size();
  if (K < 1 || means_.rows() != K || means_.cols() != D ||
      sigma_.size() != K) {
    throw DomainError("inconsistent mixture shapes");
  }
  if (!(weights_.array() >= 0.0).all() || !weights_.allFinite()) {
    throw DomainError("mixture weights must be non-negative and finite");
  }
  const double total = weights_.sum();
  if (!(std::abs(total - 1.0) < 1e-10)) weights_ /= total;
  if (!(sigma_.array() > 0.0).all() || !(lambda_.array() > 0.0).all() ||
      !sigma_.allFinite() || !lambda_.allFinite() || !means_.allFinite()) {
    throw DomainError("mixture scales must be positive finite");
  }
}

double VariationalPosterior::log_pdf(const Vec& x) const {
  Mat inv_var;
  Vec log_norm, out;
  component_constants(weights_, sigma_, lambda_, inv_var, log_norm);
  kernels::mixture_log_pdf(means_, inv_var, log_norm, x.transpose(), out,
                           kernels::Exec::Serial);
  return out[0];
}

Vec VariationalPosterior::log_pdf_batch(const Mat& X,
                                        kernels::Exec exec) const {
  Mat inv_var;
  Vec log_norm, out;
  component_constants(weights_, sigma_, lambda_, inv_var, log_norm);
  kernels::mixture_log_pdf(means_, inv_var, log_norm, X, out, exec);
  return out;
}

Mat VariationalPosterior::sample(int n, std::uint64_t seed) const {
  Rng rng(seed);
  Mat out(n, D());
  for (int i = 0; i < n; ++i) {
    const int k = rng.categorical(weights_);
    for (int d = 0; d < D(); ++d) {
      out(i, d) = means_(k, d) + sigma_[k] * lambda_[d] * rng.normal();
    }
  }
  return out;
}

std::pair<Vec, Mat> VariationalPosterior::moments() const {
  Vec mean = Vec::Zero(D());
  for (int k = 0; k < K(); ++k) mean += weights_[k] * means_.row(k).transpose();
  Mat cov = Mat::Zero(D(), D());
  for (int k = 0; k < K(); ++k) {
    const Vec mu = means_.row(k).transpose();
    cov += weights_[k] *
           (Mat((sigma_[k] * sigma_[k] * lambda_.array().square())
                    .matrix()
                    .asDiagonal()) +
            mu * mu.transpose());
  }
  cov -= mean * mean.transpose();
  return {mean, cov};
}

VariationalPosterior VariationalPosterior::pruned(double min_weight) const {
  std::vector<int> keep;
  for (int k = 0; k < K(); ++k) {
    if (weights_[k] >= min_weight) keep.push_back(k);
  }
  if (keep.empty()) {
    int best = 0;
    weights_.maxCoeff(&best);
    keep.push_back(best);
  }
  if (static_cast<int>(keep.size()) == K()) return *this;
  Mat means(keep.size(), D());
  Vec w(keep.size()), s(keep.size());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    means.row(i) = means_.row(keep[i]);
    w[i] = weights_[keep[i]];
    s[i] = sigma_[keep[i]];
  }
  w /= w.sum();
  return VariationalPosterior(std::move(means), std::move(w), std::move(s),
                              lambda_);
}

Vec VariationalPosterior::to_unconstrained() const {
  Vec theta(n_params());
  int at = 0;
  for (int k = 0; k < K(); ++k)
    theta[at++] = std::log(std::max(weights_[k], 1e-300));
  for (int k = 0; k < K(); ++k)
    for (int d = 0; d < D(); ++d) theta[at++] = means_(k, d);
  for (int k = 0; k < K(); ++k) theta[at++] = std::log(sigma_[k]);
  for (int d = 0; d < D(); ++d) theta[at++] = std::log(lambda_[d]);
  return theta;
}

VariationalPosterior VariationalPosterior::from_unconstrained(const Vec& theta,
                                                              int K, int D) {
  if (theta.size() != 2 * K + K * D + D) {
    throw DomainError("unconstrained parameter vector has wrong length");
  }
  int at = 0;
  Vec logits = theta.segment(at, K);
  at += K;
  Mat means(K, D);
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) means(k, d) = theta[at++];
  Vec sigma = theta.segment(at, K).array().exp();
  at += K;
  Vec lambda = theta.segment(at, D).array().exp();
  const double m = logits.maxCoeff();
  Vec w = (logits.array() - m).exp();
  w /= w.sum();
  return VariationalPosterior(std::move(means), std::move(w), std::move(sigma),
                              std::move(lambda));
}

double divergence_between(const VariationalPosterior& a,
                          const VariationalPosterior& b, int n,
                          std::uint64_t seed) {
  if (n < 1000) throw DomainError("divergence_between needs n >= 1000");
  const Mat xa = a.sample(n, mix_seed(seed, 1));
  const Mat xb = b.sample(n, mix_seed(seed, 2));
  const double kl_ab =
      (a.log_pdf_batch(xa) - b.log_pdf_batch(xa)).mean();
  const double kl_ba =
      (b.log_pdf_batch(xb) - a.log_pdf_batch(xb)).mean();
  return 0.5 * (kl_ab + kl_ba);
}

}  // namespace vbmc
