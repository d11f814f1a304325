#pragma once

#include <cstdint>
#include <utility>

#include "vbmc/gp.hpp"
#include "vbmc/vp.hpp"

namespace vbmc {

// ELBO estimate in nats. elbo = expected_log_joint + entropy exactly;
// elbo_sd combines the Bayesian-quadrature posterior variance of the
// expected log joint with the Monte-Carlo variance of the entropy term.
struct ElboEstimate {
  double elbo = 0.0;
  double elbo_sd = 0.0;
  double expected_log_joint = 0.0;
  double entropy = 0.0;
};

struct QuadratureResult {
  double value = 0.0;
  double variance = 0.0;
  Vec grad;  // w.r.t. the unconstrained vp parameters
};

// Posterior mean, variance and gradient of int f(x) q(x) dx under the GP on
// f, in closed form (SE kernel against Gaussian components; the quadratic
// GP mean integrates exactly).
QuadratureResult expected_log_joint(const VariationalPosterior& vp,
                                    const GpSurrogate& gp);

struct EntropyResult {
  double value = 0.0;
  Vec grad;  // w.r.t. the unconstrained vp parameters
  double mc_variance = 0.0;
};

// Monte-Carlo entropy of the mixture via reparameterized, stratified
// per-component sampling. The gradient is the exact derivative of the
// seeded estimator, so finite differences at fixed seed reproduce it.
EntropyResult entropy_mc(const VariationalPosterior& vp, int n_samples,
                         std::uint64_t seed, bool want_grad = true);

ElboEstimate elbo(const VariationalPosterior& vp, const GpSurrogate& gp,
                  int n_entropy_samples, std::uint64_t seed);

struct VpOptimizeOptions {
  int max_steps = 2000;
  double step_size = 0.01;
  int restarts = 2;             // first from init, remainder perturbed
  int entropy_samples = 64;     // per optimization step
  int entropy_samples_final = 1 << 14;
  double stop_tol = 1e-4;       // smoothed-objective improvement
  int stop_window = 200;        // steps
  double ema_decay = 0.9;
  double elcbo_beta = 3.0;      // selection score elbo - beta * sd
  int k_max = 50;
  std::uint64_t seed = 0;
};

// Stochastic gradient ascent on the unconstrained parameterization; returns
// the best restart by ELCBO and never returns something worse than init.
std::pair<VariationalPosterior, ElboEstimate> optimize_vp(
    const GpSurrogate& gp, int K_target, const VariationalPosterior& init,
    const VpOptimizeOptions& opts);

// Proposes K+1 by splitting the heaviest component along the largest-lambda
// axis, reoptimizes, and keeps the proposal only when the ELBO improves by
// more than its uncertainty. Always prunes weights below 1e-8.
VariationalPosterior adapt_components(const VariationalPosterior& vp,
                                      const GpSurrogate& gp,
                                      const VpOptimizeOptions& opts);

}  // namespace vbmc
