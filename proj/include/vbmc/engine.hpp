#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vbmc/acquisition.hpp"
#include "vbmc/quadrature.hpp"
#include "vbmc/target.hpp"
#include "vbmc/transform.hpp"
#include "vbmc/vp.hpp"

namespace vbmc {

enum class NoiseHandling { Auto, Force, Off };

struct Options {
  // <= 0 means the default 50 * (D + 2).
  int max_evaluations = 0;
  int init_design_size = 10;
  int points_per_iteration = 5;
  int entropy_samples_final = 1 << 14;
  double reliability_threshold = 1.0;
  int stable_iterations_required = 3;
  int k_max = 50;
  std::uint64_t seed = 0;
  NoiseHandling noisy = NoiseHandling::Auto;
  std::optional<Vec> x0;  // optional first design point, original space

  VpOptimizeOptions vp_opts;   // seeds are derived per iteration
  SearchOptions search_opts;

  int resolved_max_evaluations(int dim) const {
    return max_evaluations > 0 ? max_evaluations : 50 * (dim + 2);
  }
};

struct IterationRecord {
  int iteration = 0;                // 1-based, sampling iterations only
  int cumulative_evaluations = 0;
  double elbo = 0.0;
  double elbo_sd = 0.0;
  double divergence = 0.0;          // vs. previous posterior
  double reliability_index = 0.0;
  int K = 0;
  bool whitening_applied = false;
};

struct InferenceResult {
  VariationalPosterior vp;
  Transform transform;  // maps result samples back to original space
  ElboEstimate elbo;
  bool converged = false;
  std::vector<IterationRecord> trace;
  int evaluations_used = 0;
  std::vector<std::string> warnings;

  // Original-space posterior samples (rows).
  Mat sample_original(int n, std::uint64_t seed) const;
  // Monte-Carlo original-space moments.
  std::pair<Vec, Mat> moments_original(int n, std::uint64_t seed) const;
};

// Raw evaluation log, one row per target call (original space).
struct EvaluationLog {
  Mat X;
  Vec y;        // raw log density as reported by the target
  Vec noise_sd;
};

// x0 (when given) followed by low-discrepancy points filling the plausible
// box, returned in inference space.
Mat initial_design(const BoundedSpace& space, const std::optional<Vec>& x0,
                   int n, std::uint64_t seed);

// max(|delta elbo|/0.1, elbo_sd/0.1, divergence/0.01) over the last two
// records.
double reliability_index(const std::vector<IterationRecord>& tail);

// Congruence whitener: maps the current mixture to identity covariance
// while keeping the shared-diagonal component family closed. M satisfies
// M C M^T = I and M diag(lambda^2) M^T = diag(new_lambda^2).
struct Whitening {
  Mat M;
  double log_det = 0.0;
  Vec new_lambda;
};
Whitening compute_whitening(const VariationalPosterior& vp);
VariationalPosterior apply_whitening_vp(const VariationalPosterior& vp,
                                        const Whitening& w);

InferenceResult run(Target& target, const BoundedSpace& space,
                    const Options& options);

// run() plus the raw evaluation log (what the CLI writes out).
InferenceResult run(Target& target, const BoundedSpace& space,
                    const Options& options, EvaluationLog& log);

}  // namespace vbmc
