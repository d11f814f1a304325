#pragma once

#include <cstdint>

#include "vbmc/gp.hpp"
#include "vbmc/vp.hpp"

namespace vbmc {

// NoisyIntegrated is selected automatically when any observation carries a
// positive reported noise; Prospective otherwise.
enum class AcquisitionKind { Prospective, NoisyIntegrated };

inline AcquisitionKind auto_acquisition(const TrainingSet& data) {
  return (data.s.array() > 0.0).any() ? AcquisitionKind::NoisyIntegrated
                                      : AcquisitionKind::Prospective;
}

// V(x) * q(x) * exp(m(x) - max y): predictive variance weighted by posterior
// relevance, shifted for overflow safety.
double acq_prospective(const Vec& x, const GpSurrogate& gp,
                       const VariationalPosterior& vp);

// Expected reduction in q-integrated predictive variance over a reference
// set of n_mc posterior samples:
//   (1/n_mc) * sum_j cov(z_j, x)^2 / (V(x) + s_est(x)^2),
// where s_est^2 is the noise the GP would assign a new observation at x.
// Deterministic given seed (the reference set is drawn from it).
double acq_noisy_integrated(const Vec& x, const GpSurrogate& gp,
                            const VariationalPosterior& vp, int n_mc,
                            std::uint64_t seed);

struct SearchOptions {
  int vp_candidates = 1 << 10;
  int uniform_candidates = 1 << 8;
  int polish_evals = 50;        // pattern-search acquisition evaluations
  int noisy_ref_points = 64;
  double min_separation_rel = 1e-6;  // of the plausible range, per dimension
};

// Greedy batch selection: score a candidate set, polish the winner, then
// fantasize the GP on its predicted mean so the batch spreads. Points are
// pairwise distinct and stay inside the (inference-space) hard bounds by
// construction. plausible_lo/hi delimit the uniform candidate box.
Mat search_next(const GpSurrogate& gp, const VariationalPosterior& vp,
                int count, const Vec& plausible_lo, const Vec& plausible_hi,
                AcquisitionKind kind, const SearchOptions& opts,
                std::uint64_t seed);

}  // namespace vbmc
