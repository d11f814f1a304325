#include "vbmc/acquisition.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "vbmc/errors.hpp"
#include "vbmc/rng.hpp"

namespace vbmc {

namespace {

double noise_model2(const GpSurrogate& gp) {
  // Noise the GP expects for a fresh observation: the fitted floor plus the
  // average reported measurement variance.
  return gp.hyper().noise_floor2() + gp.data().s.array().square().mean();
}

struct NoisyContext {
  Mat Z;        // n_ref x D reference points
  Mat U;        // N x n_ref, U.col(j) = L^{-1} k(X, z_j)
  double s2_est = 0.0;

  static NoisyContext build(const GpSurrogate& gp,
                            const VariationalPosterior& vp, int n_ref,
                            std::uint64_t seed) {
    NoisyContext ctx;
    ctx.Z = vp.sample(n_ref, mix_seed(seed, 0x7265665fULL));
    const Vec inv_len2 = (-2.0 * gp.hyper().log_lengthscales.array()).exp();
    Mat Kxz;
    kernels::se_cross(gp.data().X, ctx.Z, inv_len2, gp.hyper().outputscale2(),
                      Kxz, kernels::Exec::Parallel);
    ctx.U = gp.chol_lower().triangularView<Eigen::Lower>().solve(Kxz);
    ctx.s2_est = noise_model2(gp);
    return ctx;
  }
};

// Scores for a whole candidate set; each column of work is independent so
// the parallel path is bit-identical to the serial one.
Vec score_noisy(const GpSurrogate& gp, const NoisyContext& ctx,
                const Mat& Xcand) {
  const Vec inv_len2 = (-2.0 * gp.hyper().log_lengthscales.array()).exp();
  const double sf2 = gp.hyper().outputscale2();
  Mat Kxc;  // N x Q
  kernels::se_cross(gp.data().X, Xcand, inv_len2, sf2, Kxc,
                    kernels::Exec::Parallel);
  Mat W = gp.chol_lower().triangularView<Eigen::Lower>().solve(Kxc);
  Mat Kzc;  // n_ref x Q
  kernels::se_cross(ctx.Z, Xcand, inv_len2, sf2, Kzc, kernels::Exec::Parallel);
  Mat Cov = Kzc - ctx.U.transpose() * W;  // posterior cov(z_j, x_c)
  const int Q = static_cast<int>(Xcand.rows());
  Vec out(Q);
  for (int c = 0; c < Q; ++c) {
    double v = sf2 - W.col(c).squaredNorm();
    if (v < 0.0) v = 0.0;
    out[c] = Cov.col(c).squaredNorm() / (v + ctx.s2_est) / ctx.Z.rows();
  }
  return out;
}

Vec score_prospective(const GpSurrogate& gp, const VariationalPosterior& vp,
                      const Mat& Xcand) {
  auto [mean, var] = gp.predict(Xcand, kernels::Exec::Parallel);
  const Vec logq = vp.log_pdf_batch(Xcand, kernels::Exec::Parallel);
  const double m_max = gp.max_y();
  const int Q = static_cast<int>(Xcand.rows());
  Vec out(Q);
  for (int c = 0; c < Q; ++c) {
    if (var[c] <= 0.0) {
      out[c] = 0.0;
      continue;
    }
    const double la = std::log(var[c]) + logq[c] + (mean[c] - m_max);
    out[c] = std::exp(std::min(la, 700.0));
  }
  return out;
}

Vec score_candidates(const GpSurrogate& gp, const VariationalPosterior& vp,
                     const Mat& Xcand, AcquisitionKind kind,
                     const NoisyContext* ctx) {
  if (kind == AcquisitionKind::NoisyIntegrated) {
    return score_noisy(gp, *ctx, Xcand);
  }
  return score_prospective(gp, vp, Xcand);
}

double score_single(const GpSurrogate& gp, const VariationalPosterior& vp,
                    const Vec& x, AcquisitionKind kind,
                    const NoisyContext* ctx) {
  return score_candidates(gp, vp, x.transpose(), kind, ctx)[0];
}

// Coordinate pattern search on the acquisition, budgeted in evaluations.
Vec polish(const GpSurrogate& gp, const VariationalPosterior& vp, Vec x,
           double score, AcquisitionKind kind, const NoisyContext* ctx,
           const Vec& step0, int budget) {
  Vec h = step0;
  const int D = static_cast<int>(x.size());
  int evals = 0;
  while (evals < budget) {
    bool improved = false;
    for (int d = 0; d < D && evals < budget; ++d) {
      for (const double sgn : {+1.0, -1.0}) {
        if (evals >= budget) break;
        Vec probe = x;
        probe[d] += sgn * h[d];
        const double s = score_single(gp, vp, probe, kind, ctx);
        ++evals;
        if (s > score) {
          score = s;
          x = probe;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      h *= 0.5;
      if ((h.array() < 1e-3 * step0.array()).all()) break;
    }
  }
  return x;
}

}  // namespace

double acq_prospective(const Vec& x, const GpSurrogate& gp,
                       const VariationalPosterior& vp) {
  return score_prospective(gp, vp, x.transpose())[0];
}

double acq_noisy_integrated(const Vec& x, const GpSurrogate& gp,
                            const VariationalPosterior& vp, int n_mc,
                            std::uint64_t seed) {
  if (n_mc < 8) throw DomainError("acq_noisy_integrated needs n_mc >= 8");
  const NoisyContext ctx = NoisyContext::build(gp, vp, n_mc, seed);
  return score_noisy(gp, ctx, x.transpose())[0];
}

Mat search_next(const GpSurrogate& gp, const VariationalPosterior& vp,
                int count, const Vec& plausible_lo, const Vec& plausible_hi,
                AcquisitionKind kind, const SearchOptions& opts,
                std::uint64_t seed) {
  if (count < 1) throw SearchError("count must be >= 1");
  const int D = static_cast<int>(plausible_lo.size());
  const Vec range = plausible_hi - plausible_lo;
  const Vec min_sep = opts.min_separation_rel * range;

  // Candidate set: posterior samples plus uniform plausible-box points.
  const int n_cand = opts.vp_candidates + opts.uniform_candidates;
  Mat cand(n_cand, D);
  cand.topRows(opts.vp_candidates) =
      vp.sample(opts.vp_candidates, mix_seed(seed, 0xCA9D));
  Rng rng(mix_seed(seed, 0x556e1f));
  for (int i = 0; i < opts.uniform_candidates; ++i) {
    for (int d = 0; d < D; ++d) {
      cand(opts.vp_candidates + i, d) =
          plausible_lo[d] + range[d] * rng.uniform();
    }
  }

  Mat selected(count, D);
  GpSurrogate work = gp;
  const double s_fantasy = std::sqrt(noise_model2(gp));
  for (int i = 0; i < count; ++i) {
    NoisyContext ctx;
    if (kind == AcquisitionKind::NoisyIntegrated) {
      ctx = NoisyContext::build(work, vp, opts.noisy_ref_points,
                                mix_seed(seed, 0x5a5a, i));
    }
    const Vec scores = score_candidates(work, vp, cand, kind, &ctx);

    auto distinct = [&](const Vec& x) {
      for (int j = 0; j < i; ++j) {
        if (((x - selected.row(j).transpose()).array().abs() <
             min_sep.array())
                .all()) {
          return false;
        }
      }
      return true;
    };

    // Rank candidates by score, keep the best distinct one.
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < n_cand; ++c) {
      if (std::isfinite(scores[c]) && scores[c] > best_score &&
          distinct(cand.row(c).transpose())) {
        best_score = scores[c];
        best = c;
      }
    }
    if (best < 0) {
      throw SearchError("no finite acquisition value over the candidate set");
    }

    Vec x = polish(work, vp, cand.row(best).transpose(), best_score, kind,
                   &ctx, 0.05 * range, opts.polish_evals);
    if (!distinct(x)) x = cand.row(best).transpose();

    selected.row(i) = x.transpose();
    if (i + 1 < count) {
      const auto pred = work.predict(x.transpose(), kernels::Exec::Serial);
      work = work.with_extra_point(x, pred.first[0], s_fantasy);
    }
  }
  return selected;
}

}  // namespace vbmc
