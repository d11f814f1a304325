#include "vbmc/engine.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vbmc/gp.hpp"
#include "vbmc/rng.hpp"

namespace vbmc {

namespace {

constexpr int kPrimes[] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37,
                           41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89};

double halton(int index, int base) {
  double f = 1.0, r = 0.0;
  while (index > 0) {
    f /= base;
    r += f * (index % base);
    index /= base;
  }
  return r;
}

double covariance_condition(const Mat& C) {
  Eigen::SelfAdjointEigenSolver<Mat> es(C);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

struct SeedStream {
  std::uint64_t master;
  std::uint64_t at(std::uint64_t purpose, std::uint64_t index = 0) const {
    return mix_seed(master, purpose, index);
  }
};

// purposes for derived seeds
enum : std::uint64_t {
  kSeedDesign = 1,
  kSeedGpFit,
  kSeedVpOpt,
  kSeedAdapt,
  kSeedSearch,
  kSeedDivergence,
  kSeedBaseline,
  kSeedFinal
};

}  // namespace

Mat initial_design(const BoundedSpace& space, const std::optional<Vec>& x0,
                   int n, std::uint64_t seed) {
  if (n < 1) throw DomainError("initial design needs n >= 1");
  const int D = space.dim();
  if (D > static_cast<int>(sizeof(kPrimes) / sizeof(kPrimes[0]))) {
    throw DomainError("initial design supports at most 24 dimensions");
  }
  Mat out(n, D);
  int row = 0;
  if (x0) {
    out.row(row++) = space.to_unbounded(*x0).transpose();
  }
  Rng rng(mix_seed(seed, 0xde5169));
  Vec shift(D);
  for (int d = 0; d < D; ++d) shift[d] = rng.uniform();
  const Vec& plo = space.plausible_lower();
  const Vec& phi = space.plausible_upper();
  for (int i = 1; row < n; ++i, ++row) {
    Vec x(D);
    for (int d = 0; d < D; ++d) {
      double u = halton(i, kPrimes[d]) + shift[d];
      u -= std::floor(u);
      x[d] = plo[d] + (phi[d] - plo[d]) * u;
    }
    out.row(row) = space.to_unbounded(x).transpose();
  }
  return out;
}

double reliability_index(const std::vector<IterationRecord>& tail) {
  if (tail.size() < 2) {
    throw DomainError("reliability_index needs at least two records");
  }
  const IterationRecord& last = tail.back();
  const IterationRecord& prev = tail[tail.size() - 2];
  const double d_elbo = std::abs(last.elbo - prev.elbo) / 0.1;
  const double sd = last.elbo_sd / 0.1;
  const double div = last.divergence / 0.01;
  return std::max({d_elbo, sd, div});
}

Whitening compute_whitening(const VariationalPosterior& vp) {
  const int D = vp.D();
  const Mat C = vp.moments().second;
  Eigen::SelfAdjointEigenSolver<Mat> es(C);
  if (es.info() != Eigen::Success) {
    throw WhiteningError("eigendecomposition of the posterior covariance "
                         "failed");
  }
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e10) {
    throw WhiteningError("posterior covariance too ill-conditioned to "
                         "whiten");
  }

  // Simultaneous diagonalization of diag(lambda^2) and C keeps the mixture
  // family closed: M C M^T = I and M diag(lambda^2) M^T stays diagonal.
  Mat lambda2 = Mat::Zero(D, D);
  lambda2.diagonal() = vp.lambda().array().square();
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> ges(lambda2, C);
  if (ges.info() != Eigen::Success || !(ges.eigenvalues().minCoeff() > 0.0)) {
    throw WhiteningError("simultaneous diagonalization failed");
  }

  Whitening w;
  w.M = ges.eigenvectors().transpose();
  // canonical row signs for reproducibility (identity stays identity)
  for (int r = 0; r < D; ++r) {
    int imax = 0;
    w.M.row(r).cwiseAbs().maxCoeff(&imax);
    if (w.M(r, imax) < 0.0) w.M.row(r) = -w.M.row(r);
  }
  // M C M^T = I implies |det M| = det(C)^{-1/2}.
  w.log_det = -0.5 * es.eigenvalues().array().log().sum();
  w.new_lambda = ges.eigenvalues().array().sqrt();
  return w;
}

VariationalPosterior apply_whitening_vp(const VariationalPosterior& vp,
                                        const Whitening& w) {
  Mat means = vp.means() * w.M.transpose();
  return VariationalPosterior(std::move(means), vp.weights(), vp.sigma(),
                              w.new_lambda);
}

Mat InferenceResult::sample_original(int n, std::uint64_t seed) const {
  const Mat V = vp.sample(n, seed);
  Mat out(n, V.cols());
  for (int i = 0; i < n; ++i) {
    out.row(i) = transform.to_original(V.row(i).transpose()).transpose();
  }
  return out;
}

std::pair<Vec, Mat> InferenceResult::moments_original(
    int n, std::uint64_t seed) const {
  const Mat X = sample_original(n, seed);
  const Vec mean = X.colwise().mean();
  Mat centered = X.rowwise() - mean.transpose();
  Mat cov = centered.transpose() * centered / (X.rows() - 1);
  return {mean, cov};
}

InferenceResult run(Target& target, const BoundedSpace& space,
                    const Options& options) {
  EvaluationLog log;
  return run(target, space, options, log);
}

InferenceResult run(Target& target, const BoundedSpace& space,
                    const Options& options, EvaluationLog& raw_log) {
  const int D = space.dim();
  const int max_evals = options.resolved_max_evaluations(D);
  const int batch = options.points_per_iteration;
  int n_init = options.init_design_size;
  if (n_init < 1 || batch < 1) {
    throw ConfigError("init_design_size and points_per_iteration must be "
                      "positive");
  }
  if (options.stable_iterations_required < 1 || options.k_max < 1) {
    throw ConfigError("stable_iterations_required and k_max must be positive");
  }

  std::vector<std::string> warnings;
  if (n_init < D + 2) {
    n_init = D + 2;
    warnings.push_back("init_design_size raised to D+2 = " +
                       std::to_string(n_init) +
                       " (minimum for the surrogate fit)");
  }
  if (max_evals < n_init) {
    throw ConfigError("max_evaluations (" + std::to_string(max_evals) +
                      ") is below the initial design size (" +
                      std::to_string(n_init) + ")");
  }

  const SeedStream seeds{options.seed};
  Transform tf(space);

  Mat U(0, D);
  Vec y(0), s_obs(0);
  raw_log.X.resize(0, D);
  raw_log.y.resize(0);
  raw_log.noise_sd.resize(0);
  int evals_used = 0;

  std::vector<IterationRecord> trace;

  auto rethrow_with_context = [&](const TargetError& e,
                                  const std::string& where) {
    std::ostringstream msg;
    msg << e.what() << " [" << where << "; " << trace.size()
        << " completed iterations, " << evals_used
        << " evaluations recorded]";
    throw TargetError(msg.str());
  };

  // Evaluates inference-space rows, appends to the training data and the
  // raw log. Non-finite values abort during the initial design and are
  // penalized afterwards.
  auto eval_rows = [&](const Mat& V, bool initial,
                       const std::string& where) {
    Mat X_orig(V.rows(), D);
    for (int i = 0; i < V.rows(); ++i) {
      X_orig.row(i) = tf.to_original(V.row(i).transpose()).transpose();
    }
    std::vector<Evaluation> evs;
    try {
      evs = evaluate_batch(target, space, X_orig);
    } catch (const TargetBatchError& e) {
      rethrow_with_context(e, where);
    } catch (const TargetError& e) {
      rethrow_with_context(e, where);
    }

    const int n0 = static_cast<int>(U.rows());
    const int n_new = static_cast<int>(V.rows());
    U.conservativeResize(n0 + n_new, Eigen::NoChange);
    y.conservativeResize(n0 + n_new);
    s_obs.conservativeResize(n0 + n_new);
    raw_log.X.conservativeResize(n0 + n_new, Eigen::NoChange);
    raw_log.y.conservativeResize(n0 + n_new);
    raw_log.noise_sd.conservativeResize(n0 + n_new);

    for (int i = 0; i < n_new; ++i) {
      const Evaluation& ev = evs[i];
      U.row(n0 + i) = V.row(i);
      raw_log.X.row(n0 + i) = X_orig.row(i);
      raw_log.y[n0 + i] = ev.log_density;
      raw_log.noise_sd[n0 + i] = ev.noise_sd;
      if (ev.failed) {
        if (initial) {
          std::ostringstream msg;
          msg << "non-finite target value at initial design point " << i + 1;
          throw TargetError(msg.str());
        }
        const double penalty = y.head(n0 + i).minCoeff() - 20.0;
        y[n0 + i] = penalty;
        s_obs[n0 + i] = 0.0;
        std::ostringstream msg;
        msg << "non-finite target value penalized at " << where << " point "
            << i + 1;
        warnings.push_back(msg.str());
      } else {
        y[n0 + i] =
            ev.log_density + tf.log_jacobian(V.row(i).transpose());
        s_obs[n0 + i] = ev.noise_sd;
      }
    }
    evals_used += n_new;
  };

  // --- initial design ---
  if (options.x0) {
    // validates bounds early
    (void)space.to_unbounded(*options.x0);
  }
  const Mat design = initial_design(space, options.x0, n_init,
                                    seeds.at(kSeedDesign));
  eval_rows(design, /*initial=*/true, "initial design");

  // --- first surrogate and variational fits ---
  GpFitOptions full_fit;
  full_fit.seed = seeds.at(kSeedGpFit, 0);
  std::optional<GpHyperparams> hyper;
  auto hyperprior = [&]() {
    return GpHyperprior::build(tf.plausible_lo(), tf.plausible_hi(), y);
  };
  hyper = fit_hyperparams(TrainingSet(U, y, s_obs), hyperprior(), {},
                          full_fit);
  GpSurrogate gp = GpSurrogate::build(*hyper, TrainingSet(U, y, s_obs));
  int n_last_full_fit = static_cast<int>(U.rows());

  const int K_warm = std::min(2, options.k_max);
  VariationalPosterior vp = [&] {
    // start components on the two best observed points
    std::vector<int> order(U.rows());
    for (int i = 0; i < static_cast<int>(order.size()); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return y[a] > y[b]; });
    Mat means(K_warm, D);
    for (int k = 0; k < K_warm; ++k) {
      means.row(k) = U.row(order[std::min<int>(k, order.size() - 1)]);
      if (k > 0 && (means.row(k) - means.row(0)).norm() < 1e-12) {
        means(k, 0) += 0.05 * (tf.plausible_hi()[0] - tf.plausible_lo()[0]);
      }
    }
    const Vec lambda = 0.25 * (tf.plausible_hi() - tf.plausible_lo());
    return VariationalPosterior(means, Vec::Constant(K_warm, 1.0 / K_warm),
                                Vec::Ones(K_warm), lambda);
  }();

  VpOptimizeOptions vopt = options.vp_opts;
  vopt.k_max = options.k_max;
  vopt.entropy_samples_final = options.entropy_samples_final;
  vopt.seed = seeds.at(kSeedBaseline);
  ElboEstimate est;
  std::tie(vp, est) = optimize_vp(gp, K_warm, vp, vopt);

  double prev_elbo = est.elbo;
  VariationalPosterior vp_prev = vp;
  bool warm_up = true;
  bool converged = false;
  int stable = 0;
  int whitenings = 0;

  // --- main loop ---
  for (int t = 1;; ++t) {
    if (evals_used + batch > max_evals) {
      if (!converged) {
        warnings.push_back("evaluation budget exhausted before convergence");
      }
      break;
    }
    const bool warm_at_start = warm_up;

    AcquisitionKind kind;
    switch (options.noisy) {
      case NoiseHandling::Force:
        kind = AcquisitionKind::NoisyIntegrated;
        break;
      case NoiseHandling::Off:
        kind = AcquisitionKind::Prospective;
        break;
      default:
        kind = auto_acquisition(gp.data());
    }

    std::ostringstream where;
    where << "iteration " << t;
    const Mat V_new =
        search_next(gp, vp, batch, tf.plausible_lo(), tf.plausible_hi(), kind,
                    options.search_opts, seeds.at(kSeedSearch, t));
    eval_rows(V_new, /*initial=*/false, where.str());

    // surrogate refit: full at geometric checkpoints, quick warm refit
    // in between once the training set is large
    const int N = static_cast<int>(U.rows());
    GpFitOptions fit_opts;
    fit_opts.seed = seeds.at(kSeedGpFit, t);
    const bool full = N <= 120 || N >= static_cast<int>(1.15 * n_last_full_fit);
    if (!full) {
      fit_opts.restarts = 1;
      fit_opts.max_iters = 120;
    }
    hyper = fit_hyperparams(TrainingSet(U, y, s_obs), hyperprior(), hyper,
                            fit_opts);
    if (full) n_last_full_fit = N;
    gp = GpSurrogate::build(*hyper, TrainingSet(U, y, s_obs));

    vopt.seed = seeds.at(kSeedVpOpt, t);
    std::tie(vp, est) = optimize_vp(gp, warm_up ? K_warm : vp.K(), vp, vopt);
    if (!warm_up) {
      VpOptimizeOptions aopt = vopt;
      aopt.seed = seeds.at(kSeedAdapt, t);
      vp = adapt_components(vp, gp, aopt);
      est = elbo(vp, gp, options.entropy_samples_final,
                 seeds.at(kSeedFinal, t));
    }

    const double divergence =
        divergence_between(vp, vp_prev, 4096, seeds.at(kSeedDivergence, t));

    // variational whitening: straighten the inference space when the
    // posterior is strongly anisotropic (at most twice per run)
    bool whitened = false;
    if (!warm_up && whitenings < 2) {
      const Mat C = vp.moments().second;
      if (covariance_condition(C) > 10.0) {
        try {
          const Whitening w = compute_whitening(vp);
          tf.compose_linear(w.M);
          U = U * w.M.transpose();
          y.array() -= w.log_det;
          vp = apply_whitening_vp(vp, w);
          vp_prev = apply_whitening_vp(vp_prev, w);
          GpFitOptions wfit;
          wfit.seed = seeds.at(kSeedGpFit, 1000 + t);
          hyper = fit_hyperparams(TrainingSet(U, y, s_obs), hyperprior(), {},
                                  wfit);
          n_last_full_fit = static_cast<int>(U.rows());
          gp = GpSurrogate::build(*hyper, TrainingSet(U, y, s_obs));
          est = elbo(vp, gp, options.entropy_samples_final,
                     seeds.at(kSeedFinal, 1000 + t));
          whitened = true;
          ++whitenings;
        } catch (const WhiteningError& e) {
          warnings.push_back(std::string("whitening skipped: ") + e.what());
        }
      }
    }

    const double d_elbo = est.elbo - prev_elbo;
    const double rel = std::max({std::abs(d_elbo) / 0.1, est.elbo_sd / 0.1,
                                 divergence / 0.01});
    IterationRecord rec;
    rec.iteration = t;
    rec.cumulative_evaluations = evals_used;
    rec.elbo = est.elbo;
    rec.elbo_sd = est.elbo_sd;
    rec.divergence = divergence;
    rec.reliability_index = rel;
    rec.K = vp.K();
    rec.whitening_applied = whitened;
    trace.push_back(rec);

    if (warm_up && d_elbo < 1.0) warm_up = false;

    if (!warm_at_start) {
      if (rel <= options.reliability_threshold) {
        if (++stable >= options.stable_iterations_required) {
          converged = true;
          // loop exits via the budget check after setting the flag
        }
      } else {
        stable = 0;
      }
    }
    if (converged) break;

    vp_prev = vp;
    prev_elbo = est.elbo;
  }

  InferenceResult result{vp,        tf,         est,     converged,
                         trace,     evals_used, warnings};
  return result;
}

}  // namespace vbmc
