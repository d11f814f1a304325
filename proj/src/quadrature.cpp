#include "vbmc/quadrature.hpp"

#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "vbmc/errors.hpp"
#include "vbmc/rng.hpp"

namespace vbmc {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

struct UnconstrainedLayout {
  int K, D;
  int logits(int k) const { return k; }
  int mean(int k, int d) const { return K + k * D + d; }
  int log_sigma(int k) const { return K + K * D + k; }
  int log_lambda(int d) const { return K + K * D + K + d; }
  int size() const { return 2 * K + K * D + D; }
};

// Projects a gradient in mixture-weight space onto the softmax logits.
void chain_weights_to_logits(const Vec& w, const Vec& grad_w, Vec& grad,
                             const UnconstrainedLayout& lay) {
  const double inner = w.dot(grad_w);
  for (int k = 0; k < lay.K; ++k) {
    grad[lay.logits(k)] = w[k] * (grad_w[k] - inner);
  }
}

}  // namespace

QuadratureResult expected_log_joint(const VariationalPosterior& vp,
                                    const GpSurrogate& gp) {
  const int K = vp.K();
  const int D = vp.D();
  const int N = gp.data().size();
  const UnconstrainedLayout lay{K, D};
  const GpHyperparams& hyper = gp.hyper();

  const Vec len2 = (2.0 * hyper.log_lengthscales.array()).exp();
  const double sf2 = hyper.outputscale2();
  const Vec inv_om2 = (-2.0 * hyper.log_omega.array()).exp();
  const Vec& w = vp.weights();
  const Vec& sigma = vp.sigma();
  const Vec& lambda = vp.lambda();
  const Mat& mu = vp.means();
  const Mat& X = gp.data().X;
  const Vec& alpha = gp.alpha();

  // Kernel-mean integrals I(k,n) and their pieces; t(k,d) = l_d^2 + s_k^2 l_d^2.
  Mat t(K, D);            // l_d^2 + sigma_k^2 lambda_d^2
  Vec log_pref(K);        // sum_d log(l_d / sqrt(t_kd))
  for (int k = 0; k < K; ++k) {
    double lp = 0.0;
    for (int d = 0; d < D; ++d) {
      t(k, d) = len2[d] + sigma[k] * sigma[k] * lambda[d] * lambda[d];
      lp += 0.5 * (std::log(len2[d]) - std::log(t(k, d)));
    }
    log_pref[k] = lp;
  }

  Mat I(K, N);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) {
      double quad = 0.0;
      for (int d = 0; d < D; ++d) {
        const double diff = mu(k, d) - X(n, d);
        quad += diff * diff / t(k, d);
      }
      I(k, n) = sf2 * std::exp(log_pref[k] - 0.5 * quad);
    }
  }

  // Mean-function integrals M_k and per-component totals g_k.
  Vec Mk(K), gk(K);
  for (int k = 0; k < K; ++k) {
    double quad = 0.0;
    for (int d = 0; d < D; ++d) {
      const double diff = mu(k, d) - hyper.x_m[d];
      quad += (diff * diff + sigma[k] * sigma[k] * lambda[d] * lambda[d]) *
              inv_om2[d];
    }
    Mk[k] = hyper.m0 - 0.5 * quad;
    gk[k] = Mk[k] + I.row(k).dot(alpha);
  }
  const double value = w.dot(gk);

  // Gradient in natural parameters, then chained to the unconstrained ones.
  QuadratureResult out;
  out.grad = Vec::Zero(lay.size());
  chain_weights_to_logits(w, gk, out.grad, lay);

  Vec grad_log_lambda = Vec::Zero(D);
  for (int k = 0; k < K; ++k) {
    const double s2 = sigma[k] * sigma[k];
    double dsig = 0.0;
    for (int d = 0; d < D; ++d) {
      const double lam2 = lambda[d] * lambda[d];
      double dmu = -(mu(k, d) - hyper.x_m[d]) * inv_om2[d];
      double dt_common = 0.0;  // sum_n alpha_n I_kn (Delta^2 - t) / (2 t^2) terms
      for (int n = 0; n < N; ++n) {
        const double diff = mu(k, d) - X(n, d);
        const double ain = alpha[n] * I(k, n);
        dmu += ain * (-diff / t(k, d));
        dt_common += ain * (diff * diff - t(k, d)) / (2.0 * t(k, d) * t(k, d));
      }
      out.grad[lay.mean(k, d)] = w[k] * dmu;
      // dt/dsigma = 2 sigma lam^2 ; dt/dlambda = 2 sigma^2 lam
      dsig += (-sigma[k] * lam2 * inv_om2[d]) +
              dt_common * 2.0 * sigma[k] * lam2;
      grad_log_lambda[d] += w[k] * lambda[d] *
                            ((-s2 * lambda[d] * inv_om2[d]) +
                             dt_common * 2.0 * s2 * lambda[d]);
    }
    out.grad[lay.log_sigma(k)] = w[k] * sigma[k] * dsig;
  }
  for (int d = 0; d < D; ++d) {
    out.grad[lay.log_lambda(d)] = grad_log_lambda[d];
  }

  // Quadrature variance: iint k_post(x,x') q(x) q(x') dx dx'.
  double WJW = 0.0;
  for (int k = 0; k < K; ++k) {
    for (int j = 0; j < K; ++j) {
      double lp = 0.0, quad = 0.0;
      for (int d = 0; d < D; ++d) {
        const double tt = len2[d] + (sigma[k] * sigma[k] + sigma[j] * sigma[j]) *
                                        lambda[d] * lambda[d];
        lp += 0.5 * (std::log(len2[d]) - std::log(tt));
        const double diff = mu(k, d) - mu(j, d);
        quad += diff * diff / tt;
      }
      WJW += w[k] * w[j] * sf2 * std::exp(lp - 0.5 * quad);
    }
  }
  Vec z = I.transpose() * w;
  out.variance = WJW - z.dot(gp.solve_K(z));
  if (out.variance < 0.0) out.variance = 0.0;
  out.value = value;

  if (!std::isfinite(out.value) || !std::isfinite(out.variance) ||
      !out.grad.allFinite()) {
    throw NumericalError("non-finite quadrature intermediate");
  }
  return out;
}

EntropyResult entropy_mc(const VariationalPosterior& vp, int n_samples,
                         std::uint64_t seed, bool want_grad) {
  if (n_samples < 16) throw DomainError("entropy_mc needs n_samples >= 16");
  const int K = vp.K();
  const int D = vp.D();
  const UnconstrainedLayout lay{K, D};
  const Vec& w = vp.weights();
  const Vec& sigma = vp.sigma();
  const Vec& lambda = vp.lambda();
  const Mat& mu = vp.means();

  // Stratified allocation; sample locations only depend on the weights
  // through this rounding, which is locally constant.
  std::vector<int> n_k(K);
  for (int k = 0; k < K; ++k) {
    n_k[k] = std::max(1, static_cast<int>(std::llround(w[k] * n_samples)));
  }

  Mat var(K, D), inv_var(K, D);
  Vec log_norm(K);
  const double log_lambda_sum = lambda.array().log().sum();
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < D; ++d) {
      const double sd = sigma[k] * lambda[d];
      var(k, d) = sd * sd;
      inv_var(k, d) = 1.0 / var(k, d);
    }
    log_norm[k] = std::log(w[k]) - D * std::log(sigma[k]) - log_lambda_sum -
                  0.5 * D * kLog2Pi;
  }

  Rng rng(mix_seed(seed, 0x656e7472ULL));

  EntropyResult out;
  Vec grad_w = Vec::Zero(K);       // direct d/dw_j terms plus -avg_j
  Mat grad_mu = Mat::Zero(K, D);
  Vec grad_sigma = Vec::Zero(K);   // d/dsigma_k (natural)
  Vec grad_lambda = Vec::Zero(D);  // d/dlambda_d (natural)

  double value = 0.0;
  double pooled_ss = 0.0, pooled_mean_acc = 0.0;
  int pooled_n = 0;
  std::vector<double> comp_var(K, 0.0);

  Vec x(D), eps(D), ek(K), resp(K), dlogq(D);
  for (int k = 0; k < K; ++k) {
    double sum_L = 0.0, sum_L2 = 0.0;
    for (int i = 0; i < n_k[k]; ++i) {
      for (int d = 0; d < D; ++d) {
        eps[d] = rng.normal();
        x[d] = mu(k, d) + sigma[k] * lambda[d] * eps[d];
      }
      // mixture log pdf and responsibilities at x
      double max_e = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < K; ++j) {
        double quad = 0.0;
        for (int d = 0; d < D; ++d) {
          const double diff = x[d] - mu(j, d);
          quad += inv_var(j, d) * diff * diff;
        }
        ek[j] = log_norm[j] - 0.5 * quad;
        if (ek[j] > max_e) max_e = ek[j];
      }
      double se = 0.0;
      for (int j = 0; j < K; ++j) {
        resp[j] = std::exp(ek[j] - max_e);
        se += resp[j];
      }
      const double L = max_e + std::log(se);
      resp /= se;  // responsibilities w_j N_j / q
      sum_L += L;
      sum_L2 += L * L;

      if (want_grad) {
        const double cw = w[k] / n_k[k];
        // dlog q/dx and the pathwise terms
        for (int d = 0; d < D; ++d) {
          double g = 0.0;
          for (int j = 0; j < K; ++j) {
            g += resp[j] * (-(x[d] - mu(j, d)) * inv_var(j, d));
          }
          dlogq[d] = g;
          grad_mu(k, d) -= cw * g;
          grad_lambda[d] -= cw * g * sigma[k] * eps[d];
        }
        double path_sigma = 0.0;
        for (int d = 0; d < D; ++d) path_sigma += dlogq[d] * lambda[d] * eps[d];
        grad_sigma[k] -= cw * path_sigma;
        // direct density-parameter terms at fixed x
        for (int j = 0; j < K; ++j) {
          double quad_over_var = 0.0;
          for (int d = 0; d < D; ++d) {
            const double diff = x[d] - mu(j, d);
            const double dv = diff * inv_var(j, d);
            grad_mu(j, d) -= cw * resp[j] * dv;
            quad_over_var += diff * dv;
            grad_lambda[d] -=
                cw * resp[j] * (diff * dv - 1.0) / lambda[d];
          }
          grad_sigma[j] -= cw * resp[j] * (quad_over_var - D) / sigma[j];
          grad_w[j] -= cw * resp[j] / w[j];  // dlog q/dw_j = N_j/q
        }
      }
    }
    const double avg = sum_L / n_k[k];
    value -= w[k] * avg;
    if (want_grad) grad_w[k] -= avg;
    const double ss = sum_L2 / n_k[k] - avg * avg;
    comp_var[k] = ss > 0.0 ? ss : 0.0;
    pooled_ss += sum_L2;
    pooled_mean_acc += sum_L;
    pooled_n += n_k[k];
  }

  out.value = value;

  // Stratified MC variance of the estimate.
  const double pooled_mean = pooled_mean_acc / pooled_n;
  double pooled_var = pooled_ss / pooled_n - pooled_mean * pooled_mean;
  if (pooled_var < 0.0) pooled_var = 0.0;
  double mc_var = 0.0;
  for (int k = 0; k < K; ++k) {
    const double vk = n_k[k] >= 2 ? comp_var[k] : pooled_var;
    mc_var += w[k] * w[k] * vk / n_k[k];
  }
  out.mc_variance = mc_var;

  if (want_grad) {
    out.grad = Vec::Zero(lay.size());
    chain_weights_to_logits(w, grad_w, out.grad, lay);
    for (int k = 0; k < K; ++k) {
      for (int d = 0; d < D; ++d) out.grad[lay.mean(k, d)] = grad_mu(k, d);
      out.grad[lay.log_sigma(k)] = grad_sigma[k] * sigma[k];
    }
    for (int d = 0; d < D; ++d) {
      out.grad[lay.log_lambda(d)] = grad_lambda[d] * lambda[d];
    }
  } else {
    out.grad = Vec();
  }
  return out;
}

ElboEstimate elbo(const VariationalPosterior& vp, const GpSurrogate& gp,
                  int n_entropy_samples, std::uint64_t seed) {
  const QuadratureResult g = expected_log_joint(vp, gp);
  const EntropyResult h =
      entropy_mc(vp, n_entropy_samples, seed, /*want_grad=*/false);
  ElboEstimate est;
  est.expected_log_joint = g.value;
  est.entropy = h.value;
  est.elbo = g.value + h.value;
  est.elbo_sd = std::sqrt(g.variance + h.mc_variance);
  return est;
}

namespace {

// Grow or shrink a mixture to the requested component count using the same
// split rule as adapt_components.
VariationalPosterior resize_to_k(VariationalPosterior vp, int K_target) {
  while (vp.K() > K_target) {
    int drop = 0;
    vp.weights().minCoeff(&drop);
    Mat means(vp.K() - 1, vp.D());
    Vec w2(vp.K() - 1), s2(vp.K() - 1);
    int at = 0;
    for (int k = 0; k < vp.K(); ++k) {
      if (k == drop) continue;
      means.row(at) = vp.means().row(k);
      w2[at] = vp.weights()[k];
      s2[at] = vp.sigma()[k];
      ++at;
    }
    w2 /= w2.sum();
    vp = VariationalPosterior(std::move(means), std::move(w2), std::move(s2),
                              vp.lambda());
  }
  while (vp.K() < K_target) {
    int split = 0;
    vp.weights().maxCoeff(&split);
    int axis = 0;
    vp.lambda().maxCoeff(&axis);
    const double offset = 0.5 * vp.sigma()[split] * vp.lambda()[axis];
    Mat means(vp.K() + 1, vp.D());
    Vec w(vp.K() + 1), s(vp.K() + 1);
    means.topRows(vp.K()) = vp.means();
    w.head(vp.K()) = vp.weights();
    s.head(vp.K()) = vp.sigma();
    means.row(vp.K()) = vp.means().row(split);
    means(split, axis) -= offset;
    means(vp.K(), axis) += offset;
    w[split] *= 0.5;
    w[vp.K()] = w[split];
    s[vp.K()] = vp.sigma()[split];
    vp = VariationalPosterior(std::move(means), std::move(w), std::move(s),
                              vp.lambda());
  }
  return vp;
}

}  // namespace

std::pair<VariationalPosterior, ElboEstimate> optimize_vp(
    const GpSurrogate& gp, int K_target, const VariationalPosterior& init,
    const VpOptimizeOptions& opts) {
  if (K_target < 1) throw DomainError("K_target must be >= 1");
  const VariationalPosterior start = resize_to_k(init, K_target);
  const int K = start.K();
  const int D = start.D();

  ElboEstimate best_est =
      elbo(init, gp, opts.entropy_samples_final, mix_seed(opts.seed, 0xF17));
  VariationalPosterior best_vp = init;
  double best_score = best_est.elbo - opts.elcbo_beta * best_est.elbo_sd;
  bool any_finite = std::isfinite(best_score);

  for (int r = 0; r < opts.restarts; ++r) {
    Vec theta = start.to_unconstrained();
    if (r > 0) {
      Rng prng(mix_seed(opts.seed, 0x70657274ULL, r));
      for (int k = 0; k < K; ++k) {
        theta[k] += 0.1 * prng.normal();
        for (int d = 0; d < D; ++d) {
          theta[K + k * D + d] +=
              0.1 * start.sigma()[k] * start.lambda()[d] * prng.normal();
        }
        theta[K + K * D + k] += 0.1 * prng.normal();
      }
      for (int d = 0; d < D; ++d) {
        theta[K + K * D + K + d] += 0.1 * prng.normal();
      }
    }

    // Adam ascent on elbo(theta) with fresh entropy samples per step.
    Vec m = Vec::Zero(theta.size()), v = Vec::Zero(theta.size());
    double ema = 0.0;
    bool ema_init = false;
    std::deque<double> window;
    bool diverged = false;
    for (int step = 0; step < opts.max_steps; ++step) {
      VariationalPosterior vp =
          VariationalPosterior::from_unconstrained(theta, K, D);
      QuadratureResult g;
      try {
        g = expected_log_joint(vp, gp);
      } catch (const NumericalError&) {
        diverged = true;
        break;
      }
      const EntropyResult h = entropy_mc(
          vp, opts.entropy_samples, mix_seed(opts.seed, r, step), true);
      const double objective = g.value + h.value;
      Vec grad = g.grad + h.grad;
      if (!std::isfinite(objective) || !grad.allFinite()) {
        diverged = true;
        break;
      }

      ema = ema_init ? opts.ema_decay * ema + (1.0 - opts.ema_decay) * objective
                     : objective;
      ema_init = true;
      window.push_back(ema);
      if (static_cast<int>(window.size()) > opts.stop_window) {
        const double past = window.front();
        window.pop_front();
        if (ema - past < opts.stop_tol) break;
      }

      const double b1 = 0.9, b2 = 0.999;
      m = b1 * m + (1.0 - b1) * grad;
      v = b2 * v.array().matrix() + (1.0 - b2) * grad.array().square().matrix();
      const double corr1 = 1.0 - std::pow(b1, step + 1);
      const double corr2 = 1.0 - std::pow(b2, step + 1);
      theta += (opts.step_size * (m.array() / corr1) /
                ((v.array() / corr2).sqrt() + 1e-8))
                   .matrix();
      if (!theta.allFinite()) {
        diverged = true;
        break;
      }
    }
    if (diverged) continue;

    VariationalPosterior vp =
        VariationalPosterior::from_unconstrained(theta, K, D);
    ElboEstimate est =
        elbo(vp, gp, opts.entropy_samples_final, mix_seed(opts.seed, 0xF17));
    const double score = est.elbo - opts.elcbo_beta * est.elbo_sd;
    if (std::isfinite(score) && (!any_finite || score > best_score)) {
      best_score = score;
      best_vp = vp;
      best_est = est;
      any_finite = true;
    }
  }
  if (!any_finite) throw FitError("every variational fit restart diverged");
  return {best_vp, best_est};
}

VariationalPosterior adapt_components(const VariationalPosterior& vp,
                                      const GpSurrogate& gp,
                                      const VpOptimizeOptions& opts) {
  VariationalPosterior current = vp.pruned(1e-8);
  if (current.K() >= opts.k_max) return current;

  const ElboEstimate cur_est = elbo(current, gp, opts.entropy_samples_final,
                                    mix_seed(opts.seed, 0xADA0));
  try {
    auto [proposal, prop_est] =
        optimize_vp(gp, current.K() + 1, current, opts);
    if (prop_est.elbo - cur_est.elbo > prop_est.elbo_sd) {
      return proposal.pruned(1e-8);
    }
  } catch (const FitError&) {
    // fall through to the unchanged posterior
  }
  return current;
}

}  // namespace vbmc
