#pragma once

#include <Eigen/Dense>

namespace vbmc::kernels {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Execution policy for the data-parallel kernels below. Every kernel writes
// each output element from exactly one thread with a serial inner loop, so
// Serial and Parallel produce bit-identical results for any thread count.
enum class Exec { Serial, Parallel };

// out(i,j) = sf2 * exp(-0.5 * sum_d inv_len2[d] * (X1(i,d) - X2(j,d))^2)
void se_cross(const Mat& X1, const Mat& X2, const Vec& inv_len2, double sf2,
              Mat& out, Exec exec = Exec::Parallel);

// out[i] = m0 - 0.5 * sum_d inv_om2[d] * (X(i,d) - xm[d])^2
void negquad_mean(const Mat& X, double m0, const Vec& xm, const Vec& inv_om2,
                  Vec& out, Exec exec = Exec::Parallel);

// Mixture-of-Gaussians log density for each row of X.
//   out[i] = logsumexp_k( log_norm[k] - 0.5 * sum_d inv_var(k,d) * (X(i,d) - means(k,d))^2 )
// log_norm[k] folds the component weight and normalization constant.
void mixture_log_pdf(const Mat& means, const Mat& inv_var, const Vec& log_norm,
                     const Mat& X, Vec& out, Exec exec = Exec::Parallel);

// GP latent predictive variance for each query column of Kxq (N x Q):
//   out[q] = sf2 - || L^{-1} Kxq.col(q) ||^2, clamped into [0, inf) with
// values below var_floor snapped to zero.
void predict_var(const Mat& L, const Mat& Kxq, double sf2, double var_floor,
                 Vec& out, Exec exec = Exec::Parallel);

}  // namespace vbmc::kernels
