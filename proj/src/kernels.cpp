#include "vbmc/kernels.hpp"

#include <cmath>
#include <limits>

namespace vbmc::kernels {

namespace {

inline double se_entry(const Mat& X1, const Mat& X2, const Vec& inv_len2,
                       double sf2, Eigen::Index i, Eigen::Index j) {
  double d2 = 0.0;
  for (Eigen::Index d = 0; d < X1.cols(); ++d) {
    const double diff = X1(i, d) - X2(j, d);
    d2 += inv_len2[d] * diff * diff;
  }
  return sf2 * std::exp(-0.5 * d2);
}

inline double logpdf_row(const Mat& means, const Mat& inv_var,
                         const Vec& log_norm, const Mat& X, Eigen::Index i) {
  const Eigen::Index K = means.rows();
  const Eigen::Index D = means.cols();
  double max_e = -std::numeric_limits<double>::infinity();
  // two passes: exponents, then stable log-sum-exp
  Eigen::ArrayXd ek(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    double quad = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double diff = X(i, d) - means(k, d);
      quad += inv_var(k, d) * diff * diff;
    }
    ek[k] = log_norm[k] - 0.5 * quad;
    if (ek[k] > max_e) max_e = ek[k];
  }
  if (!std::isfinite(max_e)) return -std::numeric_limits<double>::max();
  double s = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) s += std::exp(ek[k] - max_e);
  return max_e + std::log(s);
}

}  // namespace

void se_cross(const Mat& X1, const Mat& X2, const Vec& inv_len2, double sf2,
              Mat& out, Exec exec) {
  const Eigen::Index Q = X1.rows();
  const Eigen::Index N = X2.rows();
  out.resize(Q, N);
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < Q; ++i)
      for (Eigen::Index j = 0; j < N; ++j)
        out(i, j) = se_entry(X1, X2, inv_len2, sf2, i, j);
  } else {
    for (Eigen::Index i = 0; i < Q; ++i)
      for (Eigen::Index j = 0; j < N; ++j)
        out(i, j) = se_entry(X1, X2, inv_len2, sf2, i, j);
  }
}

void negquad_mean(const Mat& X, double m0, const Vec& xm, const Vec& inv_om2,
                  Vec& out, Exec exec) {
  const Eigen::Index Q = X.rows();
  const Eigen::Index D = X.cols();
  out.resize(Q);
  auto row = [&](Eigen::Index i) {
    double quad = 0.0;
    for (Eigen::Index d = 0; d < D; ++d) {
      const double diff = X(i, d) - xm[d];
      quad += inv_om2[d] * diff * diff;
    }
    return m0 - 0.5 * quad;
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < Q; ++i) out[i] = row(i);
  } else {
    for (Eigen::Index i = 0; i < Q; ++i) out[i] = row(i);
  }
}

void mixture_log_pdf(const Mat& means, const Mat& inv_var, const Vec& log_norm,
                     const Mat& X, Vec& out, Exec exec) {
  const Eigen::Index Q = X.rows();
  out.resize(Q);
  if (exec == Exec::Parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < Q; ++i)
      out[i] = logpdf_row(means, inv_var, log_norm, X, i);
  } else {
    for (Eigen::Index i = 0; i < Q; ++i)
      out[i] = logpdf_row(means, inv_var, log_norm, X, i);
  }
}

void predict_var(const Mat& L, const Mat& Kxq, double sf2, double var_floor,
                 Vec& out, Exec exec) {
  const Eigen::Index Q = Kxq.cols();
  out.resize(Q);
  auto one = [&](Eigen::Index q, Vec& ws) {
    ws = Kxq.col(q);
    L.triangularView<Eigen::Lower>().solveInPlace(ws);
    double v = sf2 - ws.squaredNorm();
    if (v < var_floor) v = 0.0;
    return v;
  };
  if (exec == Exec::Parallel) {
#pragma omp parallel
    {
      Vec ws(L.rows());
#pragma omp for schedule(static)
      for (Eigen::Index q = 0; q < Q; ++q) out[q] = one(q, ws);
    }
  } else {
    Vec ws(L.rows());
    for (Eigen::Index q = 0; q < Q; ++q) out[q] = one(q, ws);
  }
}

}  // namespace vbmc::kernels
