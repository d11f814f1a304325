#include <doctest.h>

#include <Eigen/Dense>

#include "vbmc/kernels.hpp"
#include "vbmc/rng.hpp"

using namespace vbmc;
using kernels::Exec;
using kernels::Mat;
using kernels::Vec;

namespace {

Mat random_matrix(Rng& rng, int r, int c, double scale = 2.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

// The parallel kernels compute every output element on exactly one thread,
// so they must agree with the serial reference bit for bit.
TEST_CASE("parallel kernels are bit-identical to the serial reference") {
  Rng rng(77);
  const int D = 3, N = 41, Q = 57, K = 5;
  const Mat X1 = random_matrix(rng, Q, D);
  const Mat X2 = random_matrix(rng, N, D);
  const Vec inv_len2 = Vec::Constant(D, 0.7);

  Mat a, b;
  kernels::se_cross(X1, X2, inv_len2, 1.3, a, Exec::Serial);
  kernels::se_cross(X1, X2, inv_len2, 1.3, b, Exec::Parallel);
  CHECK(a == b);

  Vec va, vb;
  const Vec xm = Vec::Constant(D, 0.2);
  const Vec inv_om2 = Vec::Constant(D, 0.5);
  kernels::negquad_mean(X1, -1.0, xm, inv_om2, va, Exec::Serial);
  kernels::negquad_mean(X1, -1.0, xm, inv_om2, vb, Exec::Parallel);
  CHECK(va == vb);

  const Mat means = random_matrix(rng, K, D, 1.0);
  Mat inv_var(K, D);
  Vec log_norm(K);
  for (int k = 0; k < K; ++k) {
    for (int d = 0; d < D; ++d) inv_var(k, d) = 0.5 + 0.1 * k + 0.05 * d;
    log_norm[k] = -1.0 - 0.3 * k;
  }
  kernels::mixture_log_pdf(means, inv_var, log_norm, X1, va, Exec::Serial);
  kernels::mixture_log_pdf(means, inv_var, log_norm, X1, vb, Exec::Parallel);
  CHECK(va == vb);

  // predict_var needs a Cholesky factor; any well-conditioned one will do
  Mat Kmat;
  kernels::se_cross(X2, X2, inv_len2, 1.3, Kmat, Exec::Serial);
  Kmat.diagonal().array() += 0.1;
  const Mat L = Eigen::LLT<Mat>(Kmat).matrixL();
  Mat Kxq;
  kernels::se_cross(X2, X1, inv_len2, 1.3, Kxq, Exec::Serial);
  kernels::predict_var(L, Kxq, 1.3, 1e-12, va, Exec::Serial);
  kernels::predict_var(L, Kxq, 1.3, 1e-12, vb, Exec::Parallel);
  CHECK(va == vb);
}

TEST_CASE("se_cross matches a scalar re-implementation") {
  Rng rng(5);
  const int D = 2;
  const Mat X1 = random_matrix(rng, 7, D);
  const Mat X2 = random_matrix(rng, 9, D);
  Vec inv_len2(D);
  inv_len2 << 1.0 / (0.8 * 0.8), 1.0 / (1.7 * 1.7);
  const double sf2 = 2.3;
  Mat K;
  kernels::se_cross(X1, X2, inv_len2, sf2, K);
  for (int i = 0; i < X1.rows(); ++i) {
    for (int j = 0; j < X2.rows(); ++j) {
      double d2 = 0.0;
      for (int d = 0; d < D; ++d) {
        d2 += (X1(i, d) - X2(j, d)) * (X1(i, d) - X2(j, d)) * inv_len2[d];
      }
      CHECK(K(i, j) == doctest::Approx(sf2 * std::exp(-0.5 * d2))
                           .epsilon(1e-14));
    }
  }
}
