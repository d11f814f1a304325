#include <doctest.h>

#include <cmath>

#include "vbmc/errors.hpp"
#include "vbmc/rng.hpp"
#include "vbmc/vp.hpp"

using namespace vbmc;

namespace {

VariationalPosterior standard_vp(int D = 1) {
  return VariationalPosterior(Mat::Zero(1, D), Vec::Ones(1), Vec::Ones(1),
                              Vec::Ones(D));
}

VariationalPosterior random_vp(Rng& rng, int K, int D) {
  Mat means(K, D);
  Vec w(K), sigma(K), lambda(D);
  for (int k = 0; k < K; ++k) {
    w[k] = rng.uniform(0.2, 1.0);
    sigma[k] = rng.uniform(0.5, 1.6);
    for (int d = 0; d < D; ++d) means(k, d) = rng.uniform(-2, 2);
  }
  for (int d = 0; d < D; ++d) lambda[d] = rng.uniform(0.6, 1.5);
  w /= w.sum();
  return VariationalPosterior(means, w, sigma, lambda);
}

}  // namespace

TEST_CASE("log_pdf of the standard normal at the origin") {
  CHECK(standard_vp().log_pdf(Vec::Zero(1)) ==
        doctest::Approx(-0.5 * std::log(2 * M_PI)).epsilon(1e-12));
}

TEST_CASE("mirrored equal-weight mixture is symmetric") {
  Mat means(2, 2);
  means << 1.5, -0.5, -1.5, 0.5;
  VariationalPosterior vp(means, Vec::Constant(2, 0.5), Vec::Ones(2),
                          Vec::Ones(2));
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Vec x = rng.normal_vec(2);
    CHECK(vp.log_pdf(x) == doctest::Approx(vp.log_pdf(-x)).epsilon(1e-12));
  }
}

TEST_CASE("log_pdf matches naive direct summation at moderate values") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    const int K = 1 + trial % 4;
    const int D = 1 + trial % 3;
    auto vp = random_vp(rng, K, D);
    const Vec x = rng.normal_vec(D);
    double direct = 0.0;
    for (int k = 0; k < K; ++k) {
      double dens = vp.weights()[k];
      for (int d = 0; d < D; ++d) {
        const double sd = vp.sigma()[k] * vp.lambda()[d];
        const double z = (x[d] - vp.means()(k, d)) / sd;
        dens *= std::exp(-0.5 * z * z) / (sd * std::sqrt(2 * M_PI));
      }
      direct += dens;
    }
    CHECK(vp.log_pdf(x) ==
          doctest::Approx(std::log(direct)).epsilon(1e-12));
  }
}

TEST_CASE("log_pdf saturates instead of returning NaN") {
  auto vp = standard_vp();
  const double far = vp.log_pdf(Vec::Constant(1, 1e6));
  CHECK(std::isfinite(far));
  CHECK(far < -1e9);
}

TEST_CASE("sampling: collapsed component, determinism and moments") {
  Mat mu(1, 2);
  mu << 0.7, -0.3;
  VariationalPosterior tight(mu, Vec::Ones(1), Vec::Constant(1, 1e-9),
                             Vec::Ones(2));
  const Mat S = tight.sample(50, 42);
  for (int i = 0; i < S.rows(); ++i) {
    CHECK(std::abs(S(i, 0) - 0.7) < 1e-6);
    CHECK(std::abs(S(i, 1) + 0.3) < 1e-6);
  }

  auto vp = standard_vp();
  const Mat a = vp.sample(1000, 9);
  const Mat b = vp.sample(1000, 9);
  CHECK(a == b);

  const int n = 200000;
  const Mat big = vp.sample(n, 123);
  CHECK(std::abs(big.col(0).mean()) < 0.01);
  const double sd = std::sqrt(
      (big.col(0).array() - big.col(0).mean()).square().sum() / (n - 1));
  CHECK(std::abs(sd - 1.0) < 0.01);
}

TEST_CASE("moments: closed forms") {
  Mat mu(1, 2);
  mu << 1.0, 2.0;
  Vec lambda(2);
  lambda << 0.5, 2.0;
  VariationalPosterior single(mu, Vec::Ones(1), Vec::Constant(1, 3.0),
                              lambda);
  auto [mean, cov] = single.moments();
  CHECK(mean[0] == doctest::Approx(1.0));
  CHECK(mean[1] == doctest::Approx(2.0));
  CHECK(cov(0, 0) == doctest::Approx(2.25));
  CHECK(cov(1, 1) == doctest::Approx(36.0));
  CHECK(cov(0, 1) == doctest::Approx(0.0));

  Mat mu2(2, 2);
  mu2 << 1, 0, -1, 0;
  VariationalPosterior bimodal(mu2, Vec::Constant(2, 0.5), Vec::Ones(2),
                               Vec::Ones(2));
  auto [mean2, cov2] = bimodal.moments();
  CHECK(mean2.norm() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(cov2(0, 0) == doctest::Approx(2.0));
  CHECK(cov2(1, 1) == doctest::Approx(1.0));
}

TEST_CASE("moments agree with Monte Carlo") {
  Rng rng(21);
  auto vp = random_vp(rng, 3, 2);
  auto [mean, cov] = vp.moments();
  const int n = 200000;
  const Mat S = vp.sample(n, 777);
  for (int d = 0; d < 2; ++d) {
    const double se = std::sqrt(cov(d, d) / n);
    CHECK(std::abs(S.col(d).mean() - mean[d]) < 5 * se);
  }
  Mat centered = S.rowwise() - mean.transpose();
  Mat sample_cov = centered.transpose() * centered / (n - 1);
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      const double se = std::sqrt(
          (cov(i, i) * cov(j, j) + cov(i, j) * cov(i, j)) / n);
      CHECK(std::abs(sample_cov(i, j) - cov(i, j)) < 5 * se);
    }
  }
}

TEST_CASE("exp(log_pdf) integrates to one on a dense 2-D grid") {
  Rng rng(31);
  auto vp = random_vp(rng, 3, 2);
  auto [mean, cov] = vp.moments();
  const double spread0 = std::sqrt(cov(0, 0));
  const double spread1 = std::sqrt(cov(1, 1));
  const int n = 801;
  const double lo0 = mean[0] - 10 * spread0, hi0 = mean[0] + 10 * spread0;
  const double lo1 = mean[1] - 10 * spread1, hi1 = mean[1] + 10 * spread1;
  const double h0 = (hi0 - lo0) / (n - 1);
  const double h1 = (hi1 - lo1) / (n - 1);
  double total = 0.0;
  Vec x(2);
  for (int i = 0; i < n; ++i) {
    x[0] = lo0 + i * h0;
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n; ++j) {
      x[1] = lo1 + j * h1;
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      total += wi * wj * std::exp(vp.log_pdf(x));
    }
  }
  total *= h0 * h1;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("divergence: self, analytic Gaussian value and ordering") {
  auto vp = standard_vp();
  CHECK(divergence_between(vp, vp, 2000, 5) ==
        doctest::Approx(0.0).epsilon(1e-12));

  // For unit-variance Gaussians a mean offset m gives KL = m^2/2 each way,
  // so the symmetrized value is m^2/2.
  double prev = -1.0;
  for (double m : {0.0, 1.0, 2.0, 4.0}) {
    VariationalPosterior other(Mat::Constant(1, 1, m), Vec::Ones(1),
                               Vec::Ones(1), Vec::Ones(1));
    const double est = divergence_between(vp, other, 200000, 17);
    if (m == 1.0) CHECK(est == doctest::Approx(0.5).epsilon(0.05));
    CHECK(est > prev);
    prev = est;
  }
}

TEST_CASE("divergence is never meaningfully negative") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = random_vp(rng, 2, 2);
    auto b = random_vp(rng, 3, 2);
    const double est = divergence_between(a, b, 5000, trial);
    CHECK(est > -0.05);
  }
}

TEST_CASE("pruning drops negligible weights and renormalizes") {
  Mat mu(3, 1);
  mu << 0, 5, -5;
  Vec w(3);
  w << 0.7, 0.3 - 1e-12, 1e-12;
  VariationalPosterior vp(mu, w, Vec::Ones(3), Vec::Ones(1));
  auto pruned = vp.pruned(1e-8);
  CHECK(pruned.K() == 2);
  CHECK(pruned.weights().sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("unconstrained parameterization round-trips") {
  Rng rng(41);
  auto vp = random_vp(rng, 3, 2);
  auto back = VariationalPosterior::from_unconstrained(vp.to_unconstrained(),
                                                       3, 2);
  CHECK((back.means() - vp.means()).norm() < 1e-12);
  CHECK((back.weights() - vp.weights()).norm() < 1e-12);
  CHECK((back.sigma() - vp.sigma()).norm() < 1e-12);
  CHECK((back.lambda() - vp.lambda()).norm() < 1e-12);
}

TEST_CASE("invalid mixtures are rejected") {
  CHECK_THROWS_AS(VariationalPosterior(Mat::Zero(1, 1), Vec::Constant(1, -1),
                                       Vec::Ones(1), Vec::Ones(1)),
                  DomainError);
  CHECK_THROWS_AS(VariationalPosterior(Mat::Zero(1, 1), Vec::Ones(1),
                                       Vec::Zero(1), Vec::Ones(1)),
                  DomainError);
  CHECK_THROWS_AS(divergence_between(standard_vp(), standard_vp(), 10, 1),
                  DomainError);
}
