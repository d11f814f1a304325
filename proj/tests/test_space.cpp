#include <doctest.h>

#include <cmath>
#include <limits>

#include "vbmc/bounded_space.hpp"
#include "vbmc/errors.hpp"
#include "vbmc/rng.hpp"

using namespace vbmc;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Vec vec1(double a) {
  Vec v(1);
  v << a;
  return v;
}
}  // namespace

TEST_CASE("unbounded dimensions pass through unchanged") {
  auto space = BoundedSpace::create(vec2(-kInf, -kInf), vec2(kInf, kInf),
                                    vec2(-3, -3), vec2(3, 3));
  const Vec x = vec2(0.3, -2.0);
  const Vec u = space.to_unbounded(x);
  CHECK(u[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(-2.0).epsilon(1e-15));
}

TEST_CASE("logit map on (0,1)") {
  auto space = BoundedSpace::create(vec1(0), vec1(1));
  CHECK(space.to_unbounded(vec1(0.5))[0] == doctest::Approx(0.0));
  CHECK(space.to_unbounded(vec1(0.25))[0] ==
        doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-12));
  CHECK(space.to_original(vec1(0.0))[0] == doctest::Approx(0.5));
}

TEST_CASE("inverse approaches the upper bound asymptotically") {
  auto space = BoundedSpace::create(vec1(-3), vec1(7));
  CHECK(space.to_original(vec1(20.0))[0] ==
        doctest::Approx(7.0).epsilon(1e-8));
  CHECK(space.to_original(vec1(20.0))[0] < 7.0);
  // even in the saturated regime the result stays strictly interior
  CHECK(space.to_original(vec1(500.0))[0] < 7.0);
}

TEST_CASE("jacobian values") {
  auto unbounded = BoundedSpace::create(vec2(-kInf, -kInf), vec2(kInf, kInf),
                                        vec2(-1, -1), vec2(1, 1));
  CHECK(unbounded.log_abs_det_jacobian(vec2(0.7, -4.0)) == 0.0);

  auto unit = BoundedSpace::create(vec1(0), vec1(1));
  CHECK(unit.log_abs_det_jacobian(vec1(0.0)) ==
        doctest::Approx(std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("jacobian matches central finite differences") {
  auto space = BoundedSpace::create(vec1(0), vec1(1));
  const double h = 1e-5;
  for (double u : {1.0, -0.3, 2.5}) {
    const double xp = space.to_original(vec1(u + h))[0];
    const double xm = space.to_original(vec1(u - h))[0];
    const double fd = std::log(std::abs((xp - xm) / (2 * h)));
    CHECK(space.log_abs_det_jacobian(vec1(u)) ==
          doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("round trip, jacobian consistency and monotonicity over random "
          "spaces") {
  Rng rng(1234);
  for (int trial = 0; trial < 1000; ++trial) {
    const double a = rng.uniform(-10, 5);
    const double b = a + rng.uniform(0.5, 20);
    const bool bounded = trial % 3 != 0;
    auto space = bounded ? BoundedSpace::create(vec1(a), vec1(b))
                         : BoundedSpace::create(vec1(-kInf), vec1(kInf),
                                                vec1(a), vec1(b));
    const double t = rng.uniform(0.01, 0.99);
    const Vec x = vec1(a + (b - a) * t);
    const Vec u = space.to_unbounded(x);
    const Vec back = space.to_original(u);
    CHECK(std::abs(back[0] - x[0]) <= 1e-10 * (1.0 + std::abs(x[0])));

    // monotone: a slightly larger x maps strictly above
    const Vec x2 = vec1(x[0] + 1e-6 * (b - a));
    if (x2[0] < b) {
      CHECK(space.to_unbounded(x2)[0] > u[0]);
    }

    // jacobian vs finite differences of the inverse map
    const double h = 1e-5 * (1.0 + std::abs(u[0]));
    const double xp = space.to_original(vec1(u[0] + h))[0];
    const double xm = space.to_original(vec1(u[0] - h))[0];
    const double fd = std::log(std::abs((xp - xm) / (2 * h)));
    CHECK(space.log_abs_det_jacobian(u) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("points on or outside hard bounds are rejected") {
  auto space = BoundedSpace::create(vec1(0), vec1(1));
  CHECK_THROWS_AS(space.to_unbounded(vec1(0.0)), DomainError);
  CHECK_THROWS_AS(space.to_unbounded(vec1(1.0)), DomainError);
  CHECK_THROWS_AS(space.to_unbounded(vec1(-0.5)), DomainError);
  CHECK_THROWS_AS(space.to_unbounded(vec1(1.5)), DomainError);
  CHECK_NOTHROW(space.to_unbounded(vec1(1e-12)));
}

TEST_CASE("half-bounded dimensions are rejected with a clear error") {
  CHECK_THROWS_WITH_AS(
      BoundedSpace::create(vec1(0), vec1(kInf), vec1(1), vec1(2)),
      doctest::Contains("half-bounded"), DomainError);
}

TEST_CASE("bound ordering invariants are enforced") {
  CHECK_THROWS_AS(BoundedSpace::create(vec1(1), vec1(0)), DomainError);
  CHECK_THROWS_AS(
      BoundedSpace::create(vec1(0), vec1(1), vec1(-0.5), vec1(0.9)),
      DomainError);
  CHECK_THROWS_AS(
      BoundedSpace::create(vec1(0), vec1(1), vec1(0.9), vec1(0.1)),
      DomainError);
  // plausible bounds must be finite
  CHECK_THROWS_AS(
      BoundedSpace::create(vec1(-kInf), vec1(kInf), vec1(-kInf), vec1(1)),
      DomainError);
}

TEST_CASE("default plausible box shrinks hard bounds by 2% of range") {
  auto space = BoundedSpace::create(vec1(0), vec1(10));
  CHECK(space.plausible_lower()[0] == doctest::Approx(0.2));
  CHECK(space.plausible_upper()[0] == doctest::Approx(9.8));
  // and requires finite hard bounds
  CHECK_THROWS_AS(BoundedSpace::create(vec1(-kInf), vec1(kInf)), DomainError);
}
