#include "vbmc/bounded_space.hpp"

#include <cmath>
#include <sstream>

#include "vbmc/errors.hpp"

namespace vbmc {

namespace {

// log(1 + exp(t)) without overflow.
double softplus(double t) {
  if (t > 35.0) return t;
  if (t < -35.0) return std::exp(t);
  return std::log1p(std::exp(t));
}

double sigmoid(double t) {
  if (t >= 0.0) {
    const double z = std::exp(-t);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(t);
  return z / (1.0 + z);
}

}  // namespace

BoundedSpace BoundedSpace::create(Vec lower, Vec upper, Vec plausible_lower,
                                  Vec plausible_upper) {
  const auto n = lower.size();
  if (n < 1 || upper.size() != n || plausible_lower.size() != n ||
      plausible_upper.size() != n) {
    throw DomainError("bounds vectors must share a positive length");
  }
  for (Eigen::Index d = 0; d < n; ++d) {
    const bool lo_fin = std::isfinite(lower[d]);
    const bool hi_fin = std::isfinite(upper[d]);
    std::ostringstream where;
    where << "dimension " << d + 1;
    if (lo_fin != hi_fin) {
      throw DomainError("half-bounded " + where.str() +
                        " is not supported; use both finite or both "
                        "infinite bounds");
    }
    if (std::isnan(lower[d]) || std::isnan(upper[d])) {
      throw DomainError("NaN hard bound in " + where.str());
    }
    if (!std::isfinite(plausible_lower[d]) ||
        !std::isfinite(plausible_upper[d])) {
      throw DomainError("plausible bounds must be finite in " + where.str());
    }
    if (lo_fin && !(lower[d] < upper[d])) {
      throw DomainError("lower must be strictly below upper in " +
                        where.str());
    }
    if (!(lower[d] < plausible_lower[d]) ||
        !(plausible_lower[d] < plausible_upper[d]) ||
        !(plausible_upper[d] < upper[d])) {
      throw DomainError(
          "require lower < plausible_lower < plausible_upper < upper in " +
          where.str());
    }
  }
  BoundedSpace s;
  s.lower_ = std::move(lower);
  s.upper_ = std::move(upper);
  s.plausible_lower_ = std::move(plausible_lower);
  s.plausible_upper_ = std::move(plausible_upper);
  return s;
}

BoundedSpace BoundedSpace::create(Vec lower, Vec upper) {
  for (Eigen::Index d = 0; d < lower.size(); ++d) {
    if (!std::isfinite(lower[d]) || !std::isfinite(upper[d])) {
      throw DomainError(
          "plausible bounds are required when hard bounds are infinite "
          "(dimension " +
          std::to_string(d + 1) + ")");
    }
  }
  const Vec range = upper - lower;
  Vec pl = lower + 0.02 * range;
  Vec pu = upper - 0.02 * range;
  return create(std::move(lower), std::move(upper), std::move(pl),
                std::move(pu));
}

Vec BoundedSpace::to_unbounded(const Vec& x) const {
  if (x.size() != lower_.size()) {
    throw DomainError("point dimension mismatch");
  }
  Vec u(x.size());
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    if (!bounded(static_cast<int>(d))) {
      u[d] = x[d];
      continue;
    }
    if (!(x[d] > lower_[d]) || !(x[d] < upper_[d])) {
      std::ostringstream msg;
      msg << "coordinate " << d + 1 << " (" << x[d]
          << ") lies on or outside its hard bounds [" << lower_[d] << ", "
          << upper_[d] << "]";
      throw DomainError(msg.str());
    }
    u[d] = std::log(x[d] - lower_[d]) - std::log(upper_[d] - x[d]);
  }
  return u;
}

Vec BoundedSpace::to_original(const Vec& u) const {
  Vec x(u.size());
  for (Eigen::Index d = 0; d < u.size(); ++d) {
    if (!bounded(static_cast<int>(d))) {
      x[d] = u[d];
      continue;
    }
    double v = lower_[d] + (upper_[d] - lower_[d]) * sigmoid(u[d]);
    // saturation at extreme u would land exactly on a bound; keep strictly
    // interior so the inverse stays defined
    if (v >= upper_[d]) v = std::nextafter(upper_[d], lower_[d]);
    if (v <= lower_[d]) v = std::nextafter(lower_[d], upper_[d]);
    x[d] = v;
  }
  return x;
}

double BoundedSpace::log_abs_det_jacobian_dim(int d, double u_d) const {
  if (!bounded(d)) return 0.0;
  // dx/du = (b - a) * sigmoid(u) * (1 - sigmoid(u))
  return std::log(upper_[d] - lower_[d]) - softplus(u_d) - softplus(-u_d);
}

double BoundedSpace::log_abs_det_jacobian(const Vec& u) const {
  double total = 0.0;
  for (Eigen::Index d = 0; d < u.size(); ++d) {
    total += log_abs_det_jacobian_dim(static_cast<int>(d), u[d]);
  }
  return total;
}

}  // namespace vbmc
