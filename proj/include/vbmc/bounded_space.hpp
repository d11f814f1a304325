#pragma once

#include <Eigen/Dense>
#include <optional>

namespace vbmc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Parameter space with hard bounds and a finite plausible box. Hard bounds
// are per-dimension either both finite or both infinite; the plausible box
// is always finite and strictly inside the hard bounds. Finite-bounded
// dimensions map to the unbounded inference space through a scaled logit,
// unbounded dimensions pass through unchanged.
class BoundedSpace {
 public:
  BoundedSpace() = default;  // empty; fill via create()

  static BoundedSpace create(Vec lower, Vec upper, Vec plausible_lower,
                             Vec plausible_upper);
  // Plausible box defaults to the hard bounds shrunk inward by 2% of the
  // range; only valid when every dimension is finite.
  static BoundedSpace create(Vec lower, Vec upper);

  int dim() const { return static_cast<int>(lower_.size()); }
  bool bounded(int d) const { return std::isfinite(lower_[d]); }
  const Vec& lower() const { return lower_; }
  const Vec& upper() const { return upper_; }
  const Vec& plausible_lower() const { return plausible_lower_; }
  const Vec& plausible_upper() const { return plausible_upper_; }

  // u_d = log((x_d - a_d) / (b_d - x_d)) on bounded dimensions.
  // Throws DomainError if any x_d sits on or outside its hard bounds.
  Vec to_unbounded(const Vec& x) const;

  // Exact inverse of to_unbounded on finite inputs.
  Vec to_original(const Vec& u) const;

  // log |det dx/du| at u; zero when every dimension is unbounded.
  double log_abs_det_jacobian(const Vec& u) const;

  // Per-dimension contribution to the Jacobian (used by the linear-map
  // composition in the engine).
  double log_abs_det_jacobian_dim(int d, double u_d) const;

 private:
  Vec lower_, upper_, plausible_lower_, plausible_upper_;
};

}  // namespace vbmc
