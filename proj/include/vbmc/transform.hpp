#pragma once

#include "vbmc/bounded_space.hpp"

namespace vbmc {

// Original space -> inference space map: the bounded-space logit transform
// composed with an optional invertible linear map (used by variational
// whitening). v = A * u(x); the Jacobian splits into the per-dimension
// logit part and the constant log |det A|.
class Transform {
 public:
  explicit Transform(BoundedSpace space);

  const BoundedSpace& space() const { return space_; }
  int dim() const { return space_.dim(); }
  bool has_linear_map() const { return has_linear_; }
  const Mat& linear_map() const { return A_; }
  double log_det_linear() const { return log_det_A_; }

  Vec to_inference(const Vec& x) const;
  Vec to_original(const Vec& v) const;
  // log |det dx/dv| at v; the engine adds this to the target log density.
  double log_jacobian(const Vec& v) const;

  // Compose v' = M v on top of the current map.
  void compose_linear(const Mat& M);

  // Bounding box of the plausible box image in inference space.
  const Vec& plausible_lo() const { return plo_; }
  const Vec& plausible_hi() const { return phi_; }

 private:
  void refresh_plausible_box();
  BoundedSpace space_;
  bool has_linear_ = false;
  Mat A_, A_inv_;
  double log_det_A_ = 0.0;
  Vec plo_, phi_;
};

}  // namespace vbmc
