#include "vbmc/transform.hpp"

#include <Eigen/LU>
#include <cmath>

#include "vbmc/errors.hpp"

namespace vbmc {

Transform::Transform(BoundedSpace space) : space_(std::move(space)) {
  const int D = space_.dim();
  A_ = Mat::Identity(D, D);
  A_inv_ = A_;
  refresh_plausible_box();
}

void Transform::refresh_plausible_box() {
  const Vec ulo = space_.to_unbounded(space_.plausible_lower());
  const Vec uhi = space_.to_unbounded(space_.plausible_upper());
  if (!has_linear_) {
    plo_ = ulo;
    phi_ = uhi;
    return;
  }
  // Bounding box of the affine image of [ulo, uhi].
  const int D = dim();
  plo_.resize(D);
  phi_.resize(D);
  for (int d = 0; d < D; ++d) {
    double lo = 0.0, hi = 0.0;
    for (int j = 0; j < D; ++j) {
      const double a = A_(d, j) * ulo[j];
      const double b = A_(d, j) * uhi[j];
      lo += std::min(a, b);
      hi += std::max(a, b);
    }
    plo_[d] = lo;
    phi_[d] = hi;
  }
}

Vec Transform::to_inference(const Vec& x) const {
  const Vec u = space_.to_unbounded(x);
  return has_linear_ ? Vec(A_ * u) : u;
}

Vec Transform::to_original(const Vec& v) const {
  return space_.to_original(has_linear_ ? Vec(A_inv_ * v) : v);
}

double Transform::log_jacobian(const Vec& v) const {
  const Vec u = has_linear_ ? Vec(A_inv_ * v) : v;
  return space_.log_abs_det_jacobian(u) - log_det_A_;
}

void Transform::compose_linear(const Mat& M) {
  const int D = dim();
  if (M.rows() != D || M.cols() != D) {
    throw DomainError("linear map dimension mismatch");
  }
  Eigen::FullPivLU<Mat> lu(M);
  if (!lu.isInvertible()) {
    throw NumericalError("linear map is singular");
  }
  A_ = has_linear_ ? Mat(M * A_) : M;
  A_inv_ = Eigen::FullPivLU<Mat>(A_).inverse();
  log_det_A_ = std::log(std::abs(Eigen::FullPivLU<Mat>(A_).determinant()));
  has_linear_ = true;
  refresh_plausible_box();
}

}  // namespace vbmc
