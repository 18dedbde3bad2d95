#include "gmmloc/factors.h"

#include <cmath>
#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>

namespace gmmloc {

ReprojectionResidual reprojection_residual(const Vec3& x, const Pose& pose,
                                           const Observation& obs, const CameraIntrinsics& K) {
  ReprojectionResidual out;
  const Vec3 pc = pose.transform(x);
  out.depth = pc.z();
  if (!(pc.z() > 0.0)) return out;

  const PointProjection pr = project_point(pc, K);
  const double inv_sigma = 1.0 / obs.sigma;
  out.residual = (obs.pixel - pr.pixel) * inv_sigma;

  // x_c(delta) = R (exp(delta) x) + t  =>  d x_c = R (-[x]x d_omega + d_rho).
  const Mat3& R = pose.rotation();
  const Mat23 JR = -inv_sigma * pr.jacobian * R;
  out.d_landmark = JR;
  out.d_pose.leftCols<3>() = -JR * skew(x);
  out.d_pose.rightCols<3>() = JR;
  out.valid = true;
  return out;
}

StructureResidual structure_residual(const Vec3& x, const GaussianComponent3D& g,
                                     double sigma_str) {
  StructureResidual out;
  const Vec3 d = x - g.mean;
  if (g.is_degenerate) {
    const Vec3 n = g.normal();
    out.dim = 1;
    out.residual(0) = n.dot(d) / sigma_str;
    out.jacobian.row(0) = n.transpose() / sigma_str;
  } else {
    out.dim = 3;
    out.residual = g.whitening * d;
    out.jacobian = g.whitening;
  }
  return out;
}

PriorResidual prior_pose_residual(const Pose& pose, const Pose& prior) {
  PriorResidual out;
  out.residual = se3_log(prior.inverse() * pose);
  out.jacobian = se3_right_jacobian_inverse(out.residual);
  return out;
}

double chi2_threshold(int dof, double confidence) {
  if (dof < 1) throw std::invalid_argument("chi2_threshold: dof must be >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("chi2_threshold: confidence must lie in (0, 1)");
  }
  return boost::math::quantile(boost::math::chi_squared_distribution<double>(dof), confidence);
}

}  // namespace gmmloc
