#include "gmmloc/geometry.h"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

constexpr double kSmallAngle = 1e-5;

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 s;
  // clang-format off
  s <<     0.0, -v.z(),  v.y(),
         v.z(),    0.0, -v.x(),
        -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(omega);
  double a, b;
  if (theta < kSmallAngle) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * W + b * W * W;
}

Vec3 so3_log(const Mat3& R) {
  const Vec3 v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const double s = 0.5 * v.norm();
  const double c = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::atan2(s, c);

  if (theta < kSmallAngle) {
    return 0.5 * (1.0 + theta * theta / 6.0) * v;
  }
  if (M_PI - theta > 1e-6) {
    return theta / (2.0 * std::sin(theta)) * v;
  }

  // Near pi: the symmetric part is c I + (1 - c) n n^T. Take its
  // best-conditioned column.
  const Mat3 B = (0.5 * (R + R.transpose()) - c * Mat3::Identity()) / (1.0 - c);
  int k = 0;
  B.diagonal().maxCoeff(&k);
  Vec3 n = B.col(k) / std::sqrt(std::max(B(k, k), 1e-300));
  n.normalize();
  // Resolve the sign with the (small) antisymmetric part when available.
  if (n.dot(v) < 0.0) n = -n;
  return theta * n;
}

Mat3 so3_left_jacobian(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(omega);
  double a, b;
  if (theta < kSmallAngle) {
    a = 0.5 - theta2 / 24.0;
    b = 1.0 / 6.0 - theta2 / 120.0;
  } else {
    a = (1.0 - std::cos(theta)) / theta2;
    b = (theta - std::sin(theta)) / (theta2 * theta);
  }
  return Mat3::Identity() + a * W + b * W * W;
}

Mat3 so3_left_jacobian_inverse(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 W = skew(omega);
  double b;
  if (theta < kSmallAngle) {
    b = 1.0 / 12.0 + theta2 / 720.0;
  } else {
    b = 1.0 / theta2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
  }
  return Mat3::Identity() - 0.5 * W + b * W * W;
}

Pose Pose::inverse() const {
  const Mat3 Rt = R_.transpose();
  return Pose(Rt, -Rt * t_);
}

Pose Pose::retract(const Vec6& delta) const { return *this * se3_exp(delta); }

Pose se3_exp(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  const Vec3 rho = xi.tail<3>();
  return Pose(so3_exp(omega), so3_left_jacobian(omega) * rho);
}

Vec6 se3_log(const Pose& pose) {
  const Vec3 omega = so3_log(pose.rotation());
  Vec6 xi;
  xi.head<3>() = omega;
  xi.tail<3>() = so3_left_jacobian_inverse(omega) * pose.translation();
  return xi;
}

namespace {

// Coupling block of the SE(3) left Jacobian (translation row, rotation column).
Mat3 se3_q_block(const Vec3& omega, const Vec3& rho) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const Mat3 P = skew(omega);
  const Mat3 Rh = skew(rho);
  const Mat3 PR = P * Rh;
  const Mat3 RP = Rh * P;
  const Mat3 PRP = PR * P;

  double c1, c2, c3;
  if (theta < 1e-3) {
    c1 = 1.0 / 6.0 - theta2 / 120.0;
    c2 = 1.0 / 24.0 - theta2 / 720.0;
    c3 = 1.0 / 120.0 - theta2 / 2520.0;
  } else {
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double theta4 = theta2 * theta2;
    c1 = (theta - s) / (theta2 * theta);
    c2 = (theta2 + 2.0 * c - 2.0) / (2.0 * theta4);
    c3 = (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta4 * theta);
  }
  return 0.5 * Rh + c1 * (PR + RP + PRP) + c2 * (P * PR + RP * P - 3.0 * PRP) +
         c3 * (PRP * P + P * PRP);
}

}  // namespace

Mat6 se3_left_jacobian(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  const Mat3 J = so3_left_jacobian(omega);
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = J;
  out.bottomRightCorner<3, 3>() = J;
  out.bottomLeftCorner<3, 3>() = se3_q_block(omega, xi.tail<3>());
  return out;
}

Mat6 se3_left_jacobian_inverse(const Vec6& xi) {
  const Vec3 omega = xi.head<3>();
  const Mat3 Jinv = so3_left_jacobian_inverse(omega);
  const Mat3 Q = se3_q_block(omega, xi.tail<3>());
  Mat6 out = Mat6::Zero();
  out.topLeftCorner<3, 3>() = Jinv;
  out.bottomRightCorner<3, 3>() = Jinv;
  out.bottomLeftCorner<3, 3>() = -Jinv * Q * Jinv;
  return out;
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(up);
  if (x.norm() < 1e-9) x = z.cross(Vec3::UnitX());
  x.normalize();
  const Vec3 y = z.cross(x);
  Mat3 R;
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  return Pose(R, -R * eye);
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ValidationError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValidationError("camera image size must be positive");
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

PointProjection project_point(const Vec3& p, const CameraIntrinsics& K) {
  if (!(p.z() > 0.0)) throw BehindCameraError("point behind the camera");
  const double iz = 1.0 / p.z();
  const double iz2 = iz * iz;
  PointProjection out;
  out.pixel = Vec2(K.fx * p.x() * iz + K.cx, K.fy * p.y() * iz + K.cy);
  out.jacobian << K.fx * iz, 0.0, -K.fx * p.x() * iz2, 0.0, K.fy * iz, -K.fy * p.y() * iz2;
  return out;
}

bool is_visible(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& K,
                double max_range) {
  const Vec3 pc = pose.transform(p_world);
  if (!(pc.z() > 0.0) || pc.norm() > max_range) return false;
  const ImagePoint u(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
  return K.contains(u);
}

double ray_parallax_deg(const ImagePoint& obs_a, const Pose& pose_a, const ImagePoint& obs_b,
                        const Pose& pose_b, const CameraIntrinsics& K) {
  const Vec3 ray_a = (pose_a.rotation().transpose() * K.unproject(obs_a)).normalized();
  const Vec3 ray_b = (pose_b.rotation().transpose() * K.unproject(obs_b)).normalized();
  const double c = std::clamp(ray_a.dot(ray_b), -1.0, 1.0);
  // Identical camera centres give no baseline regardless of ray angle.
  if ((pose_a.camera_center() - pose_b.camera_center()).norm() < 1e-12) return 0.0;
  return std::acos(c) * 180.0 / M_PI;
}

Vec3 triangulate_two_view(const ImagePoint& obs_a, const Pose& pose_a, const ImagePoint& obs_b,
                          const Pose& pose_b, const CameraIntrinsics& K,
                          double min_parallax_deg) {
  if (ray_parallax_deg(obs_a, pose_a, obs_b, pose_b, K) < min_parallax_deg) {
    throw LowParallaxError("parallax below threshold");
  }

  auto projection_matrix = [&](const Pose& p) {
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = p.rotation();
    P.col(3) = p.translation();
    return Eigen::Matrix<double, 3, 4>(K.matrix() * P);
  };
  const auto Pa = projection_matrix(pose_a);
  const auto Pb = projection_matrix(pose_b);

  Eigen::Matrix4d A;
  A.row(0) = obs_a.x() * Pa.row(2) - Pa.row(0);
  A.row(1) = obs_a.y() * Pa.row(2) - Pa.row(1);
  A.row(2) = obs_b.x() * Pb.row(2) - Pb.row(0);
  A.row(3) = obs_b.y() * Pb.row(2) - Pb.row(1);
  // Row scaling keeps the SVD well conditioned for large pixel values.
  for (int r = 0; r < 4; ++r) A.row(r).normalize();

  Eigen::JacobiSVD<Eigen::Matrix4d> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-14) throw LowParallaxError("point at infinity");
  Vec3 x = h.head<3>() / h(3);

  // One Gauss-Newton refinement of the reprojection error in both views.
  Mat3 H = Mat3::Zero();
  Vec3 g = Vec3::Zero();
  for (const auto& [obs, pose] : {std::pair{obs_a, pose_a}, std::pair{obs_b, pose_b}}) {
    const Vec3 pc = pose.transform(x);
    if (!(pc.z() > 0.0)) throw LowParallaxError("triangulated point behind a camera");
    const PointProjection pr = project_point(pc, K);
    const Mat23 J = pr.jacobian * pose.rotation();
    const Vec2 r = pr.pixel - obs;
    H += J.transpose() * J;
    g += J.transpose() * r;
  }
  const Vec3 dx = H.ldlt().solve(-g);
  if (dx.allFinite()) x += dx;

  if (!(pose_a.transform(x).z() > 0.0) || !(pose_b.transform(x).z() > 0.0)) {
    throw LowParallaxError("triangulated point behind a camera");
  }
  return x;
}

std::optional<Vec3> try_triangulate_two_view(const ImagePoint& obs_a, const Pose& pose_a,
                                             const ImagePoint& obs_b, const Pose& pose_b,
                                             const CameraIntrinsics& K,
                                             double min_parallax_deg) {
  try {
    return triangulate_two_view(obs_a, pose_a, obs_b, pose_b, K, min_parallax_deg);
  } catch (const LowParallaxError&) {
    return std::nullopt;
  }
}

}  // namespace gmmloc
