#pragma once

#include <optional>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gmmloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat23 = Eigen::Matrix<double, 2, 3>;
using Mat26 = Eigen::Matrix<double, 2, 6>;

using ImagePoint = Vec2;

Mat3 skew(const Vec3& v);

Mat3 so3_exp(const Vec3& omega);
// Principal logarithm. Near an angle of pi the axis is recovered from the
// symmetric part of R; the result is accurate to ~1e-7 within 1e-6 rad of pi.
Vec3 so3_log(const Mat3& R);
Mat3 so3_left_jacobian(const Vec3& omega);
Mat3 so3_left_jacobian_inverse(const Vec3& omega);

// Rigid transform mapping world points into the camera frame: x_c = R x + t.
//
// Tangent vectors are ordered (rotation, translation) everywhere in this
// library. Increments are applied on the right: T <- T * exp(delta).
class Pose {
 public:
  Pose() : R_(Mat3::Identity()), t_(Vec3::Zero()) {}
  Pose(const Mat3& R, const Vec3& t) : R_(R), t_(t) {}
  Pose(const Eigen::Quaterniond& q, const Vec3& t) : R_(q.normalized().toRotationMatrix()), t_(t) {}

  static Pose identity() { return Pose(); }

  const Mat3& rotation() const { return R_; }
  const Vec3& translation() const { return t_; }
  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(R_).normalized(); }

  Vec3 transform(const Vec3& x) const { return R_ * x + t_; }
  Vec3 operator*(const Vec3& x) const { return transform(x); }
  Pose operator*(const Pose& other) const { return Pose(R_ * other.R_, R_ * other.t_ + t_); }
  Pose inverse() const;

  // Camera centre in the world frame, -R^T t.
  Vec3 camera_center() const { return -R_.transpose() * t_; }

  // Projects R back onto SO(3).
  Pose normalized() const { return Pose(quaternion(), t_); }

  // Right-multiplicative update.
  Pose retract(const Vec6& delta) const;

 private:
  Mat3 R_;
  Vec3 t_;
};

Pose se3_exp(const Vec6& xi);
Vec6 se3_log(const Pose& pose);

// SE(3) left Jacobian and its inverse, (rotation, translation) ordering.
Mat6 se3_left_jacobian(const Vec6& xi);
Mat6 se3_left_jacobian_inverse(const Vec6& xi);
// d log(exp(xi) * exp(delta)) / d delta at delta = 0.
inline Mat6 se3_right_jacobian_inverse(const Vec6& xi) { return se3_left_jacobian_inverse(-xi); }

// Look-at helper: camera at `eye` with optical axis towards `target`; the
// image y axis points along -up.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

struct CameraIntrinsics {
  double fx = 400.0;
  double fy = 400.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  void validate() const;
  Mat3 matrix() const;
  Vec3 unproject(const ImagePoint& u) const {
    return Vec3((u.x() - cx) / fx, (u.y() - cy) / fy, 1.0);
  }
  bool contains(const ImagePoint& u, double margin_u = 0.0, double margin_v = 0.0) const {
    return u.x() >= -margin_u && u.x() <= width + margin_u && u.y() >= -margin_v &&
           u.y() <= height + margin_v;
  }
};

struct PointProjection {
  ImagePoint pixel;
  Mat23 jacobian;  // d pixel / d p_cam
};

// Pinhole projection. Throws BehindCameraError for z <= 0.
PointProjection project_point(const Vec3& p_cam, const CameraIntrinsics& K);

// Visibility used by every producer and consumer of observations.
bool is_visible(const Vec3& p_world, const Pose& pose, const CameraIntrinsics& K,
                double max_range);

constexpr double kMinParallaxDeg = 1.0;

// Angle between the two back-projected rays in the world frame (degrees).
double ray_parallax_deg(const ImagePoint& obs_a, const Pose& pose_a, const ImagePoint& obs_b,
                        const Pose& pose_b, const CameraIntrinsics& K);

// Linear DLT followed by one Gauss-Newton step on the two-view reprojection
// error. Throws LowParallaxError below `min_parallax_deg` or when the
// solution is not in front of both cameras.
Vec3 triangulate_two_view(const ImagePoint& obs_a, const Pose& pose_a, const ImagePoint& obs_b,
                          const Pose& pose_b, const CameraIntrinsics& K,
                          double min_parallax_deg = kMinParallaxDeg);

std::optional<Vec3> try_triangulate_two_view(const ImagePoint& obs_a, const Pose& pose_a,
                                             const ImagePoint& obs_b, const Pose& pose_b,
                                             const CameraIntrinsics& K,
                                             double min_parallax_deg = kMinParallaxDeg);

}  // namespace gmmloc
