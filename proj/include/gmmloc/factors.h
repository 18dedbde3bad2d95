#pragma once

#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"

namespace gmmloc {

constexpr double kDefaultSigmaStr = 0.1;  // m
constexpr double kDefaultConfidence = 0.95;

struct Observation {
  int keyframe_id = -1;
  int landmark_id = -1;
  ImagePoint pixel = ImagePoint::Zero();
  double sigma = 1.0;  // px
};

struct StructureAssociation {
  int landmark_id = -1;
  int component_id = -1;
  double sigma_str = kDefaultSigmaStr;  // m
};

// Whitened reprojection residual r = (u - pi(R x + t)) / sigma with
// Jacobians for a right-multiplicative pose increment and the landmark.
struct ReprojectionResidual {
  Vec2 residual = Vec2::Zero();
  Mat26 d_pose = Mat26::Zero();
  Mat23 d_landmark = Mat23::Zero();
  double depth = 0.0;
  // False when the point is not in front of the camera; residual and
  // Jacobians are then zero and the edge should be skipped.
  bool valid = false;
};

ReprojectionResidual reprojection_residual(const Vec3& landmark, const Pose& pose,
                                           const Observation& obs, const CameraIntrinsics& K);

// Hybrid structure residual. Degenerate components give the 1-D signed
// point-to-plane distance e1^T (x - mu) / sigma_str; others the 3-D
// whitened offset L^-1 (x - mu) with L L^T = Sigma.
struct StructureResidual {
  int dim = 3;
  Vec3 residual = Vec3::Zero();      // first `dim` entries used
  Mat3 jacobian = Mat3::Zero();      // first `dim` rows used

  double squared_norm() const { return residual.head(dim).squaredNorm(); }
};

StructureResidual structure_residual(const Vec3& landmark, const GaussianComponent3D& g,
                                     double sigma_str);

// e = log(prior^-1 * pose), Jacobian w.r.t. a right increment of `pose`.
struct PriorResidual {
  Vec6 residual = Vec6::Zero();
  Mat6 jacobian = Mat6::Identity();
};

PriorResidual prior_pose_residual(const Pose& pose, const Pose& prior);

// Upper quantile of the chi-square distribution. Throws std::invalid_argument
// for dof < 1 or confidence outside (0, 1).
double chi2_threshold(int dof, double confidence = kDefaultConfidence);

// Huber kernel on the squared whitened norm s with threshold delta^2.
inline double huber_cost(double s, double delta2) {
  return s <= delta2 ? s : 2.0 * std::sqrt(delta2 * s) - delta2;
}
// d huber_cost / d s.
inline double huber_weight(double s, double delta2) {
  return s <= delta2 ? 1.0 : std::sqrt(delta2 / s);
}

}  // namespace gmmloc
