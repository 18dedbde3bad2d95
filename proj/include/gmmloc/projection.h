#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"

namespace gmmloc {

struct ProjectedComponent2D {
  int source_id = -1;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth = 0.0;
  Mat2 axes2d = Mat2::Identity();
  Vec2 singular_values2d = Vec2::Ones();  // ascending
};

enum class RejectReason { None, Frustum, ViewAngle, Representativeness, Occlusion };

std::string_view to_string(RejectReason r);

struct ProjectionConfig {
  double view_angle_deg = 80.0;      // delta_theta
  double min_singular_px2 = 1.0;     // delta_lambda
  double frustum_margin_sigma = 3.0;
  double occlusion_sigma = 2.0;      // mutual containment radius
  // Compare |<c - mu, e1>|; false uses the signed form.
  bool view_angle_absolute = true;
};

// Linearised push-forward of one component through the camera:
//   mean2d = pi(R mu + t),  cov2d = J (R Sigma R^T) J^T.
// nullopt when the mean is not in front of the camera.
std::optional<ProjectedComponent2D> project_component(const GaussianComponent3D& g,
                                                      const Pose& pose,
                                                      const CameraIntrinsics& K);

struct ClassifiedProjection {
  ProjectedComponent2D projection;
  RejectReason reason = RejectReason::None;
};

// Runs the four filters and reports a reason for every input. The occlusion
// pass is repeated until no survivor is occluded, so the result is a fixed
// point of the filter.
std::vector<ClassifiedProjection> classify_components(std::span<const ProjectedComponent2D> projected,
                                                      const Pose& pose, const GmmMap& map,
                                                      const CameraIntrinsics& K,
                                                      const ProjectionConfig& cfg = {});

// Visible subset, sorted by depth then id.
std::vector<ProjectedComponent2D> filter_components(std::span<const ProjectedComponent2D> projected,
                                                    const Pose& pose, const GmmMap& map,
                                                    const CameraIntrinsics& K,
                                                    const ProjectionConfig& cfg = {});

// Projection of the whole map followed by filtering.
std::vector<ProjectedComponent2D> project_map(const GmmMap& map, const Pose& pose,
                                              const CameraIntrinsics& K,
                                              const ProjectionConfig& cfg = {});

// Every component with its projection (if any) and rejection reason, in id order.
std::vector<ClassifiedProjection> project_map_classified(const GmmMap& map, const Pose& pose,
                                                         const CameraIntrinsics& K,
                                                         const ProjectionConfig& cfg = {});

}  // namespace gmmloc
