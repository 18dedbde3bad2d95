#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "gmmloc/factors.h"
#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"
#include "gmmloc/projection.h"

namespace gmmloc {

struct CandidateSet {
  int landmark_id = -1;
  // Source component ids by ascending ||u - mean2d||_cov2d, ties by id.
  std::vector<int> candidates;
};

CandidateSet candidates_from_projections(const ImagePoint& u,
                                         std::span<const ProjectedComponent2D> projections, int k,
                                         int landmark_id = -1);

// One observation of a landmark from a keyframe with a known (held) pose.
struct LandmarkView {
  Pose pose;
  ImagePoint pixel = ImagePoint::Zero();
  double sigma = 1.0;
};

struct StructureFitConfig {
  int max_iterations = 20;
  double cost_tolerance = 1e-10;   // relative
  double step_tolerance = 1e-10;   // m
  double max_damping = 1e10;
};

struct StructureFit {
  bool converged = false;
  Vec3 position = Vec3::Zero();
  // Sum of whitened squared reprojection residuals at `position`.
  double reproj_error = 0.0;
  int iterations = 0;
};

// Three-parameter LM over the landmark position with all views held fixed:
//   min_x sum_k |r_proj(x, k)|^2 + |r_str(x, g)|^2
// `component` may be null for the purely visual problem.
StructureFit opt_structure(std::span<const LandmarkView> views,
                           const GaussianComponent3D* component, double sigma_str,
                           const Vec3& x_init, const CameraIntrinsics& K,
                           const StructureFitConfig& cfg = {});

// Sum of whitened squared reprojection residuals; +inf if any view has the
// point behind the camera.
double visual_cost(std::span<const LandmarkView> views, const Vec3& x, const CameraIntrinsics& K);

struct AssociationConfig {
  int candidate_count = 3;
  int max_hops = 10;
  double sigma_str = kDefaultSigmaStr;
  double confidence = kDefaultConfidence;
  // Off: candidates are scored at x_init and the landmark never moves.
  bool structure_enabled = true;
  // Adds ln w_j to the neighbour likelihood comparison.
  bool use_mixture_weights = false;
  // Final likelihood check: the refined landmark must fall inside the chosen
  // component's extent at `confidence` (in-plane axes only for degenerate
  // components). Catches points pushed far along a plane's extension.
  bool support_gate = true;
  StructureFitConfig solver;
};

struct AssociationOutcome {
  bool success = false;
  Vec3 refined_position = Vec3::Zero();
  std::optional<int> component_id;
  double final_reproj_error = 0.0;
  int hops = 0;
};

// Squared Mahalanobis distance of x to g over the axes that carry extent:
// the two in-plane axes for degenerate components, all three otherwise.
// Second member is the matching dof.
std::pair<double, int> support_distance(const Vec3& x, const GaussianComponent3D& g);

// Candidate retrieval, per-candidate structure refinement, best-candidate
// selection under the chi-square gate, then likelihood-driven re-assignment
// over the neighbour graph until the chosen component is a local maximum.
AssociationOutcome associate(const ImagePoint& u, std::span<const LandmarkView> views,
                             const Vec3& x_init, std::span<const ProjectedComponent2D> projections,
                             const GmmMap& map, const CameraIntrinsics& K,
                             const AssociationConfig& cfg = {});

}  // namespace gmmloc
