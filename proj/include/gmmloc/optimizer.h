#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "gmmloc/factors.h"
#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"

namespace gmmloc {

struct SolverConfig {
  int max_iterations = 50;
  // Initial damping = scale * max diag(J^T W J).
  double initial_damping_scale = 1e-4;
  double damping_up = 10.0;
  double damping_down = 10.0;
  double cost_tolerance = 1e-9;       // relative decrease of an accepted step
  double parameter_tolerance = 1e-10; // step norm
  double gradient_tolerance = 1e-14;  // infinity norm
  double outlier_confidence = kDefaultConfidence;
  bool robust_visual = true;
  bool robust_structure = false;
  int max_solve_retries = 10;

  void validate() const;
};

struct KeyframeNode {
  Pose pose;
  bool fixed = false;
};

struct VisualEdge {
  Observation obs;
  bool active = true;
};

struct StructureEdge {
  StructureAssociation assoc;
  bool active = true;
};

// Information-weighted pose prior: cost 1/2 weight |log(prior^-1 pose)|^2.
struct PriorEdge {
  int keyframe_id = -1;
  Pose prior;
  double weight = 1.0;
  bool active = true;
};

struct Problem {
  std::map<int, KeyframeNode> keyframes;
  std::map<int, Vec3> landmarks;
  std::vector<VisualEdge> visual_edges;
  std::vector<StructureEdge> structure_edges;
  std::vector<PriorEdge> prior_edges;
  std::shared_ptr<const GmmMap> map;
  CameraIntrinsics camera;
  SolverConfig settings;

  int free_keyframe_count() const;
  int free_parameter_count() const { return 6 * free_keyframe_count() + 3 * static_cast<int>(landmarks.size()); }
};

// Throws ValidationError for dangling edges, bad sigmas or a missing gauge
// (no fixed keyframe and no prior edge).
void validate_problem(const Problem& problem);

Problem build_problem(std::map<int, KeyframeNode> keyframes, std::map<int, Vec3> landmarks,
                      const std::vector<Observation>& observations,
                      const std::vector<StructureAssociation>& associations,
                      std::vector<PriorEdge> priors, std::shared_ptr<const GmmMap> map,
                      const CameraIntrinsics& camera, const SolverConfig& settings = {});

enum class Termination {
  CostTolerance,
  ParameterTolerance,
  GradientTolerance,
  MaxIterations,
  DampingExhausted,
  NonFinite,
};

std::string_view to_string(Termination t);

struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;  // cost of the evaluated candidate
  double damping = 0.0;
  bool accepted = false;
};

struct SolverReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  Termination reason = Termination::MaxIterations;
  std::string diagnostic;
  std::vector<IterationRecord> history;
};

// 1/2 sum of (robustified) whitened squared residuals over active edges.
double evaluate_cost(const Problem& problem);

// Gradient of evaluate_cost w.r.t. the free parameters, ordered free
// keyframes (by id, 6 each) then landmarks (by id, 3 each).
Eigen::VectorXd evaluate_gradient(const Problem& problem);

// Levenberg-Marquardt with landmark elimination (Schur complement). Fixed
// keyframes are never written.
SolverReport lm_solve(Problem& problem);

struct BundleAdjustReport {
  SolverReport round1;
  SolverReport round2;
  // Indices into the edge lists as they were at gating time; edges of
  // removed landmarks are erased from the problem afterwards.
  std::vector<std::size_t> deactivated_visual;
  std::vector<std::size_t> deactivated_structure;
  std::vector<int> removed_landmarks;
};

// Round 1 solve, chi-square gating of every active edge at the configured
// confidence, removal of landmarks left with < 2 visual edges, round 2 solve.
BundleAdjustReport joint_bundle_adjust(Problem& problem);

// One JSON object per iteration.
std::string to_jsonl(const SolverReport& report);

}  // namespace gmmloc
