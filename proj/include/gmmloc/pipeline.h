#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gmmloc/association.h"
#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"
#include "gmmloc/optimizer.h"
#include "gmmloc/projection.h"
#include "gmmloc/sequence_io.h"
#include "gmmloc/simulator.h"

namespace gmmloc {

struct PipelineConfig {
  bool structure_enabled = true;
  double sigma_str = kDefaultSigmaStr;
  double sigma_px = 1.0;
  int window_size = 10;
  // Keyframes with fewer observations of triangulated landmarks skip BA.
  int min_observations = 8;
  double min_parallax_deg = kMinParallaxDeg;
  // true: first pose is accurate and held fixed; false: it is a rough guess
  // tied to a prior edge of weight `prior_weight`.
  bool fix_first_keyframe = true;
  double prior_weight = 1e4;
  ProjectionConfig projection;
  AssociationConfig association;  // sigma_str / structure flag taken from above
  SolverConfig solver;

  void validate() const;
};

struct KeyframeReport {
  int keyframe = 0;
  double timestamp = 0.0;
  int observations = 0;
  int projected_components = 0;
  int triangulated = 0;
  int association_attempts = 0;
  int associated = 0;
  int landmarks_in_window = 0;
  int visual_edges = 0;
  int structure_edges = 0;
  bool ba_skipped = false;
  std::string flag;
  SolverReport round1;
  SolverReport round2;
  int deactivated_visual = 0;
  int deactivated_structure = 0;
  int removed_landmarks = 0;
};

struct LandmarkTrack {
  std::vector<std::pair<int, ImagePoint>> observations;  // (keyframe, pixel)
  bool triangulated = false;
  bool removed = false;
  Vec3 position = Vec3::Zero();
  std::optional<int> component;
  bool association_rejected = false;
};

class LocalizationPipeline {
 public:
  LocalizationPipeline(std::shared_ptr<const GmmMap> map, const CameraIntrinsics& camera,
                       PipelineConfig cfg);

  KeyframeReport process_keyframe(double timestamp, const Pose& pose_initial,
                                  std::span<const SimObservation> observations);

  std::size_t keyframe_count() const { return poses_.size(); }
  const Pose& pose(int keyframe) const { return poses_.at(keyframe); }
  Trajectory trajectory() const { return {timestamps_, poses_}; }
  // Triangulated, not removed; ascending id.
  std::vector<std::pair<int, Vec3>> landmarks() const;
  const std::map<int, LandmarkTrack>& tracks() const { return tracks_; }
  const PipelineConfig& config() const { return cfg_; }
  // Structure edges of the most recent BA problem.
  const std::vector<StructureAssociation>& last_structure_edges() const { return last_structure_; }

 private:
  void triangulate(int kf, std::span<const SimObservation> obs, KeyframeReport& rep);
  void associate_landmarks(std::span<const SimObservation> obs,
                           std::span<const ProjectedComponent2D> projections, KeyframeReport& rep);
  void bundle_adjust(int kf, std::span<const SimObservation> obs, KeyframeReport& rep);
  std::vector<LandmarkView> views_of(const LandmarkTrack& t) const;

  std::shared_ptr<const GmmMap> map_;
  CameraIntrinsics camera_;
  PipelineConfig cfg_;
  std::vector<double> timestamps_;
  std::vector<Pose> poses_;
  std::map<int, LandmarkTrack> tracks_;
  std::optional<Pose> first_prior_;
  std::vector<StructureAssociation> last_structure_;
};

struct RunResult {
  Trajectory estimate;
  std::vector<std::pair<int, Vec3>> landmarks;
  std::map<int, int> associations;  // landmark -> component, final state
  std::vector<KeyframeReport> reports;
};

// Feeds every pose of the sequence through the pipeline. Each initial pose
// chains the odometry increment onto the previous estimate.
RunResult run_sequence(const SequenceData& data, const PipelineConfig& cfg);

// estimate.tum, landmarks_est.csv (landmark_id,x,y,z,component_id with -1
// for unassociated), report.jsonl (one object per keyframe)
// and solver.jsonl (one object per LM iteration).
void write_run(const RunResult& run, const std::filesystem::path& dir);

}  // namespace gmmloc
