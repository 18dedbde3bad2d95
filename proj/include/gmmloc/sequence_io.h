#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"
#include "gmmloc/map_builder.h"
#include "gmmloc/simulator.h"

namespace gmmloc {

// Timestamped world-to-camera poses.
struct Trajectory {
  std::vector<double> timestamps;
  std::vector<Pose> poses;

  std::size_t size() const { return poses.size(); }
  bool empty() const { return poses.empty(); }
};

// TUM lines "timestamp tx ty tz qx qy qz qw" hold the camera-to-world
// transform; conversion to and from Pose happens here.
Trajectory read_tum(const std::filesystem::path& path);
void write_tum(const Trajectory& traj, const std::filesystem::path& path);

// Shortest round-trip decimal form.
std::string format_double(double v);

// observations.csv: pose_idx,landmark_id,u,v
std::vector<SimObservation> read_observations(const std::filesystem::path& path);
void write_observations(const std::vector<std::vector<SimObservation>>& per_pose,
                        const std::filesystem::path& path);

// landmarks.csv: landmark_id,x,y,z
std::vector<std::pair<int, Vec3>> read_landmarks(const std::filesystem::path& path);
void write_landmarks(const std::vector<std::pair<int, Vec3>>& landmarks,
                     const std::filesystem::path& path);

struct SequenceData {
  CameraIntrinsics camera;
  double pixel_noise = 1.0;
  Trajectory gt;
  Trajectory odom;
  std::vector<std::vector<SimObservation>> observations;  // per pose
  GmmMap map;
  std::vector<std::pair<int, Vec3>> gt_landmarks;
};

// Writes gt.tum, odom.tum, observations.csv, scene.gmm, landmarks.csv,
// cloud.xyz and sequence.json into `dir` (created if needed).
void write_sequence(const SyntheticScene& scene, const SimSequence& seq,
                    const std::filesystem::path& dir);

SequenceData read_sequence(const std::filesystem::path& dir);

// In-memory equivalent of write_sequence + read_sequence.
SequenceData to_sequence_data(const SyntheticScene& scene, const SimSequence& seq);

}  // namespace gmmloc
