#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"
#include "gmmloc/map_builder.h"

namespace gmmloc {

// Rectangle corner + s * edge_a + t * edge_b, s, t in [0, 1].
struct Surface {
  Vec3 corner = Vec3::Zero();
  Vec3 edge_a = Vec3::UnitX();
  Vec3 edge_b = Vec3::UnitY();

  double area() const { return edge_a.cross(edge_b).norm(); }
  Vec3 normal() const { return edge_a.cross(edge_b).normalized(); }
  Vec3 at(double s, double t) const { return corner + s * edge_a + t * edge_b; }
};

struct Box {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
};

struct SceneSpec {
  Vec3 room_size = Vec3(6.0, 4.0, 3.0);  // room spans [0, size]
  std::vector<Box> boxes;
  double point_density = 100.0;  // points / m^2
  double jitter = 0.002;         // out-of-plane std dev (m)
  int component_count = 300;
  int landmark_count = 1500;
  // Landmarks are moved this far along the surface normal (model error study).
  double landmark_offset = 0.0;
  int em_iterations = 60;
  double em_tolerance = 1e-6;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticScene {
  SceneSpec spec;
  std::vector<Surface> surfaces;
  PointCloud gt_cloud;
  std::vector<Vec3> gt_landmarks;  // landmark id = index
  GmmMap gmm;
  std::vector<double> em_log_likelihood;
};

// Six room surfaces (floor, ceiling, four walls) followed by six faces per box.
std::vector<Surface> room_surfaces(const SceneSpec& spec);

// Throws std::invalid_argument when K exceeds the number of sampled points.
SyntheticScene generate_scene(const SceneSpec& spec);

enum class TrajectoryKind { Circle, Lemniscate };

struct SequenceSpec {
  TrajectoryKind trajectory = TrajectoryKind::Circle;
  Vec3 center = Vec3(3.0, 2.0, 1.5);
  double radius = 1.0;
  Vec3 look_at = Vec3(3.0, 2.0, 1.5);
  int n_poses = 150;
  double dt = 0.1;  // s between poses
  double pixel_noise = 1.0;        // px
  double odom_sigma_t = 0.005;     // m per step
  double odom_sigma_rot_deg = 0.1; // deg per step
  double max_range = 8.0;
  CameraIntrinsics camera;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimObservation {
  int pose_index = 0;
  int landmark_id = 0;
  ImagePoint pixel = ImagePoint::Zero();
};

struct SimSequence {
  SequenceSpec spec;
  std::vector<double> timestamps;
  std::vector<Pose> gt_poses;
  std::vector<Pose> noisy_poses;
  // Per pose, ascending landmark id.
  std::vector<std::vector<SimObservation>> observations;
  std::vector<std::string> warnings;
};

std::vector<Pose> make_trajectory(const SequenceSpec& spec);

SimSequence generate_sequence(const SyntheticScene& scene, const SequenceSpec& spec);

}  // namespace gmmloc
