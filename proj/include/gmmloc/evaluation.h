#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "gmmloc/geometry.h"
#include "gmmloc/map_builder.h"
#include "gmmloc/sequence_io.h"

namespace gmmloc {

enum class Alignment { None, Rigid };

std::string_view to_string(Alignment a);
Alignment parse_alignment(std::string_view s);

struct TrajectoryErrorReport {
  double ate_rmse = 0.0;
  Alignment alignment = Alignment::None;
  std::vector<double> timestamps;  // of the estimate
  std::vector<double> errors;      // per-pose translational error (m)
  // Applied to estimated camera centres before differencing.
  Eigen::Matrix4d transform = Eigen::Matrix4d::Identity();
};

// Poses are paired by index when lengths match and every timestamp agrees
// within 10 ms, otherwise by nearest gt timestamp within 10 ms. Any estimate
// pose without a partner raises ValidationError.
TrajectoryErrorReport ate_rmse(const Trajectory& estimate, const Trajectory& gt,
                               Alignment align = Alignment::Rigid);

// Static 3-D kd-tree for exact nearest-neighbour queries.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points);

  // Index and squared distance of the closest point. Requires a non-empty tree.
  std::pair<std::size_t, double> nearest(const Vec3& q) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1, right = -1;
    std::size_t begin = 0, end = 0;
  };
  int build(std::size_t begin, std::size_t end);
  void search(int node, const Vec3& q, std::size_t& best, double& best_d2) const;

  std::vector<Vec3> points_;
  std::vector<std::size_t> index_;
  std::vector<Node> nodes_;
};

inline const std::vector<double> kDefaultThresholds = {0.01, 0.02, 0.05, 0.10, 0.20};

struct ReconstructionErrorReport {
  double rmse = 0.0;
  std::vector<double> thresholds;
  std::vector<double> inlier_ratio;  // fraction of landmarks with distance <= threshold
  std::vector<double> distances;     // per landmark, input order
};

ReconstructionErrorReport reconstruction_rmse(std::span<const Vec3> landmarks, const PointCloud& cloud,
                                              const std::vector<double>& thresholds = kDefaultThresholds);

// CSV + JSON summary files.
void write_trajectory_report(const TrajectoryErrorReport& rep, const std::filesystem::path& csv,
                             const std::filesystem::path& json);
void write_reconstruction_report(const ReconstructionErrorReport& rep,
                                 const std::filesystem::path& csv, const std::filesystem::path& json);

}  // namespace gmmloc
