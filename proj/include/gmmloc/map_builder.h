#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "gmmloc/geometry.h"
#include "gmmloc/gmm_map.h"

namespace gmmloc {

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// ASCII XYZ: one "x y z" per line, '#' comments.
PointCloud load_xyz(const std::filesystem::path& path);
void save_xyz(const PointCloud& cloud, const std::filesystem::path& path);
// binary_little_endian PLY with float or double x/y/z vertex properties.
PointCloud load_ply(const std::filesystem::path& path);
void save_ply(const PointCloud& cloud, const std::filesystem::path& path, bool use_double = false);
// Dispatches on extension (.ply, anything else as XYZ).
PointCloud load_point_cloud(const std::filesystem::path& path);

struct FitConfig {
  int component_count = 1;
  int max_iterations = 200;
  // Stop when |LL_t - LL_{t-1}| / |LL_{t-1}| < tolerance.
  double tolerance = 1e-6;
  double floor = kEigenFloor;
  std::uint64_t seed = 0;
  // E-step worker count; 0 picks hardware concurrency. Results do not depend on it.
  int threads = 0;
  MapConfig map;
};

struct FitResult {
  GmmMap map;
  // Total log-likelihood evaluated at the start of each iteration.
  std::vector<double> log_likelihood;
  // Iterations (1-based index into log_likelihood) that re-seeded a component.
  std::vector<int> reseeded_iterations;
  int iterations = 0;
  bool converged = false;
};

// Expectation-maximisation with full covariances: k-means++ seeding, one
// hard-assignment pass, then log-space EM with eigenvalue flooring.
FitResult fit_gmm_em(const PointCloud& cloud, const FitConfig& cfg);

}  // namespace gmmloc
