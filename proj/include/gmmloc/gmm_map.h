#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "gmmloc/geometry.h"

namespace gmmloc {

constexpr double kDegeneracyRatio = 0.01;
constexpr double kEigenFloor = 1e-8;
constexpr int kDefaultNeighborCount = 8;

struct MapConfig {
  // A component is degenerate (planar) when lambda1 / lambda2 < ratio.
  double degeneracy_ratio = kDegeneracyRatio;
  // Eigenvalues below this are raised to it and the covariance rebuilt (m^2).
  double eigen_floor = kEigenFloor;
  int neighbor_count = kDefaultNeighborCount;
};

struct GaussianComponent3D {
  int id = 0;
  double weight = 1.0;
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();

  // Sigma = axes * diag(singular_values) * axes^T, ascending, det(axes) = +1.
  Mat3 axes = Mat3::Identity();
  Vec3 singular_values = Vec3::Ones();
  bool is_degenerate = false;
  std::vector<int> neighbors;

  // Cached for residuals and likelihoods.
  Mat3 information = Mat3::Identity();  // Sigma^-1
  Mat3 whitening = Mat3::Identity();    // L^-1 with L L^T = Sigma
  double log_det = 0.0;                 // ln det Sigma

  Vec3 normal() const { return axes.col(0); }
};

struct CovarianceDecomposition {
  Mat3 rotation;
  Vec3 singular_values;  // ascending
};

// Spectral factorisation Sigma = R S R^T with R in SO(3). Throws
// ValidationError if Sigma is not symmetric to 1e-9 (relative).
CovarianceDecomposition decompose_covariance(const Mat3& sigma);

// Strict: lambda1 / lambda2 < ratio.
bool detect_degeneracy(const Vec3& ascending_lambdas, double ratio = kDegeneracyRatio);

// Builds a fully preprocessed component (decomposition, flooring, caches).
// Throws ValidationError naming the id for non-finite or non-PSD input.
GaussianComponent3D make_component(int id, double weight, const Vec3& mean, const Mat3& covariance,
                                   const MapConfig& cfg = {});

// Bhattacharyya distance with the squared Mahalanobis convention:
//   1/8 d^T S^-1 d + 1/2 ln(det S / sqrt(det S1 det S2)),  S = (S1 + S2) / 2.
// Exactly symmetric in its arguments.
template <int N>
double bhattacharyya_distance(const Eigen::Matrix<double, N, 1>& mean_a,
                              const Eigen::Matrix<double, N, N>& cov_a,
                              const Eigen::Matrix<double, N, 1>& mean_b,
                              const Eigen::Matrix<double, N, N>& cov_b) {
  const Eigen::Matrix<double, N, N> pooled = 0.5 * (cov_a + cov_b);
  const Eigen::Matrix<double, N, 1> d = mean_a - mean_b;
  const double det_pooled = pooled.determinant();
  const double mahalanobis = d.dot(pooled.inverse() * d);
  const double det_product = cov_a.determinant() * cov_b.determinant();
  return 0.125 * mahalanobis + 0.5 * std::log(det_pooled / std::sqrt(det_product));
}

double bhattacharyya_distance(const GaussianComponent3D& a, const GaussianComponent3D& b);

// Log-density of N(mu, Sigma) at x, normalisation included.
double log_likelihood(const Vec3& x, const GaussianComponent3D& g);

struct MapMetadata {
  std::map<std::string, std::string> entries;
};

// Immutable after preprocessing.
class GmmMap {
 public:
  GmmMap() = default;
  // Components must carry dense ids 0..n-1 in order; weights must sum to 1.
  GmmMap(std::vector<GaussianComponent3D> components, MapConfig cfg = {}, MapMetadata meta = {});

  const std::vector<GaussianComponent3D>& components() const { return components_; }
  const GaussianComponent3D& component(int id) const { return components_.at(id); }
  std::size_t size() const { return components_.size(); }
  bool empty() const { return components_.empty(); }

  const MapConfig& config() const { return config_; }
  const MapMetadata& metadata() const { return metadata_; }
  MapMetadata& metadata() { return metadata_; }

  double weight_sum() const;
  double degenerate_fraction() const;

  // Directed k-NN under bhattacharyya_distance; k is clamped to size-1.
  void build_neighbor_graph(int k);

 private:
  std::vector<GaussianComponent3D> components_;
  MapConfig config_;
  MapMetadata metadata_;
};

// Exhaustive O(n^2) reference used by tests and small maps.
std::vector<std::vector<int>> brute_force_neighbors(const std::vector<GaussianComponent3D>& comps,
                                                    int k);

// ASCII map format:
//   GMMMAP 1 <count>
//   <id> <w> <mx> <my> <mz> <s11> <s12> <s13> <s22> <s23> <s33>
// '#' starts a comment; "# key: value" comments carry metadata.
GmmMap load_map(const std::filesystem::path& path, const MapConfig& cfg = {});
GmmMap parse_map(std::istream& in, const MapConfig& cfg = {});
void save_map(const GmmMap& map, const std::filesystem::path& path);
void write_map(const GmmMap& map, std::ostream& out);

}  // namespace gmmloc
