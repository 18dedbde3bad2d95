#include "gmmloc/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Geometry>
#include <json.hpp>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

constexpr double kPairingWindow = 0.01;  // s

std::vector<std::size_t> pair_by_time(const Trajectory& est, const Trajectory& gt) {
  std::vector<std::size_t> match(est.size());
  bool by_index = est.size() == gt.size();
  for (std::size_t i = 0; by_index && i < est.size(); ++i) {
    by_index = std::abs(est.timestamps[i] - gt.timestamps[i]) <= kPairingWindow;
  }
  if (by_index) {
    std::iota(match.begin(), match.end(), 0);
    return match;
  }
  std::vector<std::size_t> order(gt.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return gt.timestamps[a] < gt.timestamps[b]; });
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double t = est.timestamps[i];
    auto it = std::lower_bound(order.begin(), order.end(), t,
                               [&](std::size_t g, double v) { return gt.timestamps[g] < v; });
    double best = std::numeric_limits<double>::infinity();
    std::size_t pick = 0;
    for (auto c : {it, it == order.begin() ? it : it - 1}) {
      if (c == order.end()) continue;
      const double d = std::abs(gt.timestamps[*c] - t);
      if (d < best) best = d, pick = *c;
    }
    if (!(best <= kPairingWindow)) {
      throw ValidationError("no ground-truth pose within 10 ms of timestamp " + format_double(t));
    }
    match[i] = pick;
  }
  return match;
}

}  // namespace

std::string_view to_string(Alignment a) { return a == Alignment::None ? "none" : "rigid"; }

Alignment parse_alignment(std::string_view s) {
  if (s == "none") return Alignment::None;
  if (s == "rigid") return Alignment::Rigid;
  throw ValidationError("unknown alignment '" + std::string(s) + "'");
}

TrajectoryErrorReport ate_rmse(const Trajectory& estimate, const Trajectory& gt, Alignment align) {
  if (estimate.empty() || gt.empty()) throw ValidationError("ate: empty trajectory");
  if (estimate.timestamps.size() != estimate.size() || gt.timestamps.size() != gt.size()) {
    throw ValidationError("ate: timestamps and poses differ in length");
  }
  const std::vector<std::size_t> match = pair_by_time(estimate, gt);
  const auto n = static_cast<Eigen::Index>(estimate.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    src.col(i) = estimate.poses[i].camera_center();
    dst.col(i) = gt.poses[match[i]].camera_center();
  }

  TrajectoryErrorReport rep;
  rep.alignment = align;
  if (align == Alignment::Rigid) {
    if (n >= 3) {
      rep.transform = Eigen::umeyama(src, dst, false);
    } else {
      // Too few points to fix rotation; translation only.
      rep.transform.topRightCorner<3, 1>() = (dst - src).rowwise().mean();
    }
  }
  const Mat3 R = rep.transform.topLeftCorner<3, 3>();
  const Vec3 t = rep.transform.topRightCorner<3, 1>();
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = (R * src.col(i) + t - dst.col(i)).norm();
    rep.errors.push_back(e);
    rep.timestamps.push_back(estimate.timestamps[i]);
    sum += e * e;
  }
  rep.ate_rmse = std::sqrt(sum / static_cast<double>(n));
  return rep;
}

KdTree::KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
  index_.resize(points_.size());
  std::iota(index_.begin(), index_.end(), 0);
  if (!points_.empty()) build(0, points_.size());
}

int KdTree::build(std::size_t begin, std::size_t end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[id].begin = begin;
  nodes_[id].end = end;
  if (end - begin <= 8) return id;

  Vec3 lo = points_[index_[begin]], hi = lo;
  for (std::size_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[index_[i]]);
    hi = hi.cwiseMax(points_[index_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::size_t mid = begin + (end - begin) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](std::size_t a, std::size_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[index_[mid]][axis];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(int node, const Vec3& q, std::size_t& best, double& best_d2) const {
  const Node& n = nodes_[node];
  if (n.axis < 0) {
    for (std::size_t i = n.begin; i < n.end; ++i) {
      const double d2 = (points_[index_[i]] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && index_[i] < best)) {
        best_d2 = d2;
        best = index_[i];
      }
    }
    return;
  }
  // Left holds values <= split, right values >= split.
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0.0 ? n.left : n.right;
  const int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<std::size_t, double> KdTree::nearest(const Vec3& q) const {
  if (points_.empty()) throw std::logic_error("KdTree::nearest on empty tree");
  std::size_t best = std::numeric_limits<std::size_t>::max();
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d2);
  return {best, best_d2};
}

ReconstructionErrorReport reconstruction_rmse(std::span<const Vec3> landmarks, const PointCloud& cloud,
                                              const std::vector<double>& thresholds) {
  if (landmarks.empty()) throw ValidationError("reconstruction: empty landmark set");
  if (cloud.empty()) throw ValidationError("reconstruction: empty ground-truth cloud");
  ReconstructionErrorReport rep;
  rep.thresholds = thresholds;
  std::sort(rep.thresholds.begin(), rep.thresholds.end());
  const KdTree tree(cloud.points);
  double sum = 0.0;
  for (const Vec3& x : landmarks) {
    const double d2 = tree.nearest(x).second;
    rep.distances.push_back(std::sqrt(d2));
    sum += d2;
  }
  rep.rmse = std::sqrt(sum / static_cast<double>(landmarks.size()));
  for (double th : rep.thresholds) {
    const auto in = std::count_if(rep.distances.begin(), rep.distances.end(),
                                  [&](double d) { return d <= th; });
    rep.inlier_ratio.push_back(static_cast<double>(in) / static_cast<double>(landmarks.size()));
  }
  return rep;
}

void write_trajectory_report(const TrajectoryErrorReport& rep, const std::filesystem::path& csv,
                             const std::filesystem::path& json) {
  std::ofstream c(csv);
  if (!c) throw std::runtime_error("cannot write " + csv.string());
  c << "timestamp,error\n";
  for (std::size_t i = 0; i < rep.errors.size(); ++i) {
    c << format_double(rep.timestamps[i]) << ',' << format_double(rep.errors[i]) << '\n';
  }
  nlohmann::ordered_json j;
  j["ate_rmse"] = rep.ate_rmse;
  j["alignment"] = std::string(to_string(rep.alignment));
  j["poses"] = rep.errors.size();
  std::ofstream o(json);
  if (!o) throw std::runtime_error("cannot write " + json.string());
  o << j.dump(2) << '\n';
}

void write_reconstruction_report(const ReconstructionErrorReport& rep,
                                 const std::filesystem::path& csv, const std::filesystem::path& json) {
  std::ofstream c(csv);
  if (!c) throw std::runtime_error("cannot write " + csv.string());
  c << "threshold,inlier_ratio\n";
  for (std::size_t i = 0; i < rep.thresholds.size(); ++i) {
    c << format_double(rep.thresholds[i]) << ',' << format_double(rep.inlier_ratio[i]) << '\n';
  }
  nlohmann::ordered_json j;
  j["rmse"] = rep.rmse;
  j["landmarks"] = rep.distances.size();
  j["thresholds"] = rep.thresholds;
  j["inlier_ratio"] = rep.inlier_ratio;
  std::ofstream o(json);
  if (!o) throw std::runtime_error("cannot write " + json.string());
  o << j.dump(2) << '\n';
}

}  // namespace gmmloc
