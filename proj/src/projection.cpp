#include "gmmloc/projection.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spatial_grid.h"

namespace gmmloc {

namespace {

// Closed-form eigen decomposition of a symmetric 2x2 matrix; the rotation has
// det +1 and its columns are the (minor, major) axes.
void decompose_2x2(const Mat2& c, Mat2& axes, Vec2& values) {
  const double a = c(0, 0), b = 0.5 * (c(0, 1) + c(1, 0)), d = c(1, 1);
  const double mid = 0.5 * (a + d);
  const double r = std::hypot(0.5 * (a - d), b);
  const double big = mid + r;
  const double small = big > 0.0 ? (a * d - b * b) / big : mid - r;
  const double theta = 0.5 * std::atan2(2.0 * b, a - d);
  const double cs = std::cos(theta), sn = std::sin(theta);
  axes << sn, cs, -cs, sn;
  values = Vec2(small, big);
}

double mahalanobis2(const Vec2& d, const Mat2& cov) {
  const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
  return (cov(1, 1) * d.x() * d.x() - (cov(0, 1) + cov(1, 0)) * d.x() * d.y() +
          cov(0, 0) * d.y() * d.y()) /
         det;
}

bool sort_by_depth(const ProjectedComponent2D& a, const ProjectedComponent2D& b) {
  return a.depth < b.depth || (a.depth == b.depth && a.source_id < b.source_id);
}

// Repeated single-neighbour occlusion until no survivor is occluded. A
// member keeps its nearest neighbour while that neighbour survives, so after
// the first pass only members whose neighbour was removed are re-examined.
constexpr double kLn2 = 0.69314718055994530942;

void remove_occluded(const std::vector<ProjectedComponent2D>& items, std::vector<int> alive,
                     std::vector<ClassifiedProjection>& out, const ProjectionConfig& cfg) {
  if (alive.empty()) return;
  // Packed copy of what the neighbour search touches.
  struct Packed {
    double u, v, c00, c01, c11, half_log_det, spread;
  };
  const int n = static_cast<int>(alive.size());
  std::vector<Packed> pk(n);
  std::vector<Vec2> pts(n);
  std::vector<double> spread(n);
  for (int k = 0; k < n; ++k) {
    const ProjectedComponent2D& p = items[alive[k]];
    const Mat2& c = p.cov2d;
    const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
    pk[k] = {p.mean2d.x(), p.mean2d.y(), c(0, 0), c(0, 1), c(1, 1), 0.5 * std::log(det),
             p.singular_values2d(1)};
    pts[k] = p.mean2d;
    spread[k] = p.singular_values2d(1);
  }
  const detail::SpreadIndex<2> index(pts, spread);
  const double contain = cfg.occlusion_sigma * cfg.occlusion_sigma;
  std::vector<char> removed(n, 0);
  std::vector<int> nearest(n, -1);  // slot into `alive`
  auto exceeds = [](double bound, double best) { return bound > best * (1.0 + 1e-9) + 1e-12; };

  // Slots follow id order, so the lower slot wins ties.
  auto find_nearest = [&](int slot) {
    const Packed& a = pk[slot];
    double best = std::numeric_limits<double>::infinity();
    int best_slot = -1;
    auto consider = [&](int other) {
      if (other == slot || removed[other]) return;
      const Packed& b = pk[other];
      const double du = a.u - b.u, dv = a.v - b.v;
      const double d2 = du * du + dv * dv;
      // Lower bound: the Mahalanobis part is at least d2 / (4 (sa + sb)); by
      // Minkowski's determinant inequality the log-det part is at least
      // log cosh of half the log-det gap, itself >= |gap| / 2 - log 2.
      const double det_gap = std::max(0.0, 0.5 * std::abs(a.half_log_det - b.half_log_det) - kLn2);
      if (exceeds(d2 / (4.0 * (a.spread + b.spread)) + det_gap, best)) return;
      // 2-D Bhattacharyya distance on the pooled covariance.
      const double s00 = 0.5 * (a.c00 + b.c00), s01 = 0.5 * (a.c01 + b.c01),
                   s11 = 0.5 * (a.c11 + b.c11);
      const double det = s00 * s11 - s01 * s01;
      const double m = (s11 * du * du - 2.0 * s01 * du * dv + s00 * dv * dv) / det;
      const double d = 0.125 * m + 0.5 * std::log(det) - 0.5 * (a.half_log_det + b.half_log_det);
      if (d < best || (d == best && other < best_slot)) {
        best = d;
        best_slot = other;
      }
    };
    index.search(pts[slot], a.spread, consider, [&] { return best; });
    return best_slot;
  };
  auto occluded = [&](int slot) {
    const int nb = nearest[slot];
    if (nb < 0) return false;
    const ProjectedComponent2D& a = items[alive[slot]];
    const ProjectedComponent2D& b = items[alive[nb]];
    if (!(b.depth < a.depth)) return false;
    const Vec2 d = a.mean2d - b.mean2d;
    return mahalanobis2(d, a.cov2d) <= contain && mahalanobis2(d, b.cov2d) <= contain;
  };

  std::vector<int> todo(n);
  std::iota(todo.begin(), todo.end(), 0);
  while (!todo.empty()) {
    std::vector<int> hit;
    for (int slot : todo) {
      nearest[slot] = find_nearest(slot);
      if (occluded(slot)) hit.push_back(slot);
    }
    for (int slot : hit) {
      removed[slot] = 1;
      out[alive[slot]].reason = RejectReason::Occlusion;
    }
    todo.clear();
    if (hit.empty()) break;
    for (int slot = 0; slot < n; ++slot) {
      if (!removed[slot] && nearest[slot] >= 0 && removed[nearest[slot]]) todo.push_back(slot);
    }
  }
}

}  // namespace

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "none";
    case RejectReason::Frustum: return "frustum";
    case RejectReason::ViewAngle: return "view_angle";
    case RejectReason::Representativeness: return "representativeness";
    case RejectReason::Occlusion: return "occlusion";
  }
  return "unknown";
}

std::optional<ProjectedComponent2D> project_component(const GaussianComponent3D& g,
                                                      const Pose& pose,
                                                      const CameraIntrinsics& K) {
  const Vec3 mc = pose.transform(g.mean);
  if (!(mc.z() > 0.0)) return std::nullopt;
  const PointProjection pr = project_point(mc, K);
  const Mat3& R = pose.rotation();
  const Eigen::Matrix<double, 2, 3> JR = pr.jacobian * R;

  ProjectedComponent2D p;
  p.source_id = g.id;
  p.mean2d = pr.pixel;
  p.cov2d = JR * g.covariance * JR.transpose();
  p.cov2d(0, 1) = p.cov2d(1, 0) = 0.5 * (p.cov2d(0, 1) + p.cov2d(1, 0));
  p.depth = mc.z();
  decompose_2x2(p.cov2d, p.axes2d, p.singular_values2d);
  return p;
}

std::vector<ClassifiedProjection> classify_components(std::span<const ProjectedComponent2D> projected,
                                                      const Pose& pose, const GmmMap& map,
                                                      const CameraIntrinsics& K,
                                                      const ProjectionConfig& cfg) {
  std::vector<ClassifiedProjection> out;
  out.reserve(projected.size());
  const Vec3 center = pose.camera_center();
  const double cos_theta = std::cos(cfg.view_angle_deg * M_PI / 180.0);

  std::vector<ProjectedComponent2D> items;
  std::vector<int> alive;
  items.reserve(projected.size());
  for (const auto& p : projected) {
    ClassifiedProjection c{p, RejectReason::None};
    const double su = std::sqrt(std::max(p.cov2d(0, 0), 0.0));
    const double sv = std::sqrt(std::max(p.cov2d(1, 1), 0.0));
    const GaussianComponent3D& g = map.component(p.source_id);
    if (!(p.depth > 0.0) ||
        !K.contains(p.mean2d, cfg.frustum_margin_sigma * su, cfg.frustum_margin_sigma * sv)) {
      c.reason = RejectReason::Frustum;
    } else if (g.is_degenerate) {
      const Vec3 ray = center - g.mean;
      const double n = ray.norm();
      double cosang = n > 0.0 ? ray.dot(g.normal()) / n : 0.0;
      if (cfg.view_angle_absolute) cosang = std::abs(cosang);
      if (cosang < cos_theta) c.reason = RejectReason::ViewAngle;
    }
    if (c.reason == RejectReason::None && p.singular_values2d(1) < cfg.min_singular_px2) {
      c.reason = RejectReason::Representativeness;
    }
    if (c.reason == RejectReason::None) alive.push_back(static_cast<int>(items.size()));
    items.push_back(p);
    out.push_back(c);
  }

  // Occlusion is evaluated on id order for a deterministic result.
  std::sort(alive.begin(), alive.end(),
            [&](int a, int b) { return items[a].source_id < items[b].source_id; });
  remove_occluded(items, std::move(alive), out, cfg);
  return out;
}

std::vector<ProjectedComponent2D> filter_components(std::span<const ProjectedComponent2D> projected,
                                                    const Pose& pose, const GmmMap& map,
                                                    const CameraIntrinsics& K,
                                                    const ProjectionConfig& cfg) {
  std::vector<ProjectedComponent2D> out;
  for (const auto& c : classify_components(projected, pose, map, K, cfg)) {
    if (c.reason == RejectReason::None) out.push_back(c.projection);
  }
  std::sort(out.begin(), out.end(), sort_by_depth);
  return out;
}

std::vector<ProjectedComponent2D> project_map(const GmmMap& map, const Pose& pose,
                                              const CameraIntrinsics& K,
                                              const ProjectionConfig& cfg) {
  std::vector<ProjectedComponent2D> projected;
  projected.reserve(map.size());
  for (const auto& g : map.components()) {
    if (auto p = project_component(g, pose, K)) projected.push_back(*p);
  }
  return filter_components(projected, pose, map, K, cfg);
}

std::vector<ClassifiedProjection> project_map_classified(const GmmMap& map, const Pose& pose,
                                                         const CameraIntrinsics& K,
                                                         const ProjectionConfig& cfg) {
  std::vector<ProjectedComponent2D> projected;
  std::vector<ClassifiedProjection> out(map.size());
  for (const auto& g : map.components()) {
    out[g.id].projection.source_id = g.id;
    out[g.id].projection.depth = pose.transform(g.mean).z();
    out[g.id].reason = RejectReason::Frustum;
    if (auto p = project_component(g, pose, K)) projected.push_back(*p);
  }
  for (const auto& c : classify_components(projected, pose, map, K, cfg)) {
    out[c.projection.source_id] = c;
  }
  return out;
}

}  // namespace gmmloc
