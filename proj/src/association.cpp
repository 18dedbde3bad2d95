#include "gmmloc/association.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace gmmloc {

namespace {

double projected_mahalanobis(const ImagePoint& u, const ProjectedComponent2D& p) {
  const Vec2 d = u - p.mean2d;
  const Mat2& c = p.cov2d;
  const double det = c(0, 0) * c(1, 1) - c(0, 1) * c(1, 0);
  if (!(det > 0.0)) return std::numeric_limits<double>::infinity();
  return (c(1, 1) * d.x() * d.x() - 2.0 * c(0, 1) * d.x() * d.y() + c(0, 0) * d.y() * d.y()) / det;
}

struct LinearSystem {
  Mat3 H = Mat3::Zero();
  Vec3 g = Vec3::Zero();
  double cost = 0.0;
  bool valid = true;
};

LinearSystem linearize(std::span<const LandmarkView> views, const GaussianComponent3D* comp,
                       double sigma_str, const Vec3& x, const CameraIntrinsics& K) {
  LinearSystem sys;
  for (const auto& v : views) {
    const Observation obs{-1, -1, v.pixel, v.sigma};
    const auto r = reprojection_residual(x, v.pose, obs, K);
    if (!r.valid) {
      sys.valid = false;
      sys.cost = std::numeric_limits<double>::infinity();
      return sys;
    }
    sys.H += r.d_landmark.transpose() * r.d_landmark;
    sys.g += r.d_landmark.transpose() * r.residual;
    sys.cost += r.residual.squaredNorm();
  }
  if (comp) {
    const auto s = structure_residual(x, *comp, sigma_str);
    const auto J = s.jacobian.topRows(s.dim);
    sys.H += J.transpose() * J;
    sys.g += J.transpose() * s.residual.head(s.dim);
    sys.cost += s.squared_norm();
  }
  return sys;
}

double total_cost(std::span<const LandmarkView> views, const GaussianComponent3D* comp,
                  double sigma_str, const Vec3& x, const CameraIntrinsics& K) {
  double c = visual_cost(views, x, K);
  if (comp) c += structure_residual(x, *comp, sigma_str).squared_norm();
  return c;
}

}  // namespace

CandidateSet candidates_from_projections(const ImagePoint& u,
                                         std::span<const ProjectedComponent2D> projections, int k,
                                         int landmark_id) {
  CandidateSet out;
  out.landmark_id = landmark_id;
  std::vector<std::pair<double, int>> scored;
  scored.reserve(projections.size());
  for (const auto& p : projections) scored.emplace_back(projected_mahalanobis(u, p), p.source_id);
  const std::size_t n = std::min<std::size_t>(std::max(k, 0), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + n, scored.end());
  for (std::size_t i = 0; i < n; ++i) out.candidates.push_back(scored[i].second);
  return out;
}

double visual_cost(std::span<const LandmarkView> views, const Vec3& x, const CameraIntrinsics& K) {
  double c = 0.0;
  for (const auto& v : views) {
    const Vec3 pc = v.pose.transform(x);
    if (!(pc.z() > 0.0)) return std::numeric_limits<double>::infinity();
    const Vec2 u(K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy);
    c += ((v.pixel - u) / v.sigma).squaredNorm();
  }
  return c;
}

StructureFit opt_structure(std::span<const LandmarkView> views,
                           const GaussianComponent3D* component, double sigma_str,
                           const Vec3& x_init, const CameraIntrinsics& K,
                           const StructureFitConfig& cfg) {
  StructureFit fit;
  fit.position = x_init;
  LinearSystem sys = linearize(views, component, sigma_str, x_init, K);
  if (!sys.valid) {
    fit.reproj_error = std::numeric_limits<double>::infinity();
    return fit;
  }

  double lambda = 1e-4 * std::max(sys.H.diagonal().maxCoeff(), 1e-12);
  Vec3 x = x_init;
  while (fit.iterations < cfg.max_iterations) {
    if (sys.cost == 0.0 || sys.g.lpNorm<Eigen::Infinity>() < 1e-14) {
      fit.converged = true;
      break;
    }
    ++fit.iterations;
    const Vec3 dx = (sys.H + lambda * Mat3::Identity()).ldlt().solve(-sys.g);
    if (!dx.allFinite()) break;
    const Vec3 x_new = x + dx;
    const double cost_new = total_cost(views, component, sigma_str, x_new, K);
    if (cost_new < sys.cost) {
      const double rel = (sys.cost - cost_new) / sys.cost;
      x = x_new;
      sys = linearize(views, component, sigma_str, x, K);
      lambda = std::max(lambda / 10.0, 1e-12);
      if (rel < cfg.cost_tolerance || dx.norm() < cfg.step_tolerance) {
        fit.converged = true;
        break;
      }
    } else {
      lambda *= 10.0;
      if (lambda > cfg.max_damping) {
        // No descent possible from here: a stationary point up to round-off.
        fit.converged = dx.norm() < 1e-8;
        break;
      }
    }
  }
  fit.position = x;
  fit.reproj_error = visual_cost(views, x, K);
  return fit;
}

std::pair<double, int> support_distance(const Vec3& x, const GaussianComponent3D& g) {
  if (!g.is_degenerate) return {(x - g.mean).dot(g.information * (x - g.mean)), 3};
  const Vec3 d = x - g.mean;
  double s = 0.0;
  for (int i = 1; i < 3; ++i) {
    const double c = g.axes.col(i).dot(d);
    s += c * c / g.singular_values[i];
  }
  return {s, 2};
}

AssociationOutcome associate(const ImagePoint& u, std::span<const LandmarkView> views,
                             const Vec3& x_init, std::span<const ProjectedComponent2D> projections,
                             const GmmMap& map, const CameraIntrinsics& K,
                             const AssociationConfig& cfg) {
  AssociationOutcome fail;
  fail.refined_position = x_init;
  fail.final_reproj_error = visual_cost(views, x_init, K);
  if (views.empty()) return fail;

  const double gate = chi2_threshold(2 * static_cast<int>(views.size()), cfg.confidence);
  auto refine = [&](const GaussianComponent3D& g, const Vec3& x0) {
    if (!cfg.structure_enabled) {
      StructureFit f;
      f.converged = true;
      f.position = x0;
      f.reproj_error = visual_cost(views, x0, K);
      return f;
    }
    return opt_structure(views, &g, cfg.sigma_str, x0, K, cfg.solver);
  };
  auto score = [&](const Vec3& x, const GaussianComponent3D& g) {
    double ll = log_likelihood(x, g);
    if (cfg.use_mixture_weights) ll += std::log(g.weight);
    return ll;
  };

  // Phase 1: best candidate by post-refinement reprojection error.
  const CandidateSet cands = candidates_from_projections(u, projections, cfg.candidate_count);
  int best_id = -1;
  StructureFit best_fit;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (int id : cands.candidates) {
    const GaussianComponent3D& g = map.component(id);
    const StructureFit f = refine(g, x_init);
    if (!(f.reproj_error < gate)) continue;
    const double ll = score(f.position, g);
    bool take = false;
    if (best_id < 0 || f.reproj_error < best_fit.reproj_error - 1e-9) {
      take = true;
    } else if (std::abs(f.reproj_error - best_fit.reproj_error) <= 1e-9) {
      take = ll > best_ll || (ll == best_ll && id < best_id);
    }
    if (take) {
      best_id = id;
      best_fit = f;
      best_ll = ll;
    }
  }
  if (best_id < 0) return fail;

  // Phase 2: climb the neighbour graph until the component is a local
  // likelihood maximum at the refined position.
  int current = best_id;
  StructureFit fit = best_fit;
  std::set<int> visited{current};
  int hops = 0;
  for (;;) {
    const double here = score(fit.position, map.component(current));
    int next = -1;
    double next_ll = here;
    for (int h : map.component(current).neighbors) {
      const double ll = score(fit.position, map.component(h));
      if (ll > next_ll || (ll == next_ll && next >= 0 && h < next)) {
        next_ll = ll;
        next = h;
      }
    }
    if (next < 0) break;
    if (hops >= cfg.max_hops || visited.count(next)) return fail;
    const StructureFit f = refine(map.component(next), fit.position);
    if (!f.converged || !(f.reproj_error < gate)) return fail;
    current = next;
    fit = f;
    visited.insert(current);
    ++hops;
  }

  if (cfg.support_gate && cfg.structure_enabled) {
    const auto [d2, dof] = support_distance(fit.position, map.component(current));
    if (!(d2 <= chi2_threshold(dof, cfg.confidence))) return fail;
  }

  AssociationOutcome out;
  out.success = true;
  out.refined_position = fit.position;
  out.component_id = current;
  out.final_reproj_error = fit.reproj_error;
  out.hops = hops;
  return out;
}

}  // namespace gmmloc
