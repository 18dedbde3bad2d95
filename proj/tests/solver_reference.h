#pragma once

// Synthetic BA problems and a dense Levenberg-Marquardt reference solver,
// shared by the optimizer tests and the acceptance runner.

#include <algorithm>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "gmmloc/optimizer.h"
#include "helpers.h"

namespace solver_ref {

using namespace gmmloc;

struct Synthetic {
  std::map<int, Pose> gt_poses;
  std::map<int, Vec3> gt_points;
  Problem problem;
};

// Keyframes strung along x looking down +z at a slab of points. The first
// `fixed` keyframes are held. Landmark ids start at 100.
inline Synthetic make_problem(int n_kf, int n_lm, int fixed, std::uint64_t seed, double pixel_noise = 1.0,
                       double pose_noise = 0.03, double point_noise = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-2.5, 2.5), uy(-1.5, 1.5), uz(4, 8);
  std::normal_distribution<double> n(0.0, 1.0);
  Synthetic s;
  Problem& p = s.problem;
  for (int k = 0; k < n_kf; ++k) {
    Vec6 xi;
    xi << 0.02 * n(rng), 0.02 * n(rng), 0.02 * n(rng), -0.3 * k + 0.6, 0.05 * n(rng), 0.05 * n(rng);
    s.gt_poses[k] = se3_exp(xi);
  }
  for (int i = 0; i < n_lm; ++i) s.gt_points[100 + i] = Vec3(ux(rng), uy(rng), uz(rng));
  for (const auto& [k, T] : s.gt_poses) {
    Pose init = T;
    if (k >= fixed) init = T * se3_exp(testutil::random_tangent(rng, pose_noise * 0.3, pose_noise));
    p.keyframes[k] = KeyframeNode{init, k < fixed};
  }
  for (const auto& [id, x] : s.gt_points) {
    int seen = 0;
    for (const auto& [k, T] : s.gt_poses) {
      if (!is_visible(x, T, p.camera, 20.0)) continue;
      Observation o;
      o.keyframe_id = k;
      o.landmark_id = id;
      o.pixel = project_point(T * x, p.camera).pixel + pixel_noise * ImagePoint(n(rng), n(rng));
      p.visual_edges.push_back({o, true});
      ++seen;
    }
    if (seen < 2) throw std::logic_error("landmark seen fewer than twice");
    p.landmarks[id] = x + point_noise * Vec3(n(rng), n(rng), n(rng));
  }
  return s;
}

// Dense Levenberg-Marquardt on the stacked residual vector, independent of
// the library's Schur-complement solver. Huber weights enter as IRLS
// factors, which has the same stationary points as the robust cost.
struct DenseReference {
  const Problem& base;
  std::vector<int> kf_ids, lm_ids;

  explicit DenseReference(const Problem& p) : base(p) {
    for (const auto& [k, n] : p.keyframes)
      if (!n.fixed) kf_ids.push_back(k);
    for (const auto& [id, x] : p.landmarks) lm_ids.push_back(id);
  }
  int dim() const { return 6 * static_cast<int>(kf_ids.size()) + 3 * static_cast<int>(lm_ids.size()); }

  Problem apply(const Problem& p, const Eigen::VectorXd& d) const {
    Problem q = p;
    for (std::size_t i = 0; i < kf_ids.size(); ++i)
      q.keyframes[kf_ids[i]].pose = q.keyframes[kf_ids[i]].pose.retract(d.segment<6>(6 * i));
    for (std::size_t j = 0; j < lm_ids.size(); ++j)
      q.landmarks[lm_ids[j]] += d.segment<3>(6 * kf_ids.size() + 3 * j);
    return q;
  }

  void linearize(const Problem& p, Eigen::MatrixXd& J, Eigen::VectorXd& r) const {
    std::vector<Eigen::VectorXd> rows_r;
    std::vector<Eigen::MatrixXd> rows_J;
    auto kf_col = [&](int k) {
      const auto it = std::find(kf_ids.begin(), kf_ids.end(), k);
      return it == kf_ids.end() ? -1 : 6 * static_cast<int>(it - kf_ids.begin());
    };
    auto lm_col = [&](int id) {
      const auto it = std::find(lm_ids.begin(), lm_ids.end(), id);
      return 6 * static_cast<int>(kf_ids.size()) + 3 * static_cast<int>(it - lm_ids.begin());
    };
    const double d2 = chi2_threshold(2, p.settings.outlier_confidence);
    for (const auto& e : p.visual_edges) {
      if (!e.active) continue;
      const auto res = reprojection_residual(p.landmarks.at(e.obs.landmark_id),
                                             p.keyframes.at(e.obs.keyframe_id).pose, e.obs, p.camera);
      if (!res.valid) throw std::logic_error("point behind a camera in the dense reference");
      const double w = p.settings.robust_visual ? std::sqrt(huber_weight(res.residual.squaredNorm(), d2)) : 1.0;
      Eigen::MatrixXd Jr = Eigen::MatrixXd::Zero(2, dim());
      if (int c = kf_col(e.obs.keyframe_id); c >= 0) Jr.block(0, c, 2, 6) = w * res.d_pose;
      Jr.block(0, lm_col(e.obs.landmark_id), 2, 3) = w * res.d_landmark;
      rows_r.push_back(w * res.residual);
      rows_J.push_back(Jr);
    }
    for (const auto& e : p.structure_edges) {
      if (!e.active) continue;
      const auto s = structure_residual(p.landmarks.at(e.assoc.landmark_id),
                                        p.map->component(e.assoc.component_id), e.assoc.sigma_str);
      Eigen::MatrixXd Jr = Eigen::MatrixXd::Zero(s.dim, dim());
      Jr.block(0, lm_col(e.assoc.landmark_id), s.dim, 3) = s.jacobian.topRows(s.dim);
      rows_r.push_back(s.residual.head(s.dim));
      rows_J.push_back(Jr);
    }
    for (const auto& e : p.prior_edges) {
      const auto pr = prior_pose_residual(p.keyframes.at(e.keyframe_id).pose, e.prior);
      Eigen::MatrixXd Jr = Eigen::MatrixXd::Zero(6, dim());
      if (int c = kf_col(e.keyframe_id); c >= 0) Jr.block(0, c, 6, 6) = std::sqrt(e.weight) * pr.jacobian;
      rows_r.push_back(std::sqrt(e.weight) * pr.residual);
      rows_J.push_back(Jr);
    }
    int m = 0;
    for (const auto& v : rows_r) m += static_cast<int>(v.size());
    J.resize(m, dim());
    r.resize(m);
    int at = 0;
    for (std::size_t i = 0; i < rows_r.size(); ++i) {
      const int h = static_cast<int>(rows_r[i].size());
      J.middleRows(at, h) = rows_J[i];
      r.segment(at, h) = rows_r[i];
      at += h;
    }
  }

  Problem solve(int iterations = 200) const {
    Problem p = base;
    double mu = -1.0;
    for (int it = 0; it < iterations; ++it) {
      Eigen::MatrixXd J;
      Eigen::VectorXd r;
      linearize(p, J, r);
      const Eigen::MatrixXd H = J.transpose() * J;
      const Eigen::VectorXd g = J.transpose() * r;
      if (mu < 0) mu = 1e-4 * H.diagonal().maxCoeff();
      if (g.lpNorm<Eigen::Infinity>() < 1e-13) break;
      const double c0 = evaluate_cost(p);
      bool moved = false;
      for (int tries = 0; tries < 40 && !moved; ++tries) {
        const Eigen::VectorXd d = (H + mu * Eigen::MatrixXd::Identity(dim(), dim())).ldlt().solve(-g);
        Problem q = apply(p, d);
        if (evaluate_cost(q) < c0) {
          p = q;
          mu = std::max(mu / 10.0, 1e-15);
          moved = true;
          if (d.norm() < 1e-13) break;
        } else {
          mu *= 10.0;
        }
      }
      if (!moved) break;
    }
    // Undamped polish: near the optimum cost comparisons drown in rounding,
    // Gauss-Newton steps do not need them.
    for (int it = 0; it < 20; ++it) {
      Eigen::MatrixXd J;
      Eigen::VectorXd r;
      linearize(p, J, r);
      const Eigen::VectorXd d = (J.transpose() * J).ldlt().solve(-J.transpose() * r);
      p = apply(p, d);
      if (d.norm() < 1e-15) break;
    }
    return p;
  }
};

inline double max_parameter_gap(const Problem& a, const Problem& b) {
  double gap = 0.0;
  for (const auto& [k, n] : a.keyframes)
    gap = std::max(gap, se3_log(n.pose.inverse() * b.keyframes.at(k).pose).cwiseAbs().maxCoeff());
  for (const auto& [id, x] : a.landmarks) gap = std::max(gap, (x - b.landmarks.at(id)).cwiseAbs().maxCoeff());
  return gap;
}

// Steps whose cost change is below rounding may be accepted on a gradient
// decrease, so equality is allowed up to 1e-13 relative.
inline bool accepted_costs_monotone(const SolverReport& r) {
  double last = r.initial_cost;
  for (const auto& it : r.history) {
    if (!it.accepted) continue;
    if (!(it.cost <= last * (1.0 + 1e-13))) return false;
    last = it.cost;
  }
  return true;
}

inline std::shared_ptr<const GmmMap> planes_near(const std::map<int, Vec3>& pts, int count, std::uint64_t seed,
                                          std::vector<StructureAssociation>& assoc) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<GaussianComponent3D> comps;
  int id = 0;
  for (const auto& [lm, x] : pts) {
    if (id == count) break;
    const Mat3 R = so3_exp(Vec3(0.3 * n(rng), 0.3 * n(rng), 0.3 * n(rng)));
    const Vec3 l = id % 3 == 0 ? Vec3(0.02, 0.05, 0.08) : Vec3(1e-9, 0.05, 0.08);
    comps.push_back(make_component(id, 1.0 / count, x + 0.03 * Vec3(n(rng), n(rng), n(rng)),
                                   R * l.asDiagonal() * R.transpose()));
    assoc.push_back({lm, id, 0.1});
    ++id;
  }
  return std::make_shared<const GmmMap>(comps);
}

}  // namespace solver_ref
