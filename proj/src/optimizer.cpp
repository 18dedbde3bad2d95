#include "gmmloc/optimizer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

using Mat63 = Eigen::Matrix<double, 6, 3>;

struct Indexing {
  std::map<int, int> pose;      // free keyframe id -> block index
  std::map<int, int> landmark;  // landmark id -> block index
};

Indexing make_indexing(const Problem& p) {
  Indexing ix;
  for (const auto& [id, kf] : p.keyframes) {
    if (!kf.fixed) ix.pose.emplace(id, static_cast<int>(ix.pose.size()));
  }
  for (const auto& [id, x] : p.landmarks) ix.landmark.emplace(id, static_cast<int>(ix.landmark.size()));
  return ix;
}

struct Kernels {
  double visual = std::numeric_limits<double>::infinity();
  double structure[4] = {0, 0, 0, 0};  // indexed by dof
};

Kernels make_kernels(const SolverConfig& s) {
  Kernels k;
  if (s.robust_visual) k.visual = chi2_threshold(2, s.outlier_confidence);
  for (int d = 1; d <= 3; ++d) {
    k.structure[d] = s.robust_structure ? chi2_threshold(d, s.outlier_confidence)
                                        : std::numeric_limits<double>::infinity();
  }
  return k;
}

struct RobustTerm {
  double cost;
  double weight;
};

RobustTerm robust(double s, double delta2) {
  if (!std::isfinite(delta2)) return {s, 1.0};
  return {huber_cost(s, delta2), huber_weight(s, delta2)};
}

struct NormalEquations {
  Eigen::MatrixXd Hpp;
  Eigen::VectorXd gp;
  std::vector<Mat3> Hll;
  std::vector<Vec3> gl;
  std::vector<std::vector<std::pair<int, Mat63>>> Hpl;  // per landmark: (pose block, block)
  double cost = 0.0;
  int skipped = 0;

  double max_diagonal() const {
    double m = 0.0;
    if (Hpp.size()) m = Hpp.diagonal().maxCoeff();
    for (const auto& h : Hll) m = std::max(m, h.diagonal().maxCoeff());
    return m;
  }
  double gradient_inf_norm() const {
    double m = gp.size() ? gp.lpNorm<Eigen::Infinity>() : 0.0;
    for (const auto& g : gl) m = std::max(m, g.lpNorm<Eigen::Infinity>());
    return m;
  }
};

void add_pose_landmark(std::vector<std::pair<int, Mat63>>& blocks, int pose, const Mat63& b) {
  for (auto& [i, m] : blocks) {
    if (i == pose) {
      m += b;
      return;
    }
  }
  blocks.emplace_back(pose, b);
}

// Ordered single pass over the edges; with `jacobians` false only the cost
// and the number of skipped (behind camera) visual edges are computed.
NormalEquations assemble(const Problem& p, const Indexing& ix, const Kernels& kern, bool jacobians) {
  NormalEquations ne;
  const int np = static_cast<int>(ix.pose.size());
  const int nl = static_cast<int>(ix.landmark.size());
  if (jacobians) {
    ne.Hpp = Eigen::MatrixXd::Zero(6 * np, 6 * np);
    ne.gp = Eigen::VectorXd::Zero(6 * np);
    ne.Hll.assign(nl, Mat3::Zero());
    ne.gl.assign(nl, Vec3::Zero());
    ne.Hpl.assign(nl, {});
  }

  for (const auto& e : p.visual_edges) {
    if (!e.active) continue;
    const auto kf = p.keyframes.find(e.obs.keyframe_id);
    const auto lm = p.landmarks.find(e.obs.landmark_id);
    const auto r = reprojection_residual(lm->second, kf->second.pose, e.obs, p.camera);
    if (!r.valid) {
      ++ne.skipped;
      continue;
    }
    const RobustTerm t = robust(r.residual.squaredNorm(), kern.visual);
    ne.cost += 0.5 * t.cost;
    if (!jacobians) continue;
    const int j = ix.landmark.at(e.obs.landmark_id);
    ne.Hll[j] += t.weight * r.d_landmark.transpose() * r.d_landmark;
    ne.gl[j] += t.weight * r.d_landmark.transpose() * r.residual;
    if (!kf->second.fixed) {
      const int i = ix.pose.at(e.obs.keyframe_id);
      ne.Hpp.block<6, 6>(6 * i, 6 * i) += t.weight * r.d_pose.transpose() * r.d_pose;
      ne.gp.segment<6>(6 * i) += t.weight * r.d_pose.transpose() * r.residual;
      add_pose_landmark(ne.Hpl[j], i, t.weight * r.d_pose.transpose() * r.d_landmark);
    }
  }

  for (const auto& e : p.structure_edges) {
    if (!e.active) continue;
    const Vec3& x = p.landmarks.at(e.assoc.landmark_id);
    const auto s = structure_residual(x, p.map->component(e.assoc.component_id), e.assoc.sigma_str);
    const RobustTerm t = robust(s.squared_norm(), kern.structure[s.dim]);
    ne.cost += 0.5 * t.cost;
    if (!jacobians) continue;
    const int j = ix.landmark.at(e.assoc.landmark_id);
    const auto J = s.jacobian.topRows(s.dim);
    ne.Hll[j] += t.weight * J.transpose() * J;
    ne.gl[j] += t.weight * J.transpose() * s.residual.head(s.dim);
  }

  for (const auto& e : p.prior_edges) {
    if (!e.active) continue;
    const KeyframeNode& kf = p.keyframes.at(e.keyframe_id);
    const PriorResidual pr = prior_pose_residual(kf.pose, e.prior);
    ne.cost += 0.5 * e.weight * pr.residual.squaredNorm();
    if (!jacobians || kf.fixed) continue;
    const int i = ix.pose.at(e.keyframe_id);
    ne.Hpp.block<6, 6>(6 * i, 6 * i) += e.weight * pr.jacobian.transpose() * pr.jacobian;
    ne.gp.segment<6>(6 * i) += e.weight * pr.jacobian.transpose() * pr.residual;
  }
  return ne;
}

struct Step {
  Eigen::VectorXd poses;
  std::vector<Vec3> landmarks;
  double norm() const {
    double s = poses.squaredNorm();
    for (const auto& v : landmarks) s += v.squaredNorm();
    return std::sqrt(s);
  }
};

// Solves (H + mu I) delta = -g by eliminating the 3x3 landmark blocks.
std::optional<Step> solve_damped(const NormalEquations& ne, double mu) {
  const Eigen::Index n = ne.gp.size();
  const std::size_t nl = ne.Hll.size();
  Eigen::MatrixXd S = ne.Hpp;
  S.diagonal().array() += mu;
  Eigen::VectorXd rhs = -ne.gp;

  std::vector<Mat3> inv(nl);
  for (std::size_t j = 0; j < nl; ++j) {
    const Mat3 C = ne.Hll[j] + mu * Mat3::Identity();
    Eigen::LDLT<Mat3> ldlt(C);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) return std::nullopt;
    inv[j] = ldlt.solve(Mat3::Identity());
    const auto& blocks = ne.Hpl[j];
    for (const auto& [a, Wa] : blocks) {
      const Mat63 WaC = Wa * inv[j];
      rhs.segment<6>(6 * a) += WaC * ne.gl[j];
      for (const auto& [b, Wb] : blocks) S.block<6, 6>(6 * a, 6 * b) -= WaC * Wb.transpose();
    }
  }

  Step step;
  step.poses = Eigen::VectorXd::Zero(n);
  if (n > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().array() > 0.0).all()) return std::nullopt;
    step.poses = ldlt.solve(rhs);
    if (!step.poses.allFinite()) return std::nullopt;
  }
  step.landmarks.resize(nl);
  for (std::size_t j = 0; j < nl; ++j) {
    Vec3 r = -ne.gl[j];
    for (const auto& [a, Wa] : ne.Hpl[j]) r -= Wa.transpose() * step.poses.segment<6>(6 * a);
    step.landmarks[j] = inv[j] * r;
    if (!step.landmarks[j].allFinite()) return std::nullopt;
  }
  return step;
}

void apply_step(Problem& p, const Indexing& ix, const Step& step) {
  for (const auto& [id, i] : ix.pose) {
    KeyframeNode& kf = p.keyframes.at(id);
    kf.pose = kf.pose.retract(step.poses.segment<6>(6 * i));
  }
  for (const auto& [id, j] : ix.landmark) p.landmarks.at(id) += step.landmarks[j];
}

struct Snapshot {
  std::vector<Pose> poses;
  std::vector<Vec3> landmarks;
};

Snapshot snapshot(const Problem& p, const Indexing& ix) {
  Snapshot s;
  for (const auto& [id, i] : ix.pose) s.poses.push_back(p.keyframes.at(id).pose);
  for (const auto& [id, j] : ix.landmark) s.landmarks.push_back(p.landmarks.at(id));
  return s;
}

void restore(Problem& p, const Indexing& ix, const Snapshot& s) {
  for (const auto& [id, i] : ix.pose) p.keyframes.at(id).pose = s.poses[i];
  for (const auto& [id, j] : ix.landmark) p.landmarks.at(id) = s.landmarks[j];
}

}  // namespace

void SolverConfig::validate() const {
  if (max_iterations < 0) throw ValidationError("solver: max_iterations must be >= 0");
  if (!(initial_damping_scale > 0.0)) throw ValidationError("solver: damping must be positive");
  if (!(damping_up > 1.0) || !(damping_down > 1.0)) {
    throw ValidationError("solver: damping factors must exceed 1");
  }
  if (!(cost_tolerance > 0.0) || !(parameter_tolerance > 0.0) || !(gradient_tolerance > 0.0)) {
    throw ValidationError("solver: tolerances must be positive");
  }
  if (!(outlier_confidence > 0.0 && outlier_confidence < 1.0)) {
    throw ValidationError("solver: outlier confidence must lie in (0, 1)");
  }
}

int Problem::free_keyframe_count() const {
  return static_cast<int>(std::count_if(keyframes.begin(), keyframes.end(),
                                        [](const auto& kv) { return !kv.second.fixed; }));
}

void validate_problem(const Problem& p) {
  p.settings.validate();
  p.camera.validate();
  for (std::size_t i = 0; i < p.visual_edges.size(); ++i) {
    const Observation& o = p.visual_edges[i].obs;
    const std::string name = "visual edge " + std::to_string(i);
    if (!p.keyframes.count(o.keyframe_id)) {
      throw ValidationError(name + " references missing keyframe " + std::to_string(o.keyframe_id));
    }
    if (!p.landmarks.count(o.landmark_id)) {
      throw ValidationError(name + " references missing landmark " + std::to_string(o.landmark_id));
    }
    if (!(o.sigma > 0.0) || !o.pixel.allFinite()) throw ValidationError(name + " has invalid pixel or sigma");
  }
  for (std::size_t i = 0; i < p.structure_edges.size(); ++i) {
    const StructureAssociation& a = p.structure_edges[i].assoc;
    const std::string name = "structure edge " + std::to_string(i);
    if (!p.landmarks.count(a.landmark_id)) {
      throw ValidationError(name + " references missing landmark " + std::to_string(a.landmark_id));
    }
    if (!p.map || a.component_id < 0 || static_cast<std::size_t>(a.component_id) >= p.map->size()) {
      throw ValidationError(name + " references missing component " + std::to_string(a.component_id));
    }
    if (!(a.sigma_str > 0.0)) throw ValidationError(name + " has non-positive sigma_str");
  }
  bool prior = false;
  for (std::size_t i = 0; i < p.prior_edges.size(); ++i) {
    const PriorEdge& e = p.prior_edges[i];
    if (!p.keyframes.count(e.keyframe_id)) {
      throw ValidationError("prior edge " + std::to_string(i) + " references missing keyframe " +
                            std::to_string(e.keyframe_id));
    }
    if (!(e.weight > 0.0)) throw ValidationError("prior edge " + std::to_string(i) + " has non-positive weight");
    prior = prior || e.active;
  }
  const bool fixed = std::any_of(p.keyframes.begin(), p.keyframes.end(),
                                 [](const auto& kv) { return kv.second.fixed; });
  if (!fixed && !prior) throw ValidationError("gauge not fixed: no fixed keyframe and no prior edge");
}

Problem build_problem(std::map<int, KeyframeNode> keyframes, std::map<int, Vec3> landmarks,
                      const std::vector<Observation>& observations,
                      const std::vector<StructureAssociation>& associations,
                      std::vector<PriorEdge> priors, std::shared_ptr<const GmmMap> map,
                      const CameraIntrinsics& camera, const SolverConfig& settings) {
  Problem p;
  p.keyframes = std::move(keyframes);
  p.landmarks = std::move(landmarks);
  p.visual_edges.reserve(observations.size());
  for (const auto& o : observations) p.visual_edges.push_back({o, true});
  for (const auto& a : associations) p.structure_edges.push_back({a, true});
  p.prior_edges = std::move(priors);
  p.map = std::move(map);
  p.camera = camera;
  p.settings = settings;
  validate_problem(p);
  return p;
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::CostTolerance: return "cost_tolerance";
    case Termination::ParameterTolerance: return "parameter_tolerance";
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::DampingExhausted: return "damping_exhausted";
    case Termination::NonFinite: return "non_finite";
  }
  return "unknown";
}

double evaluate_cost(const Problem& problem) {
  return assemble(problem, make_indexing(problem), make_kernels(problem.settings), false).cost;
}

Eigen::VectorXd evaluate_gradient(const Problem& problem) {
  const Indexing ix = make_indexing(problem);
  const NormalEquations ne = assemble(problem, ix, make_kernels(problem.settings), true);
  Eigen::VectorXd g(ne.gp.size() + 3 * static_cast<Eigen::Index>(ne.gl.size()));
  g.head(ne.gp.size()) = ne.gp;
  for (std::size_t j = 0; j < ne.gl.size(); ++j) g.segment<3>(ne.gp.size() + 3 * j) = ne.gl[j];
  return g;
}

SolverReport lm_solve(Problem& p) {
  const SolverConfig& cfg = p.settings;
  const Indexing ix = make_indexing(p);
  const Kernels kern = make_kernels(cfg);

  SolverReport rep;
  for (const auto& [id, j] : ix.landmark) {
    if (!p.landmarks.at(id).allFinite()) {
      rep.initial_cost = rep.final_cost = std::numeric_limits<double>::quiet_NaN();
      rep.reason = Termination::NonFinite;
      rep.diagnostic = "landmark " + std::to_string(id) + " is not finite";
      return rep;
    }
  }
  for (const auto& [id, i] : ix.pose) {
    const Pose& T = p.keyframes.at(id).pose;
    if (!T.rotation().allFinite() || !T.translation().allFinite()) {
      rep.initial_cost = rep.final_cost = std::numeric_limits<double>::quiet_NaN();
      rep.reason = Termination::NonFinite;
      rep.diagnostic = "keyframe " + std::to_string(id) + " pose is not finite";
      return rep;
    }
  }
  NormalEquations ne = assemble(p, ix, kern, true);
  rep.initial_cost = rep.final_cost = ne.cost;
  if (!std::isfinite(ne.cost)) {
    rep.reason = Termination::NonFinite;
    rep.diagnostic = "initial cost is not finite";
    return rep;
  }

  double mu = cfg.initial_damping_scale * ne.max_diagonal();
  if (!(mu > 0.0)) mu = cfg.initial_damping_scale;
  constexpr double kMaxDamping = 1e32;
  constexpr double kCostResolution = 1e-13;

  rep.reason = Termination::MaxIterations;
  while (rep.iterations < cfg.max_iterations) {
    if (ne.gradient_inf_norm() < cfg.gradient_tolerance) {
      rep.reason = Termination::GradientTolerance;
      break;
    }
    ++rep.iterations;

    std::optional<Step> step;
    for (int attempt = 0; attempt <= cfg.max_solve_retries; ++attempt) {
      step = solve_damped(ne, mu);
      if (step) break;
      mu *= cfg.damping_up;
    }
    if (!step) {
      rep.reason = Termination::DampingExhausted;
      rep.diagnostic = "reduced system singular after retries";
      break;
    }

    const Snapshot before = snapshot(p, ix);
    apply_step(p, ix, *step);
    const NormalEquations trial = assemble(p, ix, kern, false);
    const double step_norm = step->norm();
    const bool admissible = std::isfinite(trial.cost) && trial.skipped <= ne.skipped;
    bool better = admissible && trial.cost < ne.cost;
    bool tie = false;
    std::optional<NormalEquations> trial_full;
    if (!better && admissible && trial.cost <= ne.cost * (1.0 + kCostResolution)) {
      // The change is lost in the rounding of the cost sum; near the optimum
      // the gradient is the only usable signal.
      trial_full = assemble(p, ix, kern, true);
      tie = better = trial_full->gradient_inf_norm() < ne.gradient_inf_norm();
    }
    rep.history.push_back({rep.iterations, trial.cost, mu, better});

    if (better) {
      const double rel = tie ? 1.0 : (ne.cost - trial.cost) / ne.cost;
      ne = trial_full ? std::move(*trial_full) : assemble(p, ix, kern, true);
      mu = std::max(mu / cfg.damping_down, std::numeric_limits<double>::min());
      if (rel < cfg.cost_tolerance) {
        rep.reason = Termination::CostTolerance;
        break;
      }
      if (step_norm < cfg.parameter_tolerance) {
        rep.reason = Termination::ParameterTolerance;
        break;
      }
    } else {
      restore(p, ix, before);
      if (step_norm < cfg.parameter_tolerance) {
        rep.reason = Termination::ParameterTolerance;
        break;
      }
      mu *= cfg.damping_up;
      if (mu > kMaxDamping) {
        rep.reason = Termination::DampingExhausted;
        rep.diagnostic = "damping exceeded limit without a descent step";
        break;
      }
    }
  }
  rep.final_cost = ne.cost;
  return rep;
}

BundleAdjustReport joint_bundle_adjust(Problem& p) {
  validate_problem(p);
  BundleAdjustReport rep;
  rep.round1 = lm_solve(p);

  const double conf = p.settings.outlier_confidence;
  const double gate_visual = chi2_threshold(2, conf);
  for (std::size_t i = 0; i < p.visual_edges.size(); ++i) {
    VisualEdge& e = p.visual_edges[i];
    if (!e.active) continue;
    const auto r = reprojection_residual(p.landmarks.at(e.obs.landmark_id),
                                         p.keyframes.at(e.obs.keyframe_id).pose, e.obs, p.camera);
    if (!r.valid || !(r.residual.squaredNorm() <= gate_visual)) {
      e.active = false;
      rep.deactivated_visual.push_back(i);
    }
  }
  for (std::size_t i = 0; i < p.structure_edges.size(); ++i) {
    StructureEdge& e = p.structure_edges[i];
    if (!e.active) continue;
    const auto s = structure_residual(p.landmarks.at(e.assoc.landmark_id),
                                      p.map->component(e.assoc.component_id), e.assoc.sigma_str);
    if (!(s.squared_norm() <= chi2_threshold(s.dim, conf))) {
      e.active = false;
      rep.deactivated_structure.push_back(i);
    }
  }

  std::map<int, int> support;
  for (const auto& [id, x] : p.landmarks) support[id] = 0;
  for (const auto& e : p.visual_edges) {
    if (e.active) ++support[e.obs.landmark_id];
  }
  for (const auto& [id, n] : support) {
    if (n >= 2) continue;
    rep.removed_landmarks.push_back(id);
    p.landmarks.erase(id);
  }
  if (!rep.removed_landmarks.empty()) {
    auto removed = [&](int id) {
      return std::binary_search(rep.removed_landmarks.begin(), rep.removed_landmarks.end(), id);
    };
    for (auto& e : p.visual_edges) {
      if (removed(e.obs.landmark_id)) e.active = false;
    }
    for (auto& e : p.structure_edges) {
      if (removed(e.assoc.landmark_id)) e.active = false;
    }
    // Edges of removed landmarks are dropped so the problem stays consistent
    // with its node set. Reported indices refer to the lists before this.
    std::erase_if(p.visual_edges, [&](const VisualEdge& e) { return removed(e.obs.landmark_id); });
    std::erase_if(p.structure_edges, [&](const StructureEdge& e) { return removed(e.assoc.landmark_id); });
  }

  rep.round2 = lm_solve(p);
  return rep;
}

std::string to_jsonl(const SolverReport& report) {
  std::ostringstream os;
  for (const auto& r : report.history) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["cost"] = r.cost;
    j["damping"] = r.damping;
    j["accepted"] = r.accepted;
    os << j.dump() << '\n';
  }
  return os.str();
}

}  // namespace gmmloc
