#include "gmmloc/pipeline.h"

#include <algorithm>
#include <fstream>
#include <set>

#include <json.hpp>

#include "gmmloc/errors.h"

namespace gmmloc {

void PipelineConfig::validate() const {
  if (!(sigma_str > 0.0)) throw ValidationError("pipeline: sigma_str must be positive");
  if (!(sigma_px > 0.0)) throw ValidationError("pipeline: sigma_px must be positive");
  if (window_size < 1) throw ValidationError("pipeline: window_size must be >= 1");
  if (min_observations < 0) throw ValidationError("pipeline: min_observations must be >= 0");
  if (!(min_parallax_deg >= 0.0)) throw ValidationError("pipeline: min_parallax_deg must be >= 0");
  if (!(prior_weight > 0.0)) throw ValidationError("pipeline: prior_weight must be positive");
  if (association.candidate_count < 1) throw ValidationError("pipeline: candidate_count must be >= 1");
  if (association.max_hops < 0) throw ValidationError("pipeline: max_hops must be >= 0");
  solver.validate();
}

LocalizationPipeline::LocalizationPipeline(std::shared_ptr<const GmmMap> map,
                                           const CameraIntrinsics& camera, PipelineConfig cfg)
    : map_(std::move(map)), camera_(camera), cfg_(std::move(cfg)) {
  cfg_.validate();
  camera_.validate();
  if (!map_) throw ValidationError("pipeline: map is required");
  cfg_.association.sigma_str = cfg_.sigma_str;
}

std::vector<std::pair<int, Vec3>> LocalizationPipeline::landmarks() const {
  std::vector<std::pair<int, Vec3>> out;
  for (const auto& [id, t] : tracks_) {
    if (t.triangulated && !t.removed) out.emplace_back(id, t.position);
  }
  return out;
}

std::vector<LandmarkView> LocalizationPipeline::views_of(const LandmarkTrack& t) const {
  std::vector<LandmarkView> views;
  views.reserve(t.observations.size());
  for (const auto& [kf, u] : t.observations) views.push_back({poses_[kf], u, cfg_.sigma_px});
  return views;
}

KeyframeReport LocalizationPipeline::process_keyframe(double timestamp, const Pose& pose_initial,
                                                      std::span<const SimObservation> observations) {
  const int kf = static_cast<int>(poses_.size());
  timestamps_.push_back(timestamp);
  poses_.push_back(pose_initial);
  if (kf == 0 && !cfg_.fix_first_keyframe) first_prior_ = pose_initial;

  KeyframeReport rep;
  rep.keyframe = kf;
  rep.timestamp = timestamp;
  rep.observations = static_cast<int>(observations.size());
  for (const SimObservation& o : observations) {
    LandmarkTrack& t = tracks_[o.landmark_id];
    if (!t.removed) t.observations.emplace_back(kf, o.pixel);
  }
  if (kf == 0) {
    rep.ba_skipped = true;
    rep.flag = "first_keyframe";
    return rep;
  }

  triangulate(kf, observations, rep);
  if (cfg_.structure_enabled) {
    const std::vector<ProjectedComponent2D> projections =
        project_map(*map_, pose_initial, camera_, cfg_.projection);
    rep.projected_components = static_cast<int>(projections.size());
    associate_landmarks(observations, projections, rep);
  }
  bundle_adjust(kf, observations, rep);
  return rep;
}

void LocalizationPipeline::triangulate(int kf, std::span<const SimObservation> obs,
                                       KeyframeReport& rep) {
  for (const SimObservation& o : obs) {
    LandmarkTrack& t = tracks_.at(o.landmark_id);
    if (t.triangulated || t.removed || t.observations.size() < 2) continue;
    for (const auto& [j, u] : t.observations) {
      if (j == kf) continue;
      if (ray_parallax_deg(u, poses_[j], o.pixel, poses_[kf], camera_) < cfg_.min_parallax_deg) continue;
      const std::optional<Vec3> x =
          try_triangulate_two_view(u, poses_[j], o.pixel, poses_[kf], camera_, cfg_.min_parallax_deg);
      if (!x) continue;
      const std::vector<LandmarkView> views = views_of(t);
      const StructureFit fit = opt_structure(views, nullptr, cfg_.sigma_str, *x, camera_);
      const double gate = chi2_threshold(2 * static_cast<int>(views.size()), cfg_.solver.outlier_confidence);
      if (!(fit.reproj_error < gate)) break;
      t.position = fit.position;
      t.triangulated = true;
      ++rep.triangulated;
      break;
    }
  }
}

void LocalizationPipeline::associate_landmarks(std::span<const SimObservation> obs,
                                               std::span<const ProjectedComponent2D> projections,
                                               KeyframeReport& rep) {
  AssociationConfig acfg = cfg_.association;
  acfg.sigma_str = cfg_.sigma_str;
  for (const SimObservation& o : obs) {
    LandmarkTrack& t = tracks_.at(o.landmark_id);
    if (!t.triangulated || t.removed || t.component || t.association_rejected) continue;
    ++rep.association_attempts;
    const std::vector<LandmarkView> views = views_of(t);
    const AssociationOutcome out =
        associate(o.pixel, views, t.position, projections, *map_, camera_, acfg);
    if (!out.success) continue;
    t.component = out.component_id;
    t.position = out.refined_position;
    ++rep.associated;
  }
}

void LocalizationPipeline::bundle_adjust(int kf, std::span<const SimObservation> obs,
                                         KeyframeReport& rep) {
  const int first_free = std::max(0, kf - cfg_.window_size + 1);
  auto is_free = [&](int i) { return i >= first_free && !(i == 0 && cfg_.fix_first_keyframe); };

  std::set<int> lm_ids;
  for (const auto& [id, t] : tracks_) {
    if (!t.triangulated || t.removed) continue;
    for (const auto& [j, u] : t.observations) {
      if (j >= first_free) {
        lm_ids.insert(id);
        break;
      }
    }
  }
  int current_obs = 0;
  for (const SimObservation& o : obs) current_obs += lm_ids.count(o.landmark_id) ? 1 : 0;
  if (current_obs < cfg_.min_observations) {
    rep.ba_skipped = true;
    rep.flag = "too_few_observations";
    return;
  }

  Problem p;
  p.map = map_;
  p.camera = camera_;
  p.settings = cfg_.solver;
  std::vector<std::pair<int, int>> origin;  // (landmark, keyframe) per visual edge
  for (int id : lm_ids) {
    const LandmarkTrack& t = tracks_.at(id);
    p.landmarks.emplace(id, t.position);
    for (const auto& [j, u] : t.observations) {
      p.keyframes.try_emplace(j, KeyframeNode{poses_[j], !is_free(j)});
      p.visual_edges.push_back({Observation{j, id, u, cfg_.sigma_px}, true});
      origin.emplace_back(id, j);
    }
    if (cfg_.structure_enabled && t.component) {
      p.structure_edges.push_back({StructureAssociation{id, *t.component, cfg_.sigma_str}, true});
    }
  }
  if (first_prior_ && is_free(0)) {
    p.keyframes.try_emplace(0, KeyframeNode{poses_[0], false});
    p.prior_edges.push_back({0, *first_prior_, cfg_.prior_weight, true});
  }
  rep.landmarks_in_window = static_cast<int>(p.landmarks.size());
  rep.visual_edges = static_cast<int>(p.visual_edges.size());
  rep.structure_edges = static_cast<int>(p.structure_edges.size());

  const std::vector<StructureEdge> structure_before = p.structure_edges;
  const BundleAdjustReport ba = joint_bundle_adjust(p);
  rep.round1 = ba.round1;
  rep.round2 = ba.round2;
  rep.deactivated_visual = static_cast<int>(ba.deactivated_visual.size());
  rep.deactivated_structure = static_cast<int>(ba.deactivated_structure.size());
  rep.removed_landmarks = static_cast<int>(ba.removed_landmarks.size());

  for (const auto& [j, node] : p.keyframes) {
    if (!node.fixed) poses_[j] = node.pose;
  }
  for (const auto& [id, x] : p.landmarks) tracks_.at(id).position = x;
  for (std::size_t e : ba.deactivated_visual) {
    const auto [id, j] = origin[e];
    auto& ob = tracks_.at(id).observations;
    std::erase_if(ob, [j = j](const auto& v) { return v.first == j; });
  }
  for (std::size_t e : ba.deactivated_structure) {
    LandmarkTrack& t = tracks_.at(structure_before[e].assoc.landmark_id);
    t.component.reset();
    t.association_rejected = true;
  }
  for (int id : ba.removed_landmarks) {
    LandmarkTrack& t = tracks_.at(id);
    t.removed = true;
    t.triangulated = false;
    t.component.reset();
  }
  last_structure_.clear();
  for (const auto& e : p.structure_edges) {
    if (e.active) last_structure_.push_back(e.assoc);
  }
}

RunResult run_sequence(const SequenceData& data, const PipelineConfig& cfg) {
  if (data.odom.empty()) throw ValidationError("sequence has no poses");
  if (data.observations.size() != data.odom.size()) {
    throw ValidationError("observation lists do not match the trajectory length");
  }
  auto map = std::make_shared<const GmmMap>(data.map);
  LocalizationPipeline pipe(map, data.camera, cfg);
  RunResult run;
  for (std::size_t k = 0; k < data.odom.size(); ++k) {
    Pose init = data.odom.poses[0];
    if (k > 0) {
      const Pose delta = data.odom.poses[k] * data.odom.poses[k - 1].inverse();
      init = (delta * pipe.pose(static_cast<int>(k) - 1)).normalized();
    }
    run.reports.push_back(pipe.process_keyframe(data.odom.timestamps[k], init, data.observations[k]));
  }
  run.estimate = pipe.trajectory();
  run.landmarks = pipe.landmarks();
  for (const auto& [id, t] : pipe.tracks()) {
    if (t.triangulated && !t.removed && t.component) run.associations.emplace(id, *t.component);
  }
  return run;
}

void write_run(const RunResult& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tum(run.estimate, dir / "estimate.tum");
  {
    std::ofstream lm(dir / "landmarks_est.csv");
    if (!lm) throw std::runtime_error("cannot write landmarks in " + dir.string());
    lm << "landmark_id,x,y,z,component_id\n";
    for (const auto& [id, x] : run.landmarks) {
      const auto it = run.associations.find(id);
      lm << id << ',' << format_double(x.x()) << ',' << format_double(x.y()) << ','
         << format_double(x.z()) << ',' << (it == run.associations.end() ? -1 : it->second) << '\n';
    }
  }

  std::ofstream rep(dir / "report.jsonl");
  std::ofstream sol(dir / "solver.jsonl");
  if (!rep || !sol) throw std::runtime_error("cannot write reports in " + dir.string());
  for (const KeyframeReport& r : run.reports) {
    nlohmann::ordered_json j;
    j["keyframe"] = r.keyframe;
    j["timestamp"] = r.timestamp;
    j["observations"] = r.observations;
    j["projected_components"] = r.projected_components;
    j["triangulated"] = r.triangulated;
    j["association_attempts"] = r.association_attempts;
    j["associated"] = r.associated;
    j["landmarks_in_window"] = r.landmarks_in_window;
    j["visual_edges"] = r.visual_edges;
    j["structure_edges"] = r.structure_edges;
    j["ba_skipped"] = r.ba_skipped;
    j["flag"] = r.flag;
    j["deactivated_visual"] = r.deactivated_visual;
    j["deactivated_structure"] = r.deactivated_structure;
    j["removed_landmarks"] = r.removed_landmarks;
    int round = 1;
    for (const SolverReport* s : {&r.round1, &r.round2}) {
      const std::string key = "round" + std::to_string(round);
      j[key] = {{"iterations", s->iterations},
                {"initial_cost", s->initial_cost},
                {"final_cost", s->final_cost},
                {"termination", std::string(to_string(s->reason))}};
      for (const IterationRecord& it : s->history) {
        nlohmann::ordered_json line;
        line["keyframe"] = r.keyframe;
        line["round"] = round;
        line["iteration"] = it.iteration;
        line["cost"] = it.cost;
        line["damping"] = it.damping;
        line["accepted"] = it.accepted;
        sol << line.dump() << '\n';
      }
      ++round;
    }
    rep << j.dump() << '\n';
  }
}

}  // namespace gmmloc
