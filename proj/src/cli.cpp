#include "gmmloc/cli.h"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gmmloc/errors.h"
#include "gmmloc/evaluation.h"
#include "gmmloc/map_builder.h"
#include "gmmloc/projection.h"
#include "gmmloc/sequence_io.h"
#include "gmmloc/sweep.h"

namespace gmmloc {

namespace {

using json = nlohmann::ordered_json;

// ---- config <-> json ------------------------------------------------------

void check_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw ValidationError("config: unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void get(const json& j, const char* key, T& v) {
  if (j.contains(key)) v = j.at(key).get<T>();
}

void get(const json& j, const char* key, Vec3& v) {
  if (!j.contains(key)) return;
  const auto a = j.at(key).get<std::vector<double>>();
  if (a.size() != 3) throw ValidationError(std::string("config: '") + key + "' needs 3 numbers");
  v = Vec3(a[0], a[1], a[2]);
}

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json to_json(const CameraIntrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

void from_json_camera(const json& j, CameraIntrinsics& K) {
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height"}, "sequence.camera");
  get(j, "fx", K.fx);
  get(j, "fy", K.fy);
  get(j, "cx", K.cx);
  get(j, "cy", K.cy);
  get(j, "width", K.width);
  get(j, "height", K.height);
}

json to_json(const SceneSpec& s) {
  json boxes = json::array();
  for (const Box& b : s.boxes) boxes.push_back({{"min", vec(b.min)}, {"max", vec(b.max)}});
  return {{"room_size", vec(s.room_size)},       {"boxes", boxes},
          {"point_density", s.point_density},    {"jitter", s.jitter},
          {"component_count", s.component_count}, {"landmark_count", s.landmark_count},
          {"landmark_offset", s.landmark_offset}, {"em_iterations", s.em_iterations},
          {"em_tolerance", s.em_tolerance}};
}

void from_json_scene(const json& j, SceneSpec& s) {
  check_keys(j, {"room_size", "boxes", "point_density", "jitter", "component_count", "landmark_count",
                 "landmark_offset", "em_iterations", "em_tolerance"},
             "scene");
  get(j, "room_size", s.room_size);
  if (j.contains("boxes")) {
    s.boxes.clear();
    for (const auto& b : j.at("boxes")) {
      check_keys(b, {"min", "max"}, "scene.boxes[]");
      Box box;
      get(b, "min", box.min);
      get(b, "max", box.max);
      s.boxes.push_back(box);
    }
  }
  get(j, "point_density", s.point_density);
  get(j, "jitter", s.jitter);
  get(j, "component_count", s.component_count);
  get(j, "landmark_count", s.landmark_count);
  get(j, "landmark_offset", s.landmark_offset);
  get(j, "em_iterations", s.em_iterations);
  get(j, "em_tolerance", s.em_tolerance);
}

json to_json(const SequenceSpec& s) {
  return {{"trajectory", s.trajectory == TrajectoryKind::Circle ? "circle" : "lemniscate"},
          {"center", vec(s.center)},
          {"radius", s.radius},
          {"look_at", vec(s.look_at)},
          {"n_poses", s.n_poses},
          {"dt", s.dt},
          {"pixel_noise", s.pixel_noise},
          {"odom_sigma_t", s.odom_sigma_t},
          {"odom_sigma_rot_deg", s.odom_sigma_rot_deg},
          {"max_range", s.max_range},
          {"camera", to_json(s.camera)}};
}

TrajectoryKind parse_trajectory(const std::string& s) {
  if (s == "circle") return TrajectoryKind::Circle;
  if (s == "lemniscate") return TrajectoryKind::Lemniscate;
  throw ValidationError("unknown trajectory '" + s + "' (circle | lemniscate)");
}

void from_json_sequence(const json& j, SequenceSpec& s) {
  check_keys(j, {"trajectory", "center", "radius", "look_at", "n_poses", "dt", "pixel_noise",
                 "odom_sigma_t", "odom_sigma_rot_deg", "max_range", "camera"},
             "sequence");
  if (j.contains("trajectory")) s.trajectory = parse_trajectory(j.at("trajectory").get<std::string>());
  get(j, "center", s.center);
  get(j, "radius", s.radius);
  get(j, "look_at", s.look_at);
  get(j, "n_poses", s.n_poses);
  get(j, "dt", s.dt);
  get(j, "pixel_noise", s.pixel_noise);
  get(j, "odom_sigma_t", s.odom_sigma_t);
  get(j, "odom_sigma_rot_deg", s.odom_sigma_rot_deg);
  get(j, "max_range", s.max_range);
  if (j.contains("camera")) from_json_camera(j.at("camera"), s.camera);
}

json to_json(const PipelineConfig& p) {
  const ProjectionConfig& pr = p.projection;
  const AssociationConfig& a = p.association;
  const SolverConfig& s = p.solver;
  return {{"structure_enabled", p.structure_enabled},
          {"sigma_str", p.sigma_str},
          {"sigma_px", p.sigma_px},
          {"window_size", p.window_size},
          {"min_observations", p.min_observations},
          {"min_parallax_deg", p.min_parallax_deg},
          {"fix_first_keyframe", p.fix_first_keyframe},
          {"prior_weight", p.prior_weight},
          {"projection",
           {{"view_angle_deg", pr.view_angle_deg},
            {"min_singular_px2", pr.min_singular_px2},
            {"frustum_margin_sigma", pr.frustum_margin_sigma},
            {"occlusion_sigma", pr.occlusion_sigma},
            {"view_angle_absolute", pr.view_angle_absolute}}},
          {"association",
           {{"candidate_count", a.candidate_count},
            {"max_hops", a.max_hops},
            {"confidence", a.confidence},
            {"use_mixture_weights", a.use_mixture_weights},
            {"support_gate", a.support_gate}}},
          {"solver",
           {{"max_iterations", s.max_iterations},
            {"initial_damping_scale", s.initial_damping_scale},
            {"damping_up", s.damping_up},
            {"damping_down", s.damping_down},
            {"cost_tolerance", s.cost_tolerance},
            {"parameter_tolerance", s.parameter_tolerance},
            {"gradient_tolerance", s.gradient_tolerance},
            {"outlier_confidence", s.outlier_confidence},
            {"robust_visual", s.robust_visual},
            {"robust_structure", s.robust_structure}}}};
}

void from_json_pipeline(const json& j, PipelineConfig& p) {
  check_keys(j, {"structure_enabled", "sigma_str", "sigma_px", "window_size", "min_observations",
                 "min_parallax_deg", "fix_first_keyframe", "prior_weight", "projection", "association",
                 "solver"},
             "pipeline");
  get(j, "structure_enabled", p.structure_enabled);
  get(j, "sigma_str", p.sigma_str);
  get(j, "sigma_px", p.sigma_px);
  get(j, "window_size", p.window_size);
  get(j, "min_observations", p.min_observations);
  get(j, "min_parallax_deg", p.min_parallax_deg);
  get(j, "fix_first_keyframe", p.fix_first_keyframe);
  get(j, "prior_weight", p.prior_weight);
  if (j.contains("projection")) {
    const json& q = j.at("projection");
    check_keys(q, {"view_angle_deg", "min_singular_px2", "frustum_margin_sigma", "occlusion_sigma",
                   "view_angle_absolute"},
               "pipeline.projection");
    get(q, "view_angle_deg", p.projection.view_angle_deg);
    get(q, "min_singular_px2", p.projection.min_singular_px2);
    get(q, "frustum_margin_sigma", p.projection.frustum_margin_sigma);
    get(q, "occlusion_sigma", p.projection.occlusion_sigma);
    get(q, "view_angle_absolute", p.projection.view_angle_absolute);
  }
  if (j.contains("association")) {
    const json& q = j.at("association");
    check_keys(q, {"candidate_count", "max_hops", "confidence", "use_mixture_weights", "support_gate"},
               "pipeline.association");
    get(q, "candidate_count", p.association.candidate_count);
    get(q, "max_hops", p.association.max_hops);
    get(q, "confidence", p.association.confidence);
    get(q, "use_mixture_weights", p.association.use_mixture_weights);
    get(q, "support_gate", p.association.support_gate);
  }
  if (j.contains("solver")) {
    const json& q = j.at("solver");
    check_keys(q, {"max_iterations", "initial_damping_scale", "damping_up", "damping_down",
                   "cost_tolerance", "parameter_tolerance", "gradient_tolerance", "outlier_confidence",
                   "robust_visual", "robust_structure"},
               "pipeline.solver");
    SolverConfig& s = p.solver;
    get(q, "max_iterations", s.max_iterations);
    get(q, "initial_damping_scale", s.initial_damping_scale);
    get(q, "damping_up", s.damping_up);
    get(q, "damping_down", s.damping_down);
    get(q, "cost_tolerance", s.cost_tolerance);
    get(q, "parameter_tolerance", s.parameter_tolerance);
    get(q, "gradient_tolerance", s.gradient_tolerance);
    get(q, "outlier_confidence", s.outlier_confidence);
    get(q, "robust_visual", s.robust_visual);
    get(q, "robust_structure", s.robust_structure);
  }
}

// ---- helpers -------------------------------------------------------------

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("GMMLOC_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0') throw ValidationError(std::string("GMMLOC_SEED is not an integer: ") + s);
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ValidationError("bad number '" + tok + "' in list");
    }
  }
  return out;
}

// "tx ty tz qx qy qz qw" camera-to-world, as in a TUM line.
Pose parse_tum_pose(const std::string& s) {
  std::istringstream ss(s);
  double v[7];
  for (double& x : v) {
    if (!(ss >> x)) throw ValidationError("--pose expects 'tx ty tz qx qy qz qw'");
  }
  const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (!(q.norm() > 0.0)) throw ValidationError("--pose has a zero quaternion");
  return Pose(q, Vec3(v[0], v[1], v[2])).inverse();
}

struct Context {
  std::ostream& out;
  std::ostream& err;
};

// ---- subcommands ----------------------------------------------------------

int cmd_fit_map(Context& c, const std::string& input, const std::string& output, const FitConfig& fit) {
  const PointCloud cloud = load_point_cloud(input);
  FitResult r;
  try {
    r = fit_gmm_em(cloud, fit);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  save_map(r.map, output);
  c.out << "components: " << r.map.size() << "\n"
        << "points: " << cloud.size() << "\n"
        << "iterations: " << r.iterations << "\n"
        << "converged: " << (r.converged ? "true" : "false") << "\n"
        << "log_likelihood: " << format_double(r.log_likelihood.empty() ? 0.0 : r.log_likelihood.back())
        << "\n"
        << "degenerate_fraction: " << format_double(r.map.degenerate_fraction()) << "\n";
  return kExitOk;
}

int cmd_inspect_map(Context& c, const std::string& path, bool as_json) {
  const GmmMap map = load_map(path);
  if (as_json) {
    json j;
    j["components"] = map.size();
    j["degenerate_fraction"] = map.degenerate_fraction();
    j["weight_sum"] = map.weight_sum();
    c.out << j.dump(2) << "\n";
  } else {
    c.out << "components: " << map.size() << "\n"
          << "degenerate_fraction: " << format_double(map.degenerate_fraction()) << "\n"
          << "weight_sum: " << format_double(map.weight_sum()) << "\n";
  }
  return kExitOk;
}

int cmd_sim(Context& c, const RunConfig& cfg, const std::string& dir) {
  SceneSpec scene_spec = cfg.scene;
  SequenceSpec seq_spec = cfg.sequence;
  scene_spec.seed = seq_spec.seed = cfg.seed;
  SyntheticScene scene;
  try {
    scene = generate_scene(scene_spec);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  const SimSequence seq = generate_sequence(scene, seq_spec);
  write_sequence(scene, seq, dir);
  save_run_config(cfg, std::filesystem::path(dir) / "config.json");
  for (const auto& w : seq.warnings) c.err << "warning: " << w << "\n";
  std::size_t n_obs = 0;
  for (const auto& o : seq.observations) n_obs += o.size();
  c.out << "poses: " << seq.gt_poses.size() << "\n"
        << "landmarks: " << scene.gt_landmarks.size() << "\n"
        << "observations: " << n_obs << "\n"
        << "components: " << scene.gmm.size() << "\n"
        << "degenerate_fraction: " << format_double(scene.gmm.degenerate_fraction()) << "\n";
  return kExitOk;
}

int cmd_project(Context& c, const std::string& map_path, const Pose& pose, const CameraIntrinsics& K,
                const ProjectionConfig& pcfg, const std::string& output) {
  const GmmMap map = load_map(map_path);
  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw std::runtime_error("cannot write " + output);
  }
  std::ostream& o = output.empty() ? c.out : file;
  o << "source_id,u,v,c11,c12,c22,depth,visible,reject_reason\n";
  for (const ClassifiedProjection& cp : project_map_classified(map, pose, K, pcfg)) {
    const ProjectedComponent2D& p = cp.projection;
    o << p.source_id << ',';
    if (p.depth > 0.0) {
      o << format_double(p.mean2d.x()) << ',' << format_double(p.mean2d.y()) << ','
        << format_double(p.cov2d(0, 0)) << ',' << format_double(p.cov2d(0, 1)) << ','
        << format_double(p.cov2d(1, 1)) << ',';
    } else {
      o << ",,,,,";
    }
    o << format_double(p.depth) << ',' << (cp.reason == RejectReason::None ? 1 : 0) << ','
      << to_string(cp.reason) << '\n';
  }
  return kExitOk;
}

int cmd_localize(Context& c, const RunConfig& cfg, const std::string& seq_dir, const std::string& out_dir) {
  const SequenceData data = read_sequence(seq_dir);
  const RunResult run = run_sequence(data, cfg.pipeline);
  write_run(run, out_dir);
  save_run_config(cfg, std::filesystem::path(out_dir) / "config.json");
  int skipped = 0;
  for (const auto& r : run.reports) skipped += r.ba_skipped ? 1 : 0;
  c.out << "keyframes: " << run.estimate.size() << "\n"
        << "landmarks: " << run.landmarks.size() << "\n"
        << "ba_skipped: " << skipped << "\n";
  return kExitOk;
}

int cmd_evaluate(Context& c, const std::string& seq_dir, const std::string& run_dir, Alignment align,
                 const std::string& out_dir_arg) {
  const std::filesystem::path seq(seq_dir), run(run_dir);
  const std::filesystem::path out = out_dir_arg.empty() ? run : std::filesystem::path(out_dir_arg);
  std::filesystem::create_directories(out);
  const Trajectory gt = read_tum(seq / "gt.tum");
  const Trajectory est = read_tum(run / "estimate.tum");
  const TrajectoryErrorReport ate = ate_rmse(est, gt, align);
  const TrajectoryErrorReport raw = ate_rmse(est, gt, Alignment::None);
  write_trajectory_report(ate, out / "ate.csv", out / "ate.json");
  c.out << "ate_rmse: " << format_double(ate.ate_rmse) << "\n"
        << "alignment: " << to_string(align) << "\n"
        << "ate_rmse_unaligned: " << format_double(raw.ate_rmse) << "\n";
  if (std::filesystem::exists(seq / "odom.tum")) {
    const TrajectoryErrorReport odo = ate_rmse(read_tum(seq / "odom.tum"), gt, align);
    c.out << "odometry_ate_rmse: " << format_double(odo.ate_rmse) << "\n";
  }
  if (std::filesystem::exists(seq / "cloud.xyz") && std::filesystem::exists(run / "landmarks_est.csv")) {
    std::vector<Vec3> lms;
    for (const auto& [id, x] : read_landmarks(run / "landmarks_est.csv")) lms.push_back(x);
    if (!lms.empty()) {
      const ReconstructionErrorReport rec = reconstruction_rmse(lms, load_xyz(seq / "cloud.xyz"));
      write_reconstruction_report(rec, out / "reconstruction.csv", out / "reconstruction.json");
      c.out << "reconstruction_rmse: " << format_double(rec.rmse) << "\n";
    }
  }
  return kExitOk;
}

int cmd_sweep(Context& c, const RunConfig& cfg, const std::vector<double>& sigmas, int runs,
              Alignment align, const std::string& out_dir) {
  SweepScenario sc{cfg.scene, cfg.sequence, cfg.pipeline};
  sc.scene.seed = cfg.seed;
  const std::vector<SweepRow> rows = sigma_sweep(sc, sigmas, runs, cfg.seed, align);
  const std::filesystem::path out(out_dir);
  std::filesystem::create_directories(out);
  write_sweep(rows, out / "sweep.csv", out / "sweep.json");
  save_run_config(cfg, out / "config.json");
  for (const SweepRow& r : rows) {
    c.out << (r.baseline ? std::string("baseline") : "sigma_str=" + format_double(r.sigma_str))
          << " mean_ate=" << format_double(r.mean_ate) << " variance=" << format_double(r.variance)
          << (r.variance_degenerate ? " (single run)" : "") << " failures=" << r.failures.size()
          << "\n";
    for (const auto& f : r.failures) c.err << "run failed: " << f << "\n";
  }
  return kExitOk;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    check_keys(j, {"seed", "scene", "sequence", "pipeline"}, "root");
    get(j, "seed", cfg.seed);
    if (j.contains("scene")) from_json_scene(j.at("scene"), cfg.scene);
    if (j.contains("sequence")) from_json_sequence(j.at("sequence"), cfg.sequence);
    if (j.contains("pipeline")) from_json_pipeline(j.at("pipeline"), cfg.pipeline);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["scene"] = to_json(cfg.scene);
  j["sequence"] = to_json(cfg.sequence);
  j["pipeline"] = to_json(cfg.pipeline);
  return j.dump(2) + "\n";
}

void save_run_config(const RunConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << dump_run_config(cfg);
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"GMM-map structure-constrained visual localization", "gmmloc"};
  app.require_subcommand(1);

  // Shared option storage; only the chosen subcommand's values are used.
  std::string config_path, input, output, map_path, seq_dir, run_dir, pose_str, align_str = "rigid",
                                                                              sigmas_str = "0.05,0.1,0.5,1.0",
                                                                              trajectory;
  std::optional<std::uint64_t> seed;
  FitConfig fit;
  bool as_json = false, no_structure = false;
  std::optional<int> poses, components, landmarks, window, index;
  std::optional<double> pixel_noise, odom_t, odom_rot, sigma_str;
  int runs = 5;

  auto add_config = [&](CLI::App* s) {
    s->add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    s->add_option("--seed", seed, "random seed (falls back to the config, then GMMLOC_SEED)");
  };

  CLI::App* fit_cmd = app.add_subcommand("fit-map", "fit a GMM to a point cloud (.xyz or .ply)");
  fit_cmd->add_option("input", input, "point cloud")->required()->check(CLI::ExistingFile);
  fit_cmd->add_option("-o,--output", output, "output map file")->required();
  fit_cmd->add_option("-k,--components", fit.component_count, "number of components");
  fit_cmd->add_option("--iterations", fit.max_iterations, "EM iteration limit");
  fit_cmd->add_option("--tolerance", fit.tolerance, "relative log-likelihood tolerance");
  fit_cmd->add_option("--threads", fit.threads, "E-step threads (0 = all cores)");
  fit_cmd->add_option("--seed", seed, "random seed");

  CLI::App* inspect_cmd = app.add_subcommand("inspect-map", "print map statistics");
  inspect_cmd->add_option("map", map_path, "map file")->required()->check(CLI::ExistingFile);
  inspect_cmd->add_flag("--json", as_json, "JSON output");

  CLI::App* sim_cmd = app.add_subcommand("sim", "generate a synthetic scene and sequence");
  sim_cmd->add_option("-o,--out", output, "output directory")->required();
  add_config(sim_cmd);
  sim_cmd->add_option("--poses", poses, "number of poses");
  sim_cmd->add_option("--components", components, "GMM components");
  sim_cmd->add_option("--landmarks", landmarks, "number of landmarks");
  sim_cmd->add_option("--pixel-noise", pixel_noise, "pixel noise (px)");
  sim_cmd->add_option("--odom-sigma-t", odom_t, "odometry translation noise per step (m)");
  sim_cmd->add_option("--odom-sigma-rot", odom_rot, "odometry rotation noise per step (deg)");
  sim_cmd->add_option("--trajectory", trajectory, "circle | lemniscate");

  CLI::App* proj_cmd = app.add_subcommand("project", "project a map from one pose to CSV");
  proj_cmd->add_option("--map", map_path, "map file");
  proj_cmd->add_option("--pose", pose_str, "camera-to-world 'tx ty tz qx qy qz qw'");
  proj_cmd->add_option("--sequence", seq_dir, "sequence directory (uses its map, camera and gt pose)");
  proj_cmd->add_option("--index", index, "pose index within --sequence");
  proj_cmd->add_option("-o,--output", output, "CSV file (default stdout)");

  CLI::App* loc_cmd = app.add_subcommand("localize", "run the localization pipeline on a sequence");
  loc_cmd->add_option("sequence", seq_dir, "sequence directory")->required()->check(CLI::ExistingDirectory);
  loc_cmd->add_option("-o,--out", output, "output directory")->required();
  add_config(loc_cmd);
  loc_cmd->add_flag("--no-structure", no_structure, "disable structure factors");
  loc_cmd->add_option("--sigma-str", sigma_str, "structure noise (m)");
  loc_cmd->add_option("--window", window, "sliding window size");

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "ATE and reconstruction reports");
  eval_cmd->add_option("sequence", seq_dir, "sequence directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("run", run_dir, "localize output directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--align", align_str, "rigid | none");
  eval_cmd->add_option("-o,--out", output, "report directory (default: run directory)");

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "sigma_str study");
  sweep_cmd->add_option("-o,--out", output, "output directory")->required();
  add_config(sweep_cmd);
  sweep_cmd->add_option("--sigmas", sigmas_str, "comma separated sigma_str values (m)");
  sweep_cmd->add_option("--runs", runs, "runs per value");
  sweep_cmd->add_option("--align", align_str, "rigid | none");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    auto resolve = [&]() {
      RunConfig cfg;
      std::optional<std::uint64_t> cfg_seed;
      if (!config_path.empty()) {
        cfg = load_run_config(config_path);
        std::ifstream in(config_path);
        if (json::parse(in).contains("seed")) cfg_seed = cfg.seed;
      }
      if (seed) {
        cfg.seed = *seed;
      } else if (!cfg_seed) {
        if (auto e = env_seed()) cfg.seed = *e;
      }
      return cfg;
    };

    if (*fit_cmd) {
      if (seed) {
        fit.seed = *seed;
      } else if (auto e = env_seed()) {
        fit.seed = *e;
      }
      return cmd_fit_map(ctx, input, output, fit);
    }
    if (*inspect_cmd) return cmd_inspect_map(ctx, map_path, as_json);
    if (*sim_cmd) {
      RunConfig cfg = resolve();
      if (poses) cfg.sequence.n_poses = *poses;
      if (components) cfg.scene.component_count = *components;
      if (landmarks) cfg.scene.landmark_count = *landmarks;
      if (pixel_noise) cfg.sequence.pixel_noise = *pixel_noise;
      if (odom_t) cfg.sequence.odom_sigma_t = *odom_t;
      if (odom_rot) cfg.sequence.odom_sigma_rot_deg = *odom_rot;
      if (!trajectory.empty()) cfg.sequence.trajectory = parse_trajectory(trajectory);
      return cmd_sim(ctx, cfg, output);
    }
    if (*proj_cmd) {
      CameraIntrinsics K;
      Pose pose;
      std::string map_file = map_path;
      if (!seq_dir.empty()) {
        const SequenceData d = read_sequence(seq_dir);
        K = d.camera;
        if (map_file.empty()) map_file = (std::filesystem::path(seq_dir) / "scene.gmm").string();
        const int i = index.value_or(0);
        if (i < 0 || static_cast<std::size_t>(i) >= d.gt.size()) {
          throw ValidationError("--index out of range");
        }
        pose = d.gt.poses[i];
      }
      if (!pose_str.empty()) pose = parse_tum_pose(pose_str);
      if (map_file.empty()) {
        err << "project: --map or --sequence is required\n" << proj_cmd->help();
        return kExitUsage;
      }
      if (pose_str.empty() && seq_dir.empty()) {
        err << "project: --pose or --sequence is required\n" << proj_cmd->help();
        return kExitUsage;
      }
      return cmd_project(ctx, map_file, pose, K, ProjectionConfig{}, output);
    }
    if (*loc_cmd) {
      RunConfig cfg = resolve();
      if (no_structure) cfg.pipeline.structure_enabled = false;
      if (sigma_str) cfg.pipeline.sigma_str = *sigma_str;
      if (window) cfg.pipeline.window_size = *window;
      return cmd_localize(ctx, cfg, seq_dir, output);
    }
    if (*eval_cmd) return cmd_evaluate(ctx, seq_dir, run_dir, parse_alignment(align_str), output);
    if (*sweep_cmd) {
      const RunConfig cfg = resolve();
      return cmd_sweep(ctx, cfg, parse_list(sigmas_str), runs, parse_alignment(align_str), output);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace gmmloc
