#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "gmmloc/errors.h"
#include "gmmloc/evaluation.h"
#include "gmmloc/pipeline.h"
#include "gmmloc/sweep.h"

using namespace gmmloc;

namespace {

SceneSpec small_scene() {
  SceneSpec s;
  s.point_density = 30;
  s.component_count = 80;
  s.landmark_count = 600;
  s.em_iterations = 30;
  s.seed = 21;
  return s;
}

const SyntheticScene& scene() {
  static const SyntheticScene sc = generate_scene(small_scene());
  return sc;
}

SequenceData make_data(int n_poses, bool noisy, std::uint64_t seed = 4) {
  SequenceSpec q;
  q.n_poses = n_poses;
  q.seed = seed;
  if (!noisy) {
    q.pixel_noise = 0.0;
    q.odom_sigma_t = 0.0;
    q.odom_sigma_rot_deg = 0.0;
  }
  return to_sequence_data(scene(), generate_sequence(scene(), q));
}

double max_position_error(const Trajectory& est, const Trajectory& gt) {
  double m = 0.0;
  for (std::size_t k = 0; k < est.size(); ++k) {
    m = std::max(m, (est.poses[k].camera_center() - gt.poses[k].camera_center()).norm());
  }
  return m;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("noiseless sequences are a fixed point") {
  const SequenceData d = make_data(40, false);
  for (bool structure : {false, true}) {
    PipelineConfig cfg;
    cfg.structure_enabled = structure;
    const RunResult r = run_sequence(d, cfg);
    REQUIRE(r.estimate.size() == d.gt.size());
    const double err = max_position_error(r.estimate, d.gt);
    MESSAGE("structure " << structure << " max error " << err);
    if (structure) {
      // The map only approximates the surfaces, so structure edges pull a little.
      CHECK(err < 1e-3);
      CHECK(!r.associations.empty());
    } else {
      CHECK(err < 1e-6);
    }
  }
}

TEST_CASE("runs are bit-identical") {
  const SequenceData d = make_data(30, true);
  const RunResult a = run_sequence(d, PipelineConfig{});
  const RunResult b = run_sequence(d, PipelineConfig{});
  for (std::size_t k = 0; k < a.estimate.size(); ++k) {
    CHECK(a.estimate.poses[k].rotation() == b.estimate.poses[k].rotation());
    CHECK(a.estimate.poses[k].translation() == b.estimate.poses[k].translation());
  }
  REQUIRE(a.landmarks.size() == b.landmarks.size());
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) CHECK(a.landmarks[i].second == b.landmarks[i].second);
  CHECK(a.associations == b.associations);
}

TEST_CASE("window, gating and edge bookkeeping invariants") {
  const SequenceData d = make_data(40, true, 8);
  PipelineConfig cfg;
  cfg.window_size = 5;
  auto map = std::make_shared<const GmmMap>(d.map);
  LocalizationPipeline pipe(map, d.camera, cfg);
  std::vector<Pose> before;
  for (std::size_t k = 0; k < d.odom.size(); ++k) {
    Pose init = d.odom.poses[0];
    if (k > 0) init = (d.odom.poses[k] * d.odom.poses[k - 1].inverse() * pipe.pose(static_cast<int>(k) - 1)).normalized();
    const KeyframeReport rep = pipe.process_keyframe(d.odom.timestamps[k], init, d.observations[k]);
    CHECK(rep.keyframe == static_cast<int>(k));
    CHECK(rep.associated <= rep.association_attempts);

    // Keyframes that left the window are frozen, and so is the fixed first one.
    const int first_free = static_cast<int>(k) - cfg.window_size + 1;
    for (int j = 0; j < static_cast<int>(before.size()); ++j) {
      if (j < first_free || j == 0) {
        CHECK(pipe.pose(j).rotation() == before[j].rotation());
        CHECK(pipe.pose(j).translation() == before[j].translation());
      }
    }
    before = pipe.trajectory().poses;

    // Structure edges all come from accepted associations.
    for (const StructureAssociation& s : pipe.last_structure_edges()) {
      const LandmarkTrack& t = pipe.tracks().at(s.landmark_id);
      REQUIRE(t.component.has_value());
      CHECK(*t.component == s.component_id);
      CHECK(!t.association_rejected);
      CHECK(s.sigma_str == cfg.sigma_str);
    }
    // Observation lists agree with what was fed in, minus deactivated edges.
    for (const auto& [id, t] : pipe.tracks()) {
      int last = -1;
      for (const auto& [j, u] : t.observations) {
        CHECK(j > last);
        last = j;
        CHECK(j <= static_cast<int>(k));
      }
    }
  }
}

TEST_CASE("keyframes with too few observations skip BA") {
  const SequenceData d = make_data(6, true);
  auto map = std::make_shared<const GmmMap>(d.map);
  LocalizationPipeline pipe(map, d.camera, PipelineConfig{});
  const KeyframeReport r0 = pipe.process_keyframe(0.0, d.odom.poses[0], d.observations[0]);
  CHECK(r0.ba_skipped);
  CHECK(r0.flag == "first_keyframe");
  const std::vector<SimObservation> few(d.observations[1].begin(), d.observations[1].begin() + 5);
  const KeyframeReport r1 = pipe.process_keyframe(0.1, d.odom.poses[1], few);
  CHECK(r1.ba_skipped);
  CHECK(r1.flag == "too_few_observations");
  CHECK(pipe.pose(1).translation() == d.odom.poses[1].translation());
}

TEST_CASE("rough first pose is tied by a prior instead of being fixed") {
  SequenceData d = make_data(20, false);
  // Perturb the first odometry pose; later increments stay exact.
  const Pose bump = se3_exp((Vec6() << 0.002, 0, 0, 0.01, 0, 0).finished());
  const Pose delta0 = bump;
  for (Pose& p : d.odom.poses) p = p * delta0;
  PipelineConfig cfg;
  cfg.fix_first_keyframe = false;
  cfg.prior_weight = 1.0;
  const RunResult r = run_sequence(d, cfg);
  // The first pose moves (it is free) but stays tied to its prior.
  const double moved = (r.estimate.poses[0].camera_center() - d.odom.poses[0].camera_center()).norm();
  CHECK(moved < 0.05);
  PipelineConfig fixed;
  const RunResult f = run_sequence(d, fixed);
  CHECK(f.estimate.poses[0].translation() == d.odom.poses[0].translation());
}

TEST_CASE("pipeline validation") {
  auto map = std::make_shared<const GmmMap>(scene().gmm);
  PipelineConfig cfg;
  cfg.sigma_str = 0.0;
  CHECK_THROWS_AS(LocalizationPipeline(map, CameraIntrinsics{}, cfg), ValidationError);
  cfg = PipelineConfig{};
  cfg.window_size = 0;
  CHECK_THROWS_AS(LocalizationPipeline(map, CameraIntrinsics{}, cfg), ValidationError);
  CHECK_THROWS_AS(LocalizationPipeline(nullptr, CameraIntrinsics{}, PipelineConfig{}), ValidationError);
  SequenceData empty;
  CHECK_THROWS_AS(run_sequence(empty, PipelineConfig{}), ValidationError);
}

TEST_CASE("run directory contents") {
  const SequenceData d = make_data(15, true);
  const RunResult r = run_sequence(d, PipelineConfig{});
  const auto dir = std::filesystem::temp_directory_path() / "gmmloc_run_out";
  std::filesystem::remove_all(dir);
  write_run(r, dir);
  const Trajectory back = read_tum(dir / "estimate.tum");
  REQUIRE(back.size() == r.estimate.size());
  CHECK((back.poses.back().translation() - r.estimate.poses.back().translation()).norm() < 1e-12);
  std::ifstream rep(dir / "report.jsonl");
  int lines = 0;
  for (std::string l; std::getline(rep, l); ++lines) {
    const auto j = nlohmann::json::parse(l);
    CHECK(j.at("keyframe").get<int>() == lines);
    CHECK(j.contains("round1"));
  }
  CHECK(lines == 15);
  std::ifstream lm(dir / "landmarks_est.csv");
  std::string header;
  std::getline(lm, header);
  CHECK(header == "landmark_id,x,y,z,component_id");
  CHECK(std::filesystem::file_size(dir / "solver.jsonl") > 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("sweep bookkeeping") {
  SweepScenario s;
  s.scene = small_scene();
  s.sequence.n_poses = 15;
  const auto rows = sigma_sweep(s, {0.1, 1.0}, 1, 3);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].baseline);
  CHECK(!rows[1].baseline);
  CHECK(rows[1].sigma_str == 0.1);
  for (const SweepRow& r : rows) {
    CHECK(r.ate.size() == 1);
    CHECK(r.variance == 0.0);
    CHECK(r.variance_degenerate);
    CHECK(r.seeds == std::vector<std::uint64_t>{3});
  }
  const auto dir = std::filesystem::temp_directory_path() / "gmmloc_sweep_out";
  std::filesystem::create_directories(dir);
  write_sweep(rows, dir / "sweep.csv", dir / "sweep.json");
  std::ifstream js(dir / "sweep.json");
  CHECK(nlohmann::json::parse(js).size() >= 1);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
