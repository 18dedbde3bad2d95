#include "gmmloc/simulator.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

std::vector<Surface> box_faces(const Box& b) {
  const Vec3 m = b.min;
  const Vec3 M = b.max;
  const Vec3 dx(M.x() - m.x(), 0, 0), dy(0, M.y() - m.y(), 0), dz(0, 0, M.z() - m.z());
  // Outward normals.
  return {
      {m, dy, dx},
      {Vec3(m.x(), m.y(), M.z()), dx, dy},
      {m, dx, dz},
      {Vec3(m.x(), M.y(), m.z()), dz, dx},
      {m, dz, dy},
      {Vec3(M.x(), m.y(), m.z()), dy, dz},
  };
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t channel) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(channel)};
  return std::mt19937_64(seq);
}

bool inside_room(const Vec3& c, const SceneSpec& room) {
  return (c.array() > 0.0).all() && (c.array() < room.room_size.array()).all();
}

}  // namespace

void SceneSpec::validate() const {
  if (!(room_size.array() > 0.0).all()) throw std::invalid_argument("room dimensions must be positive");
  if (!(point_density > 0.0)) throw std::invalid_argument("point density must be positive");
  if (!(jitter >= 0.0)) throw std::invalid_argument("jitter must be non-negative");
  if (component_count < 1) throw std::invalid_argument("component count must be >= 1");
  if (landmark_count < 0) throw std::invalid_argument("landmark count must be >= 0");
  for (const Box& b : boxes) {
    if (!(b.max.array() > b.min.array()).all()) throw std::invalid_argument("box has non-positive extent");
  }
}

std::vector<Surface> room_surfaces(const SceneSpec& spec) {
  const double X = spec.room_size.x(), Y = spec.room_size.y(), Z = spec.room_size.z();
  const Vec3 ex(X, 0, 0), ey(0, Y, 0), ez(0, 0, Z);
  // Inward normals.
  std::vector<Surface> s = {
      {Vec3::Zero(), ex, ey},        // floor
      {Vec3(0, 0, Z), ey, ex},       // ceiling
      {Vec3::Zero(), ez, ex},        // y = 0
      {Vec3(0, Y, 0), ex, ez},       // y = Y
      {Vec3::Zero(), ey, ez},        // x = 0
      {Vec3(X, 0, 0), ez, ey},       // x = X
  };
  for (const Box& b : spec.boxes) {
    for (const Surface& f : box_faces(b)) s.push_back(f);
  }
  return s;
}

SyntheticScene generate_scene(const SceneSpec& spec) {
  spec.validate();
  SyntheticScene scene;
  scene.spec = spec;
  scene.surfaces = room_surfaces(spec);

  std::mt19937_64 rng = stream(spec.seed, 0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (const Surface& s : scene.surfaces) {
    const auto n = static_cast<std::size_t>(std::llround(spec.point_density * s.area()));
    const Vec3 normal = s.normal();
    for (std::size_t i = 0; i < n; ++i) {
      const double a = unit(rng), b = unit(rng);
      const double off = spec.jitter > 0.0 ? spec.jitter * gauss(rng) : 0.0;
      scene.gt_cloud.points.push_back(s.at(a, b) + off * normal);
    }
  }
  if (static_cast<std::size_t>(spec.component_count) > scene.gt_cloud.size()) {
    throw std::invalid_argument("component count " + std::to_string(spec.component_count) +
                                " exceeds point count " + std::to_string(scene.gt_cloud.size()));
  }

  std::vector<double> cumulative;
  double total = 0.0;
  for (const Surface& s : scene.surfaces) cumulative.push_back(total += s.area());
  for (int i = 0; i < spec.landmark_count; ++i) {
    const double pick = unit(rng) * total;
    std::size_t k = std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin();
    k = std::min(k, cumulative.size() - 1);
    const Surface& s = scene.surfaces[k];
    const double a = unit(rng), b = unit(rng);
    scene.gt_landmarks.push_back(s.at(a, b) + spec.landmark_offset * s.normal());
  }

  FitConfig fit;
  fit.component_count = spec.component_count;
  fit.max_iterations = spec.em_iterations;
  fit.tolerance = spec.em_tolerance;
  fit.seed = spec.seed;
  FitResult r = fit_gmm_em(scene.gt_cloud, fit);
  scene.gmm = std::move(r.map);
  scene.em_log_likelihood = std::move(r.log_likelihood);
  return scene;
}

void SequenceSpec::validate() const {
  camera.validate();
  if (n_poses < 1) throw std::invalid_argument("sequence needs at least one pose");
  if (!(radius >= 0.0)) throw std::invalid_argument("radius must be non-negative");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(pixel_noise >= 0.0) || !(odom_sigma_t >= 0.0) || !(odom_sigma_rot_deg >= 0.0)) {
    throw std::invalid_argument("noise levels must be non-negative");
  }
  if (!(max_range > 0.0)) throw std::invalid_argument("max range must be positive");
}

std::vector<Pose> make_trajectory(const SequenceSpec& spec) {
  std::vector<Pose> poses;
  poses.reserve(spec.n_poses);
  for (int k = 0; k < spec.n_poses; ++k) {
    const double s = 2.0 * std::numbers::pi * k / spec.n_poses;
    if (spec.trajectory == TrajectoryKind::Circle) {
      const Vec3 eye = spec.center + spec.radius * Vec3(std::cos(s), std::sin(s), 0.0);
      poses.push_back(look_at(eye, spec.look_at));
    } else {
      // Figure eight through the centre, heading turning once per loop.
      const Vec3 eye = spec.center + spec.radius * Vec3(std::sin(s), std::sin(s) * std::cos(s), 0.0);
      poses.push_back(look_at(eye, eye + Vec3(std::cos(s), std::sin(s), 0.0)));
    }
  }
  return poses;
}

SimSequence generate_sequence(const SyntheticScene& scene, const SequenceSpec& spec) {
  spec.validate();
  SimSequence seq;
  seq.spec = spec;
  seq.gt_poses = make_trajectory(spec);
  const int n = spec.n_poses;
  for (int k = 0; k < n; ++k) seq.timestamps.push_back(k * spec.dt);

  std::mt19937_64 odo_rng = stream(spec.seed, 1);
  std::mt19937_64 pix_rng = stream(spec.seed, 2);
  // Separate distributions: normal_distribution caches a spare variate.
  std::normal_distribution<double> gauss(0.0, 1.0), pix_gauss(0.0, 1.0);

  // Drift: perturb each relative motion and compose.
  const double sr = spec.odom_sigma_rot_deg * std::numbers::pi / 180.0;
  seq.noisy_poses.push_back(seq.gt_poses.front());
  const bool drift = sr > 0.0 || spec.odom_sigma_t > 0.0;
  for (int k = 1; k < n && !drift; ++k) seq.noisy_poses.push_back(seq.gt_poses[k]);
  for (int k = 1; k < n && drift; ++k) {
    const Pose delta = seq.gt_poses[k] * seq.gt_poses[k - 1].inverse();
    Vec6 noise;
    for (int i = 0; i < 3; ++i) noise(i) = sr * gauss(odo_rng);
    for (int i = 3; i < 6; ++i) noise(i) = spec.odom_sigma_t * gauss(odo_rng);
    const Pose noisy_delta = se3_exp(noise) * delta;
    seq.noisy_poses.push_back((noisy_delta * seq.noisy_poses.back()).normalized());
  }

  seq.observations.resize(n);
  for (int k = 0; k < n; ++k) {
    const Pose& T = seq.gt_poses[k];
    if (!inside_room(T.camera_center(), scene.spec)) {
      seq.warnings.push_back("pose " + std::to_string(k) + " is outside the room");
    }
    for (std::size_t id = 0; id < scene.gt_landmarks.size(); ++id) {
      const Vec3& x = scene.gt_landmarks[id];
      if (!is_visible(x, T, spec.camera, spec.max_range)) continue;
      ImagePoint u = project_point(T.transform(x), spec.camera).pixel;
      if (spec.pixel_noise > 0.0) {
        const double du = pix_gauss(pix_rng), dv = pix_gauss(pix_rng);
        u += spec.pixel_noise * Vec2(du, dv);
      }
      seq.observations[k].push_back({k, static_cast<int>(id), u});
    }
    if (seq.observations[k].size() < 8) {
      seq.warnings.push_back("pose " + std::to_string(k) + " sees only " +
                             std::to_string(seq.observations[k].size()) + " landmarks");
    }
  }
  return seq;
}

}  // namespace gmmloc
