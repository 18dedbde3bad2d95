#include "gmmloc/sequence_io.h"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

double parse_number(std::string_view tok, int line) {
  double v = 0.0;
  while (!tok.empty() && tok.front() == ' ') tok.remove_prefix(1);
  while (!tok.empty() && (tok.back() == ' ' || tok.back() == '\r')) tok.remove_suffix(1);
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("bad number '" + std::string(tok) + "'", line);
  }
  return v;
}

int parse_int(std::string_view tok, int line) {
  const double v = parse_number(tok, line);
  if (v != static_cast<int>(v)) throw ParseError("expected integer, got '" + std::string(tok) + "'", line);
  return static_cast<int>(v);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool skip_line(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    std::istringstream ss(line);
    std::vector<std::string> tok;
    for (std::string t; ss >> t;) tok.push_back(t);
    if (tok.size() != 8) throw ParseError("expected 8 fields, got " + std::to_string(tok.size()), line_no);
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = parse_number(tok[i], line_no);
    const Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    if (!(q.norm() > 0.0)) throw ParseError("zero quaternion", line_no);
    const Pose twc(q, Vec3(v[1], v[2], v[3]));
    traj.timestamps.push_back(v[0]);
    traj.poses.push_back(twc.inverse());
  }
  return traj;
}

void write_tum(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose twc = traj.poses[i].inverse();
    const Eigen::Quaterniond q = twc.quaternion();
    const Vec3& t = twc.translation();
    out << format_double(traj.timestamps[i]) << ' ' << format_double(t.x()) << ' '
        << format_double(t.y()) << ' ' << format_double(t.z()) << ' ' << format_double(q.x()) << ' '
        << format_double(q.y()) << ' ' << format_double(q.z()) << ' ' << format_double(q.w()) << '\n';
  }
}

std::vector<SimObservation> read_observations(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<SimObservation> obs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    if (line_no == 1 && line.rfind("pose_idx", 0) == 0) continue;
    const auto f = split(line, ',');
    if (f.size() != 4) throw ParseError("expected pose_idx,landmark_id,u,v", line_no);
    obs.push_back({parse_int(f[0], line_no), parse_int(f[1], line_no),
                   Vec2(parse_number(f[2], line_no), parse_number(f[3], line_no))});
    if (obs.back().pose_index < 0) throw ParseError("negative pose index", line_no);
  }
  return obs;
}

void write_observations(const std::vector<std::vector<SimObservation>>& per_pose,
                        const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "pose_idx,landmark_id,u,v\n";
  for (const auto& list : per_pose) {
    for (const auto& o : list) {
      out << o.pose_index << ',' << o.landmark_id << ',' << format_double(o.pixel.x()) << ','
          << format_double(o.pixel.y()) << '\n';
    }
  }
}

std::vector<std::pair<int, Vec3>> read_landmarks(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<std::pair<int, Vec3>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    if (line_no == 1 && line.rfind("landmark_id", 0) == 0) continue;
    const auto f = split(line, ',');
    if (f.size() < 4) throw ParseError("expected landmark_id,x,y,z", line_no);
    out.emplace_back(parse_int(f[0], line_no),
                     Vec3(parse_number(f[1], line_no), parse_number(f[2], line_no),
                          parse_number(f[3], line_no)));
  }
  return out;
}

void write_landmarks(const std::vector<std::pair<int, Vec3>>& landmarks,
                     const std::filesystem::path& path) {
  std::ofstream out = open_out(path);
  out << "landmark_id,x,y,z\n";
  for (const auto& [id, x] : landmarks) {
    out << id << ',' << format_double(x.x()) << ',' << format_double(x.y()) << ','
        << format_double(x.z()) << '\n';
  }
}

void write_sequence(const SyntheticScene& scene, const SimSequence& seq,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tum({seq.timestamps, seq.gt_poses}, dir / "gt.tum");
  write_tum({seq.timestamps, seq.noisy_poses}, dir / "odom.tum");
  write_observations(seq.observations, dir / "observations.csv");
  save_map(scene.gmm, dir / "scene.gmm");
  std::vector<std::pair<int, Vec3>> lms;
  for (std::size_t i = 0; i < scene.gt_landmarks.size(); ++i) {
    lms.emplace_back(static_cast<int>(i), scene.gt_landmarks[i]);
  }
  write_landmarks(lms, dir / "landmarks.csv");
  save_xyz(scene.gt_cloud, dir / "cloud.xyz");

  const CameraIntrinsics& K = seq.spec.camera;
  nlohmann::ordered_json j;
  j["camera"] = {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx},
                 {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
  j["pixel_noise"] = seq.spec.pixel_noise;
  j["poses"] = seq.gt_poses.size();
  j["landmarks"] = scene.gt_landmarks.size();
  j["warnings"] = seq.warnings;
  std::ofstream out = open_out(dir / "sequence.json");
  out << j.dump(2) << '\n';
}

SequenceData read_sequence(const std::filesystem::path& dir) {
  SequenceData d;
  {
    std::ifstream in = open_in(dir / "sequence.json");
    nlohmann::json j;
    try {
      in >> j;
      const auto& c = j.at("camera");
      d.camera.fx = c.at("fx").get<double>();
      d.camera.fy = c.at("fy").get<double>();
      d.camera.cx = c.at("cx").get<double>();
      d.camera.cy = c.at("cy").get<double>();
      d.camera.width = c.at("width").get<int>();
      d.camera.height = c.at("height").get<int>();
      d.pixel_noise = j.at("pixel_noise").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError((dir / "sequence.json").string() + ": " + e.what());
    }
    d.camera.validate();
  }
  d.gt = read_tum(dir / "gt.tum");
  d.odom = read_tum(dir / "odom.tum");
  if (d.gt.size() != d.odom.size()) throw ValidationError("gt.tum and odom.tum differ in length");
  d.observations.resize(d.odom.size());
  for (const SimObservation& o : read_observations(dir / "observations.csv")) {
    if (static_cast<std::size_t>(o.pose_index) >= d.observations.size()) {
      throw ValidationError("observation references pose " + std::to_string(o.pose_index) +
                            " beyond the trajectory");
    }
    d.observations[o.pose_index].push_back(o);
  }
  d.map = load_map(dir / "scene.gmm");
  if (std::filesystem::exists(dir / "landmarks.csv")) d.gt_landmarks = read_landmarks(dir / "landmarks.csv");
  return d;
}

SequenceData to_sequence_data(const SyntheticScene& scene, const SimSequence& seq) {
  SequenceData d;
  d.camera = seq.spec.camera;
  d.pixel_noise = seq.spec.pixel_noise;
  d.gt = {seq.timestamps, seq.gt_poses};
  d.odom = {seq.timestamps, seq.noisy_poses};
  d.observations = seq.observations;
  d.map = scene.gmm;
  for (std::size_t i = 0; i < scene.gt_landmarks.size(); ++i) {
    d.gt_landmarks.emplace_back(static_cast<int>(i), scene.gt_landmarks[i]);
  }
  return d;
}

}  // namespace gmmloc
