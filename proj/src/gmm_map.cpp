#include "gmmloc/gmm_map.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gmmloc/errors.h"
#include "spatial_grid.h"

namespace gmmloc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2 pi)

std::string component_label(int id) { return "component " + std::to_string(id); }

}  // namespace

CovarianceDecomposition decompose_covariance(const Mat3& sigma) {
  const double scale = std::max(1.0, sigma.cwiseAbs().maxCoeff());
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw ValidationError("covariance is not symmetric");
  }
  const Mat3 sym = 0.5 * (sigma + sigma.transpose());
  Eigen::SelfAdjointEigenSolver<Mat3> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericError("eigen decomposition failed");

  CovarianceDecomposition out;
  out.singular_values = solver.eigenvalues();
  const Mat3 U = solver.eigenvectors();
  out.rotation.col(0) = U.col(0);
  out.rotation.col(1) = U.col(1);
  out.rotation.col(2) = U.col(0).cross(U.col(1));
  return out;
}

bool detect_degeneracy(const Vec3& l, double ratio) { return l(0) < ratio * l(1); }

GaussianComponent3D make_component(int id, double weight, const Vec3& mean, const Mat3& covariance,
                                   const MapConfig& cfg) {
  if (!mean.allFinite() || !covariance.allFinite() || !std::isfinite(weight)) {
    throw ValidationError(component_label(id) + ": non-finite value");
  }
  if (!(weight > 0.0) || weight > 1.0 + 1e-9) {
    throw ValidationError(component_label(id) + ": weight outside (0, 1]");
  }

  CovarianceDecomposition dec;
  try {
    dec = decompose_covariance(covariance);
  } catch (const ValidationError& e) {
    throw ValidationError(component_label(id) + ": " + e.what());
  }
  const double largest = dec.singular_values(2);
  if (dec.singular_values(0) < -1e-12 * std::max(1.0, std::abs(largest)) || !(largest > 0.0)) {
    throw ValidationError(component_label(id) + ": covariance is not positive semi-definite");
  }

  GaussianComponent3D g;
  g.id = id;
  g.weight = weight;
  g.mean = mean;
  g.axes = dec.rotation;
  g.singular_values = dec.singular_values.cwiseMax(cfg.eigen_floor);
  if (g.singular_values != dec.singular_values) {
    g.covariance = g.axes * g.singular_values.asDiagonal() * g.axes.transpose();
    g.covariance = 0.5 * (g.covariance + g.covariance.transpose()).eval();
  } else {
    g.covariance = 0.5 * (covariance + covariance.transpose());
  }
  g.is_degenerate = detect_degeneracy(g.singular_values, cfg.degeneracy_ratio);

  g.information =
      g.axes * g.singular_values.cwiseInverse().asDiagonal() * g.axes.transpose();
  Eigen::LLT<Mat3> llt(g.covariance);
  if (llt.info() != Eigen::Success) {
    throw ValidationError(component_label(id) + ": covariance is not positive definite");
  }
  g.whitening = llt.matrixL().solve(Mat3::Identity());
  g.log_det = g.singular_values.array().log().sum();
  return g;
}

double bhattacharyya_distance(const GaussianComponent3D& a, const GaussianComponent3D& b) {
  const double d = bhattacharyya_distance<3>(a.mean, a.covariance, b.mean, b.covariance);
  if (!std::isfinite(d)) throw NumericError("singular pooled covariance");
  return d;
}

double log_likelihood(const Vec3& x, const GaussianComponent3D& g) {
  const double m = (g.whitening * (x - g.mean)).squaredNorm();
  return -0.5 * (3.0 * kLog2Pi + g.log_det + m);
}

GmmMap::GmmMap(std::vector<GaussianComponent3D> components, MapConfig cfg, MapMetadata meta)
    : components_(std::move(components)), config_(cfg), metadata_(std::move(meta)) {
  for (std::size_t i = 0; i < components_.size(); ++i) {
    if (components_[i].id != static_cast<int>(i)) {
      throw ValidationError("component ids must be dense and ascending (expected " +
                            std::to_string(i) + ", got " + std::to_string(components_[i].id) +
                            ")");
    }
  }
  if (!components_.empty() && std::abs(weight_sum() - 1.0) > 1e-6) {
    throw ValidationError("component weights sum to " + std::to_string(weight_sum()));
  }
  build_neighbor_graph(config_.neighbor_count);
}

double GmmMap::weight_sum() const {
  double s = 0.0;
  for (const auto& g : components_) s += g.weight;
  return s;
}

double GmmMap::degenerate_fraction() const {
  if (components_.empty()) return 0.0;
  const auto n = std::count_if(components_.begin(), components_.end(),
                               [](const auto& g) { return g.is_degenerate; });
  return static_cast<double>(n) / static_cast<double>(components_.size());
}

namespace {

using Scored = std::pair<double, int>;  // (distance, id); lexicographic order

std::vector<int> sorted_ids(std::vector<Scored> best) {
  std::sort(best.begin(), best.end());
  std::vector<int> ids;
  ids.reserve(best.size());
  for (const auto& s : best) ids.push_back(s.second);
  return ids;
}

}  // namespace

std::vector<std::vector<int>> brute_force_neighbors(const std::vector<GaussianComponent3D>& comps,
                                                    int k) {
  const int n = static_cast<int>(comps.size());
  k = std::clamp(k, 0, std::max(n - 1, 0));
  std::vector<std::vector<int>> out(n);
  for (int a = 0; a < n; ++a) {
    std::vector<Scored> all;
    for (int b = 0; b < n; ++b) {
      if (b != a) all.emplace_back(bhattacharyya_distance(comps[a], comps[b]), comps[b].id);
    }
    std::partial_sort(all.begin(), all.begin() + k, all.end());
    all.resize(k);
    out[a] = sorted_ids(std::move(all));
  }
  return out;
}

// Exact k-NN over bucket grids of the means. The Bhattacharyya distance is
// bounded below by |dmu|^2 / (4 (l3_a + l3_b)) (the log-determinant term is
// non-negative), which prunes single pairs and ends each ring walk.
void GmmMap::build_neighbor_graph(int k) {
  const int n = static_cast<int>(components_.size());
  k = std::clamp(k, 0, std::max(n - 1, 0));
  for (auto& g : components_) g.neighbors.clear();
  if (k == 0) return;

  std::vector<Vec3> means;
  std::vector<double> spread;
  means.reserve(n);
  spread.reserve(n);
  for (const auto& g : components_) {
    means.push_back(g.mean);
    spread.push_back(g.singular_values(2));
  }
  const detail::SpreadIndex<3> index(means, spread);
  auto exceeds = [](double bound, double worst) { return bound > worst * (1.0 + 1e-9) + 1e-12; };

  for (auto& a : components_) {
    std::priority_queue<Scored> heap;  // max-heap on (distance, id)
    auto consider = [&](int idx) {
      if (idx == a.id) return;
      const GaussianComponent3D& b = components_[idx];
      const double lb = (a.mean - b.mean).squaredNorm() /
                        (4.0 * (a.singular_values(2) + b.singular_values(2)));
      if (static_cast<int>(heap.size()) == k && exceeds(lb, heap.top().first)) return;
      const Scored s(bhattacharyya_distance(a, b), b.id);
      if (static_cast<int>(heap.size()) < k) {
        heap.push(s);
      } else if (s < heap.top()) {
        heap.pop();
        heap.push(s);
      }
    };
    auto worst = [&] {
      return static_cast<int>(heap.size()) == k ? heap.top().first
                                                : std::numeric_limits<double>::infinity();
    };
    index.search(a.mean, a.singular_values(2), consider, worst);

    std::vector<Scored> best;
    best.reserve(k);
    while (!heap.empty()) {
      best.push_back(heap.top());
      heap.pop();
    }
    a.neighbors = sorted_ids(std::move(best));
  }
}

namespace {

bool parse_double(std::string_view tok, double& out) {
  const char* first = tok.data();
  const char* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

void append_number(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  out.append(buf, ptr);
}

}  // namespace

GmmMap parse_map(std::istream& in, const MapConfig& cfg) {
  std::string line;
  int line_no = 0;
  bool have_header = false;
  long expected = 0;
  MapMetadata meta;
  std::vector<GaussianComponent3D> comps;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    if (const auto hash = view.find('#'); hash != std::string_view::npos) {
      const std::string_view comment = trim(view.substr(hash + 1));
      if (const auto colon = comment.find(':'); colon != std::string_view::npos && hash == 0) {
        const auto key = trim(comment.substr(0, colon));
        if (!key.empty() && key.find(' ') == std::string_view::npos) {
          meta.entries[std::string(key)] = std::string(trim(comment.substr(colon + 1)));
        }
      }
      view = view.substr(0, hash);
    }
    const auto tokens = split_ws(view);
    if (tokens.empty()) continue;

    if (!have_header) {
      if (tokens.size() != 3 || tokens[0] != "GMMMAP" || tokens[1] != "1") {
        throw ParseError("expected header 'GMMMAP 1 <count>'", line_no);
      }
      auto [ptr, ec] = std::from_chars(tokens[2].data(), tokens[2].data() + tokens[2].size(),
                                       expected);
      if (ec != std::errc() || ptr != tokens[2].data() + tokens[2].size() || expected < 0) {
        throw ParseError("invalid component count", line_no);
      }
      have_header = true;
      comps.reserve(expected);
      continue;
    }

    if (tokens.size() != 11) {
      throw ParseError("expected 11 fields, got " + std::to_string(tokens.size()), line_no);
    }
    long id = 0;
    {
      auto [ptr, ec] = std::from_chars(tokens[0].data(), tokens[0].data() + tokens[0].size(), id);
      if (ec != std::errc() || ptr != tokens[0].data() + tokens[0].size()) {
        throw ParseError("invalid component id", line_no);
      }
    }
    double v[10];
    for (int i = 0; i < 10; ++i) {
      if (!parse_double(tokens[i + 1], v[i])) {
        throw ParseError("invalid number '" + std::string(tokens[i + 1]) + "'", line_no);
      }
    }
    if (id != static_cast<long>(comps.size())) {
      throw ParseError("component ids must be dense and ascending", line_no);
    }
    Mat3 cov;
    cov << v[4], v[5], v[6], v[5], v[7], v[8], v[6], v[8], v[9];
    comps.push_back(make_component(static_cast<int>(id), v[0], Vec3(v[1], v[2], v[3]), cov, cfg));
  }
  if (!have_header) throw ParseError("missing header", line_no);
  if (static_cast<long>(comps.size()) != expected) {
    throw ParseError("header declares " + std::to_string(expected) + " components, found " +
                         std::to_string(comps.size()),
                     line_no);
  }
  return GmmMap(std::move(comps), cfg, std::move(meta));
}

GmmMap load_map(const std::filesystem::path& path, const MapConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open map file " + path.string());
  return parse_map(in, cfg);
}

void write_map(const GmmMap& map, std::ostream& out) {
  std::string buf;
  buf.reserve(map.size() * 220 + 64);
  buf += "GMMMAP 1 " + std::to_string(map.size()) + "\n";
  for (const auto& [key, value] : map.metadata().entries) {
    buf += "# " + key + ": " + value + "\n";
  }
  for (const auto& g : map.components()) {
    buf += std::to_string(g.id);
    const Mat3& c = g.covariance;
    for (double v : {g.weight, g.mean.x(), g.mean.y(), g.mean.z(), c(0, 0), c(0, 1), c(0, 2),
                     c(1, 1), c(1, 2), c(2, 2)}) {
      buf += ' ';
      append_number(buf, v);
    }
    buf += '\n';
  }
  out << buf;
}

void save_map(const GmmMap& map, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write map file " + path.string());
  write_map(map, out);
}

}  // namespace gmmloc
