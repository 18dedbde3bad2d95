#include "gmmloc/map_builder.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "gmmloc/errors.h"

namespace gmmloc {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Working parameters of one mixture component.
struct Params {
  double weight = 0.0;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  Mat3 whitening = Mat3::Identity();
  double log_const = 0.0;  // ln w - 1/2 (3 ln 2pi + ln det cov)
};

// Constrained covariance MLE: clamp eigenvalues from below.
Mat3 floor_covariance(const Mat3& cov, double floor) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (cov + cov.transpose()));
  const Vec3 ev = es.eigenvalues();
  if (ev.minCoeff() >= floor) return 0.5 * (cov + cov.transpose());
  const Mat3 U = es.eigenvectors();
  Mat3 out = U * ev.cwiseMax(floor).asDiagonal() * U.transpose();
  return 0.5 * (out + out.transpose());
}

void refresh_cache(Params& p) {
  Eigen::LLT<Mat3> llt(p.cov);
  if (llt.info() != Eigen::Success) throw NumericError("EM covariance lost definiteness");
  const Mat3 L = llt.matrixL();
  p.whitening = L.triangularView<Eigen::Lower>().solve(Mat3::Identity());
  const double log_det = 2.0 * L.diagonal().array().log().sum();
  p.log_const = std::log(p.weight) - 0.5 * (3.0 * kLog2Pi + log_det);
}

std::vector<int> kmeanspp_seeds(const std::vector<Vec3>& pts, int k, std::mt19937_64& rng) {
  const std::size_t n = pts.size();
  std::vector<int> centers;
  centers.reserve(k);
  centers.push_back(static_cast<int>(std::min<std::size_t>(n - 1, unit_uniform(rng) * n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (pts[i] - pts[centers[0]]).squaredNorm();
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = 0;
    if (total > 0.0) {
      const double target = unit_uniform(rng) * total;
      double acc = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc > target && d2[i] > 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<std::size_t>(n - 1, unit_uniform(rng) * n);
    }
    centers.push_back(static_cast<int>(pick));
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (pts[i] - pts[pick]).squaredNorm());
    }
  }
  return centers;
}

Mat3 average_covariance(const std::vector<Params>& params, int skip) {
  Mat3 acc = Mat3::Zero();
  int count = 0;
  for (int j = 0; j < static_cast<int>(params.size()); ++j) {
    if (j == skip || params[j].weight <= 0.0) continue;
    acc += params[j].cov;
    ++count;
  }
  return count > 0 ? Mat3(acc / count) : Mat3(Mat3::Identity() * 1e-2);
}

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 4096) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

FitResult fit_gmm_em(const PointCloud& cloud, const FitConfig& cfg) {
  const int K = cfg.component_count;
  const std::size_t N = cloud.size();
  if (K < 1) throw std::invalid_argument("component_count must be >= 1");
  if (!(cfg.tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  if (N == 0) throw std::invalid_argument("cannot fit an empty point cloud");
  if (static_cast<std::size_t>(K) > N) {
    throw std::invalid_argument("component_count exceeds the number of points");
  }
  for (const auto& p : cloud.points) {
    if (!p.allFinite()) throw ValidationError("point cloud has non-finite coordinates");
  }
  const auto& pts = cloud.points;
  const int threads =
      cfg.threads > 0 ? cfg.threads : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));

  std::mt19937_64 rng(cfg.seed);
  std::vector<Params> params(K);

  // Seeding and one hard-assignment pass.
  {
    const auto seeds = kmeanspp_seeds(pts, K, rng);
    std::vector<int> label(N);
    for (std::size_t i = 0; i < N; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int j = 0; j < K; ++j) {
        const double d = (pts[i] - pts[seeds[j]]).squaredNorm();
        if (d < best) {
          best = d;
          label[i] = j;
        }
      }
    }
    std::vector<double> count(K, 0.0);
    std::vector<Vec3> sum(K, Vec3::Zero());
    for (std::size_t i = 0; i < N; ++i) {
      count[label[i]] += 1.0;
      sum[label[i]] += pts[i];
    }
    for (int j = 0; j < K; ++j) {
      params[j].mean = count[j] > 0.0 ? Vec3(sum[j] / count[j]) : pts[seeds[j]];
    }
    std::vector<Mat3> scatter(K, Mat3::Zero());
    for (std::size_t i = 0; i < N; ++i) {
      const Vec3 d = pts[i] - params[label[i]].mean;
      scatter[label[i]] += d * d.transpose();
    }
    for (int j = 0; j < K; ++j) {
      params[j].weight = count[j] / static_cast<double>(N);
      params[j].cov = count[j] > 0.0 ? Mat3(scatter[j] / count[j]) : Mat3::Zero();
    }
    for (int j = 0; j < K; ++j) {
      if (count[j] == 0.0) {
        params[j].weight = 1.0 / static_cast<double>(N);
        params[j].cov = average_covariance(params, j);
      }
      params[j].cov = floor_covariance(params[j].cov, cfg.floor);
    }
    double wsum = 0.0;
    for (const auto& p : params) wsum += p.weight;
    for (auto& p : params) p.weight /= wsum;
  }

  FitResult result;
  std::vector<double> resp(static_cast<std::size_t>(K) * N);  // component-major
  std::vector<double> point_ll(N);

  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    for (auto& p : params) refresh_cache(p);

    // E-step.
    parallel_for(N, threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> logp(K);
      for (std::size_t i = begin; i < end; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < K; ++j) {
          const Vec3 d = pts[i] - params[j].mean;
          const Mat3& W = params[j].whitening;
          const double z0 = W(0, 0) * d.x();
          const double z1 = W(1, 0) * d.x() + W(1, 1) * d.y();
          const double z2 = W(2, 0) * d.x() + W(2, 1) * d.y() + W(2, 2) * d.z();
          logp[j] = params[j].log_const - 0.5 * (z0 * z0 + z1 * z1 + z2 * z2);
          mx = std::max(mx, logp[j]);
        }
        double s = 0.0;
        for (int j = 0; j < K; ++j) s += std::exp(logp[j] - mx);
        const double lse = mx + std::log(s);
        point_ll[i] = lse;
        for (int j = 0; j < K; ++j) resp[static_cast<std::size_t>(j) * N + i] = std::exp(logp[j] - lse);
      }
    });
    double ll = 0.0;
    for (double v : point_ll) ll += v;
    if (!std::isfinite(ll)) throw NumericError("EM log-likelihood is not finite");
    result.log_likelihood.push_back(ll);
    result.iterations = iter;

    if (iter > 1) {
      const double prev = result.log_likelihood[iter - 2];
      if (std::abs(ll - prev) / std::max(std::abs(prev), 1e-300) < cfg.tolerance) {
        result.converged = true;
        break;
      }
    }
    if (iter == cfg.max_iterations) break;

    // M-step; every reduction runs in point order.
    bool reseeded = false;
    for (int j = 0; j < K; ++j) {
      const double* r = &resp[static_cast<std::size_t>(j) * N];
      double nk = 0.0;
      Vec3 mean = Vec3::Zero();
      for (std::size_t i = 0; i < N; ++i) {
        nk += r[i];
        mean += r[i] * pts[i];
      }
      if (!(nk > 1e-10 * static_cast<double>(N))) {
        // Dead component: move it to the worst-explained point.
        const auto worst = std::min_element(point_ll.begin(), point_ll.end()) - point_ll.begin();
        params[j].mean = pts[worst];
        params[j].cov = floor_covariance(average_covariance(params, j), cfg.floor);
        params[j].weight = 1.0 / static_cast<double>(N);
        point_ll[worst] = std::numeric_limits<double>::infinity();
        reseeded = true;
        continue;
      }
      mean /= nk;
      Mat3 cov = Mat3::Zero();
      for (std::size_t i = 0; i < N; ++i) {
        const Vec3 d = pts[i] - mean;
        cov.noalias() += r[i] * (d * d.transpose());
      }
      params[j].weight = nk / static_cast<double>(N);
      params[j].mean = mean;
      params[j].cov = floor_covariance(cov / nk, cfg.floor);
    }
    if (reseeded) {
      result.reseeded_iterations.push_back(iter + 1);
      double wsum = 0.0;
      for (const auto& p : params) wsum += p.weight;
      for (auto& p : params) p.weight /= wsum;
    }
  }

  MapConfig map_cfg = cfg.map;
  map_cfg.eigen_floor = cfg.floor;
  std::vector<GaussianComponent3D> comps;
  comps.reserve(K);
  double wsum = 0.0;
  for (const auto& p : params) wsum += p.weight;
  for (int j = 0; j < K; ++j) {
    comps.push_back(make_component(j, params[j].weight / wsum, params[j].mean, params[j].cov, map_cfg));
  }
  MapMetadata meta;
  meta.entries["source"] = "em_fit";
  meta.entries["points"] = std::to_string(N);
  meta.entries["components"] = std::to_string(K);
  meta.entries["seed"] = std::to_string(cfg.seed);
  meta.entries["iterations"] = std::to_string(result.iterations);
  result.map = GmmMap(std::move(comps), map_cfg, std::move(meta));
  return result;
}

}  // namespace gmmloc
