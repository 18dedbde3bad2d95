#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "gmmloc/errors.h"
#include "gmmloc/gmm_map.h"
#include "helpers.h"

using namespace gmmloc;

namespace {

std::vector<GaussianComponent3D> random_components(int n, std::uint64_t seed, double spread = 5.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-spread, spread);
  std::vector<GaussianComponent3D> out;
  for (int i = 0; i < n; ++i) {
    const Mat3 R = se3_exp(testutil::random_tangent(rng, 1.0, 0.0)).rotation();
    std::uniform_real_distribution<double> ev(0.001, 0.2);
    const Vec3 l(ev(rng), ev(rng), ev(rng));
    out.push_back(make_component(i, 1.0 / n, Vec3(pos(rng), pos(rng), pos(rng)),
                                 R * l.asDiagonal() * R.transpose()));
  }
  return out;
}

}  // namespace

TEST_SUITE("gmm_map") {

TEST_CASE("decomposition of a diagonal covariance") {
  const CovarianceDecomposition d = decompose_covariance(Vec3(4, 1, 9).asDiagonal());
  CHECK((d.singular_values - Vec3(1, 4, 9)).norm() < 1e-12);
  CHECK(std::abs(d.rotation.determinant() - 1.0) < 1e-12);
  // a signed permutation
  CHECK((d.rotation.cwiseAbs() * Vec3::Ones() - Vec3::Ones()).norm() < 1e-12);
}

TEST_CASE("isotropic covariance reconstructs") {
  const CovarianceDecomposition d = decompose_covariance(Mat3::Identity());
  CHECK((d.singular_values - Vec3::Ones()).norm() < 1e-12);
  const Mat3 rec = d.rotation * d.singular_values.asDiagonal() * d.rotation.transpose();
  CHECK((rec - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("random SPD reconstruction and handedness") {
  std::mt19937_64 rng(41);
  double worst = 0.0, worst_det = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 S = testutil::random_spd(rng);
    const CovarianceDecomposition d = decompose_covariance(S);
    const Mat3 rec = d.rotation * d.singular_values.asDiagonal() * d.rotation.transpose();
    worst = std::max(worst, (rec - S).cwiseAbs().maxCoeff());
    worst_det = std::max(worst_det, std::abs(d.rotation.determinant() - 1.0));
    CHECK(d.singular_values[0] <= d.singular_values[1]);
    CHECK(d.singular_values[1] <= d.singular_values[2]);
  }
  CHECK(worst < 1e-9);
  CHECK(worst_det < 1e-9);
}

TEST_CASE("non-symmetric covariance is rejected") {
  Mat3 S = Mat3::Identity();
  S(0, 1) = 0.1;
  CHECK_THROWS_AS(decompose_covariance(S), ValidationError);
}

TEST_CASE("degeneracy threshold") {
  CHECK(detect_degeneracy(Vec3(1e-4, 0.04, 0.09)));
  CHECK_FALSE(detect_degeneracy(Vec3(0.5, 1.0, 2.0)));
  CHECK(detect_degeneracy(Vec3(0.0099, 1.0, 1.0)));
  CHECK_FALSE(detect_degeneracy(Vec3(0.0101, 1.0, 1.0)));
  CHECK_FALSE(detect_degeneracy(Vec3(0.01, 1.0, 1.0)));
}

TEST_CASE("make_component floors and caches") {
  const Mat3 flat = Vec3(0.0, 0.04, 0.09).asDiagonal();
  const GaussianComponent3D g = make_component(3, 1.0, Vec3(1, 2, 3), flat);
  CHECK(g.is_degenerate);
  CHECK(g.singular_values[0] == doctest::Approx(kEigenFloor));
  CHECK(std::abs(std::abs(g.normal().x()) - 1.0) < 1e-12);
  CHECK((g.information * g.covariance - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
  const Mat3 L = g.whitening.inverse();
  CHECK(((L * L.transpose()) - g.covariance).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(g.log_det == doctest::Approx(std::log(g.covariance.determinant())));
}

TEST_CASE("invalid components name their id") {
  const Mat3 bad = Vec3(-0.1, 1.0, 1.0).asDiagonal();
  try {
    make_component(7, 1.0, Vec3::Zero(), bad);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("component 7") != std::string::npos);
  }
  CHECK_THROWS_AS(make_component(1, 1.0, Vec3(NAN, 0, 0), Mat3::Identity()), ValidationError);
  CHECK_THROWS_AS(make_component(1, 0.0, Vec3::Zero(), Mat3::Identity()), ValidationError);
}

TEST_CASE("bhattacharyya closed forms") {
  const GaussianComponent3D a = make_component(0, 0.5, Vec3::Zero(), Mat3::Identity());
  const GaussianComponent3D b = make_component(1, 0.5, Vec3(2, 0, 0), Mat3::Identity());
  CHECK(bhattacharyya_distance(a, a) == doctest::Approx(0.0));
  CHECK(bhattacharyya_distance(a, b) == doctest::Approx(0.5));
  const GaussianComponent3D c = make_component(1, 0.5, Vec3::Zero(), 4.0 * Mat3::Identity());
  CHECK(bhattacharyya_distance(a, c) == doctest::Approx(0.5 * std::log(15.625 / 8.0)).epsilon(1e-12));
}

TEST_CASE("bhattacharyya is exactly symmetric and non-negative") {
  const auto comps = random_components(50, 43);
  for (std::size_t i = 0; i + 1 < comps.size(); ++i) {
    const double ab = bhattacharyya_distance(comps[i], comps[i + 1]);
    CHECK(ab == bhattacharyya_distance(comps[i + 1], comps[i]));
    CHECK(ab >= 0.0);
  }
}

TEST_CASE("log likelihood closed forms") {
  const GaussianComponent3D g = make_component(0, 1.0, Vec3(1, 1, 1), Mat3::Identity());
  const double c = -1.5 * std::log(2.0 * std::numbers::pi);
  CHECK(log_likelihood(Vec3(1, 1, 1), g) == doctest::Approx(c).epsilon(1e-14));
  CHECK(log_likelihood(Vec3(2, 1, 1), g) == doctest::Approx(c - 0.5).epsilon(1e-14));
}

TEST_CASE("density integrates to one over a 6 sigma box") {
  const Vec3 l(0.04, 0.25, 1.0);
  const Mat3 R = so3_exp(Vec3(0.3, -0.5, 0.9));
  const GaussianComponent3D g = make_component(0, 1.0, Vec3(0.5, -1, 2), R * l.asDiagonal() * R.transpose());
  // Midpoint rule in the eigenbasis; the Jacobian of a rotation is 1.
  const int n = 60;
  double sum = 0.0;
  const Vec3 s = l.cwiseSqrt();
  const Vec3 h = 12.0 * s / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        const Vec3 local(-6 * s[0] + (i + 0.5) * h[0], -6 * s[1] + (j + 0.5) * h[1],
                         -6 * s[2] + (k + 0.5) * h[2]);
        sum += std::exp(log_likelihood(g.mean + R * local, g));
      }
  CHECK(std::abs(sum * h.prod() - 1.0) < 1e-3);
}

TEST_CASE("log likelihood peaks at the mean") {
  std::mt19937_64 rng(47);
  for (const auto& g : random_components(20, 53)) {
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return Eigen::VectorXd::Constant(1, log_likelihood(Vec3(x), g));
    };
    const Eigen::MatrixXd grad = testutil::numeric_jacobian(f, g.mean, 1e-5);
    CHECK(grad.cwiseAbs().maxCoeff() < 1e-6);
    const Vec3 off = g.mean + 0.01 * Vec3(1, -1, 1);
    CHECK(log_likelihood(off, g) < log_likelihood(g.mean, g));
  }
}

TEST_CASE("neighbor graph of collinear components") {
  std::vector<GaussianComponent3D> comps;
  const double xs[3] = {0, 1, 10};
  for (int i = 0; i < 3; ++i) comps.push_back(make_component(i, 1.0 / 3, Vec3(xs[i], 0, 0), Mat3::Identity()));
  MapConfig cfg;
  cfg.neighbor_count = 1;
  const GmmMap map(comps, cfg);
  REQUIRE(map.component(0).neighbors.size() == 1);
  CHECK(map.component(0).neighbors[0] == 1);

  GmmMap copy = map;
  copy.build_neighbor_graph(0);
  for (const auto& g : copy.components()) CHECK(g.neighbors.empty());
  copy.build_neighbor_graph(10);
  for (const auto& g : copy.components()) CHECK(g.neighbors.size() == 2);
}

TEST_CASE("neighbor graph equals brute force") {
  for (int n : {100, 200}) {
    const auto comps = random_components(n, 59 + n, 3.0);
    GmmMap map(comps);
    for (int k : {1, 5, 8}) {
      map.build_neighbor_graph(k);
      const auto brute = brute_force_neighbors(map.components(), k);
      for (int i = 0; i < n; ++i) CHECK(map.component(i).neighbors == brute[i]);
    }
  }
}

TEST_CASE("map validation") {
  auto comps = random_components(3, 61);
  comps[0].weight = 0.9;
  CHECK_THROWS_AS(GmmMap{comps}, ValidationError);
  comps = random_components(3, 61);
  comps[2].id = 5;
  CHECK_THROWS_AS(GmmMap{comps}, ValidationError);
}

TEST_CASE("save and load round trip") {
  const GmmMap map(random_components(3, 67));
  std::stringstream ss;
  write_map(map, ss);
  const GmmMap back = parse_map(ss);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const auto& a = map.component(i);
    const auto& b = back.component(i);
    CHECK(a.weight == b.weight);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.covariance - b.covariance).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((a.singular_values - b.singular_values).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(a.is_degenerate == b.is_degenerate);
    CHECK(a.neighbors == b.neighbors);
  }
}

TEST_CASE("map metadata survives a round trip") {
  GmmMap map(random_components(2, 71));
  map.metadata().entries["source"] = "room.xyz";
  std::stringstream ss;
  write_map(map, ss);
  const GmmMap back = parse_map(ss);
  CHECK(back.metadata().entries.at("source") == "room.xyz");
}

TEST_CASE("parse errors carry line numbers") {
  auto line_of = [](const std::string& text) {
    std::istringstream in(text);
    try {
      parse_map(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("GMMMAP 1 1\n0 1 0 0 0 1 0 0 1 0\n") == 2);
  CHECK(line_of("# comment\nGMMMAP 1 1\n0 1 0 0 0 1 0 0 1 0 abc\n") == 3);
  CHECK(line_of("NOTAMAP\n") == 1);
  CHECK(line_of("GMMMAP 1 2\n0 1 0 0 0 1 0 0 1 0 1\n") > 0);
}

TEST_CASE("negative eigenvalue in a file names the component") {
  std::istringstream in("GMMMAP 1 2\n0 0.5 0 0 0 1 0 0 1 0 1\n1 0.5 0 0 0 -0.1 0 0 1 0 1\n");
  try {
    parse_map(in);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("component 1") != std::string::npos);
  }
}

TEST_CASE("4500 components load in under 100 ms") {
  const GmmMap map(random_components(4500, 73, 20.0));
  std::stringstream ss;
  write_map(map, ss);
  const std::string text = ss.str();
  const auto t0 = std::chrono::steady_clock::now();
  std::istringstream in(text);
  const GmmMap back = parse_map(in);
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("load + preprocess of 4500 components: " << ms << " ms");
  CHECK(back.size() == 4500);
  CHECK(ms < 100.0);
}

}  // TEST_SUITE
