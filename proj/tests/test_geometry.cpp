#include <doctest.h>

#include <algorithm>
#include <numbers>
#include <random>

#include "gmmloc/errors.h"
#include "gmmloc/geometry.h"
#include "helpers.h"

using namespace gmmloc;

TEST_SUITE("geometry") {

TEST_CASE("exp of zero is identity") {
  const Pose p = se3_exp(Vec6::Zero());
  CHECK((p.rotation() - Mat3::Identity()).norm() == 0.0);
  CHECK(p.translation().norm() == 0.0);
}

TEST_CASE("log inverts exp") {
  Vec6 v;
  v << 0.1, -0.2, 0.3, 0.01, 0.02, 0.03;
  CHECK((se3_log(se3_exp(v)) - v).cwiseAbs().maxCoeff() < 1e-9);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Vec6 w = testutil::random_tangent(rng, 0.8, 2.0);
    if (w.head<3>().norm() > 3.0) continue;
    CHECK((se3_log(se3_exp(w)) - w).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("quarter turn about z") {
  Vec6 v = Vec6::Zero();
  v[2] = std::numbers::pi / 2;
  // Rodrigues by hand: R = I + K for a unit z axis at 90 degrees.
  const Mat3 R = se3_exp(v).rotation();
  CHECK((R.col(0) - Vec3(0, 1, 0)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("log near pi") {
  Vec6 v = Vec6::Zero();
  v.head<3>() = Vec3(1, 2, -1).normalized() * (std::numbers::pi - 1e-7);
  const Vec6 back = se3_log(se3_exp(v));
  CHECK((se3_exp(back).rotation() - se3_exp(v).rotation()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("compose with inverse is identity and points round trip") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    const Pose p = testutil::random_pose(rng);
    const Pose e = p * p.inverse();
    CHECK((e.rotation() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(e.translation().norm() < 1e-9);
    const Vec3 x(0.3 * i, -1.0, 2.5);
    CHECK((p.inverse() * (p * x) - x).norm() < 1e-9);
    CHECK(std::abs(p.rotation().determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("long composition chains stay orthonormal") {
  std::mt19937_64 rng(11);
  Pose acc;
  for (int i = 0; i < 1000; ++i) acc = acc * testutil::random_pose(rng, 0.1, 0.1);
  const Mat3 R = acc.rotation();
  CHECK((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
  const Mat3 Rn = acc.normalized().rotation();
  CHECK((Rn.transpose() * Rn - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("right jacobian inverse matches finite differences of log") {
  std::mt19937_64 rng(17);
  for (int i = 0; i < 50; ++i) {
    const Vec6 xi = testutil::random_tangent(rng, 0.5, 1.0);
    const Pose T = se3_exp(xi);
    auto f = [&](const Eigen::VectorXd& d) -> Eigen::VectorXd {
      return se3_log(T * se3_exp(Vec6(d)));
    };
    const Eigen::MatrixXd num = testutil::numeric_jacobian(f, Eigen::VectorXd::Zero(6));
    CHECK(testutil::relative_error(se3_right_jacobian_inverse(se3_log(T)), num) < 1e-6);
  }
}

TEST_CASE("left jacobian and its inverse") {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 50; ++i) {
    const Vec6 xi = testutil::random_tangent(rng, 0.7, 1.0);
    CHECK((se3_left_jacobian(xi) * se3_left_jacobian_inverse(xi) - Mat6::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-9);
    const Vec3 w = xi.head<3>();
    CHECK((so3_left_jacobian(w) * so3_left_jacobian_inverse(w) - Mat3::Identity())
              .cwiseAbs()
              .maxCoeff() < 1e-9);
  }
}

TEST_CASE("project_point closed forms") {
  CameraIntrinsics K{100, 100, 0, 0, 640, 480};
  const PointProjection a = project_point(Vec3(0, 0, 2), K);
  CHECK(a.pixel.norm() == 0.0);
  Mat23 expected;
  expected << 50, 0, 0, 0, 50, 0;
  CHECK((a.jacobian - expected).cwiseAbs().maxCoeff() < 1e-12);

  CameraIntrinsics K2{100, 100, 320, 240, 640, 480};
  const PointProjection b = project_point(Vec3(1, 0, 2), K2);
  CHECK(b.pixel.x() == doctest::Approx(370.0));
  CHECK(b.pixel.y() == doctest::Approx(240.0));

  CHECK_THROWS_AS(project_point(Vec3(0, 0, 0), K), BehindCameraError);
  CHECK_THROWS_AS(project_point(Vec3(0, 0, -1), K), BehindCameraError);
}

TEST_CASE("project_point jacobian matches finite differences") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> xy(-3, 3), z(0.5, 10);
  const CameraIntrinsics K;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(xy(rng), xy(rng), z(rng));
    auto f = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      return project_point(Vec3(x), K).pixel;
    };
    const Eigen::MatrixXd num = testutil::numeric_jacobian(f, p);
    worst = std::max(worst, (project_point(p, K).jacobian - num).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("camera validation") {
  CameraIntrinsics K;
  K.fx = 0;
  CHECK_THROWS_AS(K.validate(), ValidationError);
  K = CameraIntrinsics{};
  K.height = 0;
  CHECK_THROWS_AS(K.validate(), ValidationError);
  CHECK_NOTHROW(CameraIntrinsics{}.validate());
}

TEST_CASE("look_at points the optical axis at the target") {
  const Vec3 eye(1, 2, 1.5), target(4, 0, 1);
  const Pose p = look_at(eye, target);
  CHECK((p.camera_center() - eye).norm() < 1e-12);
  const Vec3 tc = p * target;
  CHECK(std::abs(tc.x()) < 1e-12);
  CHECK(std::abs(tc.y()) < 1e-12);
  CHECK(tc.z() > 0);
  // world up appears towards smaller v
  const Vec3 above = p * (target + Vec3(0, 0, 0.5));
  CHECK(above.y() < 0);
}

TEST_CASE("visibility") {
  const CameraIntrinsics K;
  const Pose I;
  CHECK(is_visible(Vec3(0, 0, 3), I, K, 8.0));
  CHECK_FALSE(is_visible(Vec3(0, 0, -3), I, K, 8.0));
  CHECK_FALSE(is_visible(Vec3(0, 0, 9), I, K, 8.0));
  CHECK_FALSE(is_visible(Vec3(10, 0, 3), I, K, 8.0));
}

namespace {

struct TwoView {
  Pose a, b;
  ImagePoint ua, ub;
};

TwoView views_of(const Vec3& x, double baseline, const CameraIntrinsics& K) {
  TwoView v;
  v.a = Pose();
  v.b = Pose(Mat3::Identity(), Vec3(-baseline, 0, 0));
  v.ua = project_point(v.a * x, K).pixel;
  v.ub = project_point(v.b * x, K).pixel;
  return v;
}

}  // namespace

TEST_CASE("triangulation of exact observations") {
  const CameraIntrinsics K;
  const Vec3 x(1, 1, 5);
  const TwoView v = views_of(x, 0.2, K);
  CHECK((triangulate_two_view(v.ua, v.a, v.ub, v.b, K) - x).norm() < 1e-6);
}

TEST_CASE("triangulation rejects low parallax") {
  const CameraIntrinsics K;
  const Vec3 x(1, 1, 5);
  const TwoView v = views_of(x, 0.2, K);
  CHECK_THROWS_AS(triangulate_two_view(v.ua, v.a, v.ua, v.a, K), LowParallaxError);
  CHECK_FALSE(try_triangulate_two_view(v.ua, v.a, v.ua, v.a, K).has_value());
  const TwoView tiny = views_of(x, 0.01, K);
  CHECK(ray_parallax_deg(tiny.ua, tiny.a, tiny.ub, tiny.b, K) < 1.0);
  CHECK_THROWS_AS(triangulate_two_view(tiny.ua, tiny.a, tiny.ub, tiny.b, K), LowParallaxError);
}

TEST_CASE("triangulation noise follows first-order depth propagation") {
  // Depth std from disparity noise: z^2 * sigma_d / (f b), sigma_d = sqrt(2) sigma_px.
  // The median of |N(0, s)| is 0.6745 s; lateral error is negligible at this geometry.
  auto median_error = [](double f, std::uint64_t seed) {
    CameraIntrinsics K;
    K.fx = K.fy = f;
    K.cx = 320;
    K.cy = 240;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> px(0.0, 0.5);
    std::uniform_real_distribution<double> lateral(-0.5, 0.5);
    std::vector<double> err;
    for (int i = 0; i < 50; ++i) {
      const Vec3 x(lateral(rng), lateral(rng), 5.0);
      TwoView v = views_of(x, 0.2, K);
      v.ua += ImagePoint(px(rng), px(rng));
      v.ub += ImagePoint(px(rng), px(rng));
      err.push_back((triangulate_two_view(v.ua, v.a, v.ub, v.b, K) - x).norm());
    }
    std::nth_element(err.begin(), err.begin() + 25, err.end());
    return err[25];
  };
  for (double f : {400.0, 2000.0}) {
    const double predicted = 0.6745 * 25.0 * std::sqrt(2.0) * 0.5 / (f * 0.2);
    const double measured = median_error(f, 29);
    CHECK(measured > 0.5 * predicted);
    CHECK(measured < 1.6 * predicted);
  }
  // A 5 cm median at 5 m with a 0.2 m baseline needs a long focal length.
  CHECK(median_error(2000.0, 31) < 0.05);
}

}  // TEST_SUITE
