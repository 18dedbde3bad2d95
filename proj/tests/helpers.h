#pragma once

#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "gmmloc/geometry.h"

namespace testutil {

using gmmloc::Mat3;
using gmmloc::Pose;
using gmmloc::Vec3;
using gmmloc::Vec6;

inline Vec6 random_tangent(std::mt19937_64& rng, double rot, double trans) {
  std::normal_distribution<double> n(0.0, 1.0);
  Vec6 v;
  for (int i = 0; i < 3; ++i) v[i] = rot * n(rng);
  for (int i = 3; i < 6; ++i) v[i] = trans * n(rng);
  return v;
}

inline Pose random_pose(std::mt19937_64& rng, double rot = 0.5, double trans = 1.0) {
  return gmmloc::se3_exp(random_tangent(rng, rot, trans));
}

inline Mat3 random_spd(std::mt19937_64& rng, double ridge = 0.1) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat3 A;
  for (int i = 0; i < 9; ++i) A.data()[i] = n(rng);
  return A.transpose() * A + ridge * Mat3::Identity();
}

// Central differences of f: R^n -> R^m around x.
inline Eigen::MatrixXd numeric_jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h = 1e-6) {
  const Eigen::VectorXd f0 = f(x);
  Eigen::MatrixXd J(f0.size(), x.size());
  for (int i = 0; i < x.size(); ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    J.col(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return J;
}

// max |A - B| / max(1, max |B|)
inline double relative_error(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return (A - B).cwiseAbs().maxCoeff() / std::max(1.0, B.cwiseAbs().maxCoeff());
}

}  // namespace testutil
