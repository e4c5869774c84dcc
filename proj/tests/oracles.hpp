// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference reference derivatives shared by the tests.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

namespace oracle {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Denominator floor: below it, central-difference roundoff dominates.
inline constexpr double kScaleFloor = 1e-3;

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kScaleFloor});
}

inline double max_rel_err(const Mat& a, const Mat& b) {
  double e = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) e = std::max(e, rel_err(a.data()[i], b.data()[i]));
  return e;
}

// Central differences of a scalar function.
inline Vec gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

// Central differences of a vector function; column j is d f / d x_j.
inline Mat jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  const Vec f0 = f(x);
  Mat J(f0.size(), x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Vec xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    J.col(j) = (f(xp) - f(xm)) / (2 * h);
  }
  return J;
}

inline Vec uniform(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

}  // namespace oracle
