//
// Copyright 2026 The wpure Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WPURE_TESTS_TEST_SUPPORT_HPP
#define WPURE_TESTS_TEST_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <Eigen/Dense>

#include "wpure/critic.hpp"
#include "wpure/dataset.hpp"

namespace wpure::testing {

inline std::filesystem::path temp_path(const std::string &name) {
  auto dir = std::filesystem::temp_directory_path() / "wpure_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

inline Vector random_vector(std::mt19937_64 &rng, Index n, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline Matrix random_matrix(std::mt19937_64 &rng, Index r, Index c, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = nd(rng);
  return m;
}

/// Central finite-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector &)> &f, const Vector &x, double step = 1e-4) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + step;
    const double fp = f(xp);
    xp(i) = orig - step;
    const double fm = f(xp);
    xp(i) = orig;
    g(i) = (fp - fm) / (2.0 * step);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double rel_error(const Vector &a, const Vector &b, double floor = 1e-8) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

inline Dataset make_dataset(const RowMatrixF &inputs, std::vector<std::uint32_t> labels, std::uint32_t classes) {
  Dataset d;
  d.inputs = inputs;
  d.labels = std::move(labels);
  d.manipulated.assign(d.labels.size(), 0);
  d.num_classes = classes;
  return d;
}

// Straight-loop evaluation of h and grad_v h from a flat parameter vector,
// independent of the Eigen code paths under test.
struct NaiveCritic {
  Index dv, hid;
  const Vector &p;

  double w1(Index k, Index j) const { return p(k * dv + j); }
  double b1(Index k) const { return p(hid * dv + k); }
  double w2(Index k) const { return p(hid * dv + hid + k); }
  double b2() const { return p(hid * dv + 2 * hid); }

  double z(Index k, const Vector &v) const {
    double s = b1(k);
    for (Index j = 0; j < dv; ++j) s += w1(k, j) * v(j);
    return s;
  }

  double value(const Vector &v) const {
    double s = b2();
    for (Index k = 0; k < hid; ++k) s += w2(k) * std::log1p(std::exp(z(k, v)));
    return s;
  }

  Vector grad(const Vector &v) const {
    Vector g = Vector::Zero(dv);
    for (Index k = 0; k < hid; ++k) {
      const double a = w2(k) / (1.0 + std::exp(-z(k, v)));
      for (Index j = 0; j < dv; ++j) g(j) += w1(k, j) * a;
    }
    return g;
  }
};

inline double naive_descent_loss(Index dv, Index hid, const Vector &p, const RowMatrix &pe, const RowMatrix &rf, double nu,
                          const Vector &eta) {
  const NaiveCritic h{dv, hid, p};
  const Index m = pe.rows();
  double gap = 0.0, pen = 0.0;
  for (Index b = 0; b < m; ++b) {
    gap += (h.value(pe.row(b).transpose()) - h.value(rf.row(b).transpose())) / static_cast<double>(m);
    const Vector v = eta(b) * pe.row(b).transpose() + (1.0 - eta(b)) * rf.row(b).transpose();
    const double n = h.grad(v).norm();
    pen += (n - 1.0) * (n - 1.0) / static_cast<double>(m);
  }
  return nu * pen - gap;
}

inline RowMatrix random_rows(std::mt19937_64 &rng, Index n, Index d, double lo, double hi) {
  RowMatrix m(n, d);
  for (Index i = 0; i < n; ++i) m.row(i) = random_vector(rng, d, lo, hi).transpose();
  return m;
}

/// Critic whose hidden units all sit deep in the linear part of softplus, so
/// h(v) is affine in v with slope equal to `slope_direction` up to ~1e-9.
inline Critic saturated_critic(const Vector &slope_direction, Index hidden) {
  const Index dv = slope_direction.size();
  Critic h(dv, hidden);
  for (Index k = 0; k < hidden; ++k) {
    h.w1().row(k) = slope_direction.transpose() * (static_cast<double>(k % 3) + 1.0);
    h.b1()(k) = 20.0;
  }
  const Vector eff = h.w1().transpose() * Vector::Ones(hidden);
  h.w2() = Vector::Ones(hidden) * (slope_direction.norm() / eff.norm());
  return h;
}

} // namespace wpure::testing

#endif
