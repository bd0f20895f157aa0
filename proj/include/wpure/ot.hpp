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

#ifndef WPURE_OT_HPP
#define WPURE_OT_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "wpure/dataset.hpp"
#include "wpure/error.hpp"

namespace wpure {

struct Assignment {
  std::vector<Index> column_of_row; // permutation: row i is matched to column column_of_row[i]
  double cost = 0.0;
};

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, O(n^3)).
inline Assignment hungarian(const Matrix &cost) {
  detail::require_dims(cost.rows() == cost.cols(), "hungarian: cost matrix must be square");
  if (!cost.allFinite()) throw PreconditionError("hungarian: cost matrix must be finite");
  const Index n = cost.rows();
  Assignment out;
  if (n == 0) return out;

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual column used to seed each augmentation.
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(n + 1), 0.0);
  std::vector<Index> row_of_col(static_cast<std::size_t>(n + 1), 0), way(static_cast<std::size_t>(n + 1), 0);
  std::vector<double> minv(static_cast<std::size_t>(n + 1));
  std::vector<char> used(static_cast<std::size_t>(n + 1));

  for (Index i = 1; i <= n; ++i) {
    row_of_col[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Index i0 = row_of_col[static_cast<std::size_t>(j0)];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[sj];
        if (cur < minv[sj]) {
          minv[sj] = cur;
          way[sj] = j0;
        }
        if (minv[sj] < delta) {
          delta = minv[sj];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        const auto sj = static_cast<std::size_t>(j);
        if (used[sj]) {
          u[static_cast<std::size_t>(row_of_col[sj])] += delta;
          v[sj] -= delta;
        } else {
          minv[sj] -= delta;
        }
      }
      j0 = j1;
    } while (row_of_col[static_cast<std::size_t>(j0)] != 0);
    do {
      const Index j1 = way[static_cast<std::size_t>(j0)];
      row_of_col[static_cast<std::size_t>(j0)] = row_of_col[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  out.column_of_row.assign(static_cast<std::size_t>(n), 0);
  for (Index j = 1; j <= n; ++j) out.column_of_row[static_cast<std::size_t>(row_of_col[static_cast<std::size_t>(j)] - 1)] = j - 1;
  for (Index i = 0; i < n; ++i) out.cost += cost(i, out.column_of_row[static_cast<std::size_t>(i)]);
  return out;
}

/// Pairwise Euclidean distances between the rows of `a` and `b`.
inline Matrix euclidean_cost(const RowMatrix &a, const RowMatrix &b) {
  detail::require_dims(a.cols() == b.cols(), "euclidean_cost: point dimensions differ");
  Matrix c(a.rows(), b.rows());
  for (Index i = 0; i < a.rows(); ++i)
    for (Index j = 0; j < b.rows(); ++j) c(i, j) = (a.row(i) - b.row(j)).norm();
  return c;
}

/// Exact 1-Wasserstein distance between two equal-size uniform empirical
/// measures: the optimal assignment cost divided by n.
inline double exact_w1(const RowMatrix &a, const RowMatrix &b) {
  detail::require_dims(a.rows() == b.rows(), "exact_w1: point sets must have equal size (" + std::to_string(a.rows()) +
                                                 " vs " + std::to_string(b.rows()) + ")");
  detail::require(a.rows() >= 1, "exact_w1: point sets must be non-empty");
  const Matrix cost = euclidean_cost(a, b);
  const Assignment match = hungarian(cost);
  // Summing matched distances in sorted order makes W1(a,b) and W1(b,a) bit-identical.
  std::vector<double> d;
  d.reserve(match.column_of_row.size());
  for (std::size_t i = 0; i < match.column_of_row.size(); ++i) d.push_back(cost(static_cast<Index>(i), match.column_of_row[i]));
  std::sort(d.begin(), d.end());
  double total = 0.0;
  for (double x : d) total += x;
  return total / static_cast<double>(a.rows());
}

} // namespace wpure

#endif // WPURE_OT_HPP
