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

#ifndef WPURE_SYNTHETIC_HPP
#define WPURE_SYNTHETIC_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "wpure/dataset.hpp"
#include "wpure/error.hpp"
#include "wpure/rng.hpp"

namespace wpure {

/// Train/test split drawn around shared class centres (row y-1 of `centers`).
struct SyntheticSplit {
  Dataset train;
  Dataset test;
  Matrix centers;
};

namespace detail {

inline Dataset sample_around(const Matrix &centers, std::span<const Index> counts, double scale, SeedStream &rng) {
  Index n = 0;
  for (Index c : counts) n += c;
  Dataset d;
  d.num_classes = static_cast<std::uint32_t>(centers.rows());
  d.inputs.resize(n, centers.cols());
  Index row = 0;
  for (Index y = 0; y < centers.rows(); ++y)
    for (Index i = 0; i < counts[static_cast<std::size_t>(y)]; ++i, ++row) {
      for (Index j = 0; j < centers.cols(); ++j)
        d.inputs(row, j) = static_cast<float>(std::clamp(centers(y, j) + scale * rng.normal(), 0.0, 1.0));
      d.labels.push_back(static_cast<std::uint32_t>(y + 1));
    }
  d.manipulated.assign(static_cast<std::size_t>(n), 0);
  return d;
}

inline SyntheticSplit split_from_centers(Matrix centers, Index per_class, Index test_per_class, double scale, SeedStream &rng) {
  const std::vector<Index> train(static_cast<std::size_t>(centers.rows()), per_class);
  const std::vector<Index> test(static_cast<std::size_t>(centers.rows()), test_per_class);
  SyntheticSplit s;
  s.train = sample_around(centers, train, scale, rng);
  s.test = sample_around(centers, test, scale, rng);
  s.centers = std::move(centers);
  return s;
}

} // namespace detail

/// Isotropic Gaussian classes with centres uniform in [lo, hi]^dim.
inline SyntheticSplit gaussian_classes(Index classes, Index per_class, Index test_per_class, Index dim, double scale,
                                       SeedStream &rng, double lo = 0.3, double hi = 0.7) {
  detail::require(classes >= 1 && per_class >= 0 && test_per_class >= 0 && dim >= 1, "gaussian_classes: bad sizes");
  Matrix centers(classes, dim);
  for (Index y = 0; y < classes; ++y)
    for (Index j = 0; j < dim; ++j) centers(y, j) = lo + (hi - lo) * rng.uniform();
  return detail::split_from_centers(std::move(centers), per_class, test_per_class, scale, rng);
}

/// 2-D classes evenly spaced on a circle of `radius` around (0.5, 0.5).
inline SyntheticSplit ring_classes(Index classes, Index per_class, Index test_per_class, double radius, double scale,
                                   SeedStream &rng) {
  detail::require(classes >= 2 && radius > 0.0 && radius < 0.5, "ring_classes: need >= 2 classes and radius in (0, 0.5)");
  Matrix centers(classes, 2);
  for (Index y = 0; y < classes; ++y) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(y) / static_cast<double>(classes);
    centers(y, 0) = 0.5 + radius * std::cos(t);
    centers(y, 1) = 0.5 + radius * std::sin(t);
  }
  return detail::split_from_centers(std::move(centers), per_class, test_per_class, scale, rng);
}

/// One class split into a clean cluster at `clean_center` and an equally sized
/// flagged cluster at `shifted_center` (every coordinate).
inline SyntheticSplit two_cluster(Index per_cluster, Index dim, double clean_center, double shifted_center, double scale,
                                  SeedStream &rng) {
  detail::require(per_cluster >= 1 && dim >= 1, "two_cluster: bad sizes");
  Matrix centers(2, dim);
  centers.row(0).setConstant(clean_center);
  centers.row(1).setConstant(shifted_center);
  const std::vector<Index> counts{per_cluster, per_cluster};
  SyntheticSplit s;
  s.train = detail::sample_around(centers, counts, scale, rng);
  s.train.num_classes = 1;
  for (Index i = 0; i < 2 * per_cluster; ++i) {
    s.train.manipulated[static_cast<std::size_t>(i)] = i >= per_cluster;
    s.train.labels[static_cast<std::size_t>(i)] = 1;
  }
  s.test = s.train.subset(std::vector<Index>{});
  s.centers = std::move(centers);
  return s;
}

} // namespace wpure

#endif // WPURE_SYNTHETIC_HPP
