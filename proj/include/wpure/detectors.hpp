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

#ifndef WPURE_DETECTORS_HPP
#define WPURE_DETECTORS_HPP

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "wpure/dataset.hpp"
#include "wpure/error.hpp"
#include "wpure/feature_extractor.hpp"
#include "wpure/purifier.hpp"
#include "wpure/rng.hpp"

namespace wpure {

enum class DetectorKind { Simulated, KnnKappa };

inline const char *to_string(DetectorKind k) { return k == DetectorKind::Simulated ? "simulated" : "knn_kappa"; }

struct DetectorSpec {
  DetectorKind kind = DetectorKind::Simulated;
  double q = 1.0;          // precision
  double r = 0.1;          // recall
  double manip_rate = 0.01;
  Index k = 10;            // neighbours (knn_kappa)
  Index kappa = 100;       // kept per class (knn_kappa)
};

struct Detection {
  std::vector<Index> reference; // sorted ascending
  std::vector<std::string> warnings;
};

/// Sizes drawn by the simulated detector: floor(n c r (1-q)/q) manipulated and
/// floor(n c r) clean indices, with c = 1 - manip_rate.
struct SimulatedCounts {
  std::uint64_t manipulated = 0;
  std::uint64_t clean = 0;
};

inline SimulatedCounts simulated_counts(std::uint64_t n, double q, double r, double manip_rate) {
  if (!(q > 0.0 && q <= 1.0)) throw PreconditionError("simulated_detect: q must be in (0,1]");
  if (!(r >= 0.0 && r <= 1.0)) throw PreconditionError("simulated_detect: r must be in [0,1]");
  if (!(manip_rate >= 0.0 && manip_rate < 1.0)) throw PreconditionError("simulated_detect: manip_rate must be in [0,1)");
  const double clean = static_cast<double>(n) * (1.0 - manip_rate) * r;
  return {floor_count(clean * (1.0 - q) / q), floor_count(clean)};
}

namespace detail {

// k distinct draws from `pool` without replacement (partial Fisher-Yates).
inline std::vector<Index> sample_without_replacement(std::vector<Index> pool, std::uint64_t k, SeedStream &rng) {
  const auto n = pool.size();
  for (std::uint64_t i = 0; i < k; ++i) {
    const auto j = i + rng.index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

} // namespace detail

/// Reference set with controlled precision q and recall r, drawn uniformly
/// from the flagged and unflagged pools. Manipulated indices are drawn first.
inline Detection simulated_detect(const Dataset &d, double q, double r, double manip_rate, SeedStream &rng) {
  const auto counts = simulated_counts(d.size(), q, r, manip_rate);
  std::vector<Index> manip, clean;
  for (Index i = 0; i < static_cast<Index>(d.size()); ++i) (d.is_manipulated(i) ? manip : clean).push_back(i);
  if (counts.manipulated > manip.size() || counts.clean > clean.size()) {
    const bool short_manip = counts.manipulated > manip.size();
    throw InfeasibleError("simulated_detect: " + std::string(short_manip ? "manipulated" : "clean") +
                              " pool too small (manipulated need " + std::to_string(counts.manipulated) + " have " +
                              std::to_string(manip.size()) + "; clean need " + std::to_string(counts.clean) + " have " +
                              std::to_string(clean.size()) + ")",
                          short_manip ? counts.manipulated : counts.clean, short_manip ? manip.size() : clean.size());
  }
  Detection out;
  out.reference = detail::sample_without_replacement(std::move(manip), counts.manipulated, rng);
  const auto c = detail::sample_without_replacement(std::move(clean), counts.clean, rng);
  out.reference.insert(out.reference.end(), c.begin(), c.end());
  std::sort(out.reference.begin(), out.reference.end());
  return out;
}

/// Fraction of each point's k nearest feature-space neighbours (self excluded,
/// equal distances ranked by lower index) that share its label.
inline std::vector<double> knn_confidence(const RowMatrix &features, std::span<const std::uint32_t> labels, Index k) {
  const Index n = features.rows();
  detail::require_dims(static_cast<std::size_t>(n) == labels.size(), "knn_confidence: label count differs from rows");
  detail::require(k >= 1 && k <= n - 1, "knn_confidence: k must be in [1, n-1]");
  std::vector<double> conf(static_cast<std::size_t>(n));
  std::vector<std::pair<double, Index>> dist(static_cast<std::size_t>(n - 1));
  for (Index i = 0; i < n; ++i) {
    const Vector d2 = (features.rowwise() - features.row(i)).rowwise().squaredNorm();
    std::size_t p = 0;
    for (Index j = 0; j < n; ++j)
      if (j != i) dist[p++] = {d2(j), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    const auto own = labels[static_cast<std::size_t>(i)];
    Index same = 0;
    for (auto it = dist.begin(); it != dist.begin() + k; ++it) same += labels[static_cast<std::size_t>(it->second)] == own;
    conf[static_cast<std::size_t>(i)] = static_cast<double>(same) / static_cast<double>(k);
  }
  return conf;
}

/// Keeps the kappa most confident members of every class. Classes with fewer
/// than kappa members are kept whole and reported in `warnings`.
inline Detection knn_kappa_detect(const Dataset &d, const FeatureExtractor &g, Index k, Index kappa) {
  detail::require(kappa >= 1, "knn_kappa_detect: kappa must be >= 1");
  const RowMatrix f = g.extract_rows(d);
  const auto conf = knn_confidence(f, d.labels, k);
  Detection out;
  for (std::uint32_t y = 1; y <= d.num_classes; ++y) {
    auto members = d.class_members(y);
    if (static_cast<Index>(members.size()) < kappa)
      out.warnings.push_back("class " + std::to_string(y) + " has " + std::to_string(members.size()) +
                             " members, fewer than kappa=" + std::to_string(kappa) + "; keeping all");
    std::stable_sort(members.begin(), members.end(), [&](Index a, Index b) {
      return conf[static_cast<std::size_t>(a)] > conf[static_cast<std::size_t>(b)];
    });
    members.resize(std::min<std::size_t>(members.size(), static_cast<std::size_t>(kappa)));
    out.reference.insert(out.reference.end(), members.begin(), members.end());
  }
  std::sort(out.reference.begin(), out.reference.end());
  return out;
}

/// Indices in [0, n) that are not in the sorted `reference`.
inline std::vector<Index> complement(std::span<const Index> reference, Index n) {
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(n) - reference.size());
  std::size_t p = 0;
  for (Index i = 0; i < n; ++i) {
    if (p < reference.size() && reference[p] == i) {
      ++p;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

} // namespace wpure

#endif // WPURE_DETECTORS_HPP
