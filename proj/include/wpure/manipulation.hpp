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

#ifndef WPURE_MANIPULATION_HPP
#define WPURE_MANIPULATION_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wpure/binio.hpp"
#include "wpure/dataset.hpp"
#include "wpure/detectors.hpp"
#include "wpure/error.hpp"
#include "wpure/feature_extractor.hpp"
#include "wpure/purifier.hpp"
#include "wpure/rng.hpp"
#include "wpure/special.hpp"

namespace wpure {

/// One random unit mark per class (row y-1 belongs to label y).
struct MarkSet {
  Matrix marks;         // Y x dv
  double fraction = 0.1; // marked share of each class
  double epsilon = 0.1;  // infinity-norm budget in input space

  Index classes() const { return marks.rows(); }
  Index dim() const { return marks.cols(); }
  bool operator==(const MarkSet &) const = default;
};

inline MarkSet gen_marks(Index classes, Index dv, SeedStream &rng, double fraction = 0.1, double epsilon = 0.1) {
  detail::require(dv >= 2, "gen_marks: dv must be >= 2");
  detail::require(classes >= 1, "gen_marks: need at least one class");
  MarkSet ms{Matrix(classes, dv), fraction, epsilon};
  for (Index y = 0; y < classes; ++y) {
    double norm = 0.0;
    do {
      for (Index j = 0; j < dv; ++j) ms.marks(y, j) = rng.normal();
      norm = ms.marks.row(y).norm();
    } while (norm < 1e-12);
    ms.marks.row(y) /= norm;
  }
  return ms;
}

namespace mark_format {
inline constexpr char kMagic[] = "MMRK";
inline constexpr std::uint32_t kVersion = 1;
} // namespace mark_format

/// MMRK layout: magic | version u32 | Y u64 | dv u64 | f64 fraction | f64 epsilon | Y*dv f32 row-major.
/// Marks are renormalized after the f32 round trip.
inline std::vector<std::uint8_t> encode_marks(const MarkSet &ms) {
  binio::Writer w;
  w.magic(mark_format::kMagic);
  w.u32(mark_format::kVersion);
  w.u64(static_cast<std::uint64_t>(ms.classes()));
  w.u64(static_cast<std::uint64_t>(ms.dim()));
  w.u64(std::bit_cast<std::uint64_t>(ms.fraction));
  w.u64(std::bit_cast<std::uint64_t>(ms.epsilon));
  for (Index y = 0; y < ms.classes(); ++y)
    for (Index j = 0; j < ms.dim(); ++j) w.f32(static_cast<float>(ms.marks(y, j)));
  return w.bytes();
}

inline MarkSet decode_marks(std::vector<std::uint8_t> bytes) {
  using K = ParseError::Kind;
  binio::Reader r(std::move(bytes));
  r.expect_magic(mark_format::kMagic);
  const auto version_at = r.offset();
  if (r.u32("version") != mark_format::kVersion) throw ParseError(K::BadVersion, version_at, "unsupported version");
  const auto shape_at = r.offset();
  const auto y = r.u64("classes");
  const auto dv = r.u64("dv");
  if (y == 0 || dv < 2 || y > (1u << 20) || dv > (1u << 24)) throw ParseError(K::BadShape, shape_at, "bad mark shape");
  MarkSet ms;
  ms.fraction = std::bit_cast<double>(r.u64("fraction"));
  ms.epsilon = std::bit_cast<double>(r.u64("epsilon"));
  if (r.remaining() != y * dv * 4) throw ParseError(K::BadShape, r.offset(), "mark payload size mismatch");
  ms.marks.resize(static_cast<Index>(y), static_cast<Index>(dv));
  for (Index i = 0; i < ms.marks.rows(); ++i) {
    const auto row_at = r.offset();
    for (Index j = 0; j < ms.marks.cols(); ++j) ms.marks(i, j) = r.f32("mark");
    const double norm = ms.marks.row(i).norm();
    if (!std::isfinite(norm) || norm < 1e-6) throw ParseError(K::BadValue, row_at, "mark row is not a direction");
    ms.marks.row(i) /= norm;
  }
  return ms;
}

inline void save_marks(const MarkSet &ms, const std::filesystem::path &path) {
  binio::write_file_atomic(path, encode_marks(ms));
}
inline MarkSet load_marks(const std::filesystem::path &path) { return decode_marks(binio::read_file(path)); }

/// Largest-magnitude f32 step from `base` toward `target` that stays within
/// `eps` of base (checked in double) and inside [0,1].
inline float bounded_f32(float base, double target, double eps) {
  const double b = base;
  const double t = std::clamp(target, std::max(0.0, b - eps), std::min(1.0, b + eps));
  float y = static_cast<float>(t);
  while (std::abs(static_cast<double>(y) - b) > eps) y = std::nextafter(y, base);
  return y;
}

namespace detail {

inline Vector sign_of(const Vector &g) { return g.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); }); }

// delta clamped to [-eps, eps] and to the domain around x.
inline Vector project_linf(const Vector &x, const Vector &delta, double eps) {
  return clip_to_domain(x + delta.cwiseMax(-eps).cwiseMin(eps)) - x;
}

// Writes x + delta into row i with the infinity-norm bound enforced after f32 rounding.
inline void store_bounded(Dataset &d, Index i, const Vector &x, const Vector &delta, double eps) {
  for (Index j = 0; j < x.size(); ++j) d.inputs(i, j) = bounded_f32(d.inputs(i, j), x(j) + delta(j), eps);
}

} // namespace detail

/// floor(fraction * |class|) members of each class, drawn uniformly.
inline std::vector<Index> select_per_class(const Dataset &d, double fraction, SeedStream &rng) {
  detail::require(fraction >= 0.0 && fraction <= 1.0, "select_per_class: fraction must be in [0,1]");
  std::vector<Index> out;
  for (std::uint32_t y = 1; y <= d.num_classes; ++y) {
    auto members = d.class_members(y);
    const auto count = std::min<std::uint64_t>(floor_count(fraction * static_cast<double>(members.size())), members.size());
    const auto chosen = detail::sample_without_replacement(std::move(members), count, rng);
    out.insert(out.end(), chosen.begin(), chosen.end());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct PgdConfig {
  Index steps = 50;
  double step_size = 0.01;
  double gamma = 0.1; // feature-preservation weight used by marking
};

/// Marks a `ms.fraction` share of every class: sign-gradient ascent on
/// cos(g(x+D), u_y) - gamma ||g(x+D) - g(x)||^2 under ||D||_inf <= epsilon,
/// keeping the best iterate. Flags are set on the marked inputs; labels never change.
inline Dataset mark_inputs(const Dataset &d, const MarkSet &ms, const FeatureExtractor &g, const PgdConfig &pgd,
                           SeedStream &rng) {
  detail::require_dims(g.input_dim() == d.dim(), "mark_inputs: extractor input width differs from data");
  detail::require_dims(g.output_dim() == ms.dim(), "mark_inputs: mark dimension differs from feature dimension");
  detail::require(ms.classes() >= static_cast<Index>(d.num_classes), "mark_inputs: fewer marks than classes");
  detail::require(ms.epsilon >= 0.0, "mark_inputs: epsilon must be >= 0");
  Dataset out = d;
  for (Index i : select_per_class(d, ms.fraction, rng)) {
    out.manipulated[static_cast<std::size_t>(i)] = 1;
    const Vector x = d.input(i);
    const Vector u = ms.marks.row(d.labels[static_cast<std::size_t>(i)] - 1).transpose();
    const Vector f0 = g.extract(x);
    const auto objective = [&](const Vector &f) {
      const double norm = f.norm();
      return (norm > 1e-12 ? u.dot(f) / norm : 0.0) - pgd.gamma * (f - f0).squaredNorm();
    };
    Vector delta = Vector::Zero(x.size()), best = delta;
    double best_value = objective(f0);
    for (Index s = 0; s < pgd.steps && ms.epsilon > 0.0; ++s) {
      const Vector f = g.extract(x + delta);
      const double norm = f.norm();
      Vector cot = -2.0 * pgd.gamma * (f - f0);
      if (norm > 1e-12) cot += (u - (u.dot(f) / (norm * norm)) * f) / norm;
      delta = detail::project_linf(x, delta + pgd.step_size * detail::sign_of(g.vjp(x + delta, cot)), ms.epsilon);
      if (const double v = objective(g.extract(x + delta)); v > best_value) {
        best_value = v;
        best = delta;
      }
    }
    detail::store_bounded(out, i, x, best, ms.epsilon);
  }
  return out;
}

/// Clean-label feature collision: the `fraction` share of class `target_y`
/// whose features lie nearest g(target_x) are moved by sign-gradient descent
/// on ||g(x+D) - g(target_x)||^2 under ||D||_inf <= epsilon, keeping the best
/// iterate. Returns the
/// poisoned dataset; the chosen indices are flagged.
inline Dataset poison_feature_collision(const Dataset &d, const Vector &target_x, std::uint32_t target_y, double fraction,
                                        double epsilon, const FeatureExtractor &g, const PgdConfig &pgd) {
  detail::require_dims(g.input_dim() == d.dim() && target_x.size() == d.dim(), "poison_feature_collision: width mismatch");
  detail::require(fraction >= 0.0 && fraction <= 1.0, "poison_feature_collision: fraction must be in [0,1]");
  detail::require(epsilon >= 0.0, "poison_feature_collision: epsilon must be >= 0");
  auto members = d.class_members(target_y);
  const auto count = floor_count(fraction * static_cast<double>(members.size()));
  if (count > members.size()) throw InfeasibleError("poison_feature_collision: target class too small", count, members.size());
  const Vector ft = g.extract(target_x);
  std::vector<std::pair<double, Index>> by_dist;
  for (Index i : members) by_dist.push_back({(g.extract(d.input(i)) - ft).squaredNorm(), i});
  std::sort(by_dist.begin(), by_dist.end());
  Dataset out = d;
  for (std::uint64_t c = 0; c < count; ++c) {
    const Index i = by_dist[c].second;
    out.manipulated[static_cast<std::size_t>(i)] = 1;
    const Vector x = d.input(i);
    Vector delta = Vector::Zero(x.size()), best = delta;
    double best_value = by_dist[c].first;
    for (Index s = 0; s < pgd.steps && epsilon > 0.0; ++s) {
      const Vector grad = g.vjp(x + delta, 2.0 * (g.extract(x + delta) - ft));
      delta = detail::project_linf(x, delta - pgd.step_size * detail::sign_of(grad), epsilon);
      if (const double v = (g.extract(x + delta) - ft).squaredNorm(); v < best_value) {
        best_value = v;
        best = delta;
      }
    }
    detail::store_bounded(out, i, x, best, epsilon);
  }
  return out;
}

/// A rectangular patch in the row-major `height` x `width` image layout of an input.
struct Trigger {
  Index height = 0, width = 0;       // image layout, height * width == w
  Index row = 0, col = 0;            // patch offset
  Index patch_h = 0, patch_w = 0;
  std::vector<double> values;        // patch_h * patch_w, row-major, in [0,1]

  void check(Index w) const {
    detail::require_dims(height * width == w, "trigger: image layout does not match input width");
    detail::require(patch_h >= 0 && patch_w >= 0 && row >= 0 && col >= 0, "trigger: negative geometry");
    detail::require(row + patch_h <= height && col + patch_w <= width, "trigger: patch out of bounds");
    detail::require(static_cast<Index>(values.size()) == patch_h * patch_w, "trigger: value count differs from patch size");
    for (double v : values) detail::require(v >= 0.0 && v <= 1.0, "trigger: values must lie in [0,1]");
  }
  template <class F> void for_each(F &&f) const {
    for (Index r = 0; r < patch_h; ++r)
      for (Index c = 0; c < patch_w; ++c) f((row + r) * width + col + c, values[static_cast<std::size_t>(r * patch_w + c)]);
  }
};

inline Vector patch_trigger(const Vector &x, const Trigger &t) {
  t.check(x.size());
  Vector out = x;
  t.for_each([&](Index j, double v) { out(j) = v; });
  return out;
}

/// Clean-label backdoor stand-in: a `fraction` share of class `target_y`
/// moves each patch coordinate toward the trigger by at most epsilon.
inline Dataset poison_backdoor(const Dataset &d, const Trigger &t, std::uint32_t target_y, double fraction, double epsilon,
                               SeedStream &rng) {
  t.check(d.dim());
  detail::require(epsilon >= 0.0, "poison_backdoor: epsilon must be >= 0");
  detail::require(fraction >= 0.0 && fraction <= 1.0, "poison_backdoor: fraction must be in [0,1]");
  auto members = d.class_members(target_y);
  const auto count = floor_count(fraction * static_cast<double>(members.size()));
  Dataset out = d;
  for (Index i : detail::sample_without_replacement(std::move(members), count, rng)) {
    out.manipulated[static_cast<std::size_t>(i)] = 1;
    const Vector x = d.input(i);
    Vector delta = Vector::Zero(x.size());
    t.for_each([&](Index j, double v) { delta(j) = std::clamp(v - x(j), -epsilon, epsilon); });
    detail::store_bounded(out, i, x, delta, epsilon);
  }
  return out;
}

enum class CombineMethod { Fisher, Bonferroni };

inline const char *to_string(CombineMethod m) { return m == CombineMethod::Fisher ? "fisher" : "bonferroni"; }

struct DetectionReport {
  std::vector<double> cosines;
  std::vector<double> pvalues;
  double combined = 1.0;
  bool flagged = false;
};

inline constexpr double kDetectionLevel = 0.05;

/// Per-class cosine between probe weights w_y and mark u_y, one-sided p-values
/// under the uniform-direction prior, and the combined verdict at p < 0.05.
inline DetectionReport detect_marks(const Matrix &weights, const MarkSet &ms, CombineMethod method = CombineMethod::Fisher) {
  detail::require_dims(weights.rows() == ms.classes() && weights.cols() == ms.dim(), "detect_marks: weights must be Y x dv");
  DetectionReport rep;
  for (Index y = 0; y < weights.rows(); ++y) {
    const double wn = weights.row(y).norm();
    if (!(wn > 0.0) || !std::isfinite(wn))
      throw PreconditionError("detect_marks: weight vector of class " + std::to_string(y + 1) + " has zero or non-finite norm");
    const double c = std::clamp(weights.row(y).dot(ms.marks.row(y)) / (wn * ms.marks.row(y).norm()), -1.0, 1.0);
    rep.cosines.push_back(c);
    rep.pvalues.push_back(cosine_pvalue(c, static_cast<long>(ms.dim())));
  }
  rep.combined = method == CombineMethod::Fisher ? fisher_combine(rep.pvalues) : bonferroni_combine(rep.pvalues);
  rep.flagged = rep.combined < kDetectionLevel;
  return rep;
}

} // namespace wpure

#endif // WPURE_MANIPULATION_HPP
