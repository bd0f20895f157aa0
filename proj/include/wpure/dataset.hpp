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

#ifndef WPURE_DATASET_HPP
#define WPURE_DATASET_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wpure/binio.hpp"
#include "wpure/error.hpp"

namespace wpure {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// Componentwise projection onto [0,1]^w.
inline Vector clip_to_domain(const Vector &x) { return x.cwiseMax(0.0).cwiseMin(1.0); }

/// Labelled inputs in [0,1]^w with per-input ground-truth manipulation flags.
///
/// Inputs are stored as f32, matching the on-disk layout, so save/load is a
/// bit-exact round trip. Labels are 1-based, in {1..num_classes}.
struct Dataset {
  RowMatrixF inputs;
  std::vector<std::uint32_t> labels;
  std::vector<std::uint8_t> manipulated;
  std::uint32_t num_classes = 0;

  Index size() const noexcept { return inputs.rows(); }
  Index dim() const noexcept { return inputs.cols(); }

  Vector input(Index i) const { return inputs.row(i).transpose().cast<double>(); }

  void set_input(Index i, const Vector &x) { inputs.row(i) = x.transpose().cast<float>(); }

  bool is_manipulated(Index i) const { return manipulated[static_cast<std::size_t>(i)] != 0; }

  /// Throws PreconditionError naming the first broken invariant.
  void validate() const {
    const auto n = static_cast<std::size_t>(size());
    detail::require(n >= 1 && dim() >= 1, "dataset must have n >= 1 and w >= 1");
    detail::require(num_classes >= 1, "dataset must have at least one class");
    detail::require(labels.size() == n && manipulated.size() == n, "labels/flags length must equal n");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 1 || labels[i] > num_classes)
        throw PreconditionError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                " outside 1.." + std::to_string(num_classes));
      if (manipulated[i] > 1) throw PreconditionError("flag at row " + std::to_string(i) + " is not 0/1");
    }
    for (Index i = 0; i < size(); ++i)
      for (Index j = 0; j < dim(); ++j) {
        const float v = inputs(i, j);
        if (!(v >= 0.0f && v <= 1.0f))
          throw PreconditionError("coordinate (" + std::to_string(i) + "," + std::to_string(j) + ") = " +
                                  std::to_string(v) + " outside [0,1]");
      }
  }

  /// Rows selected by `indices`, in the given order.
  Dataset subset(std::span<const Index> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.inputs.resize(static_cast<Index>(indices.size()), dim());
    out.labels.reserve(indices.size());
    out.manipulated.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const Index i = indices[r];
      out.inputs.row(static_cast<Index>(r)) = inputs.row(i);
      out.labels.push_back(labels[static_cast<std::size_t>(i)]);
      out.manipulated.push_back(manipulated[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  /// Row indices whose label equals `label`, ascending.
  std::vector<Index> class_members(std::uint32_t label) const {
    std::vector<Index> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) out.push_back(static_cast<Index>(i));
    return out;
  }

  friend bool operator==(const Dataset &a, const Dataset &b) {
    return a.num_classes == b.num_classes && a.labels == b.labels && a.manipulated == b.manipulated &&
           a.inputs.rows() == b.inputs.rows() && a.inputs.cols() == b.inputs.cols() &&
           std::equal(a.inputs.data(), a.inputs.data() + a.inputs.size(), b.inputs.data(),
                      [](float x, float y) { return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y); });
  }
};

namespace dataset_format {
inline constexpr char kMagic[] = "MDAT";
inline constexpr std::uint32_t kVersion = 1;
} // namespace dataset_format

/// Serializes to the MDAT layout:
/// magic "MDAT" | version u32 | n u64 | w u64 | Y u32 | labels n*u32 | flags n*u8 | inputs n*w f32 row-major.
inline std::vector<std::uint8_t> encode_dataset(const Dataset &d) {
  d.validate();
  binio::Writer w;
  w.magic(dataset_format::kMagic);
  w.u32(dataset_format::kVersion);
  w.u64(static_cast<std::uint64_t>(d.size()));
  w.u64(static_cast<std::uint64_t>(d.dim()));
  w.u32(d.num_classes);
  for (auto l : d.labels) w.u32(l);
  for (auto f : d.manipulated) w.u8(f);
  for (Index i = 0; i < d.inputs.size(); ++i) w.f32(d.inputs.data()[i]);
  return w.bytes();
}

inline Dataset decode_dataset(std::vector<std::uint8_t> bytes) {
  using K = ParseError::Kind;
  binio::Reader r(std::move(bytes));
  r.expect_magic(dataset_format::kMagic);
  const auto version_at = r.offset();
  if (r.u32("version") != dataset_format::kVersion) throw ParseError(K::BadVersion, version_at, "unsupported version");
  const auto shape_at = r.offset();
  const std::uint64_t n = r.u64("n");
  const std::uint64_t w = r.u64("w");
  const std::uint32_t num_classes = r.u32("Y");
  if (n == 0 || w == 0 || num_classes == 0) throw ParseError(K::BadShape, shape_at, "n, w and Y must be positive");
  // 4 + 1 + 4w bytes per row; reject sizes that cannot fit before allocating.
  if (w > r.remaining() / 4 || n > r.remaining() / (5 + 4 * w))
    throw ParseError(K::Truncated, r.offset(),
                     "truncated payload: " + std::to_string(r.remaining()) + " bytes cannot hold " + std::to_string(n) +
                         " rows of width " + std::to_string(w));

  Dataset d;
  d.num_classes = num_classes;
  d.labels.resize(n);
  d.manipulated.resize(n);
  d.inputs.resize(static_cast<Index>(n), static_cast<Index>(w));
  r.need(n * 4, "labels");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const auto l = r.u32("label");
    if (l < 1 || l > num_classes)
      throw ParseError(K::LabelOutOfRange, at, "label " + std::to_string(l) + " outside 1.." + std::to_string(num_classes));
    d.labels[i] = l;
  }
  r.need(n, "flags");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto at = r.offset();
    const auto f = r.u8("flag");
    if (f > 1) throw ParseError(K::BadValue, at, "manipulation flag must be 0 or 1");
    d.manipulated[i] = f;
  }
  r.need(n * w * 4, "inputs");
  for (std::uint64_t k = 0; k < n * w; ++k) {
    const auto at = r.offset();
    const float v = r.f32("input");
    if (!(v >= 0.0f && v <= 1.0f))
      throw ParseError(K::CoordinateOutOfDomain, at, "coordinate " + std::to_string(v) + " outside [0,1]");
    d.inputs.data()[k] = v;
  }
  r.expect_end();
  return d;
}

inline Dataset load_dataset(const std::filesystem::path &path) { return decode_dataset(binio::read_file(path)); }

inline void save_dataset(const Dataset &d, const std::filesystem::path &path) {
  binio::write_file_atomic(path, encode_dataset(d));
}

/// Inputs as an n x w double matrix.
inline RowMatrix inputs_as_double(const Dataset &d) { return d.inputs.cast<double>(); }

} // namespace wpure

#endif // WPURE_DATASET_HPP
