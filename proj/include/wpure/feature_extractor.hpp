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

#ifndef WPURE_FEATURE_EXTRACTOR_HPP
#define WPURE_FEATURE_EXTRACTOR_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wpure/binio.hpp"
#include "wpure/dataset.hpp"
#include "wpure/error.hpp"

namespace wpure {

enum class ExtractorKind : std::uint8_t { Identity = 0, Linear = 1, Mlp = 2 };

inline const char *to_string(ExtractorKind k) {
  switch (k) {
  case ExtractorKind::Identity: return "identity";
  case ExtractorKind::Linear: return "linear";
  case ExtractorKind::Mlp: return "mlp";
  }
  return "?";
}

/// Frozen differentiable feature map g: [0,1]^w -> R^dv.
///
/// Three kinds are supported:
///   identity  g(x) = x                          (dv == w)
///   linear    g(x) = W x + b                    W: dv x w
///   mlp       g(x) = W2 tanh(W1 x + b1) + b2    W1: hidden x w, W2: dv x hidden
///
/// Immutable after construction; safe to share across threads.
class FeatureExtractor {
public:
  static FeatureExtractor identity(Index w) {
    detail::require(w >= 1, "identity extractor needs w >= 1");
    FeatureExtractor g;
    g.kind_ = ExtractorKind::Identity;
    g.w_ = g.dv_ = w;
    return g;
  }

  static FeatureExtractor linear(Matrix weight, Vector bias) {
    detail::require_dims(weight.rows() == bias.size(), "linear extractor: W rows must equal b length");
    detail::require(weight.size() > 0, "linear extractor: empty weight");
    FeatureExtractor g;
    g.kind_ = ExtractorKind::Linear;
    g.w_ = weight.cols();
    g.dv_ = weight.rows();
    g.w1_ = std::move(weight);
    g.b1_ = std::move(bias);
    g.check_finite();
    return g;
  }

  static FeatureExtractor mlp(Matrix w1, Vector b1, Matrix w2, Vector b2) {
    detail::require_dims(w1.rows() == b1.size(), "mlp extractor: W1 rows must equal b1 length");
    detail::require_dims(w2.cols() == w1.rows(), "mlp extractor: W2 cols must equal hidden width");
    detail::require_dims(w2.rows() == b2.size(), "mlp extractor: W2 rows must equal b2 length");
    detail::require(w1.size() > 0 && w2.size() > 0, "mlp extractor: empty weights");
    FeatureExtractor g;
    g.kind_ = ExtractorKind::Mlp;
    g.w_ = w1.cols();
    g.hidden_ = w1.rows();
    g.dv_ = w2.rows();
    g.w1_ = std::move(w1);
    g.b1_ = std::move(b1);
    g.w2_ = std::move(w2);
    g.b2_ = std::move(b2);
    g.check_finite();
    return g;
  }

  ExtractorKind kind() const noexcept { return kind_; }
  Index input_dim() const noexcept { return w_; }
  Index output_dim() const noexcept { return dv_; }
  Index hidden() const noexcept { return hidden_; }

  // Parameter blocks; empty where the kind has none. For linear, weight()/bias()
  // are W and b; for mlp they are W1/b1 and out_weight()/out_bias() are W2/b2.
  const Matrix &weight() const noexcept { return w1_; }
  const Vector &bias() const noexcept { return b1_; }
  const Matrix &out_weight() const noexcept { return w2_; }
  const Vector &out_bias() const noexcept { return b2_; }

  Vector extract(const Vector &x) const {
    detail::require_dims(x.size() == w_, "extract: input length " + std::to_string(x.size()) + " != w " + std::to_string(w_));
    switch (kind_) {
    case ExtractorKind::Identity: return x;
    case ExtractorKind::Linear: return w1_ * x + b1_;
    case ExtractorKind::Mlp: return w2_ * (w1_ * x + b1_).array().tanh().matrix() + b2_;
    }
    return {};
  }

  /// Row-wise extract of an n x w matrix.
  RowMatrix extract_rows(const RowMatrix &x) const {
    detail::require_dims(x.cols() == w_, "extract_rows: input width " + std::to_string(x.cols()) + " != w " + std::to_string(w_));
    switch (kind_) {
    case ExtractorKind::Identity: return x;
    case ExtractorKind::Linear: {
      RowMatrix out = x * w1_.transpose();
      out.rowwise() += b1_.transpose();
      return out;
    }
    case ExtractorKind::Mlp: {
      RowMatrix pre = x * w1_.transpose();
      pre.rowwise() += b1_.transpose();
      RowMatrix out = pre.array().tanh().matrix() * w2_.transpose();
      out.rowwise() += b2_.transpose();
      return out;
    }
    }
    return {};
  }

  RowMatrix extract_rows(const Dataset &d) const { return extract_rows(inputs_as_double(d)); }

  /// J_g(x)^T * cotangent.
  Vector vjp(const Vector &x, const Vector &cotangent) const {
    detail::require_dims(x.size() == w_, "vjp: input length mismatch");
    detail::require_dims(cotangent.size() == dv_, "vjp: cotangent length mismatch");
    switch (kind_) {
    case ExtractorKind::Identity: return cotangent;
    case ExtractorKind::Linear: return w1_.transpose() * cotangent;
    case ExtractorKind::Mlp: {
      const Vector a = (w1_ * x + b1_).array().tanh().matrix();
      const Vector dz = (1.0 - a.array().square()) * (w2_.transpose() * cotangent).array();
      return w1_.transpose() * dz;
    }
    }
    return {};
  }

  friend bool operator==(const FeatureExtractor &, const FeatureExtractor &) = default;

private:
  FeatureExtractor() = default;

  void check_finite() const {
    if (!w1_.allFinite() || !b1_.allFinite() || !w2_.allFinite() || !b2_.allFinite())
      throw NumericError("extractor parameters must be finite");
  }

  ExtractorKind kind_ = ExtractorKind::Identity;
  Index w_ = 0;
  Index dv_ = 0;
  Index hidden_ = 0;
  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  Vector b2_;
};

namespace detail {

inline void write_block(binio::Writer &w, const Matrix &m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) w.f32(static_cast<float>(m(i, j)));
}

inline void write_block(binio::Writer &w, const Vector &v) {
  for (Index i = 0; i < v.size(); ++i) w.f32(static_cast<float>(v(i)));
}

inline Matrix read_matrix(binio::Reader &r, Index rows, Index cols, const char *name) {
  r.need(static_cast<std::uint64_t>(rows * cols) * 4, name);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = r.f32(name);
  return m;
}

inline Vector read_vector(binio::Reader &r, Index n, const char *name) {
  r.need(static_cast<std::uint64_t>(n) * 4, name);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = r.f32(name);
  return v;
}

} // namespace detail

namespace extractor_format {
inline constexpr char kMagic[] = "MEXT";
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 24;
} // namespace extractor_format

/// MEXT layout: magic | version u32 | kind u8 | w u64 | dv u64 | [mlp: hidden u64] | f32 blocks.
/// Blocks (row-major): linear W(dv x w), b(dv); mlp W1(hidden x w), b1(hidden), W2(dv x hidden), b2(dv).
inline std::vector<std::uint8_t> encode_extractor(const FeatureExtractor &g) {
  binio::Writer w;
  w.magic(extractor_format::kMagic);
  w.u32(extractor_format::kVersion);
  w.u8(static_cast<std::uint8_t>(g.kind()));
  w.u64(static_cast<std::uint64_t>(g.input_dim()));
  w.u64(static_cast<std::uint64_t>(g.output_dim()));
  switch (g.kind()) {
  case ExtractorKind::Identity: break;
  case ExtractorKind::Linear:
    detail::write_block(w, g.weight());
    detail::write_block(w, g.bias());
    break;
  case ExtractorKind::Mlp:
    w.u64(static_cast<std::uint64_t>(g.hidden()));
    detail::write_block(w, g.weight());
    detail::write_block(w, g.bias());
    detail::write_block(w, g.out_weight());
    detail::write_block(w, g.out_bias());
    break;
  }
  return w.bytes();
}

inline FeatureExtractor decode_extractor(std::vector<std::uint8_t> bytes) {
  using K = ParseError::Kind;
  binio::Reader r(std::move(bytes));
  r.expect_magic(extractor_format::kMagic);
  const auto version_at = r.offset();
  if (r.u32("version") != extractor_format::kVersion) throw ParseError(K::BadVersion, version_at, "unsupported version");
  const auto kind_at = r.offset();
  const auto kind = r.u8("kind");
  const auto shape_at = r.offset();
  const auto w = r.u64("w");
  const auto dv = r.u64("dv");
  if (w == 0 || dv == 0 || w > extractor_format::kMaxDim || dv > extractor_format::kMaxDim)
    throw ParseError(K::BadShape, shape_at, "w and dv must be in 1..2^24");
  const auto wi = static_cast<Index>(w), dvi = static_cast<Index>(dv);
  FeatureExtractor g = FeatureExtractor::identity(1);
  try {
    switch (kind) {
    case 0:
      if (w != dv) throw ParseError(K::BadShape, shape_at, "identity extractor requires dv == w");
      g = FeatureExtractor::identity(wi);
      break;
    case 1: {
      if (r.remaining() != (w * dv + dv) * 4)
        throw ParseError(K::BadShape, r.offset(),
                         "linear extractor expects " + std::to_string(w * dv + dv) + " floats, found " +
                             std::to_string(r.remaining() / 4) + (r.remaining() % 4 ? " and a partial float" : ""));
      Matrix wt = detail::read_matrix(r, dvi, wi, "W");
      Vector b = detail::read_vector(r, dvi, "b");
      g = FeatureExtractor::linear(std::move(wt), std::move(b));
      break;
    }
    case 2: {
      const auto hidden_at = r.offset();
      const auto hidden = r.u64("hidden");
      if (hidden == 0 || hidden > extractor_format::kMaxDim)
        throw ParseError(K::BadShape, hidden_at, "hidden width must be in 1..2^24");
      const auto floats = hidden * w + hidden + dv * hidden + dv;
      if (r.remaining() != floats * 4)
        throw ParseError(K::BadShape, r.offset(),
                         "mlp extractor expects " + std::to_string(floats) + " floats, found " +
                             std::to_string(r.remaining() / 4) + (r.remaining() % 4 ? " and a partial float" : ""));
      const auto h = static_cast<Index>(hidden);
      Matrix w1 = detail::read_matrix(r, h, wi, "W1");
      Vector b1 = detail::read_vector(r, h, "b1");
      Matrix w2 = detail::read_matrix(r, dvi, h, "W2");
      Vector b2 = detail::read_vector(r, dvi, "b2");
      g = FeatureExtractor::mlp(std::move(w1), std::move(b1), std::move(w2), std::move(b2));
      break;
    }
    default: throw ParseError(K::BadValue, kind_at, "unknown extractor kind " + std::to_string(kind));
    }
  } catch (const NumericError &e) {
    throw ParseError(K::BadValue, r.offset(), e.what());
  }
  r.expect_end();
  return g;
}

inline FeatureExtractor load_extractor(const std::filesystem::path &path) {
  return decode_extractor(binio::read_file(path));
}

inline void save_extractor(const FeatureExtractor &g, const std::filesystem::path &path) {
  binio::write_file_atomic(path, encode_extractor(g));
}

} // namespace wpure

#endif // WPURE_FEATURE_EXTRACTOR_HPP
