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

#ifndef WPURE_PROBE_HPP
#define WPURE_PROBE_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "wpure/binio.hpp"
#include "wpure/dataset.hpp"
#include "wpure/error.hpp"
#include "wpure/feature_extractor.hpp"
#include "wpure/manipulation.hpp"
#include "wpure/rng.hpp"

namespace wpure {

struct ProbeConfig {
  Index epochs = 50;
  double lr = 0.1;
  Index batch = 64;
};

/// Softmax regression on extractor features. Row y-1 of `weight` scores label y.
struct LinearProbe {
  Matrix weight; // Y x dv
  Vector bias;   // Y
  Index epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> loss_history; // mean cross-entropy before training, then after each epoch

  Index classes() const { return weight.rows(); }
  Index dim() const { return weight.cols(); }

  Vector scores(const Vector &v) const { return weight * v + bias; }

  /// 1-based label with the highest score; ties go to the lowest label.
  std::uint32_t predict_features(const Vector &v) const {
    const Vector s = scores(v);
    Index best = 0;
    for (Index y = 1; y < s.size(); ++y)
      if (s(y) > s(best)) best = y;
    return static_cast<std::uint32_t>(best + 1);
  }

  std::uint32_t predict(const FeatureExtractor &g, const Vector &x) const { return predict_features(g.extract(x)); }
};

namespace detail {

// Row-wise softmax probabilities of scores F W^T + b.
inline RowMatrix softmax_rows(const RowMatrix &f, const Matrix &w, const Vector &b) {
  RowMatrix s = f * w.transpose();
  s.rowwise() += b.transpose();
  s.colwise() -= s.rowwise().maxCoeff();
  s = s.array().exp().matrix();
  s.array().colwise() /= s.rowwise().sum().array();
  return s;
}

inline double mean_cross_entropy(const RowMatrix &f, std::span<const std::uint32_t> labels, const Matrix &w, const Vector &b) {
  RowMatrix s = f * w.transpose();
  s.rowwise() += b.transpose();
  double total = 0.0;
  for (Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
    total += lse - s(i, static_cast<Index>(labels[static_cast<std::size_t>(i)]) - 1);
  }
  return total / static_cast<double>(s.rows());
}

} // namespace detail

/// Minibatch gradient descent on mean cross-entropy from a zero start. Each
/// epoch visits a fresh permutation drawn from `rng`.
inline LinearProbe train_probe(const Dataset &d, const FeatureExtractor &g, const ProbeConfig &cfg, SeedStream &rng) {
  detail::require(d.size() >= 1, "train_probe: empty dataset");
  detail::require(d.num_classes >= 1, "train_probe: no classes");
  detail::require(cfg.epochs >= 0 && cfg.batch >= 1 && cfg.lr > 0.0, "train_probe: epochs >= 0, batch >= 1, lr > 0");
  const RowMatrix f = g.extract_rows(d);
  const Index n = f.rows(), Y = static_cast<Index>(d.num_classes);
  LinearProbe p{Matrix::Zero(Y, f.cols()), Vector::Zero(Y), cfg.epochs, cfg.lr, rng.seed(), {}};
  p.loss_history.push_back(detail::mean_cross_entropy(f, d.labels, p.weight, p.bias));
  std::vector<Index> order(static_cast<std::size_t>(n));
  RowMatrix fb;
  for (Index e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), Index{0});
    for (Index i = n - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.index(static_cast<std::uint64_t>(i + 1)))]);
    for (Index start = 0; start < n; start += cfg.batch) {
      const Index m = std::min(cfg.batch, n - start);
      fb.resize(m, f.cols());
      for (Index r = 0; r < m; ++r) fb.row(r) = f.row(order[static_cast<std::size_t>(start + r)]);
      RowMatrix resid = detail::softmax_rows(fb, p.weight, p.bias);
      for (Index r = 0; r < m; ++r) resid(r, d.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(start + r)])] - 1) -= 1.0;
      const double scale = cfg.lr / static_cast<double>(m);
      p.weight.noalias() -= scale * (resid.transpose() * fb);
      p.bias -= scale * resid.colwise().sum().transpose();
    }
    const double loss = detail::mean_cross_entropy(f, d.labels, p.weight, p.bias);
    if (!std::isfinite(loss)) throw NumericError("train_probe: non-finite loss after epoch " + std::to_string(e + 1));
    p.loss_history.push_back(loss);
  }
  return p;
}

/// hits / total, printable as "hits/total".
struct Fraction {
  std::uint64_t hits = 0;
  std::uint64_t total = 0;
  double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total); }
  std::string str() const { return std::to_string(hits) + "/" + std::to_string(total); }
  bool operator==(const Fraction &) const = default;
};

inline Fraction accuracy_count(const LinearProbe &p, const FeatureExtractor &g, const Dataset &test) {
  if (test.size() == 0) throw PreconditionError("accuracy: empty test set");
  const RowMatrix f = g.extract_rows(test);
  Fraction fr{0, static_cast<std::uint64_t>(test.size())};
  for (Index i = 0; i < f.rows(); ++i) fr.hits += p.predict_features(f.row(i).transpose()) == test.labels[static_cast<std::size_t>(i)];
  return fr;
}

inline double accuracy(const LinearProbe &p, const FeatureExtractor &g, const Dataset &test) {
  return accuracy_count(p, g, test).value();
}

struct TargetInput {
  Vector x;
  std::uint32_t label = 1; // the attacker's desired label
};

inline Fraction asr_targeted(const LinearProbe &p, const FeatureExtractor &g, std::span<const TargetInput> targets) {
  if (targets.empty()) throw PreconditionError("asr_targeted: no targets");
  Fraction fr{0, targets.size()};
  for (const auto &t : targets) fr.hits += p.predict(g, t.x) == t.label;
  return fr;
}

/// Patches every test input whose label differs from `target` and counts how
/// many are then predicted as `target`.
inline Fraction asr_backdoor(const LinearProbe &p, const FeatureExtractor &g, const Dataset &test, const Trigger &t,
                             std::uint32_t target) {
  Fraction fr;
  for (Index i = 0; i < test.size(); ++i) {
    if (test.labels[static_cast<std::size_t>(i)] == target) continue;
    ++fr.total;
    fr.hits += p.predict(g, patch_trigger(test.input(i), t)) == target;
  }
  if (fr.total == 0) throw PreconditionError("asr_backdoor: every test input already has the target label");
  return fr;
}

/// Adds N(0, (sigma/255)^2) to every coordinate and clips to [0,1].
inline Dataset random_noise_purify(const Dataset &d, double sigma, SeedStream &rng) {
  detail::require(sigma >= 0.0 && std::isfinite(sigma), "random_noise_purify: sigma must be finite and >= 0");
  Dataset out = d;
  const double s = sigma / 255.0;
  for (Index i = 0; i < out.size(); ++i)
    for (Index j = 0; j < out.dim(); ++j) {
      const double z = rng.normal();
      if (s > 0.0) out.inputs(i, j) = static_cast<float>(std::clamp(static_cast<double>(out.inputs(i, j)) + s * z, 0.0, 1.0));
    }
  return out;
}

namespace probe_format {
inline constexpr char kMagic[] = "MPRB";
inline constexpr std::uint32_t kVersion = 1;
} // namespace probe_format

/// MPRB layout: magic | version u32 | Y u64 | dv u64 | epochs u64 | lr f64 bits | seed u64 |
/// f32 weight (row-major Y x dv) | f32 bias.
inline std::vector<std::uint8_t> encode_probe(const LinearProbe &p) {
  binio::Writer w;
  w.magic(probe_format::kMagic);
  w.u32(probe_format::kVersion);
  w.u64(static_cast<std::uint64_t>(p.classes()));
  w.u64(static_cast<std::uint64_t>(p.dim()));
  w.u64(static_cast<std::uint64_t>(p.epochs));
  w.u64(std::bit_cast<std::uint64_t>(p.lr));
  w.u64(p.seed);
  for (Index y = 0; y < p.classes(); ++y)
    for (Index j = 0; j < p.dim(); ++j) w.f32(static_cast<float>(p.weight(y, j)));
  for (Index y = 0; y < p.classes(); ++y) w.f32(static_cast<float>(p.bias(y)));
  return w.bytes();
}

inline LinearProbe decode_probe(std::vector<std::uint8_t> bytes) {
  using K = ParseError::Kind;
  binio::Reader r(std::move(bytes));
  r.expect_magic(probe_format::kMagic);
  const auto version_at = r.offset();
  if (r.u32("version") != probe_format::kVersion) throw ParseError(K::BadVersion, version_at, "unsupported version");
  const auto shape_at = r.offset();
  const auto y = r.u64("classes");
  const auto dv = r.u64("dv");
  if (y == 0 || dv == 0 || y > (1u << 20) || dv > (1u << 24)) throw ParseError(K::BadShape, shape_at, "bad probe shape");
  LinearProbe p;
  p.epochs = static_cast<Index>(r.u64("epochs"));
  p.lr = std::bit_cast<double>(r.u64("lr"));
  p.seed = r.u64("seed");
  if (r.remaining() != (y * dv + y) * 4) throw ParseError(K::BadShape, r.offset(), "probe payload size mismatch");
  p.weight.resize(static_cast<Index>(y), static_cast<Index>(dv));
  p.bias.resize(static_cast<Index>(y));
  const auto read = [&](double &dst) {
    const auto at = r.offset();
    const float v = r.f32("parameter");
    if (!std::isfinite(v)) throw ParseError(K::BadValue, at, "non-finite probe parameter");
    dst = v;
  };
  for (Index i = 0; i < p.weight.rows(); ++i)
    for (Index j = 0; j < p.weight.cols(); ++j) read(p.weight(i, j));
  for (Index i = 0; i < p.bias.size(); ++i) read(p.bias(i));
  return p;
}

inline void save_probe(const LinearProbe &p, const std::filesystem::path &path) { binio::write_file_atomic(path, encode_probe(p)); }
inline LinearProbe load_probe(const std::filesystem::path &path) { return decode_probe(binio::read_file(path)); }

} // namespace wpure

#endif // WPURE_PROBE_HPP
