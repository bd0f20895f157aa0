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

#ifndef WPURE_CRITIC_HPP
#define WPURE_CRITIC_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "wpure/binio.hpp"
#include "wpure/dataset.hpp"
#include "wpure/error.hpp"
#include "wpure/rng.hpp"

namespace wpure {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

// softplus and sigmoid of every entry of z from a single exp(-|z|) pass.
struct Activations {
  RowMatrix softplus;
  RowMatrix sigmoid;
};

// log(1 + e) instead of log1p(e) keeps the pass vectorized; for e in (0, 1]
// the absolute error is below 1e-16.
inline Activations activations(const RowMatrix &z) {
  const Eigen::ArrayXXd e = (-z.array().abs()).exp();
  const Eigen::ArrayXXd r = (1.0 + e).inverse();
  Activations a;
  a.softplus = (z.array().max(0.0) + (1.0 + e).log()).matrix();
  a.sigmoid = (z.array() >= 0.0).select(r, e * r).matrix();
  return a;
}

inline RowMatrix sigmoid_of(const RowMatrix &z) {
  const Eigen::ArrayXXd e = (-z.array().abs()).exp();
  const Eigen::ArrayXXd r = (1.0 + e).inverse();
  return (z.array() >= 0.0).select(r, e * r).matrix();
}

inline RowMatrix softplus_of(const RowMatrix &z) {
  return (z.array().max(0.0) + (1.0 + (-z.array().abs()).exp()).log()).matrix();
}

} // namespace detail

/// Named slice of a flat parameter vector.
struct ParamBlock {
  std::string_view name;
  Index offset;
  Index size;
};

/// Two-layer scalar network on feature space:
///
///   h(v) = w2^T softplus(W1 v + b1) + b2
///
/// All parameters live in one flat vector laid out as [W1 (row-major H x dv), b1, w2, b2]
/// so the optimizer and finite-difference checks see a single array.
class Critic {
public:
  using MatMap = Eigen::Map<RowMatrix>;
  using ConstMatMap = Eigen::Map<const RowMatrix>;
  using VecMap = Eigen::Map<Vector>;
  using ConstVecMap = Eigen::Map<const Vector>;

  Critic(Index input_dim, Index hidden) : dv_(input_dim), hidden_(hidden) {
    detail::require(input_dim >= 1 && hidden >= 1, "critic needs dv >= 1 and hidden >= 1");
    params_ = Vector::Zero(hidden * input_dim + 2 * hidden + 1);
  }

  /// Parameters drawn i.i.d. from N(0, stddev^2).
  static Critic random(Index input_dim, Index hidden, SeedStream &rng, double stddev = 0.02) {
    Critic h(input_dim, hidden);
    for (Index i = 0; i < h.params_.size(); ++i) h.params_(i) = stddev * rng.normal();
    return h;
  }

  Index input_dim() const noexcept { return dv_; }
  Index hidden() const noexcept { return hidden_; }
  Index num_params() const noexcept { return params_.size(); }

  Vector &params() noexcept { return params_; }
  const Vector &params() const noexcept { return params_; }

  MatMap w1() { return {params_.data(), hidden_, dv_}; }
  ConstMatMap w1() const { return {params_.data(), hidden_, dv_}; }
  VecMap b1() { return {params_.data() + hidden_ * dv_, hidden_}; }
  ConstVecMap b1() const { return {params_.data() + hidden_ * dv_, hidden_}; }
  VecMap w2() { return {params_.data() + hidden_ * dv_ + hidden_, hidden_}; }
  ConstVecMap w2() const { return {params_.data() + hidden_ * dv_ + hidden_, hidden_}; }
  double &b2() { return params_(params_.size() - 1); }
  double b2() const { return params_(params_.size() - 1); }

  std::array<ParamBlock, 4> blocks() const {
    return {{{"W1", 0, hidden_ * dv_},
             {"b1", hidden_ * dv_, hidden_},
             {"w2", hidden_ * dv_ + hidden_, hidden_},
             {"b2", hidden_ * dv_ + 2 * hidden_, 1}}};
  }

  double forward(const Vector &v) const {
    check_dim(v.size());
    const Vector z = w1() * v + b1();
    double s = b2();
    for (Index k = 0; k < hidden_; ++k) s += w2()(k) * softplus(z(k));
    return s;
  }

  /// h evaluated on every row of `v`.
  Vector forward_rows(const RowMatrix &v) const {
    check_dim(v.cols());
    return detail::softplus_of(pre_activation(v)) * w2() + Vector::Constant(v.rows(), b2());
  }

  /// Gradient of h with respect to its input: W1^T (w2 .* sigmoid(W1 v + b1)).
  Vector input_gradient(const Vector &v) const {
    check_dim(v.size());
    const Vector z = w1() * v + b1();
    const Vector a = w2().cwiseProduct(z.unaryExpr([](double t) { return sigmoid(t); }));
    return w1().transpose() * a;
  }

  RowMatrix pre_activation(const RowMatrix &v) const {
    RowMatrix z = v * w1().transpose();
    z.rowwise() += b1().transpose();
    return z;
  }

private:
  void check_dim(Index n) const {
    detail::require_dims(n == dv_, "critic: feature length " + std::to_string(n) + " != dv " + std::to_string(dv_));
  }

  Index dv_;
  Index hidden_;
  Vector params_;
};

/// Mean of h over the rows of `pe` minus mean over the rows of `rf`.
inline double full_gap(const Critic &h, const RowMatrix &pe, const RowMatrix &rf) {
  return h.forward_rows(pe).mean() - h.forward_rows(rf).mean();
}

struct InnerLossBreakdown {
  double gap = 0.0;     // Avg(h, pe) - Avg(h, rf)
  double penalty = 0.0; // mean (||grad_v h|| - 1)^2 at interpolated points, >= 0
  double nu = 0.0;

  /// The quantity the critic maximizes: gap - nu * penalty.
  double objective() const { return gap - nu * penalty; }
  /// What the optimizer descends: -objective().
  double descent_loss() const { return nu * penalty - gap; }
};

struct BatchLoss {
  InnerLossBreakdown loss;
  Vector grad; // d(descent_loss)/d(params), same layout as Critic::params()
};

/// Minibatch critic loss with gradient penalty at the interpolation points
/// eta_b * pe_b + (1 - eta_b) * rf_b, and its exact gradient with respect to
/// every parameter, including the second-order path through grad_v h.
inline BatchLoss batch_loss_and_grads(const Critic &h, const RowMatrix &pe, const RowMatrix &rf, double nu,
                                      const Vector &eta) {
  const Index m = pe.rows();
  detail::require(m >= 1, "batch_loss_and_grads: empty batch");
  detail::require_dims(rf.rows() == m, "batch_loss_and_grads: batches must have equal size (" + std::to_string(m) +
                                           " vs " + std::to_string(rf.rows()) + ")");
  detail::require_dims(eta.size() == m, "batch_loss_and_grads: one interpolation weight per pair");
  detail::require_dims(pe.cols() == h.input_dim() && rf.cols() == h.input_dim(), "batch_loss_and_grads: feature width");

  const Index hid = h.hidden();
  const auto w1 = h.w1();
  const auto w2 = h.w2();
  const double inv_m = 1.0 / static_cast<double>(m);

  BatchLoss out;
  out.loss.nu = nu;
  out.grad = Vector::Zero(h.num_params());
  Critic::MatMap g_w1(out.grad.data(), hid, h.input_dim());
  Critic::VecMap g_b1(out.grad.data() + hid * h.input_dim(), hid);
  Critic::VecMap g_w2(out.grad.data() + hid * h.input_dim() + hid, hid);

  // Gap term. descent_loss contains -mean h(pe) + mean h(rf); b2 cancels.
  const auto add_mean_term = [&](const RowMatrix &x, double coef) {
    const auto act = detail::activations(h.pre_activation(x));
    const RowMatrix dz = (act.sigmoid.array().rowwise() * w2.transpose().array()).matrix();
    g_w1.noalias() += coef * (dz.transpose() * x);
    g_b1 += coef * dz.colwise().sum().transpose();
    g_w2 += coef * act.softplus.colwise().sum().transpose();
    return (act.softplus * w2).mean() + h.b2();
  };
  const double mean_pe = add_mean_term(pe, -inv_m);
  const double mean_rf = add_mean_term(rf, inv_m);
  out.loss.gap = mean_pe - mean_rf;

  // Penalty term.
  RowMatrix v = pe;
  for (Index b = 0; b < m; ++b) v.row(b) = eta(b) * pe.row(b) + (1.0 - eta(b)) * rf.row(b);
  const RowMatrix s = detail::sigmoid_of(h.pre_activation(v));
  const RowMatrix act = (s.array().rowwise() * w2.transpose().array()).matrix(); // rows: w2 .* sigmoid(z_b)
  const RowMatrix grad_v = act * w1;                                          // rows: grad_v h(v_b)
  RowMatrix u(m, h.input_dim());                                              // rows: d(nu*penalty)/d(grad_v h)
  double penalty = 0.0;
  for (Index b = 0; b < m; ++b) {
    const double norm = grad_v.row(b).norm();
    penalty += (norm - 1.0) * (norm - 1.0);
    const double c = norm > 0.0 ? 2.0 * (norm - 1.0) / norm : 0.0;
    u.row(b) = (nu * inv_m * c) * grad_v.row(b);
  }
  out.loss.penalty = penalty * inv_m;

  const RowMatrix q = u * w1.transpose(); // rows: W1 u_b
  const RowMatrix t =
      ((q.array() * s.array() * (1.0 - s.array())).rowwise() * w2.transpose().array()).matrix(); // through sigmoid'
  g_w1.noalias() += act.transpose() * u + t.transpose() * v;
  g_b1 += t.colwise().sum().transpose();
  g_w2 += (q.array() * s.array()).matrix().colwise().sum().transpose();
  return out;
}

/// As above, drawing one interpolation weight per pair uniformly from [0,1).
inline BatchLoss batch_loss_and_grads(const Critic &h, const RowMatrix &pe, const RowMatrix &rf, double nu,
                                      SeedStream &rng) {
  Vector eta(pe.rows());
  for (Index b = 0; b < eta.size(); ++b) eta(b) = rng.uniform();
  return batch_loss_and_grads(h, pe, rf, nu, eta);
}

/// Adam moments. Hyperparameters fixed at the usual defaults.
struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Index n) { return {Vector::Zero(n), Vector::Zero(n)}; }
};

/// One bias-corrected Adam update descending `grads`. Throws NumericError naming
/// the parameter block that holds the first non-finite gradient entry.
inline void adam_step(Vector &params, const Vector &grads, AdamState &state, double lr,
                      std::span<const ParamBlock> blocks = {}) {
  detail::require_dims(params.size() == grads.size(), "adam_step: params/grads size mismatch");
  if (state.m.size() == 0) state = AdamState::zeros(params.size());
  detail::require_dims(state.m.size() == params.size() && state.v.size() == params.size(), "adam_step: state shape");
  for (Index i = 0; i < grads.size(); ++i) {
    if (std::isfinite(grads(i))) continue;
    std::string name = "params";
    for (const auto &blk : blocks)
      if (i >= blk.offset && i < blk.offset + blk.size) name = std::string(blk.name);
    throw NumericError("adam_step: non-finite gradient in block " + name + " at index " + std::to_string(i));
  }
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.eps);
}

/// Step I settings.
struct InnerConfig {
  double lr = 0.001;
  double nu = 10.0;
  Index batch = 256;
  Index checkpoint_interval = 20;
  Index max_steps = 5000;
  // Replace h by -h whenever a checkpoint gap is negative; see negate_output.
  bool flip_negative = true;
};

/// Checkpoint stopping rule: the relative difference between the newest
/// checkpoint and the mean of the five before it is below 1%. When that mean
/// is ~0 the absolute difference must be below 1e-6 instead.
inline bool checkpoint_converged(std::span<const double> history, std::size_t window = 5, double rel_tol = 0.01) {
  if (history.size() < window + 1) return false;
  const double current = history.back();
  double avg = 0.0;
  for (std::size_t i = history.size() - 1 - window; i < history.size() - 1; ++i) avg += history[i];
  avg /= static_cast<double>(window);
  const double diff = std::abs(current - avg);
  if (std::abs(avg) < 1e-12) return diff < 1e-6;
  return diff / std::abs(avg) < rel_tol;
}

struct InnerResult {
  std::vector<double> history; // full-data gap at each checkpoint
  Index steps = 0;
  bool converged = false;
  Index flips = 0; // sign flips applied at checkpoints
};

/// h <- -h by negating the output layer, together with the matching Adam
/// first moments. The gradient penalty is unchanged and the gap changes sign,
/// so this escapes the mirrored fixed point that small-init training lands in
/// about half the time when features are one-dimensional.
inline void negate_output(Critic &h, AdamState &adam) {
  const Index tail = h.hidden() + 1;
  const Index offset = h.num_params() - tail;
  h.params().segment(offset, tail) *= -1.0;
  if (adam.m.size() == h.num_params()) adam.m.segment(offset, tail) *= -1.0;
}

/// Trains `h` in place to maximize gap - nu * penalty between two feature sets.
/// Checkpoints evaluate the full-data gap every `checkpoint_interval` steps.
inline InnerResult train_inner(Critic &h, AdamState &adam, const RowMatrix &pe, const RowMatrix &rf,
                               const InnerConfig &cfg, SeedStream &rng) {
  detail::require(pe.rows() >= 1 && rf.rows() >= 1, "train_inner: both feature sets must be non-empty");
  detail::require(cfg.batch >= 1 && cfg.checkpoint_interval >= 1, "train_inner: batch and interval must be positive");
  const auto blocks = h.blocks();
  InnerResult res;
  RowMatrix bpe(cfg.batch, pe.cols());
  RowMatrix brf(cfg.batch, rf.cols());
  while (res.steps < cfg.max_steps) {
    for (Index b = 0; b < cfg.batch; ++b) bpe.row(b) = pe.row(static_cast<Index>(rng.index(static_cast<std::uint64_t>(pe.rows()))));
    for (Index b = 0; b < cfg.batch; ++b) brf.row(b) = rf.row(static_cast<Index>(rng.index(static_cast<std::uint64_t>(rf.rows()))));
    const BatchLoss bl = batch_loss_and_grads(h, bpe, brf, cfg.nu, rng);
    if (!std::isfinite(bl.loss.descent_loss())) {
      std::ostringstream msg;
      msg << "train_inner: non-finite loss at step " << res.steps << " (gap " << bl.loss.gap << ", penalty "
          << bl.loss.penalty << ")";
      throw NumericError(msg.str());
    }
    adam_step(h.params(), bl.grad, adam, cfg.lr, blocks);
    ++res.steps;
    if (res.steps % cfg.checkpoint_interval == 0) {
      double gap = full_gap(h, pe, rf);
      if (!std::isfinite(gap))
        throw NumericError("train_inner: non-finite full-data gap at step " + std::to_string(res.steps));
      if (cfg.flip_negative && gap < 0.0) {
        negate_output(h, adam);
        gap = -gap;
        ++res.flips;
      }
      res.history.push_back(gap);
      if (checkpoint_converged(res.history)) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

/// CSV with header `step,full_data_gap`; one row per checkpoint.
inline std::string history_csv(std::span<const double> history, Index checkpoint_interval) {
  std::ostringstream out;
  out.precision(17);
  out << "step,full_data_gap\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    out << static_cast<Index>(i + 1) * checkpoint_interval << ',' << history[i] << '\n';
  return out.str();
}

namespace critic_format {
inline constexpr char kMagic[] = "MCRT";
inline constexpr std::uint32_t kVersion = 1;
} // namespace critic_format

/// MCRT layout: magic | version u32 | dv u64 | hidden u64 | f32 W1 (row-major), b1, w2, b2.
inline std::vector<std::uint8_t> encode_critic(const Critic &h) {
  binio::Writer w;
  w.magic(critic_format::kMagic);
  w.u32(critic_format::kVersion);
  w.u64(static_cast<std::uint64_t>(h.input_dim()));
  w.u64(static_cast<std::uint64_t>(h.hidden()));
  for (Index i = 0; i < h.num_params(); ++i) w.f32(static_cast<float>(h.params()(i)));
  return w.bytes();
}

inline Critic decode_critic(std::vector<std::uint8_t> bytes) {
  using K = ParseError::Kind;
  binio::Reader r(std::move(bytes));
  r.expect_magic(critic_format::kMagic);
  const auto version_at = r.offset();
  if (r.u32("version") != critic_format::kVersion) throw ParseError(K::BadVersion, version_at, "unsupported version");
  const auto shape_at = r.offset();
  const auto dv = r.u64("dv");
  const auto hidden = r.u64("hidden");
  if (dv == 0 || hidden == 0 || dv > (1u << 24) || hidden > (1u << 24))
    throw ParseError(K::BadShape, shape_at, "dv and hidden must be in 1..2^24");
  const auto count = hidden * dv + 2 * hidden + 1;
  if (r.remaining() != count * 4)
    throw ParseError(K::BadShape, r.offset(), "critic expects " + std::to_string(count) + " floats");
  Critic h(static_cast<Index>(dv), static_cast<Index>(hidden));
  for (Index i = 0; i < h.num_params(); ++i) {
    const auto at = r.offset();
    const float v = r.f32("parameter");
    if (!std::isfinite(v)) throw ParseError(K::BadValue, at, "non-finite critic parameter");
    h.params()(i) = v;
  }
  return h;
}

inline void save_critic(const Critic &h, const std::filesystem::path &path) {
  binio::write_file_atomic(path, encode_critic(h));
}

inline Critic load_critic(const std::filesystem::path &path) { return decode_critic(binio::read_file(path)); }

} // namespace wpure

#endif // WPURE_CRITIC_HPP
