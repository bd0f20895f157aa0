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

#ifndef WPURE_PURIFIER_HPP
#define WPURE_PURIFIER_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wpure/critic.hpp"
#include "wpure/dataset.hpp"
#include "wpure/error.hpp"
#include "wpure/feature_extractor.hpp"
#include "wpure/rng.hpp"

namespace wpure {

/// How the perturbation size enters the outer objective: lambda * ||delta|| or lambda * ||delta||^2.
enum class RegularizerForm { Norm, SquaredNorm };

struct PurifyConfig {
  double eta_h = 0.001;      // critic learning rate
  double eta_delta = 0.1;    // perturbation learning rate
  double rho = 0.05;         // fraction of untrusted inputs updated per round
  double beta = 2.0;         // final amplification
  double nu = 10.0;          // gradient penalty weight
  Index batch = 256;         // critic minibatch size
  double lambda = 0.0;       // perturbation regularization weight
  Index checkpoint_interval = 20;
  Index max_rounds = 30;
  Index patience = 5;
  Index hidden = 128;        // critic hidden width
  Index max_inner_steps = 5000;
  double critic_init_std = 0.02;
  RegularizerForm reg_form = RegularizerForm::Norm;

  /// Every violated bound, empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> v;
    if (!(rho >= 0.0 && rho <= 1.0)) v.push_back("rho must be in [0,1]");
    if (!(beta >= 0.0)) v.push_back("beta must be >= 0");
    if (!(lambda >= 0.0)) v.push_back("lambda must be >= 0");
    if (!(nu >= 0.0)) v.push_back("nu must be >= 0");
    if (!(eta_h > 0.0)) v.push_back("eta_h must be > 0");
    if (!(eta_delta >= 0.0)) v.push_back("eta_delta must be >= 0");
    if (batch < 1) v.push_back("batch must be >= 1");
    if (checkpoint_interval < 1) v.push_back("checkpoint_interval must be >= 1");
    if (max_rounds < 0) v.push_back("max_rounds must be >= 0");
    if (patience < 1) v.push_back("patience must be >= 1");
    if (hidden < 1) v.push_back("hidden must be >= 1");
    if (max_inner_steps < 1) v.push_back("max_inner_steps must be >= 1");
    return v;
  }

  InnerConfig inner() const { return {eta_h, nu, batch, checkpoint_interval, max_inner_steps}; }
};

/// floor(ratio * n) with a small guard so that products which are integers in
/// exact arithmetic are not truncated by representation error.
inline std::uint64_t floor_count(double ratio_times_n) {
  return static_cast<std::uint64_t>(std::floor(ratio_times_n * (1.0 + 1e-12) + 1e-9));
}

/// Indices of the floor(rho * n) largest values, ranked by value descending;
/// equal values are ranked by lower index first.
inline std::vector<Index> select_top_rho(std::span<const double> values, double rho) {
  detail::require(rho >= 0.0 && rho <= 1.0, "select_top_rho: rho must be in [0,1]");
  const auto n = values.size();
  const auto count = std::min<std::uint64_t>(floor_count(rho * static_cast<double>(n)), n);
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
  });
  order.resize(count);
  return order;
}

/// One gradient-descent step on h(g(x + delta)) + lambda * R(delta), where R is
/// ||delta|| (gradient taken as 0 when ||delta|| < 1e-12) or ||delta||^2.
inline Vector perturbation_step(const Vector &x, const Vector &delta, const Critic &h, const FeatureExtractor &g,
                                double lambda, double eta_delta, RegularizerForm form = RegularizerForm::Norm) {
  detail::require_dims(x.size() == delta.size() && x.size() == g.input_dim(), "perturbation_step: input shapes");
  const Vector z = x + delta;
  Vector grad = g.vjp(z, h.input_gradient(g.extract(z)));
  if (lambda != 0.0) {
    if (form == RegularizerForm::SquaredNorm) {
      grad += 2.0 * lambda * delta;
    } else {
      const double norm = delta.norm();
      if (norm >= 1e-12) grad += (lambda / norm) * delta;
    }
  }
  if (!grad.allFinite()) throw NumericError("perturbation_step: non-finite gradient");
  return delta - eta_delta * grad;
}

/// Outer stopping rule: the round budget is spent, or more than `patience`
/// rounds were recorded and each of the latest `patience` objectives exceeds
/// the smallest objective seen so far.
inline bool outer_should_stop(std::span<const double> history, Index round, Index max_rounds, Index patience = 5) {
  if (round >= max_rounds) return true;
  const auto p = static_cast<std::size_t>(patience);
  if (history.size() <= p) return false;
  const double best = *std::min_element(history.begin(), history.end());
  return std::all_of(history.end() - static_cast<std::ptrdiff_t>(p), history.end(), [&](double v) { return v > best; });
}

/// delta <- beta * delta, then projected so x + delta lies in [0,1]^w.
inline Vector amplify_and_project(const Vector &x, const Vector &delta, double beta) {
  detail::require_dims(x.size() == delta.size(), "amplify_and_project: shape mismatch");
  return clip_to_domain(x + beta * delta) - x;
}

struct RoundDiagnostics {
  Index round = 0;
  double outer_objective = 0.0;
  double mean_delta_l2 = 0.0;
  double max_delta_linf = 0.0;
  Index critic_checkpoint_count = 0;
  Index critic_steps = 0;
  Index selected = 0;
};

/// Evolving perturbations and per-round bookkeeping of the outer loop.
struct PurifyState {
  RowMatrix delta; // n x w, starts at zero
  Index round = 0;
  std::vector<double> objective_history;
  double best_objective = std::numeric_limits<double>::infinity();
};

struct PurifyResult {
  Dataset purified;
  PurifyState state; // delta holds the final amplified, projected perturbations
  std::vector<RoundDiagnostics> rounds;
  Critic critic{1, 1};
};

inline double mean_row_l2(const RowMatrix &m) {
  if (m.rows() == 0) return 0.0;
  return m.rowwise().norm().mean();
}

inline double max_abs(const RowMatrix &m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

/// Perturbs `untrusted` so that its feature distribution approaches that of
/// `reference`, alternating critic training (Step I) with one descent step on
/// the top-rho untrusted inputs by critic value (Step II). Labels and flags are
/// copied unchanged. Deterministic for a given seed.
inline PurifyResult purify(const Dataset &untrusted, const Dataset &reference, const FeatureExtractor &g,
                           const PurifyConfig &cfg, std::uint64_t seed) {
  detail::require(untrusted.size() >= 1 && reference.size() >= 1, "purify: datasets must be non-empty");
  detail::require_dims(untrusted.dim() == reference.dim(), "purify: untrusted and reference widths differ");
  detail::require_dims(untrusted.dim() == g.input_dim(), "purify: extractor input width differs from data");
  if (const auto v = cfg.violations(); !v.empty()) throw PreconditionError("purify: " + v.front());

  const Index n = untrusted.size();
  const RowMatrix x = inputs_as_double(untrusted);
  const RowMatrix rf_features = g.extract_rows(reference);

  SeedStream init_rng(seed, Stream::CriticInit);
  SeedStream batch_rng(seed, Stream::BatchSampling);

  PurifyResult res;
  PurifyState &st = res.state;
  st.delta = RowMatrix::Zero(n, x.cols());
  res.critic = Critic::random(g.output_dim(), cfg.hidden, init_rng, cfg.critic_init_std);
  Critic &h = res.critic;
  AdamState adam = AdamState::zeros(h.num_params());
  const InnerConfig inner = cfg.inner();

  const auto regularizer = [&](const RowMatrix &d) {
    if (cfg.reg_form == RegularizerForm::SquaredNorm) return d.squaredNorm();
    return d.rowwise().norm().sum();
  };

  while (!outer_should_stop(st.objective_history, st.round, cfg.max_rounds, cfg.patience)) {
    RowMatrix pe_features = g.extract_rows(RowMatrix(x + st.delta));
    const InnerResult ir = train_inner(h, adam, pe_features, rf_features, inner, batch_rng);

    const Vector values = h.forward_rows(pe_features);
    const auto selected = select_top_rho(std::span<const double>(values.data(), static_cast<std::size_t>(n)), cfg.rho);
    for (Index i : selected) {
      const Vector xi = x.row(i).transpose();
      const Vector step = perturbation_step(xi, st.delta.row(i).transpose(), h, g, cfg.lambda, cfg.eta_delta, cfg.reg_form);
      st.delta.row(i) = (clip_to_domain(xi + step) - xi).transpose();
    }

    pe_features = g.extract_rows(RowMatrix(x + st.delta));
    const double objective = full_gap(h, pe_features, rf_features) + cfg.lambda * regularizer(st.delta);
    if (!std::isfinite(objective)) throw NumericError("purify: non-finite outer objective in round " + std::to_string(st.round));
    st.objective_history.push_back(objective);
    st.best_objective = std::min(st.best_objective, objective);
    ++st.round;

    RoundDiagnostics diag;
    diag.round = st.round;
    diag.outer_objective = objective;
    diag.mean_delta_l2 = mean_row_l2(st.delta);
    diag.max_delta_linf = max_abs(st.delta);
    diag.critic_checkpoint_count = static_cast<Index>(ir.history.size());
    diag.critic_steps = ir.steps;
    diag.selected = static_cast<Index>(selected.size());
    res.rounds.push_back(diag);
  }

  for (Index i = 0; i < n; ++i) {
    const Vector xi = x.row(i).transpose();
    st.delta.row(i) = amplify_and_project(xi, st.delta.row(i).transpose(), cfg.beta).transpose();
  }

  res.purified = untrusted;
  for (Index i = 0; i < n; ++i) res.purified.set_input(i, clip_to_domain(x.row(i).transpose() + st.delta.row(i).transpose()));
  return res;
}

/// CSV with header `round,outer_objective,mean_delta_l2,max_delta_linf,critic_checkpoint_count`.
inline std::string diagnostics_csv(std::span<const RoundDiagnostics> rounds) {
  std::ostringstream out;
  out.precision(17);
  out << "round,outer_objective,mean_delta_l2,max_delta_linf,critic_checkpoint_count\n";
  for (const auto &r : rounds)
    out << r.round << ',' << r.outer_objective << ',' << r.mean_delta_l2 << ',' << r.max_delta_linf << ','
        << r.critic_checkpoint_count << '\n';
  return out.str();
}

} // namespace wpure

#endif // WPURE_PURIFIER_HPP
