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

#include <array>
#include <chrono>
#include <random>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wpure/ot.hpp"
#include "wpure/purifier.hpp"

namespace wpure {
namespace {

using testing::fd_gradient;
using testing::make_dataset;
using testing::random_vector;
using testing::saturated_critic;

std::vector<Index> top(std::vector<double> v, double rho) { return select_top_rho(v, rho); }

TEST(SelectTopRho, Examples) {
  EXPECT_EQ(top({3, 1, 2, 5}, 0.5), (std::vector<Index>{3, 0}));
  EXPECT_TRUE(top({3, 1, 2, 5}, 0.0).empty());
  EXPECT_EQ(top({1, 1, 1, 1}, 0.25), (std::vector<Index>{0}));
  EXPECT_EQ(top({1, 1, 1, 1}, 1.0), (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_TRUE(top({}, 0.5).empty());
}

TEST(SelectTopRho, CountIsFloorOfRhoN) {
  // 0.07 * 100 is 7.000000000000001 in binary; 0.29 * 100 is 28.999999999999996.
  std::vector<double> v(100);
  std::iota(v.begin(), v.end(), 0.0);
  EXPECT_EQ(top(v, 0.07).size(), 7u);
  EXPECT_EQ(top(v, 0.29).size(), 29u);
  EXPECT_EQ(top(v, 0.295).size(), 29u);
  EXPECT_EQ(top(std::vector<double>(3, 0.0), 0.5).size(), 1u);
}

TEST(SelectTopRho, SelectedDominateTheRest) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u(0, 9); // many ties
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v(37);
    for (auto &x : v) x = u(rng);
    const auto sel = top(v, 0.3);
    ASSERT_EQ(sel.size(), 11u);
    std::vector<bool> chosen(v.size(), false);
    for (Index i : sel) chosen[static_cast<std::size_t>(i)] = true;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (chosen[i]) continue;
      for (Index j : sel) {
        const auto js = static_cast<std::size_t>(j);
        EXPECT_TRUE(v[js] > v[i] || (v[js] == v[i] && js < i));
      }
    }
  }
}

TEST(SelectTopRho, RejectsBadRatio) {
  EXPECT_THROW(top({1.0}, -0.1), PreconditionError);
  EXPECT_THROW(top({1.0}, 1.5), PreconditionError);
}

TEST(PerturbationStep, ZeroCriticLeavesDeltaUnchanged) {
  const Critic h(3, 4);
  const auto g = FeatureExtractor::identity(3);
  const Vector x{{0.2, 0.5, 0.9}}, d{{0.01, -0.02, 0.0}};
  EXPECT_EQ(perturbation_step(x, d, h, g, 0.0, 0.1), d);
}

TEST(PerturbationStep, LinearCriticMovesByEtaTimesSlope) {
  const Vector s{{0.3, -0.4}};
  const Critic h = saturated_critic(s, 6);
  const auto g = FeatureExtractor::identity(2);
  const Vector x{{0.4, 0.6}}, d{{0.05, 0.0}};
  const Vector out = perturbation_step(x, d, h, g, 0.0, 0.1);
  EXPECT_LT((out - (d - 0.1 * s)).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PerturbationStep, RegularizerGradient) {
  const Critic h(2, 3);
  const auto g = FeatureExtractor::identity(2);
  const Vector x{{0.5, 0.5}}, d{{0.3, 0.4}};
  // d/dd ||d|| = d / 0.5; d/dd ||d||^2 = 2d.
  EXPECT_LT((perturbation_step(x, d, h, g, 2.0, 0.1) - (d - 0.1 * 2.0 * d / 0.5)).norm(), 1e-15);
  EXPECT_LT((perturbation_step(x, d, h, g, 2.0, 0.1, RegularizerForm::SquaredNorm) - (d - 0.1 * 4.0 * d)).norm(), 1e-15);
  const Vector tiny = Vector::Constant(2, 1e-14);
  EXPECT_EQ(perturbation_step(x, tiny, h, g, 2.0, 0.1), tiny);
}

TEST(PerturbationStep, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(77);
  for (int t = 0; t < 10; ++t) {
    SeedStream init(static_cast<std::uint64_t>(100 + t), Stream::CriticInit);
    const Critic h = Critic::random(3, 12, init, 0.7);
    const auto g = FeatureExtractor::mlp(testing::random_matrix(rng, 5, 4), random_vector(rng, 5),
                                         testing::random_matrix(rng, 3, 5), random_vector(rng, 3));
    const Vector x = random_vector(rng, 4, 0.2, 0.8), d = random_vector(rng, 4, -0.1, 0.1);
    const double lambda = 0.3;
    const auto f = [&](const Vector &dd) { return h.forward(g.extract(x + dd)) + lambda * dd.norm(); };
    const Vector analytic = (d - perturbation_step(x, d, h, g, lambda, 1.0)).eval();
    EXPECT_LT(testing::rel_error(analytic, fd_gradient(f, d, 1e-5)), 1e-3) << "config " << t;
  }
}

TEST(PerturbationStep, DescentProperty) {
  std::mt19937_64 rng(78);
  for (int t = 0; t < 10; ++t) {
    SeedStream init(static_cast<std::uint64_t>(200 + t), Stream::CriticInit);
    const Critic h = Critic::random(2, 16, init, 0.5);
    const auto g = FeatureExtractor::linear(testing::random_matrix(rng, 2, 3), random_vector(rng, 2));
    const Vector x = random_vector(rng, 3, 0.2, 0.8), d = random_vector(rng, 3, -0.1, 0.1);
    const double lambda = 0.1;
    const auto f = [&](const Vector &dd) { return h.forward(g.extract(x + dd)) + lambda * dd.norm(); };
    EXPECT_LT(f(perturbation_step(x, d, h, g, lambda, 1e-3)), f(d)) << "config " << t;
  }
}

TEST(PerturbationStep, Errors) {
  const Critic h(2, 3);
  const auto g = FeatureExtractor::identity(2);
  EXPECT_THROW(perturbation_step(Vector::Zero(2), Vector::Zero(3), h, g, 0.0, 0.1), DimensionError);
  Critic bad(2, 3);
  bad.w2().setConstant(std::numeric_limits<double>::infinity());
  bad.w1().setConstant(1.0);
  EXPECT_THROW(perturbation_step(Vector::Zero(2), Vector::Zero(2), bad, g, 0.0, 0.1), NumericError);
}

TEST(OuterShouldStop, Examples) {
  const std::vector<double> none;
  EXPECT_TRUE(outer_should_stop(none, 30, 30));
  EXPECT_FALSE(outer_should_stop(std::vector<double>{5, 4, 3, 2, 1}, 5, 30));
  EXPECT_TRUE(outer_should_stop(std::vector<double>{1, 2, 2, 2, 2, 2}, 6, 30));
  EXPECT_FALSE(outer_should_stop(std::vector<double>{2, 2, 2, 2, 2}, 5, 30)); // not longer than patience
  EXPECT_FALSE(outer_should_stop(std::vector<double>{1, 2, 2, 2, 1, 2}, 6, 30)); // ties with the min do not count
  EXPECT_TRUE(outer_should_stop(none, 0, 0));
}

TEST(AmplifyAndProject, Examples) {
  const auto one = [](double x, double d, double b) { return amplify_and_project(Vector::Constant(1, x), Vector::Constant(1, d), b)(0); };
  EXPECT_NEAR(one(0.5, 0.1, 2.0), 0.2, 1e-15);
  EXPECT_NEAR(one(0.95, 0.1, 2.0), 0.05, 1e-15);
  EXPECT_EQ(one(0.95, 0.1, 2.0) + 0.95, 1.0);
  EXPECT_EQ(one(0.3, 0.1, 0.0), 0.0);
  EXPECT_NEAR(one(0.1, -0.1, 2.0), -0.1, 1e-15);
}

// Two Gaussian blobs in [0,1]^w, one dataset each.
Dataset blob(Index n, Index w, double center, double scale, std::uint64_t seed, std::uint32_t label = 1) {
  SeedStream r(seed, Stream::DataGeneration);
  RowMatrixF x(n, w);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < w; ++j) x(i, j) = static_cast<float>(std::clamp(center + scale * r.normal(), 0.0, 1.0));
  return make_dataset(x, std::vector<std::uint32_t>(static_cast<std::size_t>(n), label), 2);
}

PurifyConfig small_config() {
  PurifyConfig c;
  c.batch = 64;
  c.hidden = 32;
  c.max_rounds = 6;
  c.max_inner_steps = 300;
  return c;
}

TEST(Purify, DegenerateSettingsReturnInputExactly) {
  Dataset ut = blob(40, 2, 0.7, 0.05, 1);
  ut.manipulated[3] = 1;
  ut.labels[5] = 2;
  const Dataset rf = blob(40, 2, 0.3, 0.05, 2);
  const auto g = FeatureExtractor::identity(2);
  for (int k = 0; k < 3; ++k) {
    PurifyConfig c = small_config();
    if (k == 0) c.max_rounds = 0;
    if (k == 1) c.rho = 0.0;
    if (k == 2) { c.eta_delta = 0.0; c.beta = 7.0; }
    const auto res = purify(ut, rf, g, c, 11);
    EXPECT_EQ(res.purified, ut) << "setting " << k;
    EXPECT_EQ(res.state.delta, RowMatrix::Zero(40, 2)) << "setting " << k;
  }
}

TEST(Purify, PreservesLabelsFlagsAndDomain) {
  Dataset ut = blob(50, 3, 0.9, 0.1, 3);
  for (Index i = 0; i < 50; i += 7) ut.manipulated[static_cast<std::size_t>(i)] = 1;
  for (Index i = 0; i < 50; i += 3) ut.labels[static_cast<std::size_t>(i)] = 2;
  const Dataset rf = blob(50, 3, 0.1, 0.1, 4);
  PurifyConfig c = small_config();
  c.eta_delta = 0.5;
  c.rho = 0.3;
  c.beta = 3.0;
  const auto res = purify(ut, rf, FeatureExtractor::identity(3), c, 5);
  ASSERT_EQ(res.purified.size(), ut.size());
  ASSERT_EQ(res.purified.dim(), ut.dim());
  EXPECT_EQ(res.purified.labels, ut.labels);
  EXPECT_EQ(res.purified.manipulated, ut.manipulated);
  EXPECT_EQ(res.purified.num_classes, ut.num_classes);
  EXPECT_GE(res.purified.inputs.minCoeff(), 0.0f);
  EXPECT_LE(res.purified.inputs.maxCoeff(), 1.0f);
  const RowMatrix moved = inputs_as_double(ut) + res.state.delta;
  EXPECT_GE(moved.minCoeff(), 0.0);
  EXPECT_LE(moved.maxCoeff(), 1.0);
  EXPECT_GT(mean_row_l2(res.state.delta), 0.0);
  EXPECT_EQ(res.rounds.size(), static_cast<std::size_t>(res.state.round));
}

TEST(Purify, DeterministicForSeed) {
  const Dataset ut = blob(40, 2, 0.7, 0.05, 6), rf = blob(40, 2, 0.3, 0.05, 7);
  const auto g = FeatureExtractor::identity(2);
  const auto a = purify(ut, rf, g, small_config(), 9);
  const auto b = purify(ut, rf, g, small_config(), 9);
  EXPECT_EQ(a.state.delta, b.state.delta);
  EXPECT_EQ(a.purified, b.purified);
  EXPECT_EQ(diagnostics_csv(a.rounds), diagnostics_csv(b.rounds));
  const auto c = purify(ut, rf, g, small_config(), 10);
  EXPECT_NE(a.state.delta, c.state.delta);
}

TEST(Purify, LargerBetaNeverShrinksPerturbations) {
  const Dataset ut = blob(40, 2, 0.6, 0.05, 8), rf = blob(40, 2, 0.4, 0.05, 9);
  const auto g = FeatureExtractor::identity(2);
  PurifyConfig c = small_config();
  c.beta = 1.0;
  const auto one = purify(ut, rf, g, c, 3);
  c.beta = 2.0;
  const auto two = purify(ut, rf, g, c, 3);
  EXPECT_GE(mean_row_l2(two.state.delta), mean_row_l2(one.state.delta));
  // Same pre-amplification trajectory; only the final scale differs.
  EXPECT_EQ(one.state.objective_history, two.state.objective_history);
}

TEST(Purify, ObjectiveHistoryDrivesStopping) {
  const Dataset ut = blob(30, 1, 0.5, 0.05, 10), rf = blob(30, 1, 0.5, 0.05, 11);
  PurifyConfig c = small_config();
  c.max_rounds = 40;
  const auto res = purify(ut, rf, FeatureExtractor::identity(1), c, 4);
  const auto &hist = res.state.objective_history;
  ASSERT_FALSE(hist.empty());
  EXPECT_EQ(res.state.best_objective, *std::min_element(hist.begin(), hist.end()));
  // Stops either at the cap or exactly when the patience rule first fires.
  for (std::size_t r = 1; r < hist.size(); ++r)
    EXPECT_FALSE(outer_should_stop(std::span<const double>(hist.data(), r), static_cast<Index>(r), c.max_rounds));
  EXPECT_TRUE(outer_should_stop(hist, static_cast<Index>(hist.size()), c.max_rounds));
}

TEST(Purify, MismatchedDataIsPerturbedMore) {
  int wins = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Dataset sample = blob(96, 2, 0.3, 0.05, 100 + s);
    std::vector<Index> first(48), second(48);
    std::iota(first.begin(), first.end(), Index{0});
    std::iota(second.begin(), second.end(), Index{48});
    const Dataset rf = sample.subset(first), same = sample.subset(second);
    Dataset shifted = same;
    shifted.inputs.array() += 0.5f;
    const auto g = FeatureExtractor::identity(2);
    PurifyConfig c = small_config();
    c.batch = 48;
    c.max_rounds = 30;
    c.max_inner_steps = 3000; // let round one converge so patience is not tripped by a still-rising gap
    const double d_same = mean_row_l2(purify(same, rf, g, c, s).state.delta);
    const double d_shift = mean_row_l2(purify(shifted, rf, g, c, s).state.delta);
    wins += d_same < d_shift ? 1 : 0;
  }
  EXPECT_EQ(wins, 5);
}

TEST(Purify, TwoClusterDistanceHalves) {
  const Dataset rf = blob(128, 1, 0.3, 0.02, 21), ut = blob(128, 1, 0.7, 0.02, 22);
  const auto g = FeatureExtractor::identity(1);
  PurifyConfig c;
  c.batch = 128;
  c.hidden = 64;
  c.max_inner_steps = 1000;
  const auto res = purify(ut, rf, g, c, 1);
  const double before = exact_w1(inputs_as_double(ut), inputs_as_double(rf));
  const double after = exact_w1(inputs_as_double(res.purified), inputs_as_double(rf));
  EXPECT_LE(after, 0.5 * before);
  EXPECT_LT(mean_row_l2(res.state.delta), 0.4);
}

TEST(Purify, Errors) {
  const Dataset a = blob(10, 2, 0.5, 0.1, 1), b = blob(10, 3, 0.5, 0.1, 2);
  EXPECT_THROW(purify(a, b, FeatureExtractor::identity(2), small_config(), 1), DimensionError);
  EXPECT_THROW(purify(a, a, FeatureExtractor::identity(3), small_config(), 1), DimensionError);
  Dataset empty = a.subset(std::vector<Index>{});
  EXPECT_THROW(purify(empty, a, FeatureExtractor::identity(2), small_config(), 1), PreconditionError);
  PurifyConfig c = small_config();
  c.rho = 2.0;
  EXPECT_THROW(purify(a, a, FeatureExtractor::identity(2), c, 1), PreconditionError);
}

TEST(Purify, DiagnosticsCsv) {
  const Dataset ut = blob(20, 1, 0.6, 0.05, 1), rf = blob(20, 1, 0.4, 0.05, 2);
  PurifyConfig c = small_config();
  c.max_rounds = 3;
  const auto res = purify(ut, rf, FeatureExtractor::identity(1), c, 2);
  const std::string csv = diagnostics_csv(res.rounds);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "round,outer_objective,mean_delta_l2,max_delta_linf,critic_checkpoint_count");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  for (const auto &r : res.rounds) EXPECT_EQ(r.critic_checkpoint_count, r.critic_steps / c.checkpoint_interval);
}

} // namespace
} // namespace wpure
