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

#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "wpure/probe.hpp"

namespace wpure {
namespace {

using testing::make_dataset;
using testing::temp_path;

// Two 2-D classes, each point at least 3 sigma from the separating line x = 0.5.
Dataset separable(Index per_class, std::uint64_t seed) {
  SeedStream r(seed, Stream::DataGeneration);
  const double sigma = 0.03;
  RowMatrixF x(2 * per_class, 2);
  std::vector<std::uint32_t> labels;
  for (Index i = 0; i < 2 * per_class; ++i) {
    const std::uint32_t y = i < per_class ? 1 : 2;
    x(i, 0) = static_cast<float>((y == 1 ? 0.5 - 6 * sigma : 0.5 + 6 * sigma) + sigma * std::clamp(r.normal(), -3.0, 3.0));
    x(i, 1) = static_cast<float>(0.5 + sigma * r.normal());
    labels.push_back(y);
  }
  return make_dataset(x, labels, 2);
}

TEST(Probe, SeparableDataIsFitPerfectly) {
  const Dataset d = separable(100, 1);
  SeedStream rng(1, Stream::ProbeTraining);
  const auto g = FeatureExtractor::identity(2);
  const LinearProbe p = train_probe(d, g, {.epochs = 50}, rng);
  EXPECT_EQ(accuracy(p, g, d), 1.0);
  EXPECT_LE(p.loss_history.back(), p.loss_history.front());
  EXPECT_EQ(p.loss_history.size(), 51u);
}

TEST(Probe, DefaultScheduleDecreasesLoss) {
  const Dataset d = separable(100, 2);
  SeedStream rng(2, Stream::ProbeTraining);
  const LinearProbe p = train_probe(d, FeatureExtractor::identity(2), {}, rng);
  EXPECT_LT(p.loss_history.back(), p.loss_history.front());
}

TEST(Probe, ZeroEpochsIsZeroInitialization) {
  const Dataset d = separable(10, 3);
  SeedStream rng(3, Stream::ProbeTraining);
  const LinearProbe p = train_probe(d, FeatureExtractor::identity(2), {.epochs = 0}, rng);
  EXPECT_EQ(p.weight, Matrix::Zero(2, 2));
  EXPECT_EQ(p.bias, Vector::Zero(2));
  EXPECT_NEAR(p.loss_history.front(), std::log(2.0), 1e-15); // uniform probabilities
  EXPECT_EQ(p.predict(FeatureExtractor::identity(2), Vector{{0.9, 0.1}}), 1u); // tie goes to label 1
}

TEST(Probe, DuplicatedDatasetReachesSameParameters) {
  const Dataset d = separable(40, 4);
  std::vector<Index> twice(160);
  for (Index i = 0; i < 160; ++i) twice[static_cast<std::size_t>(i)] = i % 80;
  const Dataset dd = d.subset(twice);
  SeedStream a(4, Stream::ProbeTraining), b(4, Stream::ProbeTraining);
  const auto g = FeatureExtractor::identity(2);
  // Full-batch steps make the schedules identical: the mean gradient over d and d u d agree.
  const LinearProbe p1 = train_probe(d, g, {.epochs = 200, .lr = 0.5, .batch = 1000}, a);
  const LinearProbe p2 = train_probe(dd, g, {.epochs = 200, .lr = 0.5, .batch = 1000}, b);
  EXPECT_LT((p1.weight - p2.weight).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT((p1.bias - p2.bias).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Probe, DeterministicPerSeed) {
  const Dataset d = separable(50, 5);
  SeedStream a(9, Stream::ProbeTraining), b(9, Stream::ProbeTraining), c(10, Stream::ProbeTraining);
  const auto g = FeatureExtractor::identity(2);
  const LinearProbe p1 = train_probe(d, g, {}, a), p2 = train_probe(d, g, {}, b), p3 = train_probe(d, g, {}, c);
  EXPECT_EQ(p1.weight, p2.weight);
  EXPECT_EQ(p1.bias, p2.bias);
  EXPECT_NE(p1.weight, p3.weight);
}

TEST(Probe, NonFiniteLossIsReported) {
  Dataset d = separable(10, 6);
  SeedStream rng(6, Stream::ProbeTraining);
  const auto g = FeatureExtractor::linear(Matrix::Identity(2, 2) * 1e300, Vector::Zero(2));
  EXPECT_THROW(train_probe(d, g, {.epochs = 3, .lr = 1e300}, rng), NumericError);
}

TEST(Probe, FileRoundTrip) {
  const Dataset d = separable(20, 7);
  SeedStream rng(7, Stream::ProbeTraining);
  const LinearProbe p = train_probe(d, FeatureExtractor::identity(2), {.epochs = 5}, rng);
  const auto path = temp_path("probe.mprb");
  save_probe(p, path);
  const LinearProbe back = load_probe(path);
  EXPECT_EQ(back.epochs, 5);
  EXPECT_EQ(back.seed, 7u);
  EXPECT_EQ(back.lr, p.lr);
  EXPECT_LT((back.weight - p.weight).cwiseAbs().maxCoeff(), 1e-6);
  auto bytes = encode_probe(p);
  bytes[4] = 9;
  EXPECT_THROW(decode_probe(bytes), ParseError);
}

LinearProbe make_probe(Matrix weight, Vector bias) {
  LinearProbe p;
  p.weight = std::move(weight);
  p.bias = std::move(bias);
  return p;
}

// Scores the coordinate x_j for label j+1.
LinearProbe coordinate_probe(Index dim) { return make_probe(Matrix::Identity(dim, dim), Vector::Zero(dim)); }

TEST(Metrics, Accuracy) {
  RowMatrixF x = RowMatrixF::Zero(10, 2);
  std::vector<std::uint32_t> labels(10);
  for (Index i = 0; i < 10; ++i) {
    x(i, i % 2) = 1.0f;
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(1 + i % 2);
  }
  const auto g = FeatureExtractor::identity(2);
  const LinearProbe p = coordinate_probe(2);
  EXPECT_EQ(accuracy(p, g, make_dataset(x, labels, 2)), 1.0);
  std::vector<std::uint32_t> flipped(labels);
  for (auto &y : flipped) y = 3 - y;
  EXPECT_EQ(accuracy(p, g, make_dataset(x, flipped, 2)), 0.0);
  std::vector<std::uint32_t> half(labels);
  for (std::size_t i = 0; i < 5; ++i) half[i] = 3 - half[i];
  EXPECT_EQ(accuracy(p, g, make_dataset(x, half, 2)), 0.5);
  EXPECT_THROW(accuracy(p, g, make_dataset(RowMatrixF(0, 2), {}, 2)), PreconditionError);
}

TEST(Metrics, TargetedAsr) {
  const auto g = FeatureExtractor::identity(2);
  const LinearProbe p = coordinate_probe(2);
  std::vector<TargetInput> targets;
  for (int i = 0; i < 20; ++i) targets.push_back({Vector{{0.0, 1.0}}, i < 17 ? 2u : 1u});
  const Fraction f = asr_targeted(p, g, targets);
  EXPECT_EQ(f.value(), 0.85);
  EXPECT_EQ(f.str(), "17/20");
  EXPECT_EQ(asr_targeted(p, g, std::vector<TargetInput>{{Vector{{1.0, 0.0}}, 1}}).str(), "1/1");
  EXPECT_EQ(asr_targeted(p, g, std::vector<TargetInput>{{Vector{{1.0, 0.0}}, 2}}).value(), 0.0);
  EXPECT_THROW(asr_targeted(p, g, std::vector<TargetInput>{}), PreconditionError);
}

TEST(Metrics, BackdoorAsr) {
  // 2x2 images; label 1 if the top-left pixel is bright, else 2. Target label 2.
  RowMatrixF x(4, 4);
  x << 0.9f, 0.1f, 0.1f, 0.1f, 0.8f, 0.2f, 0.2f, 0.2f, 0.1f, 0.9f, 0.1f, 0.1f, 0.7f, 0.1f, 0.1f, 0.1f;
  const Dataset test = make_dataset(x, {1, 1, 2, 1}, 2);
  const auto g = FeatureExtractor::identity(4);
  const Trigger trig{2, 2, 1, 1, 1, 1, {1.0}}; // bottom-right pixel
  // Ignores the patch: rows score pixel 0 vs a constant.
  const LinearProbe blind = make_probe(Matrix{{1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}}, Vector{{0.0, 0.5}});
  EXPECT_EQ(asr_backdoor(blind, g, test, trig, 2).str(), "0/3");
  const Trigger none{2, 2, 0, 0, 0, 0, {}};
  EXPECT_EQ(asr_backdoor(blind, g, test, none, 2).str(), "0/3");
  // Keyed to the patch coordinate.
  const LinearProbe keyed = make_probe(Matrix{{1.0, 0.0, 0.0, 0.0}, {0.0, 0.0, 0.0, 10.0}}, Vector::Zero(2));
  EXPECT_EQ(asr_backdoor(keyed, g, test, trig, 2).value(), 1.0);
  EXPECT_THROW(asr_backdoor(keyed, g, make_dataset(x, {2, 2, 2, 2}, 2), trig, 2), PreconditionError);
}

TEST(RandomNoise, ZeroSigmaIsIdentity) {
  const Dataset d = separable(20, 8);
  SeedStream rng(1, Stream::Baseline);
  EXPECT_EQ(random_noise_purify(d, 0.0, rng), d);
}

// Standard deviation of clamp(0.5 + Z, 0, 1), Z ~ N(0,1), by Simpson's rule.
double clipped_std_oracle() {
  const auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  const auto y = [](double z) { return std::clamp(0.5 + z, 0.0, 1.0); };
  const int n = 200000;
  const double lo = -12.0, hi = 12.0, h = (hi - lo) / n;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + i * h, w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    m1 += w * y(z) * phi(z);
    m2 += w * y(z) * y(z) * phi(z);
  }
  m1 *= h / 3.0;
  m2 *= h / 3.0;
  return std::sqrt(m2 - m1 * m1);
}

TEST(RandomNoise, ClippedSpreadMatchesQuadrature) {
  const Index n = 20000;
  const Dataset d = make_dataset(RowMatrixF::Constant(n, 2, 0.5f), std::vector<std::uint32_t>(static_cast<std::size_t>(n), 1), 1);
  SeedStream rng(2, Stream::Baseline);
  const Dataset out = random_noise_purify(d, 255.0, rng);
  EXPECT_GE(out.inputs.minCoeff(), 0.0f);
  EXPECT_LE(out.inputs.maxCoeff(), 1.0f);
  const Eigen::ArrayXd v = out.inputs.cast<double>().reshaped().array();
  const double sd = std::sqrt((v - v.mean()).square().mean());
  const double oracle = clipped_std_oracle();
  EXPECT_NEAR(oracle, 0.4303, 5e-4);
  EXPECT_NEAR(sd, oracle, 0.01);
  EXPECT_EQ(out.labels, d.labels);
}

} // namespace
} // namespace wpure
