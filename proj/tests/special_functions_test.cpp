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
#include <random>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <gtest/gtest.h>

#include "wpure/special.hpp"

namespace wpure {
namespace {

TEST(RegIncBeta, UniformCase) {
  for (double x : {0.0, 0.3, 1.0}) EXPECT_NEAR(reg_inc_beta(x, 1.0, 1.0), x, 1e-15);
}

TEST(RegIncBeta, SymmetricMidpointIsExactlyHalf) {
  for (double a : {0.5, 2.0, 7.5}) EXPECT_EQ(reg_inc_beta(0.5, a, a), 0.5);
}

TEST(RegIncBeta, PolynomialCase) {
  // Beta(2,3) CDF = 6x^2 - 8x^3 + 3x^4; at 1/4: 6/16 - 8/64 + 3/256 = 67/256.
  EXPECT_NEAR(reg_inc_beta(0.25, 2.0, 3.0), 67.0 / 256.0, 1e-12);
  EXPECT_EQ(67.0 / 256.0, 0.26171875);
}

TEST(RegIncBeta, MatchesBoostOnGrid) {
  double worst = 0.0;
  for (double a : {0.5, 1.0, 1.5, 3.0, 10.0, 31.5, 63.5, 200.0})
    for (double b : {0.5, 1.0, 2.5, 7.0, 31.5, 63.5, 150.0})
      for (int i = 0; i <= 40; ++i) {
        const double x = i / 40.0;
        worst = std::max(worst, std::abs(reg_inc_beta(x, a, b) - boost::math::ibeta(a, b, x)));
      }
  EXPECT_LT(worst, 1e-10);
}

TEST(RegIncBeta, MonotoneInX) {
  for (double a : {0.7, 4.0, 40.0}) {
    double prev = 0.0;
    for (int i = 0; i <= 1000; ++i) {
      const double v = reg_inc_beta(i / 1000.0, a, 2.0 * a);
      EXPECT_GE(v, prev);
      prev = v;
    }
  }
}

TEST(RegIncBeta, DomainErrors) {
  EXPECT_THROW(reg_inc_beta(-0.1, 1.0, 1.0), PreconditionError);
  EXPECT_THROW(reg_inc_beta(1.1, 1.0, 1.0), PreconditionError);
  EXPECT_THROW(reg_inc_beta(0.5, 0.0, 1.0), PreconditionError);
  EXPECT_THROW(reg_inc_beta(0.5, 1.0, -2.0), PreconditionError);
  EXPECT_THROW(reg_inc_beta(std::nan(""), 1.0, 1.0), PreconditionError);
}

TEST(CosinePValue, Examples) {
  for (long d : {2L, 3L, 64L, 128L, 1000L}) EXPECT_EQ(cosine_pvalue(0.0, d), 0.5);
  EXPECT_EQ(cosine_pvalue(0.5, 3), 0.25);
  EXPECT_EQ(cosine_pvalue(1.0, 64), 0.0);
  EXPECT_EQ(cosine_pvalue(-1.0, 64), 1.0);
  // In three dimensions the cosine is uniform on [-1,1].
  for (double c : {-0.9, -0.3, 0.2, 0.7}) EXPECT_NEAR(cosine_pvalue(c, 3), (1.0 - c) / 2.0, 1e-14);
}

TEST(CosinePValue, MatchesMonteCarlo) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd;
  const int dv = 16, trials = 200000;
  int above = 0;
  for (int t = 0; t < trials; ++t) {
    double first = 0.0, norm2 = 0.0;
    for (int j = 0; j < dv; ++j) {
      const double z = nd(rng);
      if (j == 0) first = z;
      norm2 += z * z;
    }
    above += first / std::sqrt(norm2) >= 0.3 ? 1 : 0;
  }
  const double p = cosine_pvalue(0.3, dv);
  const double se = std::sqrt(p * (1 - p) / trials);
  EXPECT_NEAR(static_cast<double>(above) / trials, p, 5 * se);
}

TEST(CosinePValue, MonotoneAndErrors) {
  double prev = 1.0;
  for (int i = -100; i <= 100; ++i) {
    const double p = cosine_pvalue(i / 100.0, 128);
    EXPECT_LE(p, prev);
    prev = p;
  }
  EXPECT_THROW(cosine_pvalue(1.01, 3), PreconditionError);
  EXPECT_THROW(cosine_pvalue(0.0, 1), PreconditionError);
}

TEST(ChiSquared, EvenSurvivalMatchesBoost) {
  for (long k : {1L, 2L, 5L, 10L, 20L, 50L})
    for (double x : {0.0, 0.1, 1.0, 5.0, 20.0, 40.0, 80.0, 200.0}) {
      const boost::math::chi_squared dist(2.0 * static_cast<double>(k));
      const double want = boost::math::cdf(boost::math::complement(dist, x));
      EXPECT_NEAR(chi2_survival_even(x, k), want, 1e-12 + 1e-10 * want) << "k " << k << " x " << x;
    }
}

TEST(Fisher, SingleValueIsIdentity) {
  for (double p : {1.0, 0.5, 0.05, 1e-5, 1e-100}) {
    const std::vector<double> one{p};
    // exp(log p) carries a relative error of about |ln p| ulps.
    EXPECT_NEAR(fisher_combine(one), p, 1e-13 * p) << p;
  }
}

TEST(Fisher, Behaviour) {
  EXPECT_EQ(fisher_combine(std::vector<double>(20, 0.0)), 0.0);
  EXPECT_NEAR(fisher_combine(std::vector<double>(20, 1.0)), 1.0, 1e-15);
  const std::vector<double> mixed{0.01, 0.2, 0.7};
  const boost::math::chi_squared dist(6.0);
  double x = 0.0;
  for (double p : mixed) x -= 2.0 * std::log(p);
  EXPECT_NEAR(fisher_combine(mixed), boost::math::cdf(boost::math::complement(dist, x)), 1e-13);
  EXPECT_THROW(fisher_combine(std::vector<double>{}), PreconditionError);
  EXPECT_THROW(fisher_combine(std::vector<double>{1.5}), PreconditionError);
}

TEST(Bonferroni, Examples) {
  EXPECT_DOUBLE_EQ(bonferroni_combine(std::vector<double>{0.01, 0.5, 0.9}), 0.03);
  EXPECT_EQ(bonferroni_combine(std::vector<double>{0.6, 0.5}), 1.0);
}

} // namespace
} // namespace wpure
