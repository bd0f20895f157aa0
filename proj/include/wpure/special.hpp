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

#ifndef WPURE_SPECIAL_HPP
#define WPURE_SPECIAL_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "wpure/error.hpp"

namespace wpure {

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b); converges
// quickly for x < (a + 1) / (a + b + 2).
inline double beta_cf(double x, double a, double b) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 100000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < eps) return h;
  }
  throw NumericError("reg_inc_beta: continued fraction did not converge");
}

} // namespace detail

/// Regularized incomplete beta I_x(a, b), absolute error below 1e-10.
inline double reg_inc_beta(double x, double a, double b) {
  if (!(x >= 0.0 && x <= 1.0)) throw PreconditionError("reg_inc_beta: x must be in [0,1]");
  if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
    throw PreconditionError("reg_inc_beta: a and b must be positive and finite");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  if (a == b && x == 0.5) return 0.5;
  if (b == 1.0) return std::pow(x, a);
  if (a == 1.0) return 1.0 - std::pow(1.0 - x, b);
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  double r;
  if (x < (a + 1.0) / (a + b + 2.0))
    r = front * detail::beta_cf(x, a, b) / a;
  else
    r = 1.0 - front * detail::beta_cf(1.0 - x, b, a) / b;
  return std::clamp(r, 0.0, 1.0);
}

/// One-sided p-value P(T >= c), T the cosine between a fixed vector and a
/// uniformly random direction in dimension dv.
inline double cosine_pvalue(double c, long dv) {
  if (dv < 2) throw PreconditionError("cosine_pvalue: dimension must be >= 2");
  if (!(c >= -1.0 && c <= 1.0)) throw PreconditionError("cosine_pvalue: cosine must be in [-1,1], got " + std::to_string(c));
  const double a = 0.5 * static_cast<double>(dv - 1);
  // 1 - I_{(1+c)/2}(a, a) = I_{(1-c)/2}(a, a).
  return reg_inc_beta(0.5 * (1.0 - c), a, a);
}

/// Survival function of the chi-squared distribution with an even number of
/// degrees of freedom 2k: exp(-x/2) * sum_{j<k} (x/2)^j / j!.
inline double chi2_survival_even(double x, long k) {
  if (k < 1) throw PreconditionError("chi2_survival_even: k must be >= 1");
  if (!(x >= 0.0)) throw PreconditionError("chi2_survival_even: x must be >= 0");
  if (std::isinf(x)) return 0.0;
  const double half = 0.5 * x;
  if (half == 0.0) return 1.0;
  const double log_half = std::log(half);
  double sum = 0.0;
  for (long j = 0; j < k; ++j)
    sum += std::exp(-half + static_cast<double>(j) * log_half - std::lgamma(static_cast<double>(j) + 1.0));
  return std::min(sum, 1.0);
}

/// Smallest p-value substituted for exact zeros before taking logarithms.
inline constexpr double kMinPValue = 1e-300;

/// Fisher's method: X = -2 sum ln p_i against chi-squared with 2n degrees of freedom.
inline double fisher_combine(std::span<const double> p) {
  if (p.empty()) throw PreconditionError("fisher_combine: no p-values");
  double x = 0.0;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw PreconditionError("fisher_combine: p-value outside [0,1]");
    x += -2.0 * std::log(std::max(v, kMinPValue));
  }
  return chi2_survival_even(x, static_cast<long>(p.size()));
}

/// min(1, n * min p_i).
inline double bonferroni_combine(std::span<const double> p) {
  if (p.empty()) throw PreconditionError("bonferroni_combine: no p-values");
  const double lo = *std::min_element(p.begin(), p.end());
  return std::min(1.0, static_cast<double>(p.size()) * lo);
}

} // namespace wpure

#endif // WPURE_SPECIAL_HPP
