/*
 * Copyright 2025 The gradlab Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "gradlab/accountant.hpp"
#include "gradlab/error.hpp"

using namespace gradlab;

namespace {

// Independent oracle: the integer-alpha subsampled bound equals the Renyi
// divergence integral of the mixture (1-q)N(0,s^2) + qN(1,s^2) against
// N(0,s^2). Evaluated with Simpson quadrature at fine resolution.
double quadrature_rdp(double sigma, double q, int alpha) {
  auto log_pdf = [&](double x, double mu) {
    double z = (x - mu) / sigma;
    return -0.5 * z * z - std::log(sigma * std::sqrt(2.0 * M_PI));
  };
  auto integrand = [&](double x) {
    double l0 = std::log1p(-q) + log_pdf(x, 0.0);
    double l1 = std::log(q) + log_pdf(x, 1.0);
    double hi_l = std::max(l0, l1);
    double log_mix = hi_l + std::log1p(std::exp(std::min(l0, l1) - hi_l));
    return std::exp(alpha * log_mix + (1.0 - alpha) * log_pdf(x, 0.0));
  };
  const double lo = -40.0 * sigma, hi = 1.0 + 40.0 * sigma;
  const int n = 400000;  // even
  const double h = (hi - lo) / n;
  double s = integrand(lo) + integrand(hi);
  for (int i = 1; i < n; ++i) {
    s += integrand(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  }
  double integral = s * h / 3.0;
  return std::log(integral) / (alpha - 1);
}

}  // namespace

TEST_CASE("plain Gaussian RDP is alpha over two sigma squared") {
  CHECK(rdp_gaussian(1.0, 1.0, 2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rdp_gaussian(2.0, 1.0, 8) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rdp_gaussian(3.0, 1.0, 5) ==
        doctest::Approx(5.0 / 18.0).epsilon(1e-15));
}

TEST_CASE("subsampled bound matches the quadrature oracle at alpha 2") {
  // Closed form for alpha=2: ln(1 - q^2 + q^2 e^{1/sigma^2}).
  double got = rdp_gaussian(1.0, 0.01, 2);
  double closed = std::log(1.0 - 1e-4 + 1e-4 * std::exp(1.0));
  CHECK(got == doctest::Approx(closed).epsilon(1e-12));
  CHECK(got == doctest::Approx(quadrature_rdp(1.0, 0.01, 2)).epsilon(1e-6));
}

TEST_CASE("subsampled bound matches quadrature at higher orders") {
  for (int alpha : {3, 5, 10}) {
    double got = rdp_gaussian(1.5, 0.05, alpha);
    double oracle = quadrature_rdp(1.5, 0.05, alpha);
    CHECK(got == doctest::Approx(oracle).epsilon(1e-5));
  }
}

TEST_CASE("rdp is nonnegative and rejects bad arguments") {
  CHECK(rdp_gaussian(10.0, 0.001, 2) >= 0.0);
  CHECK_THROWS_AS(rdp_gaussian(1.0, 1.0, 1), ContractError);
  CHECK_THROWS_AS(rdp_gaussian(0.0, 1.0, 2), ContractError);
  CHECK_THROWS_AS(rdp_gaussian(1.0, 0.0, 2), ContractError);
  CHECK_THROWS_AS(rdp_gaussian(1.0, 1.1, 2), ContractError);
}

TEST_CASE("conversion at T=1 q=1 matches a direct grid minimization") {
  PrivacyBudget b;
  b.delta = 1e-5;
  b.add_steps(1.0, 1.0, 1);
  auto acc = compose_and_convert(b);
  double best = std::numeric_limits<double>::infinity();
  for (int alpha : rdp_alpha_grid()) {
    best = std::min(best, alpha / 2.0 + std::log(1e5) / (alpha - 1));
  }
  CHECK(acc.eps == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("doubling the step count never decreases eps") {
  for (double sigma : {0.8, 1.5, 4.0}) {
    PrivacyBudget a, b;
    a.delta = b.delta = 1e-5;
    a.add_steps(sigma, 0.1, 50);
    b.add_steps(sigma, 0.1, 100);
    CHECK(compose_and_convert(b).eps >= compose_and_convert(a).eps);
  }
}

TEST_CASE("eps vanishes as sigma grows") {
  PrivacyBudget b;
  b.delta = 1e-5;
  b.add_steps(500.0, 0.1, 100);
  CHECK(compose_and_convert(b).eps < 0.2);
  PrivacyBudget c;
  c.delta = 1e-5;
  c.add_steps(1000.0, 0.1, 100);
  CHECK(compose_and_convert(c).eps < compose_and_convert(b).eps);
}

TEST_CASE("eps is monotone across a sigma, T, q grid") {
  const double sigmas[] = {0.7, 1.0, 2.0, 5.0};
  const int steps[] = {10, 100, 1000};
  const double qs[] = {0.01, 0.125, 1.0};
  auto eps_of = [](double s, double q, int t) {
    PrivacyBudget b;
    b.delta = 1e-5;
    b.add_steps(s, q, t);
    return compose_and_convert(b).eps;
  };
  for (int t : steps) {
    for (double q : qs) {
      for (int i = 0; i + 1 < 4; ++i) {
        CHECK(eps_of(sigmas[i], q, t) >= eps_of(sigmas[i + 1], q, t));
      }
    }
  }
  for (double s : sigmas) {
    for (double q : qs) {
      for (int i = 0; i + 1 < 3; ++i) {
        CHECK(eps_of(s, q, steps[i]) <= eps_of(s, q, steps[i + 1]));
      }
    }
  }
  for (double s : sigmas) {
    for (int t : steps) {
      for (int i = 0; i + 1 < 3; ++i) {
        CHECK(eps_of(s, qs[i], t) <= eps_of(s, qs[i + 1], t));
      }
    }
  }
}

TEST_CASE("rdp composition is additive in steps") {
  for (int alpha : {2, 7, 32, 256}) {
    double one = rdp_gaussian(1.3, 0.2, alpha);
    PrivacyBudget b;
    b.delta = 1e-5;
    b.add_steps(1.3, 0.2, 17);
    double total = 0.0;
    for (const auto& e : b.log) total += e.steps * rdp_gaussian(e.sigma, e.q, alpha);
    CHECK(total == doctest::Approx(17.0 * one).epsilon(1e-12));
  }
}

TEST_CASE("converted eps dominates the unsubsampled analytic value") {
  // At q=1 the conversion minimum over integer alpha can only be >= the
  // continuous-alpha optimum alpha* = 1 + sigma sqrt(2 ln(1/delta)).
  double sigma = 1.7, delta = 1e-5;
  PrivacyBudget b;
  b.delta = delta;
  b.add_steps(sigma, 1.0, 1);
  double cont_alpha = 1.0 + sigma * std::sqrt(2.0 * std::log(1.0 / delta));
  double cont_eps = cont_alpha / (2.0 * sigma * sigma) +
                    std::log(1.0 / delta) / (cont_alpha - 1.0);
  CHECK(compose_and_convert(b).eps >= cont_eps - 1e-12);
}

TEST_CASE("empty log and bad delta are rejected") {
  PrivacyBudget b;
  b.delta = 1e-5;
  CHECK_THROWS_AS(compose_and_convert(b), ContractError);
  b.add_steps(1.0, 1.0, 1);
  b.delta = 0.0;
  CHECK_THROWS_AS(compose_and_convert(b), ContractError);
}

TEST_CASE("calibrate then account reproduces the target within 1 percent") {
  for (double target : {8.0, 25.0, 50.0}) {
    double sigma = calibrate_sigma(target, 1e-3, 0.125, 160);
    PrivacyBudget b;
    b.delta = 1e-3;
    b.add_steps(sigma, 0.125, 160);
    double eps = compose_and_convert(b).eps;
    CHECK(std::abs(eps - target) / target < 0.01);
  }
}

TEST_CASE("larger privacy budget needs less noise") {
  double s8 = calibrate_sigma(8.0, 1e-3, 0.125, 160);
  double s25 = calibrate_sigma(25.0, 1e-3, 0.125, 160);
  double s50 = calibrate_sigma(50.0, 1e-3, 0.125, 160);
  CHECK(s8 > s25);
  CHECK(s25 > s50);
}

TEST_CASE("calibration rejects degenerate and unreachable inputs") {
  CHECK_THROWS_AS(calibrate_sigma(8.0, 1e-3, 0.125, 0), ContractError);
  CHECK_THROWS_AS(calibrate_sigma(0.0, 1e-3, 0.125, 10), ContractError);
  // sigma capped at 1e3 cannot push eps this low for q=1 over many steps.
  CHECK_THROWS_AS(calibrate_sigma(1e-9, 1e-5, 1.0, 100000),
                  std::range_error);
}

TEST_CASE("budget log serializes one CSV row per entry") {
  PrivacyBudget b;
  b.delta = 1e-5;
  b.add_steps(1.0, 0.5, 10);
  b.add_steps(2.0, 0.5, 5);
  std::string csv = budget_to_csv(b);
  CHECK(csv.rfind("entry,sigma,q,steps,eps_cumulative,delta,best_alpha\n",
                  0) == 0);
  int lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == 3);
  // cumulative eps in the second row exceeds the first
  PrivacyBudget first;
  first.delta = 1e-5;
  first.add_steps(1.0, 0.5, 10);
  CHECK(compose_and_convert(b).eps > compose_and_convert(first).eps);
}
