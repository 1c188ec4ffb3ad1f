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

#include "gradlab/metrics.hpp"
#include "gradlab/rng.hpp"

using namespace gradlab;

namespace {

// Naive oracle: recompute SSIM with plain double loops and textbook formulas,
// no shared code with the implementation's accumulation order.
double ssim_oracle(const Tensor& a, const Tensor& b, int win) {
  int h = a.shape[0], w = a.shape[1];
  double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  int count = 0;
  for (int i = 0; i + win <= h; ++i) {
    for (int j = 0; j + win <= w; ++j) {
      double sx = 0, sy = 0;
      for (int u = i; u < i + win; ++u)
        for (int v = j; v < j + win; ++v) {
          sx += a.data[u * w + v];
          sy += b.data[u * w + v];
        }
      double n = win * win;
      double mx = sx / n, my = sy / n;
      double vx = 0, vy = 0, cov = 0;
      for (int u = i; u < i + win; ++u)
        for (int v = j; v < j + win; ++v) {
          vx += (a.data[u * w + v] - mx) * (a.data[u * w + v] - mx) / n;
          vy += (b.data[u * w + v] - my) * (b.data[u * w + v] - my) / n;
          cov += (a.data[u * w + v] - mx) * (b.data[u * w + v] - my) / n;
        }
      total += (2 * mx * my + c1) * (2 * cov + c2) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / count;
}

Tensor random_image(int h, int w, std::uint64_t seed) {
  Tensor t({h, w});
  Rng rng(seed);
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

}  // namespace

TEST_CASE("perfect classifier scores 1 on every metric") {
  auto m = classification_metrics({5, 5, 0, 0});
  CHECK(m.accuracy == 1.0);
  CHECK(*m.precision == 1.0);
  CHECK(*m.recall == 1.0);
  CHECK(*m.specificity == 1.0);
  CHECK(*m.f1 == 1.0);
  CHECK(*m.mcc == 1.0);
}

TEST_CASE("coin-flip structure gives mcc 0") {
  auto m = classification_metrics({10, 10, 10, 10});
  CHECK(*m.mcc == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("always-wrong classifier gives mcc -1") {
  auto m = classification_metrics({0, 0, 7, 7});
  CHECK(*m.mcc == doctest::Approx(-1.0).epsilon(1e-15));
}

TEST_CASE("metrics match a direct formula evaluation") {
  // tp=50, fp=10, fn=20, tn=70
  auto m = classification_metrics({50, 70, 10, 20});
  CHECK(m.accuracy == doctest::Approx(120.0 / 150.0).epsilon(1e-15));
  CHECK(*m.precision == doctest::Approx(50.0 / 60.0).epsilon(1e-15));
  CHECK(*m.recall == doctest::Approx(50.0 / 70.0).epsilon(1e-15));
  CHECK(*m.specificity == doctest::Approx(70.0 / 80.0).epsilon(1e-15));
  double p = 50.0 / 60.0, r = 50.0 / 70.0;
  CHECK(*m.f1 == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-15));
  double mcc = (50.0 * 70 - 10.0 * 20) /
               std::sqrt(60.0 * 70.0 * 80.0 * 90.0);
  CHECK(*m.mcc == doctest::Approx(mcc).epsilon(1e-15));
}

TEST_CASE("zero-denominator metrics are reported as undefined, not NaN") {
  // no positives predicted or present
  auto m = classification_metrics({0, 9, 0, 0});
  CHECK(m.accuracy == 1.0);
  CHECK_FALSE(m.precision.has_value());
  CHECK_FALSE(m.recall.has_value());
  CHECK(m.specificity.has_value());
  CHECK_FALSE(m.f1.has_value());
  CHECK_FALSE(m.mcc.has_value());
}

TEST_CASE("f1 is the harmonic mean of reported precision and recall") {
  auto m = classification_metrics({13, 40, 7, 3});
  double hm = 2.0 / (1.0 / *m.precision + 1.0 / *m.recall);
  CHECK(*m.f1 == doctest::Approx(hm).epsilon(1e-12));
  CHECK(*m.mcc >= -1.0);
  CHECK(*m.mcc <= 1.0);
}

TEST_CASE("empty confusion matrix is rejected") {
  CHECK_THROWS_AS(classification_metrics({0, 0, 0, 0}), ContractError);
}

TEST_CASE("ssim of an image with itself is 1") {
  auto x = random_image(16, 16, 4);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of equal constant images is 1") {
  Tensor x = Tensor::full({12, 12}, 0.4);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim is symmetric") {
  auto a = random_image(20, 20, 1);
  auto b = random_image(20, 20, 2);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
}

TEST_CASE("windowed ssim equals the naive double-loop oracle") {
  for (std::uint64_t seed : {10, 11, 12}) {
    auto a = random_image(32, 32, seed);
    auto b = random_image(32, 32, seed + 100);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b, 8)).epsilon(1e-10));
  }
}

TEST_CASE("ssim of an inverted binary image matches the oracle") {
  Tensor a({16, 16});
  Rng rng(5);
  for (auto& v : a.data) v = rng.below(2) ? 1.0 : 0.0;
  Tensor b = a;
  for (auto& v : b.data) v = 1.0 - v;
  double got = ssim(a, b);
  CHECK(got == doctest::Approx(ssim_oracle(a, b, 8)).epsilon(1e-10));
  CHECK(got < 0.0);  // anticorrelated structure
}

TEST_CASE("ssim accepts NCHW single images and rejects mismatches") {
  auto a = random_image(16, 16, 9);
  Tensor a4({1, 1, 16, 16});
  a4.data = a.data;
  CHECK(ssim(a, a4) == doctest::Approx(1.0).epsilon(1e-12));
  auto c = random_image(8, 8, 3);
  CHECK_THROWS_AS(ssim(a, c), DimensionError);
}

TEST_CASE("gaussian window agrees with uniform on identical images") {
  auto a = random_image(16, 16, 21);
  SsimParams p;
  p.gaussian = true;
  CHECK(ssim(a, a, p) == doctest::Approx(1.0).epsilon(1e-12));
  auto b = random_image(16, 16, 22);
  // different windows give different but similarly-signed scores
  double u = ssim(a, b), g = ssim(a, b, p);
  CHECK(std::abs(u - g) < 0.5);
}

TEST_CASE("mse oracle") {
  Tensor a({2}), b({2});
  a.data = {0.0, 1.0};
  b.data = {1.0, 1.0};
  CHECK(mse(a, b) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(mse(a, Tensor({3})), DimensionError);
}
