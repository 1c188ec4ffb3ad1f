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
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "gradlab/rng.hpp"
#include "gradlab/tape.hpp"

using gradlab::Rng;
using gradlab::Tape;
using gradlab::Tensor;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Central finite differences of a scalar function of one flat input vector.
std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f(x);
    x[i] = keep - h;
    double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_rel_err(const std::vector<double>& got,
                   const std::vector<double>& want) {
  double worst = 0.0;
  for (size_t i = 0; i < got.size(); ++i) {
    double scale = std::max(1.0, std::abs(want[i]));
    worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity passes values through") {
  Tape t;
  int a = t.leaf(Tensor({2, 2}, {1, 2, 3, 4}));
  int eye = t.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  int c = t.matmul(a, eye);
  CHECK(t.value(c).data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("sigmoid(0) is one half") {
  Tape t;
  int x = t.leaf(Tensor::scalar(0.0));
  CHECK(t.value(t.sigmoid(x)).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("conv2d of ones: 3x3 input, 2x2 kernel, stride 1, no pad") {
  // Hand convolution oracle: every window sums four ones.
  Tape t;
  int x = t.leaf(Tensor::full({1, 1, 3, 3}, 1.0));
  int w = t.leaf(Tensor::full({1, 1, 2, 2}, 1.0));
  int y = t.conv2d(x, w, 1, 0);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 1, 2, 2});
  for (double v : t.value(y).data) CHECK(v == doctest::Approx(4.0));
}

TEST_CASE("shape mismatch raises dimension error with shapes named") {
  Tape t;
  int a = t.leaf(Tensor({2}, {1, 2}));
  int b = t.leaf(Tensor({3}, {1, 2, 3}));
  CHECK_THROWS_AS(t.add(a, b), gradlab::DimensionError);
}

TEST_CASE("non-finite input raises numeric error") {
  Tape t;
  CHECK_THROWS_AS(t.leaf(Tensor({1}, {std::nan("")})), gradlab::NumericError);
}

TEST_CASE("backward of sum of squares") {
  Tape t;
  int x = t.leaf(Tensor({3}, {1, 2, 3}));
  int obj = t.sum_all(t.square(x));
  auto g = t.backward(obj, {x});
  CHECK(g[x].data == std::vector<double>{2, 4, 6});
}

TEST_CASE("disconnected leaf gets a zero gradient") {
  Tape t;
  int x = t.leaf(Tensor({2}, {1, 2}));
  int y = t.leaf(Tensor({2}, {3, 4}));
  int obj = t.sum_all(t.square(x));
  auto g = t.backward(obj, {y});
  CHECK(g[y].data == std::vector<double>{0, 0});
}

TEST_CASE("non-scalar objective is rejected") {
  Tape t;
  int x = t.leaf(Tensor({2}, {1, 2}));
  CHECK_THROWS_AS(t.backward(x, {x}), gradlab::ContractError);
}

TEST_CASE("backward matches finite differences on a small CNN") {
  Rng rng(7);
  Tensor x0 = random_tensor({1, 1, 8, 8}, rng);
  Tensor w1 = random_tensor({2, 1, 3, 3}, rng);
  Tensor w2 = random_tensor({2, 2, 3, 3}, rng);
  Tensor wl = random_tensor({8, 3}, rng);

  auto build = [&](const std::vector<double>& xv) {
    Tape t;
    Tensor xt = x0;
    xt.data = xv;
    int x = t.leaf(xt);
    int c1 = t.tanh_(t.conv2d(x, t.leaf(w1), 1, 1));       // 2x8x8
    int p1 = t.avgpool2d(c1, 2);                           // 2x4x4
    int c2 = t.sigmoid(t.conv2d(p1, t.leaf(w2), 1, 1));    // 2x4x4
    int p2 = t.maxpool2d(c2, 2);                           // 2x2x2
    int flat = t.reshape(p2, {1, 8});
    int logits = t.matmul(flat, t.leaf(wl));
    int obj = t.l2_norm_squared(t.softmax(logits));
    return std::pair<Tape, std::pair<int, int>>{std::move(t), {obj, x}};
  };

  auto [tape, ids] = build(x0.data);
  auto grad = tape.backward(ids.first, {ids.second});
  auto fd = finite_diff(
      [&](const std::vector<double>& xv) {
        auto [t2, ids2] = build(xv);
        return t2.value(ids2.first).item();
      },
      x0.data);
  CHECK(max_rel_err(grad[ids.second].data, fd) < 1e-4);
}

TEST_CASE("grad_of_grad closed form: f(theta,x)=theta*x^2") {
  // d/dtheta f = x^2; objective (df/dtheta)^2 = x^4; d/dx = 4x^3 = 32 at x=2.
  Tape t;
  int theta = t.leaf(Tensor::scalar(3.0));
  int x = t.leaf(Tensor::scalar(2.0));
  int f = t.mul(theta, t.square(x));
  auto inner = t.backward_nodes(f, {theta});
  int obj = t.square(inner[0]);
  auto g = t.grad_of_grad({obj, inner, {x}});
  CHECK(g[x].item() == doctest::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("grad_of_grad matches finite differences of the gradient norm") {
  // One-layer sigmoid net with BCE-style loss; objective = ||d loss/d w||^2.
  Rng rng(11);
  Tensor w0 = random_tensor({4, 1}, rng);
  Tensor x0 = random_tensor({1, 4}, rng, 0.0, 1.0);

  auto grad_norm_sq = [&](const std::vector<double>& xv) {
    Tape t;
    Tensor xt = x0;
    xt.data = xv;
    int x = t.leaf(xt);
    int w = t.leaf(w0);
    int p = t.clamp(t.sigmoid(t.matmul(x, w)), 1e-12, 1.0 - 1e-12);
    // label 1: loss = -log(p)
    int loss = t.scalar_mul(t.sum_all(t.log_(p)), -1.0);
    auto gw = t.backward_nodes(loss, {w});
    int obj = t.l2_norm_squared(gw[0]);
    return std::pair<Tape, std::pair<int, int>>{std::move(t), {obj, x}};
  };

  auto [tape, ids] = grad_norm_sq(x0.data);
  auto g = tape.backward(ids.first, {ids.second});
  auto fd = finite_diff(
      [&](const std::vector<double>& xv) {
        auto [t2, ids2] = grad_norm_sq(xv);
        return t2.value(ids2.first).item();
      },
      x0.data);
  CHECK(max_rel_err(g[ids.second].data, fd) < 1e-3);
}

TEST_CASE("relu kink uses the zero side, deterministically") {
  for (int rep = 0; rep < 3; ++rep) {
    Tape t;
    int x = t.leaf(Tensor({3}, {-1.0, 0.0, 2.0}));
    int obj = t.sum_all(t.relu(x));
    auto g = t.backward(obj, {x});
    CHECK(g[x].data == std::vector<double>{0.0, 0.0, 1.0});
  }
}

TEST_CASE("gradient check across random depth<=6 graphs of supported ops") {
  // 100 random points spread over randomly composed graphs.
  Rng rng(20250826);
  int points = 0;
  for (int graph = 0; graph < 25; ++graph) {
    std::vector<int> shape = {2, 4};
    Tensor x0 = random_tensor(shape, rng);
    int depth = 1 + static_cast<int>(rng.below(6));
    std::vector<int> ops;
    for (int d = 0; d < depth; ++d) ops.push_back(static_cast<int>(rng.below(9)));

    auto build = [&](const std::vector<double>& xv) {
      Tape t;
      Tensor xt = x0;
      xt.data = xv;
      int cur = t.leaf(xt);
      int x = cur;
      for (int op : ops) {
        switch (op) {
          case 0: cur = t.sigmoid(cur); break;
          case 1: cur = t.tanh_(cur); break;
          case 2: cur = t.relu(cur); break;
          case 3: cur = t.square(cur); break;
          case 4: cur = t.softmax(cur); break;
          case 5: cur = t.scalar_mul(cur, 1.7); break;
          case 6: cur = t.add(cur, cur); break;
          case 7: cur = t.mul(cur, cur); break;
          case 8: {
            int c = t.constant(Tensor::full(t.value(cur).shape, 0.25));
            cur = t.sub(cur, c);
            break;
          }
        }
      }
      int obj = t.mean_all(t.square(cur));
      return std::pair<Tape, std::pair<int, int>>{std::move(t), {obj, x}};
    };

    for (int pt = 0; pt < 4; ++pt) {
      Tensor xp = random_tensor(shape, rng, 0.05, 1.0);  // keep off relu kinks
      auto [tape, ids] = build(xp.data);
      auto g = tape.backward(ids.first, {ids.second});
      auto fd = finite_diff(
          [&](const std::vector<double>& xv) {
            auto [t2, ids2] = build(xv);
            return t2.value(ids2.first).item();
          },
          xp.data);
      CHECK(max_rel_err(g[ids.second].data, fd) < 1e-4);
      ++points;
    }
  }
  CHECK(points == 100);
}

TEST_CASE("backward is linear in the objective") {
  Rng rng(5);
  Tensor x0 = random_tensor({5}, rng);
  Tape t;
  int x = t.leaf(x0);
  int f = t.l2_norm_squared(t.sigmoid(x));
  int g = t.sum_all(t.tanh_(x));
  double a = 2.5, b = -0.75;
  int combo = t.add(t.scalar_mul(f, a), t.scalar_mul(g, b));

  auto gf = t.backward(f, {x});
  auto gg = t.backward(g, {x});
  auto gc = t.backward(combo, {x});
  for (int i = 0; i < 5; ++i) {
    CHECK(gc[x].data[i] ==
          doctest::Approx(a * gf[x].data[i] + b * gg[x].data[i])
              .epsilon(1e-12));
  }
}

TEST_CASE("identical seeds give bit-identical tapes and gradients") {
  auto run = [] {
    Rng rng(99);
    Tape t;
    int x = t.leaf(random_tensor({1, 1, 4, 4}, rng));
    int w = t.leaf(random_tensor({2, 1, 3, 3}, rng));
    int obj = t.l2_norm_squared(t.sigmoid(t.conv2d(x, w, 1, 1)));
    auto g = t.backward(obj, {x, w});
    return std::pair<std::vector<double>, std::vector<double>>{g[x].data,
                                                               g[w].data};
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("replay reproduces recorded values bit-exactly") {
  Rng rng(3);
  Tape t;
  int x = t.leaf(random_tensor({1, 2, 4, 4}, rng));
  int w = t.leaf(random_tensor({3, 2, 3, 3}, rng));
  int y = t.maxpool2d(t.relu(t.conv2d(x, w, 1, 1)), 2);
  std::vector<double> before = t.value(y).data;
  t.replay();
  CHECK(t.value(y).data == before);
}

TEST_CASE("maxpool double-backward treats the argmax mask as constant") {
  // Piecewise-linear region: second derivative through the pool is zero.
  Tape t;
  int x = t.leaf(Tensor({1, 1, 2, 2}, {0.1, 0.9, 0.3, 0.2}));
  int pooled = t.maxpool2d(x, 2);
  int obj = t.square(t.sum_all(pooled));
  auto inner = t.backward_nodes(obj, {x});
  int outer_obj = t.l2_norm_squared(inner[0]);
  auto g = t.grad_of_grad({outer_obj, inner, {x}});
  // d obj/dx = 2*sum(pool)*mask; d ||.||^2/dx = 8*sum(pool)*mask.
  CHECK(g[x].data[1] == doctest::Approx(8.0 * 0.9));
  CHECK(g[x].data[0] == 0.0);
}
