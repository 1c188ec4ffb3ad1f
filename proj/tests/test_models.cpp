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

#include "gradlab/model.hpp"
#include "gradlab/rng.hpp"

using namespace gradlab;

TEST_CASE("victim cnn parameter count matches the layer arithmetic") {
  auto spec = build_victim_cnn();
  // 3x3 convs, channels 1->8->16->32->32, then 128 -> 10 linear.
  std::int64_t expect = (9 * 1 * 8 + 8) + (9 * 8 * 16 + 16) +
                        (9 * 16 * 32 + 32) + (9 * 32 * 32 + 32) +
                        (128 * 10 + 10);
  CHECK(spec.param_count() == expect);
  auto params = init_params(spec, 1);
  std::int64_t total = 0;
  for (const auto& t : params.tensors) total += t.numel();
  CHECK(total == expect);
}

TEST_CASE("victim cnn forward: zeros give finite logits, batch shape 8x10") {
  auto spec = build_victim_cnn();
  auto params = init_params(spec, 3);
  Tape t;
  auto m = model_forward(t, spec, params, Tensor::zeros({8, 1, 32, 32}));
  const Tensor& logits = t.value(m.output_node);
  CHECK(logits.shape == std::vector<int>{8, 10});
  CHECK(logits.finite());
}

TEST_CASE("binary cnn forward shapes and finiteness") {
  auto spec = build_custom_cnn_binary();
  auto params = init_params(spec, 5);
  Tape t;
  auto m = model_forward(t, spec, params, Tensor::zeros({4, 1, 32, 32}));
  const Tensor& out = t.value(m.output_node);
  CHECK(out.shape == std::vector<int>{4, 1});
  CHECK(out.finite());
  for (double v : out.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("bce at p=0.5, y=1 is ln 2") {
  Tape t;
  int p = t.leaf(Tensor({1}, {0.5}));
  int loss = bce_loss(t, p, {1});
  CHECK(t.value(loss).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce at a perfect prediction is tiny") {
  Tape t;
  int p = t.leaf(Tensor({2}, {1.0, 0.0}));
  int loss = bce_loss(t, p, {1, 0});
  CHECK(t.value(loss).item() <= 1e-11);
}

TEST_CASE("bce batch equals the naive per-sample average") {
  Rng rng(17);
  int n = 6;
  Tensor p({n});
  std::vector<int> y;
  for (int i = 0; i < n; ++i) {
    p.data[i] = rng.uniform(0.05, 0.95);
    y.push_back(static_cast<int>(rng.below(2)));
  }
  Tape t;
  int loss = bce_loss(t, t.leaf(p), y);
  double naive = 0.0;
  for (int i = 0; i < n; ++i) {
    naive += y[i] ? -std::log(p.data[i]) : -std::log(1.0 - p.data[i]);
  }
  naive /= n;
  CHECK(t.value(loss).item() == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("bce rejects labels outside {0,1}") {
  Tape t;
  int p = t.leaf(Tensor({1}, {0.5}));
  CHECK_THROWS_AS(bce_loss(t, p, {2}), ContractError);
}

TEST_CASE("bce is permutation invariant over the batch") {
  Tape t1, t2;
  int a = bce_loss(t1, t1.leaf(Tensor({3}, {0.2, 0.7, 0.9})), {0, 1, 1});
  int b = bce_loss(t2, t2.leaf(Tensor({3}, {0.9, 0.2, 0.7})), {1, 0, 1});
  CHECK(t1.value(a).item() == doctest::Approx(t2.value(b).item()).epsilon(1e-15));
}

TEST_CASE("cross entropy of uniform logits over 10 classes is ln 10") {
  Tape t;
  int z = t.leaf(Tensor::zeros({1, 10}));
  int loss = cross_entropy_loss(t, z, {3});
  CHECK(t.value(loss).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy with an extreme correct logit is near zero") {
  Tape t;
  Tensor z({1, 10});
  z.data[4] = 50.0;
  int loss = cross_entropy_loss(t, t.leaf(z), {4});
  CHECK(t.value(loss).item() < 1e-12);
}

TEST_CASE("cross entropy matches the naive formula on random logits") {
  Rng rng(23);
  Tensor z({3, 5});
  for (auto& v : z.data) v = rng.uniform(-2.0, 2.0);
  std::vector<int> y = {1, 4, 0};
  Tape t;
  int loss = cross_entropy_loss(t, t.leaf(z), y);
  double naive = 0.0;
  for (int r = 0; r < 3; ++r) {
    double denom = 0.0;
    for (int c = 0; c < 5; ++c) denom += std::exp(z.at2(r, c));
    naive += -std::log(std::exp(z.at2(r, y[r])) / denom);
  }
  naive /= 3.0;
  CHECK(t.value(loss).item() == doctest::Approx(naive).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects out-of-range class index") {
  Tape t;
  int z = t.leaf(Tensor::zeros({1, 10}));
  CHECK_THROWS_AS(cross_entropy_loss(t, z, {10}), ContractError);
}

TEST_CASE("softmax rows sum to one") {
  Rng rng(31);
  Tensor z({4, 7});
  for (auto& v : z.data) v = rng.uniform(-5.0, 5.0);
  Tape t;
  int y = t.softmax(t.leaf(z));
  for (int r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int c = 0; c < 7; ++c) s += t.value(y).at2(r, c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("loss gradient passes a finite-difference spot check") {
  auto spec = build_victim_cnn();
  auto params = init_params(spec, 42);
  Rng rng(8);
  Tensor x({1, 1, 32, 32});
  for (auto& v : x.data) v = rng.uniform(0.0, 1.0);

  Tape t;
  auto m = model_forward(t, spec, params, x);
  int loss = cross_entropy_loss(t, m.output_node, {7});
  auto grads = t.backward(loss, m.param_nodes);

  // Spot-check a handful of coordinates of the final linear weight.
  int wl = m.param_nodes[8];
  Tensor base = params.tensors[8];
  for (int probe : {0, 17, 333, 1279}) {
    double h = 1e-6;
    auto eval = [&](double delta) {
      ParamSet p2 = params;
      p2.tensors[8].data[probe] = base.data[probe] + delta;
      Tape t2;
      auto m2 = model_forward(t2, spec, p2, x);
      return t2.value(cross_entropy_loss(t2, m2.output_node, {7})).item();
    };
    double fd = (eval(h) - eval(-h)) / (2 * h);
    CHECK(grads[wl].data[probe] == doctest::Approx(fd).epsilon(1e-5));
  }
}
