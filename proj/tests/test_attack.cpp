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

#include "gradlab/attack.hpp"
#include "gradlab/dp.hpp"
#include "gradlab/fedsim.hpp"
#include "gradlab/model.hpp"
#include "gradlab/rng.hpp"

using namespace gradlab;

namespace {

// Small smooth CNN in the victim's style: conv sigmoid, flatten, linear.
ModelSpec small_cnn() {
  ModelSpec spec;
  spec.input_shape = {1, 8, 8};
  spec.num_classes = 10;
  LayerSpec conv;
  conv.kind = LayerSpec::Kind::kConv;
  conv.in_channels = 1;
  conv.out_channels = 2;
  conv.kernel = 3;
  conv.stride = 2;
  conv.pad = 1;
  conv.act = Activation::kSigmoid;
  spec.layers.push_back(conv);
  LayerSpec flat;
  flat.kind = LayerSpec::Kind::kFlatten;
  spec.layers.push_back(flat);
  LayerSpec lin;
  lin.kind = LayerSpec::Kind::kLinear;
  lin.in_dim = 32;
  lin.out_dim = 10;
  spec.layers.push_back(lin);
  return spec;
}

Tensor random_input(const ModelSpec& spec, std::uint64_t seed) {
  Tensor x({1, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]});
  Rng rng(seed);
  for (auto& v : x.data) v = rng.uniform();
  return x;
}

GradientCapture standard_capture(const ModelSpec& spec, const ParamSet& params,
                                 const Tensor& x, int label) {
  ClientState c;
  c.id = 0;
  c.data.images = x;
  c.data.labels = {label};
  c.learning_rate = 0.1;
  c.regime = Regime::kStandard;
  c.loss = LossKind::kCrossEntropy;
  Rng rng(1);
  return local_update(spec, params, c, 0, rng).capture;
}

}  // namespace

TEST_CASE("label inference recovers the true class for every class") {
  auto spec = small_cnn();
  auto params = init_params(spec, 11);
  auto x = random_input(spec, 3);
  for (int c = 0; c < 10; ++c) {
    auto cap = standard_capture(spec, params, x, c);
    auto il = infer_label(cap, spec);
    CHECK(il.label == c);
    CHECK_FALSE(il.tie);
    // the true-class column sum is the unique negative one
    const Tensor& gw = cap.layers[2];  // {32, 10}
    int negatives = 0;
    for (int col = 0; col < 10; ++col) {
      double s = 0.0;
      for (int r = 0; r < 32; ++r) s += gw.data[r * 10 + col];
      if (s < 0.0) ++negatives;
    }
    CHECK(negatives == 1);
  }
}

TEST_CASE("zero gradient infers index 0 with a tie flag") {
  auto spec = small_cnn();
  auto params = init_params(spec, 11);
  GradientCapture cap;
  for (const auto& s : params.shapes()) cap.layers.push_back(Tensor::zeros(s));
  auto il = infer_label(cap, spec);
  CHECK(il.label == 0);
  CHECK(il.tie);
}

TEST_CASE("reconstruction loss vanishes at the true input and label") {
  auto spec = small_cnn();
  auto params = init_params(spec, 5);
  auto x = random_input(spec, 8);
  auto cap = standard_capture(spec, params, x, 4);
  Tape t;
  auto g = build_reconstruction_loss(t, spec, params, cap, x, 4, nullptr, 0.0);
  CHECK(t.value(g.loss_node).item() <= 1e-12);
}

TEST_CASE("reconstruction loss vanishes at the truth for a pdp capture") {
  auto spec = small_cnn();
  auto params = init_params(spec, 5);
  auto x = random_input(spec, 8);
  ClientState c;
  c.data.images = x;
  c.data.labels = {6};
  c.learning_rate = 0.1;
  c.regime = Regime::kPdpSgd;
  c.pdp = PdpConfig::from_eta_sigma(0.1, 0.1);
  c.loss = LossKind::kCrossEntropy;
  Rng rng(1);
  auto cap = local_update(spec, params, c, 0, rng).capture;
  Tape t;
  auto g = build_reconstruction_loss(t, spec, params, cap, x, 6, nullptr, 0.0);
  CHECK(t.value(g.loss_node).item() <= 1e-12);
}

TEST_CASE("reconstruction loss equals a naive two-loop distance") {
  auto spec = small_cnn();
  auto params = init_params(spec, 5);
  auto cap = standard_capture(spec, params, random_input(spec, 8), 2);
  auto seed = random_input(spec, 99);

  Tape t;
  auto g = build_reconstruction_loss(t, spec, params, cap, seed, 2, nullptr,
                                     0.0);
  double got = t.value(g.loss_node).item();

  // independent gradient of the seed image on a fresh tape
  Tape t2;
  auto m = model_forward(t2, spec, params, seed);
  int loss = cross_entropy_loss(t2, m.output_node, {2});
  auto grads = t2.backward(loss, m.param_nodes);
  double expect = 0.0;
  for (size_t i = 0; i < m.param_nodes.size(); ++i) {
    const Tensor& ga = grads[m.param_nodes[i]];
    for (size_t j = 0; j < ga.data.size(); ++j) {
      double d = ga.data[j] - cap.layers[i].data[j];
      expect += d * d;
    }
  }
  CHECK(got == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("gradient of the reconstruction loss matches finite differences") {
  auto spec = small_cnn();
  auto params = init_params(spec, 7);
  auto cap = standard_capture(spec, params, random_input(spec, 1), 3);
  auto seed = random_input(spec, 55);

  Tape t;
  auto g = build_reconstruction_loss(t, spec, params, cap, seed, 3, nullptr,
                                     0.0);
  auto outer = t.backward(g.loss_node, {g.x_node});
  const Tensor& gx = outer[g.x_node];

  auto value_at = [&](const Tensor& x) {
    Tape tt;
    auto gg = build_reconstruction_loss(tt, spec, params, cap, x, 3, nullptr,
                                        0.0);
    return tt.value(gg.loss_node).item();
  };
  const double h = 1e-5;
  Rng pick(3);
  for (int trial = 0; trial < 6; ++trial) {
    int i = static_cast<int>(pick.below(seed.data.size()));
    Tensor plus = seed, minus = seed;
    plus.data[i] += h;
    minus.data[i] -= h;
    double fd = (value_at(plus) - value_at(minus)) / (2.0 * h);
    double rel = std::abs(gx.data[i] - fd) /
                 std::max({std::abs(fd), std::abs(gx.data[i]), 1e-8});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("lbfgs solves a quadratic in a handful of iterations") {
  std::vector<double> a = {1.0, -2.0, 3.0, 0.5};
  LossFn fn = [&](const std::vector<double>& x, std::vector<double>* g) {
    double f = 0.0;
    if (g) g->resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      double d = x[i] - a[i];
      f += 0.5 * d * d;
      if (g) (*g)[i] = d;
    }
    return f;
  };
  LbfgsState st;
  std::vector<double> x = {10.0, 10.0, 10.0, 10.0};
  for (int it = 0; it < 5; ++it) {
    auto out = lbfgs_step(st, fn, x);
    REQUIRE_FALSE(out.diverged);
    x = out.x;
  }
  double err = 0.0;
  for (size_t i = 0; i < x.size(); ++i) err += std::abs(x[i] - a[i]);
  CHECK(err < 1e-8);
}

TEST_CASE("lbfgs minimizes the rosenbrock function") {
  LossFn fn = [](const std::vector<double>& x, std::vector<double>* g) {
    double a = x[0], b = x[1];
    double f = 100.0 * (b - a * a) * (b - a * a) + (1 - a) * (1 - a);
    if (g) {
      g->resize(2);
      (*g)[0] = -400.0 * a * (b - a * a) - 2.0 * (1 - a);
      (*g)[1] = 200.0 * (b - a * a);
    }
    return f;
  };
  LbfgsState st;
  std::vector<double> x = {-1.2, 1.0};
  double f = 1e9;
  for (int it = 0; it < 100 && f >= 1e-6; ++it) {
    auto out = lbfgs_step(st, fn, x);
    REQUIRE_FALSE(out.diverged);
    x = out.x;
    f = st.f;
  }
  CHECK(f < 1e-6);
}

TEST_CASE("first lbfgs trial point lies on the steepest descent ray") {
  std::vector<std::vector<double>> probes;
  LossFn fn = [&](const std::vector<double>& x, std::vector<double>* g) {
    probes.push_back(x);
    if (g) *g = {2.0 * x[0], 4.0 * x[1]};
    return x[0] * x[0] + 2.0 * x[1] * x[1];
  };
  LbfgsState st;
  std::vector<double> x = {3.0, 1.0};
  lbfgs_step(st, fn, x);
  REQUIRE(probes.size() >= 2);
  // probes[0] is the warm-up eval at x; probes[1] the first trial,
  // which must be x - a * g for some a > 0
  double g0 = 6.0, g1 = 4.0;
  double a0 = (x[0] - probes[1][0]) / g0;
  double a1 = (x[1] - probes[1][1]) / g1;
  CHECK(a0 > 0.0);
  CHECK(a0 == doctest::Approx(a1).epsilon(1e-12));
}

TEST_CASE("lbfgs falls back to a gradient step when line search fails") {
  // Constant value with a constant nonzero reported gradient: the Armijo
  // decrease can never hold, so no Wolfe point exists within the budget.
  LossFn fn = [](const std::vector<double>& x, std::vector<double>* g) {
    if (g) *g = {1.0};
    return 1.0 + 0.0 * x[0];
  };
  LbfgsState st;
  st.fallback_lr = 0.25;
  std::vector<double> x = {2.0};
  auto out = lbfgs_step(st, fn, x);
  CHECK_FALSE(out.diverged);
  CHECK(out.fallback);
  CHECK(out.x[0] == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("attack on a standard capture drives the loss down sharply") {
  auto spec = small_cnn();
  auto params = init_params(spec, 13);
  auto truth = random_input(spec, 40);
  auto cap = standard_capture(spec, params, truth, 7);
  AttackConfig cfg;
  cfg.max_iters = 60;
  cfg.seed = 5;
  auto res = run_attack(spec, params, cap, cfg, &truth);
  REQUIRE_FALSE(res.trace.diverged);
  CHECK(res.y_rec == 7);
  REQUIRE(res.trace.loss.size() >= 2);
  double first = res.trace.loss.front(), last = res.trace.loss.back();
  CHECK(last < 1e-4 * first);
  CHECK(res.trace.ssim.back() > res.trace.ssim.front());
  for (double v : res.x_rec.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("attack traces are deterministic for fixed seeds") {
  auto spec = small_cnn();
  auto params = init_params(spec, 13);
  auto truth = random_input(spec, 40);
  auto cap = standard_capture(spec, params, truth, 7);
  AttackConfig cfg;
  cfg.max_iters = 15;
  cfg.seed = 9;
  auto a = run_attack(spec, params, cap, cfg);
  auto b = run_attack(spec, params, cap, cfg);
  REQUIRE(a.trace.loss.size() == b.trace.loss.size());
  for (size_t i = 0; i < a.trace.loss.size(); ++i)
    CHECK(a.trace.loss[i] == b.trace.loss[i]);
  for (size_t i = 0; i < a.x_rec.data.size(); ++i)
    CHECK(a.x_rec.data[i] == b.x_rec.data[i]);
}

TEST_CASE("joint label mode recovers the label without inference") {
  auto spec = small_cnn();
  auto params = init_params(spec, 13);
  auto truth = random_input(spec, 41);
  auto cap = standard_capture(spec, params, truth, 3);
  AttackConfig cfg;
  cfg.max_iters = 60;
  cfg.seed = 6;
  cfg.label_mode = AttackConfig::LabelMode::kJoint;
  auto res = run_attack(spec, params, cap, cfg, &truth);
  REQUIRE_FALSE(res.trace.diverged);
  CHECK(res.y_rec == 3);
  CHECK(res.trace.loss.back() < res.trace.loss.front());
}

TEST_CASE("gd and adam optimizers also reduce the loss") {
  auto spec = small_cnn();
  auto params = init_params(spec, 13);
  auto truth = random_input(spec, 42);
  auto cap = standard_capture(spec, params, truth, 1);
  for (auto opt : {AttackConfig::Optimizer::kGd, AttackConfig::Optimizer::kAdam}) {
    AttackConfig cfg;
    cfg.max_iters = 30;
    cfg.seed = 2;
    cfg.optimizer = opt;
    cfg.attack_lr = opt == AttackConfig::Optimizer::kAdam ? 0.05 : 1.0;
    auto res = run_attack(spec, params, cap, cfg);
    REQUIRE_FALSE(res.trace.diverged);
    CHECK(res.trace.loss.back() < res.trace.loss.front());
  }
}

TEST_CASE("capture shape mismatch is rejected") {
  auto spec = small_cnn();
  auto params = init_params(spec, 1);
  GradientCapture cap;
  cap.layers.push_back(Tensor({3}));
  AttackConfig cfg;
  CHECK_THROWS_AS(run_attack(spec, params, cap, cfg), DimensionError);
}
