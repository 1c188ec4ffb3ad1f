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
#include "gradlab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "gradlab/dp.hpp"
#include "gradlab/error.hpp"
#include "gradlab/metrics.hpp"
#include "gradlab/rng.hpp"

namespace gradlab {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

int final_linear_param_index(const ModelSpec& spec) {
  int p = 0, last_w = -1;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerSpec::Kind::kConv) p += 2;
    if (l.kind == LayerSpec::Kind::kLinear) {
      last_w = p;
      p += 2;
    }
  }
  return last_w;
}

void check_capture_shapes(const GradientCapture& capture,
                          const ParamSet& theta) {
  if (capture.layers.size() != theta.tensors.size()) {
    throw DimensionError("attack: capture has " +
                         std::to_string(capture.layers.size()) +
                         " layers, model has " +
                         std::to_string(theta.tensors.size()));
  }
  for (size_t i = 0; i < theta.tensors.size(); ++i) {
    if (capture.layers[i].shape != theta.tensors[i].shape) {
      throw DimensionError("attack: capture shape mismatch at layer " +
                           std::to_string(i));
    }
  }
}

bool is_binary_output(const ModelSpec& spec) {
  for (auto it = spec.layers.rbegin(); it != spec.layers.rend(); ++it) {
    if (it->kind == LayerSpec::Kind::kLinear) return it->out_dim == 1;
  }
  return false;
}

}  // namespace

InferredLabel infer_label(const GradientCapture& capture,
                          const ModelSpec& spec) {
  int wi = final_linear_param_index(spec);
  if (wi < 0) throw ContractError("infer_label: model has no linear layer");
  const Tensor& gw = capture.layers[wi];
  // weights are stored {in_dim, out_dim}: one column per class
  if (gw.shape.size() != 2 || gw.shape[1] != spec.num_classes) {
    throw ContractError(
        "infer_label: final layer is not one weight column per class");
  }
  int rows = gw.shape[0], cols = gw.shape[1];
  InferredLabel out;
  double best = kInf;
  for (int c = 0; c < cols; ++c) {
    double s = 0.0;
    for (int r = 0; r < rows; ++r) s += gw.data[r * cols + c];
    if (s < best) {
      best = s;
      out.label = c;
      out.tie = false;
    } else if (s == best) {
      out.tie = true;
    }
  }
  return out;
}

ReconGraph build_reconstruction_loss(Tape& t, const ModelSpec& spec,
                                     const ParamSet& theta,
                                     const GradientCapture& capture,
                                     const Tensor& x0, int hard_label,
                                     const Tensor* label_logits0,
                                     double alpha) {
  check_capture_shapes(capture, theta);
  if (alpha < 0.0) throw ContractError("attack: alpha must be >= 0");

  ReconGraph g;
  std::vector<int> param_nodes;
  param_nodes.reserve(theta.tensors.size());
  for (const auto& p : theta.tensors) param_nodes.push_back(t.leaf(p));
  g.x_node = t.leaf(x0);
  auto m = model_forward_nodes(t, spec, param_nodes, g.x_node);

  bool binary = is_binary_output(spec);
  int loss;
  int probs = -1;  // model output as probabilities, for the alpha term
  int target = -1;
  if (label_logits0 != nullptr) {
    if (binary) {
      throw ContractError("attack: joint label mode needs multi-class output");
    }
    g.label_logits_node = t.leaf(*label_logits0);
    int soft_y = t.softmax(g.label_logits_node);  // {K}
    int logp = t.log_(t.softmax(t.reshape(m.output_node,
                                          {spec.num_classes})));
    loss = t.scalar_mul(t.sum_all(t.mul(soft_y, logp)), -1.0);
    probs = t.softmax(t.reshape(m.output_node, {spec.num_classes}));
    target = soft_y;
  } else if (binary) {
    int pred = t.reshape(m.output_node, {1});
    loss = bce_loss(t, pred, {hard_label});
    probs = pred;
    target = t.constant(Tensor::full({1}, static_cast<double>(hard_label)));
  } else {
    loss = cross_entropy_loss(t, m.output_node, {hard_label});
    probs = t.softmax(t.reshape(m.output_node, {spec.num_classes}));
    Tensor one_hot = Tensor::zeros({spec.num_classes});
    one_hot.data[hard_label] = 1.0;
    target = t.constant(one_hot);
  }

  // White-box attacker models the regime's actual loss: a pdp-sgd client
  // transmits the penalized gradient, so gradient matching must target it.
  if (capture.regime == Regime::kPdpSgd) {
    loss = pdp_loss(t, loss, spec, m, capture.kappa);
  }

  auto grad_nodes = t.backward_nodes(loss, param_nodes);
  int dist = -1;
  for (size_t i = 0; i < grad_nodes.size(); ++i) {
    int captured = t.constant(capture.layers[i]);
    int term = t.l2_norm_squared(t.sub(grad_nodes[i], captured));
    dist = dist < 0 ? term : t.add(dist, term);
  }
  if (alpha > 0.0) {
    int match = t.l2_norm_squared(t.sub(probs, target));
    dist = t.add(dist, t.scalar_mul(match, alpha));
  }
  g.loss_node = dist;
  return g;
}

namespace {

// Evaluates the reconstruction objective and its gradient with respect to
// the flat optimization vector (pixels, then label logits in joint mode).
// Smooth graphs (no relu/maxpool) are replayed in place; graphs with
// data-dependent masks are rebuilt per evaluation so masks stay current.
class ReconEvaluator {
 public:
  ReconEvaluator(const ModelSpec& spec, const ParamSet& theta,
                 const GradientCapture& capture, const Tensor& x0,
                 int hard_label, const Tensor* logits0, double alpha)
      : spec_(spec),
        theta_(theta),
        capture_(capture),
        hard_label_(hard_label),
        alpha_(alpha),
        joint_(logits0 != nullptr) {
    x_shape_ = {1, spec.input_shape[0], spec.input_shape[1],
                spec.input_shape[2]};
    n_pixels_ = static_cast<int>(Tensor::numel_of(x_shape_));
    n_logits_ = joint_ ? spec.num_classes : 0;
    replayable_ = true;
    for (const auto& l : spec.layers) {
      if (l.kind == LayerSpec::Kind::kMaxPool) replayable_ = false;
      if (l.act == Activation::kRelu) replayable_ = false;
    }
    Tensor x = x0;
    Tensor lg = joint_ ? *logits0 : Tensor();
    if (replayable_) {
      tape_ = std::make_unique<Tape>();
      graph_ = build_reconstruction_loss(*tape_, spec_, theta_, capture_, x,
                                         hard_label_,
                                         joint_ ? &lg : nullptr, alpha_);
      std::vector<int> leaves = {graph_.x_node};
      if (joint_) leaves.push_back(graph_.label_logits_node);
      outer_ = tape_->backward_nodes(graph_.loss_node, leaves);
    }
  }

  int n_vars() const { return n_pixels_ + n_logits_; }
  int n_pixels() const { return n_pixels_; }

  double operator()(const std::vector<double>& v, std::vector<double>* grad) {
    Tensor x(x_shape_);
    std::copy(v.begin(), v.begin() + n_pixels_, x.data.begin());
    Tensor lg;
    if (joint_) {
      lg = Tensor({n_logits_});
      std::copy(v.begin() + n_pixels_, v.end(), lg.data.begin());
    }
    try {
      if (replayable_) {
        tape_->set_leaf(graph_.x_node, std::move(x));
        if (joint_) tape_->set_leaf(graph_.label_logits_node, std::move(lg));
        tape_->replay();
        if (grad != nullptr) read_grad(*tape_, outer_, grad);
        return tape_->value(graph_.loss_node).item();
      }
      Tape t;
      auto g = build_reconstruction_loss(t, spec_, theta_, capture_, x,
                                         hard_label_, joint_ ? &lg : nullptr,
                                         alpha_);
      std::vector<int> leaves = {g.x_node};
      if (joint_) leaves.push_back(g.label_logits_node);
      auto outer = t.backward_nodes(g.loss_node, leaves);
      if (grad != nullptr) read_grad(t, outer, grad);
      return t.value(g.loss_node).item();
    } catch (const NumericError&) {
      if (grad != nullptr) grad->assign(n_vars(), kInf);
      return kInf;
    }
  }

 private:
  void read_grad(const Tape& t, const std::vector<int>& nodes,
                 std::vector<double>* grad) const {
    grad->clear();
    grad->reserve(n_vars());
    for (int id : nodes) {
      const auto& d = t.value(id).data;
      grad->insert(grad->end(), d.begin(), d.end());
    }
  }

  const ModelSpec& spec_;
  const ParamSet& theta_;
  const GradientCapture& capture_;
  int hard_label_;
  double alpha_;
  bool joint_;
  std::vector<int> x_shape_;
  int n_pixels_ = 0;
  int n_logits_ = 0;
  bool replayable_ = true;
  std::unique_ptr<Tape> tape_;
  ReconGraph graph_;
  std::vector<int> outer_;
};

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(double f, const std::vector<double>& g) {
  if (!std::isfinite(f)) return false;
  for (double v : g)
    if (!std::isfinite(v)) return false;
  return true;
}

// Two-loop recursion: d = -H g with implicit H from stored (s, y) pairs.
std::vector<double> lbfgs_direction(const LbfgsState& st,
                                    const std::vector<double>& g) {
  std::vector<double> q = g;
  std::vector<double> alphas(st.pairs.size());
  for (int i = static_cast<int>(st.pairs.size()) - 1; i >= 0; --i) {
    const auto& [s, y] = st.pairs[i];
    double rho = 1.0 / dot(y, s);
    alphas[i] = rho * dot(s, q);
    for (size_t j = 0; j < q.size(); ++j) q[j] -= alphas[i] * y[j];
  }
  if (!st.pairs.empty()) {
    const auto& [s, y] = st.pairs.back();
    double gamma = dot(s, y) / dot(y, y);
    for (auto& v : q) v *= gamma;
  }
  for (size_t i = 0; i < st.pairs.size(); ++i) {
    const auto& [s, y] = st.pairs[i];
    double rho = 1.0 / dot(y, s);
    double beta = rho * dot(y, q);
    for (size_t j = 0; j < q.size(); ++j) q[j] += (alphas[i] - beta) * s[j];
  }
  for (auto& v : q) v = -v;
  return q;
}

}  // namespace

LbfgsOutcome lbfgs_step(LbfgsState& state, const LossFn& fn,
                        const std::vector<double>& x) {
  const size_t n = x.size();
  if (!state.warm) {
    state.g.assign(n, 0.0);
    state.f = fn(x, &state.g);
    state.warm = true;
  }
  LbfgsOutcome out;
  if (!all_finite(state.f, state.g)) {
    out.x = x;
    out.diverged = true;
    return out;
  }

  std::vector<double> d = lbfgs_direction(state, state.g);
  double dphi0 = dot(state.g, d);
  if (!(dphi0 < 0.0)) {  // not a descent direction; fall back to steepest
    d = state.g;
    for (auto& v : d) v = -v;
    dphi0 = -dot(state.g, state.g);
  }
  const double f0 = state.f;

  int evals = 0;
  double trial_f = 0.0;
  std::vector<double> trial_x(n), trial_g(n);
  auto phi = [&](double a) {
    for (size_t i = 0; i < n; ++i) trial_x[i] = x[i] + a * d[i];
    trial_f = fn(trial_x, &trial_g);
    ++evals;
    return trial_f;
  };
  auto accept = [&](bool fallback) {
    std::vector<double> s(n), yv(n);
    for (size_t i = 0; i < n; ++i) {
      s[i] = trial_x[i] - x[i];
      yv[i] = trial_g[i] - state.g[i];
    }
    if (dot(s, yv) > 1e-10) {
      state.pairs.emplace_back(std::move(s), std::move(yv));
      while (static_cast<int>(state.pairs.size()) > state.memory) {
        state.pairs.pop_front();
      }
    }
    state.f = trial_f;
    state.g = trial_g;
    out.x = trial_x;
    out.fallback = fallback;
  };

  // Strong Wolfe bracketing (Nocedal and Wright Alg. 3.5) with a shared
  // evaluation budget, then bisection zoom (Alg. 3.6).
  auto zoom = [&](double lo, double hi, double f_lo) -> bool {
    while (evals < state.max_line_search_evals) {
      double a = 0.5 * (lo + hi);
      double fa = phi(a);
      if (!all_finite(fa, trial_g) ||
          fa > f0 + state.c1 * a * dphi0 || fa >= f_lo) {
        hi = a;
        continue;
      }
      double dphia = dot(trial_g, d);
      if (std::abs(dphia) <= -state.c2 * dphi0) {
        accept(false);
        return true;
      }
      if (dphia * (hi - lo) >= 0.0) hi = lo;
      lo = a;
      f_lo = fa;
    }
    return false;
  };

  bool done = false;
  double a_prev = 0.0, f_prev = f0, a = 1.0;
  bool first = true;
  while (evals < state.max_line_search_evals) {
    double fa = phi(a);
    if (!all_finite(fa, trial_g)) {
      a = 0.5 * (a_prev + a);  // back off toward the last good point
      continue;
    }
    if (fa > f0 + state.c1 * a * dphi0 || (!first && fa >= f_prev)) {
      done = zoom(a_prev, a, f_prev);
      break;
    }
    double dphia = dot(trial_g, d);
    if (std::abs(dphia) <= -state.c2 * dphi0) {
      accept(false);
      done = true;
      break;
    }
    if (dphia >= 0.0) {
      done = zoom(a, a_prev, fa);
      break;
    }
    a_prev = a;
    f_prev = fa;
    a = std::min(a * 2.0, 1e6);
    first = false;
  }

  if (done) return out;

  // Line search exhausted its budget: plain gradient step, flagged.
  for (size_t i = 0; i < n; ++i) {
    trial_x[i] = x[i] - state.fallback_lr * state.g[i];
  }
  trial_f = fn(trial_x, &trial_g);
  if (!all_finite(trial_f, trial_g)) {
    out.x = x;
    out.diverged = true;
    return out;
  }
  state.f = trial_f;
  state.g = trial_g;
  out.x = trial_x;
  out.fallback = true;
  return out;
}

AttackResult run_attack(const ModelSpec& spec, const ParamSet& theta,
                        const GradientCapture& capture,
                        const AttackConfig& cfg, const Tensor* ground_truth) {
  if (cfg.max_iters < 1) throw ContractError("attack: max_iters must be >= 1");
  if (cfg.attack_lr <= 0.0) throw ContractError("attack: attack_lr must be > 0");
  check_capture_shapes(capture, theta);

  AttackResult res;
  bool joint = cfg.label_mode == AttackConfig::LabelMode::kJoint;
  int hard_label = 0;
  if (!joint) {
    auto il = infer_label(capture, spec);
    hard_label = il.label;
    res.label_tie = il.tie;
    res.y_rec = il.label;
  }

  Rng rng(cfg.seed);
  Tensor x0({1, spec.input_shape[0], spec.input_shape[1],
             spec.input_shape[2]});
  for (auto& v : x0.data) v = rng.uniform();
  Tensor logits0 = joint ? Tensor::zeros({spec.num_classes}) : Tensor();

  ReconEvaluator eval(spec, theta, capture, x0, hard_label,
                      joint ? &logits0 : nullptr, cfg.alpha);
  const int np = eval.n_pixels();
  std::vector<double> v(eval.n_vars(), 0.0);
  std::copy(x0.data.begin(), x0.data.end(), v.begin());

  LossFn fn = [&eval](const std::vector<double>& p,
                      std::vector<double>* g) { return eval(p, g); };

  LbfgsState lb;
  lb.memory = cfg.lbfgs_memory;
  lb.fallback_lr = cfg.attack_lr;
  std::vector<double> adam_m(v.size(), 0.0), adam_v(v.size(), 0.0);
  std::vector<double> grad(v.size(), 0.0);

  auto record = [&](int iter, double loss) {
    res.trace.iterations.push_back(iter);
    res.trace.loss.push_back(loss);
    if (ground_truth != nullptr) {
      Tensor img({1, 1, spec.input_shape[1], spec.input_shape[2]});
      std::copy(v.begin(), v.begin() + np, img.data.begin());
      res.trace.ssim.push_back(ssim(*ground_truth, img));
    }
    if (cfg.snapshot_every > 0 && iter % cfg.snapshot_every == 0) {
      Tensor img({1, 1, spec.input_shape[1], spec.input_shape[2]});
      std::copy(v.begin(), v.begin() + np, img.data.begin());
      res.trace.snapshots.emplace_back(iter, std::move(img));
    }
  };

  double loss = eval(v, &grad);
  if (!all_finite(loss, grad)) {
    res.trace.diverged = true;
  } else {
    record(0, loss);
    lb.warm = true;
    lb.f = loss;
    lb.g = grad;
  }

  for (int iter = 1; iter <= cfg.max_iters && !res.trace.diverged; ++iter) {
    switch (cfg.optimizer) {
      case AttackConfig::Optimizer::kLbfgs: {
        auto step = lbfgs_step(lb, fn, v);
        if (step.diverged) {
          res.trace.diverged = true;
          break;
        }
        if (step.fallback) ++res.trace.fallback_steps;
        v = std::move(step.x);
        loss = lb.f;
        break;
      }
      case AttackConfig::Optimizer::kGd: {
        loss = eval(v, &grad);
        if (!all_finite(loss, grad)) {
          res.trace.diverged = true;
          break;
        }
        for (size_t i = 0; i < v.size(); ++i) v[i] -= cfg.attack_lr * grad[i];
        break;
      }
      case AttackConfig::Optimizer::kAdam: {
        loss = eval(v, &grad);
        if (!all_finite(loss, grad)) {
          res.trace.diverged = true;
          break;
        }
        const double b1 = 0.9, b2 = 0.999, e = 1e-8;
        for (size_t i = 0; i < v.size(); ++i) {
          adam_m[i] = b1 * adam_m[i] + (1 - b1) * grad[i];
          adam_v[i] = b2 * adam_v[i] + (1 - b2) * grad[i] * grad[i];
          double mh = adam_m[i] / (1 - std::pow(b1, iter));
          double vh = adam_v[i] / (1 - std::pow(b2, iter));
          v[i] -= cfg.attack_lr * mh / (std::sqrt(vh) + e);
        }
        break;
      }
    }
    if (res.trace.diverged) break;

    // project pixels back into the image domain
    bool clamped = false;
    for (int i = 0; i < np; ++i) {
      double c = std::clamp(v[i], 0.0, 1.0);
      if (c != v[i]) {
        v[i] = c;
        clamped = true;
      }
    }
    if (clamped && cfg.optimizer == AttackConfig::Optimizer::kLbfgs) {
      lb.warm = false;  // cached value/gradient refer to the pre-clamp point
    }

    double cur = lb.warm && cfg.optimizer == AttackConfig::Optimizer::kLbfgs
                     ? lb.f
                     : eval(v, nullptr);
    if (!std::isfinite(cur)) {
      res.trace.diverged = true;
      break;
    }
    record(iter, cur);
    if (cur < cfg.converge_threshold) {
      res.converged = true;
      break;
    }
  }

  res.x_rec = Tensor({1, spec.input_shape[0], spec.input_shape[1],
                      spec.input_shape[2]});
  std::copy(v.begin(), v.begin() + np, res.x_rec.data.begin());
  if (joint) {
    int best = 0;
    for (int k = 1; k < spec.num_classes; ++k) {
      if (v[np + k] > v[np + best]) best = k;
    }
    res.y_rec = best;
  }
  return res;
}

}  // namespace gradlab
