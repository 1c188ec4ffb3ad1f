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
#ifndef GRADLAB_ATTACK_HPP_
#define GRADLAB_ATTACK_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <utility>
#include <vector>

#include "gradlab/fedsim.hpp"
#include "gradlab/model.hpp"
#include "gradlab/tape.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

struct AttackConfig {
  int max_iters = 200;
  double attack_lr = 0.1;  // gd/adam step size and line-search fallback step
  double alpha = 0.0;      // weight of the output-match term
  enum class Optimizer { kLbfgs, kAdam, kGd } optimizer = Optimizer::kLbfgs;
  enum class LabelMode { kInfer, kJoint } label_mode = LabelMode::kInfer;
  std::uint64_t seed = 0;  // seed-image init stream
  double converge_threshold = 1e-12;
  int snapshot_every = 0;  // 0 disables snapshots
  int lbfgs_memory = 10;
};

struct AttackTrace {
  std::vector<int> iterations;
  std::vector<double> loss;
  std::vector<double> ssim;  // empty when no ground truth was supplied
  std::vector<std::pair<int, Tensor>> snapshots;
  bool diverged = false;
  int fallback_steps = 0;
};

struct AttackResult {
  Tensor x_rec;
  int y_rec = 0;
  bool label_tie = false;
  bool converged = false;
  AttackTrace trace;
};

struct InferredLabel {
  int label = 0;
  bool tie = false;
};

// Class whose summed final-layer weight-gradient row is most negative; for a
// single-sample cross-entropy capture this is the true class. Ties resolve
// to the lowest index with the tie flag set. No guarantee under DP noise.
InferredLabel infer_label(const GradientCapture& capture,
                          const ModelSpec& spec);

// Reconstruction objective on a tape:
//   D = sum_layers ||grad_theta L(f(x; theta)) - captured||^2
//       + alpha * ||f(x; theta) - y||^2
// where the inner loss matches the capture's regime (the penalized loss for
// pdp-sgd captures). x (and the label logits in joint mode) are tape leaves,
// so the returned scalar is differentiable with respect to them through the
// emitted gradient nodes.
struct ReconGraph {
  int x_node = -1;
  int label_logits_node = -1;  // -1 unless joint mode
  int loss_node = -1;
};
ReconGraph build_reconstruction_loss(Tape& t, const ModelSpec& spec,
                                     const ParamSet& theta,
                                     const GradientCapture& capture,
                                     const Tensor& x0, int hard_label,
                                     const Tensor* label_logits0,
                                     double alpha);

// f(x) -> (value, gradient into *grad when non-null).
using LossFn =
    std::function<double(const std::vector<double>&, std::vector<double>*)>;

struct LbfgsState {
  int memory = 10;
  double c1 = 1e-4, c2 = 0.9;  // strong Wolfe constants
  double fallback_lr = 0.1;
  int max_line_search_evals = 20;
  std::deque<std::pair<std::vector<double>, std::vector<double>>> pairs;
  // cached evaluation at the current iterate
  bool warm = false;
  double f = 0.0;
  std::vector<double> g;
};

struct LbfgsOutcome {
  std::vector<double> x;
  bool fallback = false;  // line search failed; plain gradient step taken
  bool diverged = false;  // non-finite value or gradient encountered
};

// One quasi-Newton step: two-loop recursion direction, strong Wolfe line
// search (Nocedal and Wright, Numerical Optimization, Alg. 3.5/3.6).
LbfgsOutcome lbfgs_step(LbfgsState& state, const LossFn& fn,
                        const std::vector<double>& x);

AttackResult run_attack(const ModelSpec& spec, const ParamSet& theta,
                        const GradientCapture& capture,
                        const AttackConfig& cfg,
                        const Tensor* ground_truth = nullptr);

}  // namespace gradlab

#endif  // GRADLAB_ATTACK_HPP_
