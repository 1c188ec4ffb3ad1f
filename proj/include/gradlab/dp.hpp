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
#ifndef GRADLAB_DP_HPP_
#define GRADLAB_DP_HPP_

#include <functional>
#include <vector>

#include "gradlab/model.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/tape.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

// Per-layer gradients, aligned with ParamSet order.
using GradVec = std::vector<Tensor>;

double grad_norm(const GradVec& g);
GradVec operator+(const GradVec& a, const GradVec& b);

enum class LossKind { kCrossEntropy, kBce };

struct Batch {
  Tensor images;            // {N, C, H, W}
  std::vector<int> labels;  // class indices (0/1 for BCE)
};

struct DpSgdConfig {
  double clip_norm = 1.2;
  double noise_multiplier = 0.0;
  int batch_size = 32;
  double learning_rate = 0.1;
};

struct PdpConfig {
  double kappa = 0.0;
  static PdpConfig from_eta_sigma(double eta, double sigma) {
    return {eta * eta * sigma * sigma};
  }
};

// g / max(1, ||g||/C) over the whole per-sample gradient.
GradVec clip_gradient(const GradVec& g, double clip_norm);
Tensor clip_gradient(const Tensor& g, double clip_norm);

// One gradient per sample, each from its own tape, in batch order.
std::vector<GradVec> per_sample_gradients(const ModelSpec& spec,
                                          const ParamSet& params,
                                          const Batch& batch, LossKind loss);

struct StepResult {
  ParamSet params;
  GradVec gradient;  // the transmitted quantity (noisy for DP-SGD)
};

// Clip per sample, average, add N(0, sigma^2 C^2) per coordinate to the sum
// before the 1/L factor; per-coordinate noise std of the result is sigma*C/L.
StepResult dp_sgd_step(const ModelSpec& spec, const ParamSet& params,
                       const Batch& batch, const DpSgdConfig& cfg,
                       LossKind loss, Rng& rng);

// Plain averaged SGD step (same per-sample fold order, no clip, no noise).
StepResult plain_sgd_step(const ModelSpec& spec, const ParamSet& params,
                          const Batch& batch, double learning_rate,
                          LossKind loss);

// Adds kappa * sum_i theta_i^2 x_i^2 to an existing loss node, where x_i is
// the input activation multiplying theta_i (1 for biases). Conv weights sum
// the squared activation over every window position, batch-averaged, so the
// gradient identity d/dtheta_i = 2 kappa x_i^2 theta_i holds coordinatewise.
int pdp_loss(Tape& tape, int base_loss, const ModelSpec& spec,
             const ModelOnTape& model, double kappa);

// Gradient step on the penalized loss (one batched tape).
StepResult pdp_sgd_step(const ModelSpec& spec, const ParamSet& params,
                        const Batch& batch, double learning_rate,
                        const PdpConfig& pdp, LossKind loss);

struct GroupPrivacy {
  double eps = 0.0;
  double delta = 0.0;
  bool saturated = false;  // e^{k eps} overflowed; values clamped
};

// (eps, delta, k) -> (k eps, ((e^{k eps}-1)/(e^{eps}-1)) delta).
GroupPrivacy group_privacy(double eps, double delta, int k);

// A randomized scalar-output function of a dataset.
using Mechanism =
    std::function<double(const std::vector<double>& dataset, Rng& rng)>;

struct AuditConfig {
  int trials = 100000;
  double delta = 0.0;
  int bins = 16;
  double bin_lo = 0.0;
  double bin_hi = 1.0;
  double confidence = 0.95;  // Clopper-Pearson one-sided level per bound
  int min_bin_count = 30;
};

struct AuditResult {
  double eps_lower = 0.0;
  bool wide_interval = false;  // best bin underpopulated at these trials
};

// Monte-Carlo lower bound on eps: max over bins E (both directions) of
// ln[(p_low(A(D) in E) - delta) / p_high(A(D') in E)] with Clopper-Pearson
// bounds, so the estimate statistically never exceeds the analytic eps.
AuditResult empirical_dp_audit(const Mechanism& mechanism,
                               const std::vector<double>& d,
                               const std::vector<double>& d_prime,
                               const AuditConfig& cfg, Rng& rng);

}  // namespace gradlab

#endif  // GRADLAB_DP_HPP_
