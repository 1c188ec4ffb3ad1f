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
#include "gradlab/dp.hpp"

#include <algorithm>
#include <cmath>

#include <boost/math/distributions/beta.hpp>

namespace gradlab {

namespace {

int build_loss(Tape& t, const ModelOnTape& m, const std::vector<int>& labels,
               LossKind loss) {
  if (loss == LossKind::kCrossEntropy) {
    return cross_entropy_loss(t, m.output_node, labels);
  }
  const auto out_shape = t.value(m.output_node).shape;
  int preds = t.reshape(m.output_node, {out_shape[0]});
  return bce_loss(t, preds, labels);
}

Tensor slice_sample(const Tensor& images, int i) {
  int c = images.shape[1], h = images.shape[2], w = images.shape[3];
  size_t stride = static_cast<size_t>(c) * h * w;
  Tensor out({1, c, h, w});
  std::copy(images.data.begin() + i * stride,
            images.data.begin() + (i + 1) * stride, out.data.begin());
  return out;
}

}  // namespace

double grad_norm(const GradVec& g) {
  double s = 0.0;
  for (const auto& t : g)
    for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

GradVec operator+(const GradVec& a, const GradVec& b) {
  GradVec out = a;
  for (size_t i = 0; i < out.size(); ++i)
    for (size_t j = 0; j < out[i].data.size(); ++j)
      out[i].data[j] += b[i].data[j];
  return out;
}

Tensor clip_gradient(const Tensor& g, double clip_norm) {
  if (clip_norm <= 0.0) throw ContractError("clip_gradient: C must be > 0");
  double norm = g.l2_norm();
  double scale = 1.0 / std::max(1.0, norm / clip_norm);
  Tensor out = g;
  if (scale < 1.0) {
    for (auto& v : out.data) v *= scale;
  }
  return out;
}

GradVec clip_gradient(const GradVec& g, double clip_norm) {
  if (clip_norm <= 0.0) throw ContractError("clip_gradient: C must be > 0");
  double norm = grad_norm(g);
  double scale = 1.0 / std::max(1.0, norm / clip_norm);
  GradVec out = g;
  if (scale < 1.0) {
    for (auto& t : out)
      for (auto& v : t.data) v *= scale;
  }
  return out;
}

std::vector<GradVec> per_sample_gradients(const ModelSpec& spec,
                                          const ParamSet& params,
                                          const Batch& batch, LossKind loss) {
  int n = batch.images.shape[0];
  std::vector<GradVec> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Tape t;
    auto m = model_forward(t, spec, params, slice_sample(batch.images, i));
    int l = build_loss(t, m, {batch.labels[i]}, loss);
    auto grads = t.backward(l, m.param_nodes);
    GradVec g;
    g.reserve(m.param_nodes.size());
    for (int p : m.param_nodes) {
      Tensor gt = grads[p];
      if (!gt.finite()) {
        throw NumericError("per_sample_gradients: non-finite gradient for "
                           "sample " + std::to_string(i));
      }
      g.push_back(std::move(gt));
    }
    out.push_back(std::move(g));
  }
  return out;
}

StepResult dp_sgd_step(const ModelSpec& spec, const ParamSet& params,
                       const Batch& batch, const DpSgdConfig& cfg,
                       LossKind loss, Rng& rng) {
  if (batch.images.shape[0] != cfg.batch_size) {
    throw ContractError("dp_sgd_step: batch size " +
                        std::to_string(batch.images.shape[0]) +
                        " != configured L " + std::to_string(cfg.batch_size));
  }
  auto per_sample = per_sample_gradients(spec, params, batch, loss);

  // Deterministic fold in batch order.
  GradVec sum;
  for (size_t i = 0; i < per_sample.size(); ++i) {
    GradVec clipped = clip_gradient(per_sample[i], cfg.clip_norm);
    if (i == 0) {
      sum = std::move(clipped);
    } else {
      sum = sum + clipped;
    }
  }

  // Noise is added to the sum, then the whole thing is divided by L, so the
  // per-coordinate noise std of the average is sigma*C/L. Draws consume one
  // seeded stream in layer order, coordinates row-major.
  double noise_std = cfg.noise_multiplier * cfg.clip_norm;
  double inv_l = 1.0 / static_cast<double>(cfg.batch_size);
  for (auto& layer : sum) {
    for (auto& v : layer.data) {
      if (noise_std > 0.0) v += rng.normal(0.0, noise_std);
      v *= inv_l;
    }
  }

  StepResult res;
  res.params = params;
  for (size_t i = 0; i < res.params.tensors.size(); ++i) {
    for (size_t j = 0; j < res.params.tensors[i].data.size(); ++j) {
      res.params.tensors[i].data[j] -= cfg.learning_rate * sum[i].data[j];
    }
  }
  res.gradient = std::move(sum);
  return res;
}

StepResult plain_sgd_step(const ModelSpec& spec, const ParamSet& params,
                          const Batch& batch, double learning_rate,
                          LossKind loss) {
  auto per_sample = per_sample_gradients(spec, params, batch, loss);
  GradVec sum = per_sample[0];
  for (size_t i = 1; i < per_sample.size(); ++i) sum = sum + per_sample[i];
  double inv = 1.0 / static_cast<double>(per_sample.size());
  for (auto& layer : sum)
    for (auto& v : layer.data) v *= inv;

  StepResult res;
  res.params = params;
  for (size_t i = 0; i < res.params.tensors.size(); ++i) {
    for (size_t j = 0; j < res.params.tensors[i].data.size(); ++j) {
      res.params.tensors[i].data[j] -= learning_rate * sum[i].data[j];
    }
  }
  res.gradient = std::move(sum);
  return res;
}

int pdp_loss(Tape& t, int base_loss, const ModelSpec& spec,
             const ModelOnTape& m, double kappa) {
  if (kappa < 0.0) throw ContractError("pdp_loss: kappa must be >= 0");
  if (kappa == 0.0) return base_loss;

  int penalty = -1;
  auto accumulate = [&](int term) {
    penalty = penalty < 0 ? term : t.add(penalty, term);
  };

  size_t p = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerSpec::Kind::kConv) {
      int w = m.param_nodes[p];
      int b = m.param_nodes[p + 1];
      int xin = m.layer_input_nodes[p];
      const auto xs = t.value(xin).shape;
      int n = xs[0];
      int ho = (xs[2] + 2 * l.pad - l.kernel) / l.stride + 1;
      int wo = (xs[3] + 2 * l.pad - l.kernel) / l.stride + 1;
      // x_i^2 for w[f,c,i,j]: batch mean over samples of the summed squared
      // activation across window positions (independent of f).
      int ones = t.constant(Tensor::full({n, 1, ho, wo}, 1.0));
      int x2 = t.conv2d_dw(t.square(xin), ones, l.stride, l.pad, l.kernel,
                           l.kernel);  // [1, C, k, k]
      int flat_dim = l.in_channels * l.kernel * l.kernel;
      int x2_flat = t.reshape(x2, {flat_dim});
      int w2 = t.colsum(t.reshape(
          t.square(w), {l.out_channels, flat_dim}));  // sum over filters
      double scale = kappa / static_cast<double>(n);
      accumulate(t.scalar_mul(t.sum_all(t.mul(w2, x2_flat)), scale));
      accumulate(t.scalar_mul(t.l2_norm_squared(b), kappa));  // x_i == 1
      p += 2;
    } else if (l.kind == LayerSpec::Kind::kLinear) {
      int w = m.param_nodes[p];
      int b = m.param_nodes[p + 1];
      int xin = m.layer_input_nodes[p];
      int n = t.value(xin).shape[0];
      int x2 = t.scalar_mul(t.colsum(t.square(xin)),
                            1.0 / static_cast<double>(n));  // [in]
      int w2 = t.reshape(t.rowsum(t.square(w)), {l.in_dim});
      accumulate(t.scalar_mul(t.sum_all(t.mul(w2, x2)), kappa));
      accumulate(t.scalar_mul(t.l2_norm_squared(b), kappa));
      p += 2;
    }
  }
  return penalty < 0 ? base_loss : t.add(base_loss, penalty);
}

StepResult pdp_sgd_step(const ModelSpec& spec, const ParamSet& params,
                        const Batch& batch, double learning_rate,
                        const PdpConfig& pdp, LossKind loss) {
  Tape t;
  auto m = model_forward(t, spec, params, batch.images);
  int base = build_loss(t, m, batch.labels, loss);
  int total = pdp_loss(t, base, spec, m, pdp.kappa);
  auto grads = t.backward(total, m.param_nodes);

  StepResult res;
  res.params = params;
  res.gradient.reserve(m.param_nodes.size());
  for (size_t i = 0; i < m.param_nodes.size(); ++i) {
    Tensor g = grads[m.param_nodes[i]];
    for (size_t j = 0; j < g.data.size(); ++j) {
      res.params.tensors[i].data[j] -= learning_rate * g.data[j];
    }
    res.gradient.push_back(std::move(g));
  }
  return res;
}

GroupPrivacy group_privacy(double eps, double delta, int k) {
  if (eps <= 0.0) throw ContractError("group_privacy: eps must be > 0");
  if (delta < 0.0 || delta >= 1.0) {
    throw ContractError("group_privacy: delta must be in [0, 1)");
  }
  if (k < 1) throw ContractError("group_privacy: k must be >= 1");

  GroupPrivacy out;
  out.eps = k * eps;
  if (out.eps > 700.0) {  // e^{k eps} overflows double
    out.saturated = true;
    out.delta = 1.0;
    return out;
  }
  double ratio = std::expm1(out.eps) / std::expm1(eps);
  out.delta = std::min(1.0, ratio * delta);
  return out;
}

namespace {

double clopper_pearson_lower(std::int64_t k, std::int64_t n, double conf) {
  if (k <= 0) return 0.0;
  boost::math::beta_distribution<double> dist(static_cast<double>(k),
                                              static_cast<double>(n - k + 1));
  return boost::math::quantile(dist, 1.0 - conf);
}

double clopper_pearson_upper(std::int64_t k, std::int64_t n, double conf) {
  if (k >= n) return 1.0;
  boost::math::beta_distribution<double> dist(static_cast<double>(k + 1),
                                              static_cast<double>(n - k));
  return boost::math::quantile(dist, conf);
}

void check_neighbors(const std::vector<double>& d,
                     const std::vector<double>& d_prime) {
  if (d.size() == d_prime.size()) {
    int diff = 0;
    for (size_t i = 0; i < d.size(); ++i)
      if (d[i] != d_prime[i]) ++diff;
    if (diff == 1) return;
  } else if (d.size() + 1 == d_prime.size() ||
             d_prime.size() + 1 == d.size()) {
    return;  // add/remove neighborhood
  }
  throw ContractError(
      "empirical_dp_audit: datasets must differ in exactly one record");
}

}  // namespace

AuditResult empirical_dp_audit(const Mechanism& mechanism,
                               const std::vector<double>& d,
                               const std::vector<double>& d_prime,
                               const AuditConfig& cfg, Rng& rng) {
  check_neighbors(d, d_prime);
  if (cfg.trials < 1) throw ContractError("empirical_dp_audit: trials >= 1");

  std::vector<std::int64_t> count_d(cfg.bins, 0), count_dp(cfg.bins, 0);
  auto bin_of = [&](double v) {
    double t = (v - cfg.bin_lo) / (cfg.bin_hi - cfg.bin_lo);
    int b = static_cast<int>(std::floor(t * cfg.bins));
    return std::clamp(b, 0, cfg.bins - 1);
  };
  for (int i = 0; i < cfg.trials; ++i) ++count_d[bin_of(mechanism(d, rng))];
  for (int i = 0; i < cfg.trials; ++i)
    ++count_dp[bin_of(mechanism(d_prime, rng))];

  AuditResult res;
  res.eps_lower = 0.0;
  std::int64_t best_min_count = 0;
  bool any = false;
  auto consider = [&](std::int64_t num, std::int64_t den) {
    double p_low = clopper_pearson_lower(num, cfg.trials, cfg.confidence);
    double p_high = clopper_pearson_upper(den, cfg.trials, cfg.confidence);
    double num_adj = p_low - cfg.delta;
    if (num_adj <= 0.0 || p_high <= 0.0) return;
    double eps = std::log(num_adj / p_high);
    if (!any || eps > res.eps_lower) {
      any = true;
      res.eps_lower = eps;
      best_min_count = std::min(num, den);
    }
  };
  for (int b = 0; b < cfg.bins; ++b) {
    consider(count_d[b], count_dp[b]);
    consider(count_dp[b], count_d[b]);
  }
  if (!any) {
    res.eps_lower = 0.0;
    res.wide_interval = true;
    return res;
  }
  res.eps_lower = std::max(0.0, res.eps_lower);
  res.wide_interval = best_min_count < cfg.min_bin_count;
  return res;
}

}  // namespace gradlab
