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
#ifndef GRADLAB_FEDSIM_HPP_
#define GRADLAB_FEDSIM_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "gradlab/dp.hpp"
#include "gradlab/model.hpp"
#include "gradlab/rng.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

enum class Regime : std::uint8_t { kStandard = 0, kDpSgd = 1, kPdpSgd = 2 };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct ClientState {
  std::uint32_t id = 0;
  Batch data;
  double learning_rate = 0.1;
  Regime regime = Regime::kStandard;
  DpSgdConfig dp;    // used when regime == kDpSgd
  PdpConfig pdp;     // used when regime == kPdpSgd
  LossKind loss = LossKind::kCrossEntropy;
};

// What the attacker intercepts: the gradient actually used in the client's
// update (the noisy clipped aggregate under dp-sgd), plus enough metadata
// to invert the parameter delta.
struct GradientCapture {
  std::uint32_t round = 0;
  std::uint32_t client_id = 0;
  Regime regime = Regime::kStandard;
  GradVec layers;
  double learning_rate = 0.1;
  double clip_norm = 0.0;          // dp-sgd only, else 0
  double noise_multiplier = 0.0;   // dp-sgd only, else 0
  double kappa = 0.0;              // pdp-sgd only, else 0
};

struct LocalUpdate {
  ParamSet params;
  GradientCapture capture;
};

// One local step of the client's regime starting from the global parameters.
LocalUpdate local_update(const ModelSpec& spec, const ParamSet& global_params,
                         const ClientState& client, std::uint32_t round,
                         Rng& rng);

// (theta_t - theta_next) / eta, the gradient consistent with
// theta_next = theta_t - eta * g.
GradVec gradient_from_delta(const ParamSet& theta_next, const ParamSet& theta,
                            double eta);

// Weighted parameter average with weights n_k / sum(n_k).
ParamSet fed_avg(const std::vector<std::pair<ParamSet, int>>& updates);

// Binary capture serialization. Layout: magic "GLCAP", version u16,
// client id u32, round u32, regime tag u8, layer count u16, then per layer
// rank u8 and extents u32 each, payload little-endian f64. Four metadata
// doubles (eta, C, sigma, kappa) trail the layer data.
std::vector<std::uint8_t> capture_to_bytes(const GradientCapture& c);
GradientCapture capture_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_capture(const std::string& path, const GradientCapture& c);
GradientCapture load_capture(const std::string& path);

}  // namespace gradlab

#endif  // GRADLAB_FEDSIM_HPP_
