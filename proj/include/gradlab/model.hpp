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
#ifndef GRADLAB_MODEL_HPP_
#define GRADLAB_MODEL_HPP_

#include <string>
#include <vector>

#include "gradlab/rng.hpp"
#include "gradlab/tape.hpp"
#include "gradlab/tensor.hpp"

namespace gradlab {

enum class Activation { kNone, kSigmoid, kTanh, kRelu };

struct LayerSpec {
  enum class Kind { kConv, kMaxPool, kLinear, kFlatten } kind;
  // conv
  int in_channels = 0, out_channels = 0, kernel = 0, stride = 1, pad = 0;
  // pool
  int window = 0;
  // linear
  int in_dim = 0, out_dim = 0;
  Activation act = Activation::kNone;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  std::vector<int> input_shape;  // {C, H, W}
  int num_classes = 0;

  std::int64_t param_count() const;
};

// Ordered, named parameter tensors; the order is the serialization order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  size_t size() const { return tensors.size(); }
  std::vector<std::vector<int>> shapes() const;
};

// ~16k parameters; the attack runs against this network. Sigmoid activations
// keep the whole forward pass twice differentiable for grad-of-grad.
// Spatial plan at 32x32 input: 32 -> 16 -> 8 -> 4 -> 2 (3x3, stride 2, pad 1).
ModelSpec build_victim_cnn();

// Two conv+maxpool blocks and two linear layers, one output unit for BCE.
ModelSpec build_custom_cnn_binary();

// Uniform in +-1/sqrt(fan_in), seeded.
ParamSet init_params(const ModelSpec& spec, std::uint64_t seed);

// A model instantiated on a tape: parameters and input are leaves, so both
// gradients and gradient-of-gradient are available.
struct ModelOnTape {
  std::vector<int> param_nodes;
  int input_node = -1;
  int output_node = -1;
  // Input activation feeding each parameter's op, aligned with param_nodes;
  // used by the proportional-regularization penalty.
  std::vector<int> layer_input_nodes;
};

// Builds the forward pass for a batch input of shape {N, C, H, W}.
ModelOnTape model_forward(Tape& tape, const ModelSpec& spec,
                          const ParamSet& params, const Tensor& input);

// Forward pass over existing tape nodes (for reuse within one tape).
ModelOnTape model_forward_nodes(Tape& tape, const ModelSpec& spec,
                                const std::vector<int>& param_nodes,
                                int input_node);

// Mean of -[y log p + (1-y) log(1-p)] with p clamped to [1e-12, 1-1e-12].
// predictions: node of shape {N,1} or {N}; labels must be 0/1.
int bce_loss(Tape& tape, int predictions, const std::vector<int>& labels);

// Softmax cross entropy, stabilized by max subtraction inside softmax.
// logits: node of shape {N, K}.
int cross_entropy_loss(Tape& tape, int logits, const std::vector<int>& labels);

}  // namespace gradlab

#endif  // GRADLAB_MODEL_HPP_
