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
#include "gradlab/model.hpp"

#include <cmath>

namespace gradlab {

namespace {

constexpr double kProbEps = 1e-12;

int apply_activation(Tape& t, int x, Activation act) {
  switch (act) {
    case Activation::kNone:
      return x;
    case Activation::kSigmoid:
      return t.sigmoid(x);
    case Activation::kTanh:
      return t.tanh_(x);
    case Activation::kRelu:
      return t.relu(x);
  }
  return x;
}

}  // namespace

std::int64_t ModelSpec::param_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::kConv) {
      n += static_cast<std::int64_t>(l.kernel) * l.kernel * l.in_channels *
               l.out_channels +
           l.out_channels;
    } else if (l.kind == LayerSpec::Kind::kLinear) {
      n += static_cast<std::int64_t>(l.in_dim) * l.out_dim + l.out_dim;
    }
  }
  return n;
}

std::vector<std::vector<int>> ParamSet::shapes() const {
  std::vector<std::vector<int>> out;
  out.reserve(tensors.size());
  for (const auto& t : tensors) out.push_back(t.shape);
  return out;
}

ModelSpec build_victim_cnn() {
  ModelSpec spec;
  spec.input_shape = {1, 32, 32};
  spec.num_classes = 10;
  auto conv = [](int in, int out, int stride) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::kConv;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = 3;
    l.stride = stride;
    l.pad = 1;  // stride-2 windows then cover every input pixel
    l.act = Activation::kSigmoid;
    return l;
  };
  spec.layers.push_back(conv(1, 8, 2));    // 32 -> 16
  spec.layers.push_back(conv(8, 16, 2));   // 16 -> 8
  spec.layers.push_back(conv(16, 32, 2));  // 8 -> 4
  spec.layers.push_back(conv(32, 32, 2));  // 4 -> 2
  LayerSpec flat;
  flat.kind = LayerSpec::Kind::kFlatten;
  spec.layers.push_back(flat);
  LayerSpec fc;
  fc.kind = LayerSpec::Kind::kLinear;
  fc.in_dim = 32 * 2 * 2;
  fc.out_dim = 10;
  fc.act = Activation::kNone;
  spec.layers.push_back(fc);
  return spec;
}

ModelSpec build_custom_cnn_binary() {
  ModelSpec spec;
  spec.input_shape = {1, 32, 32};
  spec.num_classes = 1;
  auto conv = [](int in, int out) {
    LayerSpec l;
    l.kind = LayerSpec::Kind::kConv;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel = 3;
    l.stride = 1;
    l.pad = 1;
    l.act = Activation::kRelu;
    return l;
  };
  auto pool = [] {
    LayerSpec l;
    l.kind = LayerSpec::Kind::kMaxPool;
    l.window = 2;
    return l;
  };
  spec.layers.push_back(conv(1, 8));   // 32x32
  spec.layers.push_back(pool());       // 16x16
  spec.layers.push_back(conv(8, 16));  // 16x16
  spec.layers.push_back(pool());       // 8x8
  LayerSpec flat;
  flat.kind = LayerSpec::Kind::kFlatten;
  spec.layers.push_back(flat);
  LayerSpec fc1;
  fc1.kind = LayerSpec::Kind::kLinear;
  fc1.in_dim = 16 * 8 * 8;
  fc1.out_dim = 32;
  fc1.act = Activation::kRelu;
  spec.layers.push_back(fc1);
  LayerSpec fc2;
  fc2.kind = LayerSpec::Kind::kLinear;
  fc2.in_dim = 32;
  fc2.out_dim = 1;
  fc2.act = Activation::kSigmoid;
  spec.layers.push_back(fc2);
  return spec;
}

ParamSet init_params(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet ps;
  int layer_no = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerSpec::Kind::kConv) {
      double bound =
          1.0 / std::sqrt(static_cast<double>(l.kernel) * l.kernel *
                          l.in_channels);
      Tensor w({l.out_channels, l.in_channels, l.kernel, l.kernel});
      for (auto& v : w.data) v = rng.uniform(-bound, bound);
      Tensor b({l.out_channels});
      for (auto& v : b.data) v = rng.uniform(-bound, bound);
      ps.names.push_back("conv" + std::to_string(layer_no) + ".weight");
      ps.tensors.push_back(std::move(w));
      ps.names.push_back("conv" + std::to_string(layer_no) + ".bias");
      ps.tensors.push_back(std::move(b));
    } else if (l.kind == LayerSpec::Kind::kLinear) {
      double bound = 1.0 / std::sqrt(static_cast<double>(l.in_dim));
      Tensor w({l.in_dim, l.out_dim});
      for (auto& v : w.data) v = rng.uniform(-bound, bound);
      Tensor b({l.out_dim});
      for (auto& v : b.data) v = rng.uniform(-bound, bound);
      ps.names.push_back("linear" + std::to_string(layer_no) + ".weight");
      ps.tensors.push_back(std::move(w));
      ps.names.push_back("linear" + std::to_string(layer_no) + ".bias");
      ps.tensors.push_back(std::move(b));
    }
    ++layer_no;
  }
  return ps;
}

ModelOnTape model_forward_nodes(Tape& t, const ModelSpec& spec,
                                const std::vector<int>& param_nodes,
                                int input_node) {
  ModelOnTape m;
  m.param_nodes = param_nodes;
  m.input_node = input_node;
  m.layer_input_nodes.assign(param_nodes.size(), -1);

  int cur = input_node;
  size_t p = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerSpec::Kind::kConv: {
        int w = param_nodes[p];
        int b = param_nodes[p + 1];
        m.layer_input_nodes[p] = cur;  // weight sees this activation
        cur = t.chan_bias_add(t.conv2d(cur, w, l.stride, l.pad), b);
        cur = apply_activation(t, cur, l.act);
        p += 2;
        break;
      }
      case LayerSpec::Kind::kMaxPool:
        cur = t.maxpool2d(cur, l.window);
        break;
      case LayerSpec::Kind::kFlatten: {
        const auto& s = t.value(cur).shape;
        cur = t.reshape(cur, {s[0], s[1] * s[2] * s[3]});
        break;
      }
      case LayerSpec::Kind::kLinear: {
        int w = param_nodes[p];
        int b = param_nodes[p + 1];
        m.layer_input_nodes[p] = cur;
        cur = t.bias_add(t.matmul(cur, w), b);
        cur = apply_activation(t, cur, l.act);
        p += 2;
        break;
      }
    }
  }
  m.output_node = cur;
  return m;
}

ModelOnTape model_forward(Tape& t, const ModelSpec& spec,
                          const ParamSet& params, const Tensor& input) {
  std::vector<int> param_nodes;
  param_nodes.reserve(params.size());
  for (const auto& p : params.tensors) param_nodes.push_back(t.leaf(p));
  int x = t.leaf(input);
  return model_forward_nodes(t, spec, param_nodes, x);
}

int bce_loss(Tape& t, int predictions, const std::vector<int>& labels) {
  // Note: value() references are invalidated by node pushes; copy the shape.
  const std::vector<int> shape = t.value(predictions).shape;
  if (Tensor::numel_of(shape) != static_cast<std::int64_t>(labels.size())) {
    throw ContractError("bce_loss: prediction/label count mismatch");
  }
  Tensor y(shape), comp(shape);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) {
      throw ContractError("bce_loss: label outside {0,1} at index " +
                          std::to_string(i));
    }
    y.data[i] = labels[i];
    comp.data[i] = 1 - labels[i];
  }
  int clamped = t.clamp(predictions, kProbEps, 1.0 - kProbEps);
  int ones = t.constant(Tensor::full(shape, 1.0));
  int log_p = t.log_(clamped);
  int log_q = t.log_(t.clamp(t.sub(ones, clamped), kProbEps, 1.0 - kProbEps));
  int yc = t.constant(std::move(y));
  int cc = t.constant(std::move(comp));
  int per = t.add(t.mul(yc, log_p), t.mul(cc, log_q));
  return t.scalar_mul(t.mean_all(per), -1.0);
}

int cross_entropy_loss(Tape& t, int logits, const std::vector<int>& labels) {
  const Tensor& z = t.value(logits);
  if (z.shape.size() != 2 ||
      z.shape[0] != static_cast<int>(labels.size())) {
    throw ContractError("cross_entropy_loss: logits must be {N,K} with one "
                        "label per row");
  }
  int k = z.shape[1];
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw ContractError("cross_entropy_loss: class index " +
                          std::to_string(labels[i]) + " out of range");
    }
  }
  int logp = t.log_(t.softmax(logits));
  int acc = -1;
  for (size_t i = 0; i < labels.size(); ++i) {
    int pick = t.select_index(logp, static_cast<int>(i) * k + labels[i]);
    acc = acc < 0 ? pick : t.add(acc, pick);
  }
  return t.scalar_mul(acc, -1.0 / static_cast<double>(labels.size()));
}

}  // namespace gradlab
