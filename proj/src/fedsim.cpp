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
#include "gradlab/fedsim.hpp"

#include <cstring>
#include <fstream>

#include "gradlab/error.hpp"

namespace gradlab {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kStandard: return "standard";
    case Regime::kDpSgd: return "dp-sgd";
    case Regime::kPdpSgd: return "pdp-sgd";
  }
  throw ContractError("regime_name: unknown regime");
}

Regime regime_from_name(const std::string& name) {
  if (name == "standard") return Regime::kStandard;
  if (name == "dp-sgd") return Regime::kDpSgd;
  if (name == "pdp-sgd") return Regime::kPdpSgd;
  throw ContractError("regime_from_name: unknown regime '" + name + "'");
}

LocalUpdate local_update(const ModelSpec& spec, const ParamSet& global_params,
                         const ClientState& client, std::uint32_t round,
                         Rng& rng) {
  if (client.data.images.shape.empty() || client.data.images.shape[0] < 1) {
    throw ContractError("local_update: client dataset slice is empty");
  }
  if (client.learning_rate <= 0.0) {
    throw ContractError("local_update: learning rate must be > 0");
  }

  StepResult step;
  switch (client.regime) {
    case Regime::kStandard:
      step = plain_sgd_step(spec, global_params, client.data,
                            client.learning_rate, client.loss);
      break;
    case Regime::kDpSgd: {
      DpSgdConfig cfg = client.dp;
      cfg.learning_rate = client.learning_rate;
      cfg.batch_size = client.data.images.shape[0];
      step = dp_sgd_step(spec, global_params, client.data, cfg, client.loss,
                         rng);
      break;
    }
    case Regime::kPdpSgd:
      step = pdp_sgd_step(spec, global_params, client.data,
                          client.learning_rate, client.pdp, client.loss);
      break;
  }

  LocalUpdate out;
  out.params = std::move(step.params);
  out.capture.round = round;
  out.capture.client_id = client.id;
  out.capture.regime = client.regime;
  out.capture.layers = std::move(step.gradient);
  out.capture.learning_rate = client.learning_rate;
  if (client.regime == Regime::kDpSgd) {
    out.capture.clip_norm = client.dp.clip_norm;
    out.capture.noise_multiplier = client.dp.noise_multiplier;
  }
  if (client.regime == Regime::kPdpSgd) out.capture.kappa = client.pdp.kappa;
  return out;
}

GradVec gradient_from_delta(const ParamSet& theta_next, const ParamSet& theta,
                            double eta) {
  if (eta == 0.0) throw ContractError("gradient_from_delta: eta must be != 0");
  if (theta_next.tensors.size() != theta.tensors.size()) {
    throw DimensionError("gradient_from_delta: layer count mismatch");
  }
  GradVec out;
  out.reserve(theta.tensors.size());
  for (size_t i = 0; i < theta.tensors.size(); ++i) {
    if (theta_next.tensors[i].shape != theta.tensors[i].shape) {
      throw DimensionError("gradient_from_delta: shape mismatch at layer " +
                           std::to_string(i));
    }
    Tensor g = theta.tensors[i];
    for (size_t j = 0; j < g.data.size(); ++j) {
      g.data[j] = (theta.tensors[i].data[j] - theta_next.tensors[i].data[j]) /
                  eta;
    }
    out.push_back(std::move(g));
  }
  return out;
}

ParamSet fed_avg(const std::vector<std::pair<ParamSet, int>>& updates) {
  if (updates.empty()) throw ContractError("fed_avg: empty update list");
  long total = 0;
  for (const auto& [p, n] : updates) {
    if (n < 1) throw ContractError("fed_avg: client weight must be >= 1");
    total += n;
  }
  ParamSet out = updates[0].first;
  for (auto& t : out.tensors)
    for (auto& v : t.data) v = 0.0;
  for (const auto& [p, n] : updates) {
    if (p.tensors.size() != out.tensors.size()) {
      throw DimensionError("fed_avg: layer count mismatch");
    }
    double w = static_cast<double>(n) / static_cast<double>(total);
    for (size_t i = 0; i < out.tensors.size(); ++i) {
      if (p.tensors[i].shape != out.tensors[i].shape) {
        throw DimensionError("fed_avg: shape mismatch at layer " +
                             std::to_string(i));
      }
      for (size_t j = 0; j < out.tensors[i].data.size(); ++j) {
        out.tensors[i].data[j] += w * p.tensors[i].data[j];
      }
    }
  }
  return out;
}

namespace {

constexpr char kMagic[5] = {'G', 'L', 'C', 'A', 'P'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  // little-endian, bytewise
  for (size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(
        (static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put(out, bits);
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > b_.size()) {
      throw FormatError("capture: truncated at byte offset " +
                        std::to_string(pos_));
    }
    std::uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  double get_f64() {
    std::uint64_t bits = get<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return b_.size() - pos_; }

 private:
  const std::vector<std::uint8_t>& b_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> capture_to_bytes(const GradientCapture& c) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 5);
  put(out, kVersion);
  put(out, c.client_id);
  put(out, c.round);
  put(out, static_cast<std::uint8_t>(c.regime));
  put(out, static_cast<std::uint16_t>(c.layers.size()));
  for (const auto& layer : c.layers) {
    put(out, static_cast<std::uint8_t>(layer.shape.size()));
    for (int e : layer.shape) put(out, static_cast<std::uint32_t>(e));
    for (double v : layer.data) put_f64(out, v);
  }
  put_f64(out, c.learning_rate);
  put_f64(out, c.clip_norm);
  put_f64(out, c.noise_multiplier);
  put_f64(out, c.kappa);
  return out;
}

GradientCapture capture_from_bytes(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
    throw FormatError("capture: bad magic at byte offset 0");
  }
  for (int i = 0; i < 5; ++i) r.get<std::uint8_t>();
  std::uint16_t version = r.get<std::uint16_t>();
  if (version != kVersion) {
    throw FormatError("capture: unsupported version " +
                      std::to_string(version));
  }
  GradientCapture c;
  c.client_id = r.get<std::uint32_t>();
  c.round = r.get<std::uint32_t>();
  std::uint8_t tag = r.get<std::uint8_t>();
  if (tag > 2) throw FormatError("capture: unknown regime tag");
  c.regime = static_cast<Regime>(tag);
  std::uint16_t layers = r.get<std::uint16_t>();
  c.layers.reserve(layers);
  for (int l = 0; l < layers; ++l) {
    std::uint8_t rank = r.get<std::uint8_t>();
    std::vector<int> shape(rank);
    for (auto& e : shape) e = static_cast<int>(r.get<std::uint32_t>());
    Tensor t(shape);
    for (auto& v : t.data) v = r.get_f64();
    c.layers.push_back(std::move(t));
  }
  c.learning_rate = r.get_f64();
  c.clip_norm = r.get_f64();
  c.noise_multiplier = r.get_f64();
  c.kappa = r.get_f64();
  if (r.remaining() != 0) {
    throw FormatError("capture: trailing bytes at offset " +
                      std::to_string(r.pos()));
  }
  return c;
}

void save_capture(const std::string& path, const GradientCapture& c) {
  auto bytes = capture_to_bytes(c);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("capture: cannot open '" + path + "' for write");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

GradientCapture load_capture(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("capture: cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  return capture_from_bytes(bytes);
}

}  // namespace gradlab
