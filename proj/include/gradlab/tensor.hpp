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
#ifndef GRADLAB_TENSOR_HPP_
#define GRADLAB_TENSOR_HPP_

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "gradlab/error.hpp"

namespace gradlab {

// Dense n-dimensional array of doubles, row-major.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<int> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
      throw DimensionError("Tensor: shape " + shape_str(shape) +
                           " does not match data length " +
                           std::to_string(data.size()));
    }
  }

  static std::int64_t numel_of(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int e : s) {
      if (e <= 0) throw DimensionError("Tensor: non-positive extent in shape");
      n *= e;
    }
    return n;
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, double v) {
    Tensor t(std::move(s));
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  bool is_scalar() const { return numel() == 1; }
  double item() const {
    if (!is_scalar()) throw ContractError("Tensor::item on non-scalar");
    return data[0];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double l2_norm() const {
    double s = 0.0;
    for (double v : data) s += v * v;
    return std::sqrt(s);
  }

  // 4-D accessor (NCHW paths).
  double& at4(int a, int b, int c, int d) {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }
  double at4(int a, int b, int c, int d) const {
    return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) *
                    shape[3] +
                d];
  }
  // 2-D accessor.
  double& at2(int r, int c) {
    return data[static_cast<size_t>(r) * shape[1] + c];
  }
  double at2(int r, int c) const {
    return data[static_cast<size_t>(r) * shape[1] + c];
  }
};

}  // namespace gradlab

#endif  // GRADLAB_TENSOR_HPP_
