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
#ifndef GRADLAB_METRICS_HPP_
#define GRADLAB_METRICS_HPP_

#include <optional>

#include "gradlab/tensor.hpp"

namespace gradlab {

struct ConfusionMatrix {
  long tp = 0, tn = 0, fp = 0, fn = 0;
  long total() const { return tp + tn + fp + fn; }
};

// Metrics with a zero denominator are reported as empty optionals, never NaN.
struct ClassificationMetrics {
  double accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> specificity;
  std::optional<double> f1;
  std::optional<double> mcc;
};

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm);

struct SsimParams {
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
  int window = 8;        // uniform square window, stride 1, valid borders
  bool gaussian = false; // 11x11 Gaussian window, sigma 1.5
};

// Mean over sliding windows of the two-factor structural similarity
// (2 mu_x mu_y + c1)(2 cov + c2) / ((mu_x^2 + mu_y^2 + c1)(var_x + var_y + c2))
// with c1 = (k1 Lr)^2, c2 = (k2 Lr)^2. Images are 2-D {H, W} or {1,1,H,W}.
double ssim(const Tensor& a, const Tensor& b, const SsimParams& p = {});

double mse(const Tensor& a, const Tensor& b);

}  // namespace gradlab

#endif  // GRADLAB_METRICS_HPP_
