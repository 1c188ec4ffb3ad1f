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
#include "gradlab/metrics.hpp"

#include <cmath>
#include <vector>

#include "gradlab/error.hpp"

namespace gradlab {

ClassificationMetrics classification_metrics(const ConfusionMatrix& cm) {
  if (cm.tp < 0 || cm.tn < 0 || cm.fp < 0 || cm.fn < 0) {
    throw ContractError("classification_metrics: negative count");
  }
  if (cm.total() == 0) {
    throw ContractError("classification_metrics: empty confusion matrix");
  }
  auto tp = static_cast<double>(cm.tp), tn = static_cast<double>(cm.tn);
  auto fp = static_cast<double>(cm.fp), fn = static_cast<double>(cm.fn);

  ClassificationMetrics m;
  m.accuracy = (tp + tn) / (tp + tn + fp + fn);
  if (tp + fp > 0) m.precision = tp / (tp + fp);
  if (tp + fn > 0) m.recall = tp / (tp + fn);
  if (tn + fp > 0) m.specificity = tn / (tn + fp);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  if (denom > 0) m.mcc = (tp * tn - fp * fn) / denom;
  return m;
}

namespace {

const std::vector<double>& flat_image(const Tensor& t, int& h, int& w) {
  if (t.shape.size() == 2) {
    h = t.shape[0];
    w = t.shape[1];
  } else if (t.shape.size() == 4 && t.shape[0] == 1 && t.shape[1] == 1) {
    h = t.shape[2];
    w = t.shape[3];
  } else {
    throw DimensionError("ssim: expected a {H,W} or {1,1,H,W} image, got " +
                         Tensor::shape_str(t.shape));
  }
  return t.data;
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(size * size);
  double sum = 0.0;
  int c = size / 2;
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      double d2 = (i - c) * (i - c) + (j - c) * (j - c);
      k[i * size + j] = std::exp(-d2 / (2.0 * sigma * sigma));
      sum += k[i * size + j];
    }
  }
  for (auto& v : k) v /= sum;
  return k;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b, const SsimParams& p) {
  int h = 0, w = 0, h2 = 0, w2 = 0;
  const auto& xa = flat_image(a, h, w);
  const auto& xb = flat_image(b, h2, w2);
  if (h != h2 || w != w2) {
    throw DimensionError("ssim: image shapes differ");
  }
  if (p.k1 <= 0 || p.k2 <= 0 || p.dynamic_range <= 0) {
    throw ContractError("ssim: k1, k2 and dynamic range must be > 0");
  }

  int win = p.gaussian ? 11 : p.window;
  if (win > h || win > w) {
    throw ContractError("ssim: window larger than image");
  }
  std::vector<double> weights;
  if (p.gaussian) {
    weights = gaussian_kernel(11, 1.5);
  } else {
    weights.assign(win * win, 1.0 / (win * win));
  }

  double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);

  double acc = 0.0;
  long windows = 0;
  for (int i = 0; i + win <= h; ++i) {
    for (int j = 0; j + win <= w; ++j) {
      double mx = 0, my = 0;
      for (int u = 0; u < win; ++u) {
        for (int v = 0; v < win; ++v) {
          double wgt = weights[u * win + v];
          mx += wgt * xa[(i + u) * w + j + v];
          my += wgt * xb[(i + u) * w + j + v];
        }
      }
      double vx = 0, vy = 0, cov = 0;
      for (int u = 0; u < win; ++u) {
        for (int v = 0; v < win; ++v) {
          double wgt = weights[u * win + v];
          double da = xa[(i + u) * w + j + v] - mx;
          double db = xb[(i + u) * w + j + v] - my;
          vx += wgt * da * da;
          vy += wgt * db * db;
          cov += wgt * da * db;
        }
      }
      acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return acc / windows;
}

double mse(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw DimensionError("mse: shape mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    double d = a.data[i] - b.data[i];
    s += d * d;
  }
  return s / static_cast<double>(a.data.size());
}

}  // namespace gradlab
