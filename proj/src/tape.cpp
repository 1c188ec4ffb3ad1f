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
#include "gradlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace gradlab {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         Tensor::shape_str(a.shape) + " vs " +
                         Tensor::shape_str(b.shape));
  }
}

void require_rank(const Tensor& t, size_t rank, const char* op) {
  if (t.shape.size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " +
                         std::to_string(rank) + ", got " +
                         Tensor::shape_str(t.shape));
  }
}

// Floor semantics: trailing rows/cols that do not fill a window are unused.
int conv_out_extent(int in, int k, int stride, int pad, const char* op) {
  int span = in + 2 * pad - k;
  if (span < 0) {
    throw DimensionError(std::string(op) + ": extent " + std::to_string(in) +
                         " smaller than kernel " + std::to_string(k) +
                         " with pad " + std::to_string(pad));
  }
  return span / stride + 1;
}

}  // namespace

int Tape::check(int id) const {
  if (id < 0 || id >= static_cast<int>(nodes_.size())) {
    throw ContractError("Tape: node id " + std::to_string(id) +
                        " not on this tape");
  }
  return id;
}

void Tape::check_finite(const Tensor& t, const char* op) const {
  if (!t.finite()) {
    throw NumericError(std::string(op) + ": non-finite value");
  }
}

int Tape::push(Node n) {
  n.val = eval(n);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v) {
  check_finite(v, "leaf");
  Node n;
  n.op = Op::kLeaf;
  nodes_.push_back(std::move(n));
  nodes_.back().val = std::move(v);
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::constant(Tensor v) {
  check_finite(v, "constant");
  Node n;
  n.op = Op::kConstant;
  nodes_.push_back(std::move(n));
  nodes_.back().val = std::move(v);
  return static_cast<int>(nodes_.size()) - 1;
}

// ---------------------------------------------------------------- builders

int Tape::add(int a, int b) {
  require_same_shape(value(check(a)), value(check(b)), "add");
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

int Tape::sub(int a, int b) {
  require_same_shape(value(check(a)), value(check(b)), "sub");
  Node n;
  n.op = Op::kSub;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

int Tape::mul(int a, int b) {
  require_same_shape(value(check(a)), value(check(b)), "mul");
  Node n;
  n.op = Op::kMul;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

int Tape::div(int a, int b) {
  require_same_shape(value(check(a)), value(check(b)), "div");
  Node n;
  n.op = Op::kDiv;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

int Tape::scalar_mul(int a, double s) {
  check(a);
  Node n;
  n.op = Op::kScalarMul;
  n.a = a;
  n.s0 = s;
  return push(std::move(n));
}

int Tape::scalar_node_mul(int a, int s) {
  check(a);
  if (!value(check(s)).is_scalar()) {
    throw ContractError("scalar_node_mul: multiplier must be scalar");
  }
  Node n;
  n.op = Op::kScalarNodeMul;
  n.a = a;
  n.b = s;
  return push(std::move(n));
}

int Tape::matmul(int a, int b) {
  const Tensor& ta = value(check(a));
  const Tensor& tb = value(check(b));
  require_rank(ta, 2, "matmul");
  require_rank(tb, 2, "matmul");
  if (ta.shape[1] != tb.shape[0]) {
    throw DimensionError("matmul: inner dims " + Tensor::shape_str(ta.shape) +
                         " vs " + Tensor::shape_str(tb.shape));
  }
  Node n;
  n.op = Op::kMatmul;
  n.a = a;
  n.b = b;
  return push(std::move(n));
}

int Tape::transpose(int a) {
  require_rank(value(check(a)), 2, "transpose");
  Node n;
  n.op = Op::kTranspose;
  n.a = a;
  return push(std::move(n));
}

int Tape::reshape(int a, std::vector<int> shape) {
  const Tensor& t = value(check(a));
  if (Tensor::numel_of(shape) != t.numel()) {
    throw DimensionError("reshape: element count mismatch");
  }
  Node n;
  n.op = Op::kReshape;
  n.a = a;
  n.idx.assign(shape.begin(), shape.end());
  return push(std::move(n));
}

int Tape::conv2d(int x, int w, int stride, int pad) {
  const Tensor& tx = value(check(x));
  const Tensor& tw = value(check(w));
  require_rank(tx, 4, "conv2d");
  require_rank(tw, 4, "conv2d");
  if (tx.shape[1] != tw.shape[1]) {
    throw DimensionError("conv2d: channel mismatch " +
                         Tensor::shape_str(tx.shape) + " vs " +
                         Tensor::shape_str(tw.shape));
  }
  conv_out_extent(tx.shape[2], tw.shape[2], stride, pad, "conv2d");
  conv_out_extent(tx.shape[3], tw.shape[3], stride, pad, "conv2d");
  Node n;
  n.op = Op::kConv2d;
  n.a = x;
  n.b = w;
  n.i0 = stride;
  n.i1 = pad;
  return push(std::move(n));
}

int Tape::conv2d_dx(int gy, int w, int stride, int pad, int h, int w_extent) {
  require_rank(value(check(gy)), 4, "conv2d_dx");
  require_rank(value(check(w)), 4, "conv2d_dx");
  Node n;
  n.op = Op::kConv2dDx;
  n.a = gy;
  n.b = w;
  n.i0 = stride;
  n.i1 = pad;
  n.i2 = h;
  n.i3 = w_extent;
  return push(std::move(n));
}

int Tape::conv2d_dw(int x, int gy, int stride, int pad, int kh, int kw) {
  require_rank(value(check(x)), 4, "conv2d_dw");
  require_rank(value(check(gy)), 4, "conv2d_dw");
  Node n;
  n.op = Op::kConv2dDw;
  n.a = x;
  n.b = gy;
  n.i0 = stride;
  n.i1 = pad;
  n.i2 = kh;
  n.i3 = kw;
  return push(std::move(n));
}

int Tape::maxpool2d(int x, int window) {
  const Tensor& t = value(check(x));
  require_rank(t, 4, "maxpool2d");
  if (t.shape[2] % window != 0 || t.shape[3] % window != 0) {
    throw DimensionError("maxpool2d: spatial extents not divisible by window");
  }
  Node n;
  n.op = Op::kMaxPool2d;
  n.a = x;
  n.i0 = window;
  return push(std::move(n));
}

int Tape::avgpool2d(int x, int window) {
  const Tensor& t = value(check(x));
  require_rank(t, 4, "avgpool2d");
  if (t.shape[2] % window != 0 || t.shape[3] % window != 0) {
    throw DimensionError("avgpool2d: spatial extents not divisible by window");
  }
  Node n;
  n.op = Op::kAvgPool2d;
  n.a = x;
  n.i0 = window;
  return push(std::move(n));
}

int Tape::maxpool_scatter(int g, const std::vector<int>& idx,
                          std::vector<int> in_shape, int window) {
  Node n;
  n.op = Op::kMaxPoolScatter;
  n.a = g;
  n.i0 = window;
  n.idx = idx;
  n.i1 = in_shape[0];
  n.i2 = in_shape[2];
  n.i3 = in_shape[3];
  n.s0 = in_shape[1];
  return push(std::move(n));
}

int Tape::maxpool_gather(int u, const std::vector<int>& idx,
                         std::vector<int> out_shape, int window) {
  Node n;
  n.op = Op::kMaxPoolGather;
  n.a = u;
  n.i0 = window;
  n.idx = idx;
  n.i1 = out_shape[0];
  n.i2 = out_shape[2];
  n.i3 = out_shape[3];
  n.s0 = out_shape[1];
  return push(std::move(n));
}

int Tape::avgpool_scatter(int g, int window, std::vector<int> in_shape) {
  Node n;
  n.op = Op::kAvgPoolScatter;
  n.a = g;
  n.i0 = window;
  n.i1 = in_shape[0];
  n.i2 = in_shape[2];
  n.i3 = in_shape[3];
  n.s0 = in_shape[1];
  return push(std::move(n));
}

int Tape::sigmoid(int a) {
  check(a);
  Node n;
  n.op = Op::kSigmoid;
  n.a = a;
  return push(std::move(n));
}

int Tape::tanh_(int a) {
  check(a);
  Node n;
  n.op = Op::kTanh;
  n.a = a;
  return push(std::move(n));
}

int Tape::relu(int a) {
  check(a);
  Node n;
  n.op = Op::kRelu;
  n.a = a;
  const Tensor& t = value(a);
  n.mask.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    n.mask[i] = t.data[i] > 0.0 ? 1.0 : 0.0;
  }
  return push(std::move(n));
}

int Tape::mask_mul(int a, std::vector<double> mask) {
  check(a);
  Node n;
  n.op = Op::kMaskMul;
  n.a = a;
  n.mask = std::move(mask);
  return push(std::move(n));
}

int Tape::softmax(int a) {
  const Tensor& t = value(check(a));
  if (t.shape.size() != 1 && t.shape.size() != 2) {
    throw DimensionError("softmax: rank must be 1 or 2");
  }
  Node n;
  n.op = Op::kSoftmax;
  n.a = a;
  return push(std::move(n));
}

int Tape::log_(int a) {
  check(a);
  Node n;
  n.op = Op::kLog;
  n.a = a;
  return push(std::move(n));
}

int Tape::exp_(int a) {
  check(a);
  Node n;
  n.op = Op::kExp;
  n.a = a;
  return push(std::move(n));
}

int Tape::square(int a) {
  check(a);
  Node n;
  n.op = Op::kSquare;
  n.a = a;
  return push(std::move(n));
}

int Tape::sum_all(int a) {
  check(a);
  Node n;
  n.op = Op::kSumAll;
  n.a = a;
  return push(std::move(n));
}

int Tape::mean_all(int a) {
  check(a);
  Node n;
  n.op = Op::kMeanAll;
  n.a = a;
  return push(std::move(n));
}

int Tape::l2_norm_squared(int a) {
  check(a);
  Node n;
  n.op = Op::kL2Sq;
  n.a = a;
  return push(std::move(n));
}

int Tape::bcast_scalar(int a, std::vector<int> shape) {
  if (!value(check(a)).is_scalar()) {
    throw ContractError("bcast_scalar: source must be scalar");
  }
  Node n;
  n.op = Op::kBcastScalar;
  n.a = a;
  n.idx.assign(shape.begin(), shape.end());
  return push(std::move(n));
}

int Tape::rowsum(int a) {
  require_rank(value(check(a)), 2, "rowsum");
  Node n;
  n.op = Op::kRowSum;
  n.a = a;
  return push(std::move(n));
}

int Tape::rowbroadcast(int a, int cols) {
  const Tensor& t = value(check(a));
  require_rank(t, 2, "rowbroadcast");
  if (t.shape[1] != 1) throw DimensionError("rowbroadcast: source must be [r,1]");
  Node n;
  n.op = Op::kRowBroadcast;
  n.a = a;
  n.i0 = cols;
  return push(std::move(n));
}

int Tape::colsum(int a) {
  require_rank(value(check(a)), 2, "colsum");
  Node n;
  n.op = Op::kColSum;
  n.a = a;
  return push(std::move(n));
}

int Tape::rowrep(int a, int rows) {
  require_rank(value(check(a)), 1, "rowrep");
  Node n;
  n.op = Op::kRowRep;
  n.a = a;
  n.i0 = rows;
  return push(std::move(n));
}

int Tape::bias_add(int x, int b) {
  const Tensor& tx = value(check(x));
  const Tensor& tb = value(check(b));
  require_rank(tx, 2, "bias_add");
  require_rank(tb, 1, "bias_add");
  if (tx.shape[1] != tb.shape[0]) {
    throw DimensionError("bias_add: width mismatch");
  }
  Node n;
  n.op = Op::kBiasAdd;
  n.a = x;
  n.b = b;
  return push(std::move(n));
}

int Tape::chan_bias_add(int x, int b) {
  const Tensor& tx = value(check(x));
  const Tensor& tb = value(check(b));
  require_rank(tx, 4, "chan_bias_add");
  require_rank(tb, 1, "chan_bias_add");
  if (tx.shape[1] != tb.shape[0]) {
    throw DimensionError("chan_bias_add: channel mismatch");
  }
  Node n;
  n.op = Op::kChanBiasAdd;
  n.a = x;
  n.b = b;
  return push(std::move(n));
}

int Tape::chan_sum(int a) {
  require_rank(value(check(a)), 4, "chan_sum");
  Node n;
  n.op = Op::kChanSum;
  n.a = a;
  return push(std::move(n));
}

int Tape::chan_rep(int a, int nn, int h, int w) {
  require_rank(value(check(a)), 1, "chan_rep");
  Node n;
  n.op = Op::kChanRep;
  n.a = a;
  n.i0 = nn;
  n.i1 = h;
  n.i2 = w;
  return push(std::move(n));
}

int Tape::clamp(int a, double lo, double hi) {
  check(a);
  Node n;
  n.op = Op::kClamp;
  n.a = a;
  n.s0 = lo;
  n.s1 = hi;
  const Tensor& t = value(a);
  n.mask.resize(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    n.mask[i] = (t.data[i] > lo && t.data[i] < hi) ? 1.0 : 0.0;
  }
  return push(std::move(n));
}

int Tape::select_index(int a, int flat_index) {
  const Tensor& t = value(check(a));
  if (flat_index < 0 || flat_index >= t.numel()) {
    throw ContractError("select_index: index " + std::to_string(flat_index) +
                        " out of range for " + Tensor::shape_str(t.shape));
  }
  Node n;
  n.op = Op::kSelectIndex;
  n.a = a;
  n.i0 = flat_index;
  return push(std::move(n));
}

int Tape::scatter_index(int g, int flat_index, std::vector<int> shape) {
  Node n;
  n.op = Op::kScatterIndex;
  n.a = g;
  n.i0 = flat_index;
  n.idx.assign(shape.begin(), shape.end());
  return push(std::move(n));
}

// ---------------------------------------------------------------- forward

Tensor Tape::eval(const Node& n) const {
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConstant:
      return n.val;
    case Op::kAdd: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
      return out;
    }
    case Op::kSub: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
      return out;
    }
    case Op::kMul: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
      return out;
    }
    case Op::kDiv: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= b.data[i];
      return out;
    }
    case Op::kScalarMul: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v *= n.s0;
      return out;
    }
    case Op::kScalarNodeMul: {
      Tensor out = value(n.a);
      double s = value(n.b).data[0];
      for (auto& v : out.data) v *= s;
      return out;
    }
    case Op::kMatmul: {
      const Tensor& a = value(n.a);
      const Tensor& b = value(n.b);
      int m = a.shape[0], k = a.shape[1], p = b.shape[1];
      Tensor out({m, p});
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
          double av = a.at2(i, j);
          if (av == 0.0) continue;
          for (int c = 0; c < p; ++c) out.at2(i, c) += av * b.at2(j, c);
        }
      }
      return out;
    }
    case Op::kTranspose: {
      const Tensor& a = value(n.a);
      Tensor out({a.shape[1], a.shape[0]});
      for (int i = 0; i < a.shape[0]; ++i)
        for (int j = 0; j < a.shape[1]; ++j) out.at2(j, i) = a.at2(i, j);
      return out;
    }
    case Op::kReshape: {
      Tensor out = value(n.a);
      out.shape.assign(n.idx.begin(), n.idx.end());
      return out;
    }
    case Op::kConv2d: {
      const Tensor& x = value(n.a);
      const Tensor& w = value(n.b);
      int stride = n.i0, pad = n.i1;
      int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      int F = w.shape[0], kh = w.shape[2], kw = w.shape[3];
      int ho = (H + 2 * pad - kh) / stride + 1;
      int wo = (W + 2 * pad - kw) / stride + 1;
      Tensor out({N, F, ho, wo});
      for (int b = 0; b < N; ++b)
        for (int f = 0; f < F; ++f)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              double acc = 0.0;
              for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i) {
                  int y = oy * stride - pad + i;
                  if (y < 0 || y >= H) continue;
                  for (int j = 0; j < kw; ++j) {
                    int xx = ox * stride - pad + j;
                    if (xx < 0 || xx >= W) continue;
                    acc += x.at4(b, c, y, xx) * w.at4(f, c, i, j);
                  }
                }
              out.at4(b, f, oy, ox) = acc;
            }
      return out;
    }
    case Op::kConv2dDx: {
      const Tensor& gy = value(n.a);
      const Tensor& w = value(n.b);
      int stride = n.i0, pad = n.i1, H = n.i2, W = n.i3;
      int N = gy.shape[0], F = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3];
      int C = w.shape[1], kh = w.shape[2], kw = w.shape[3];
      Tensor out({N, C, H, W});
      for (int b = 0; b < N; ++b)
        for (int f = 0; f < F; ++f)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              double g = gy.at4(b, f, oy, ox);
              if (g == 0.0) continue;
              for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i) {
                  int y = oy * stride - pad + i;
                  if (y < 0 || y >= H) continue;
                  for (int j = 0; j < kw; ++j) {
                    int xx = ox * stride - pad + j;
                    if (xx < 0 || xx >= W) continue;
                    out.at4(b, c, y, xx) += g * w.at4(f, c, i, j);
                  }
                }
            }
      return out;
    }
    case Op::kConv2dDw: {
      const Tensor& x = value(n.a);
      const Tensor& gy = value(n.b);
      int stride = n.i0, pad = n.i1, kh = n.i2, kw = n.i3;
      int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      int F = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3];
      Tensor out({F, C, kh, kw});
      for (int b = 0; b < N; ++b)
        for (int f = 0; f < F; ++f)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              double g = gy.at4(b, f, oy, ox);
              if (g == 0.0) continue;
              for (int c = 0; c < C; ++c)
                for (int i = 0; i < kh; ++i) {
                  int y = oy * stride - pad + i;
                  if (y < 0 || y >= H) continue;
                  for (int j = 0; j < kw; ++j) {
                    int xx = ox * stride - pad + j;
                    if (xx < 0 || xx >= W) continue;
                    out.at4(f, c, i, j) += g * x.at4(b, c, y, xx);
                  }
                }
            }
      return out;
    }
    case Op::kMaxPool2d: {
      const Tensor& x = value(n.a);
      int k = n.i0;
      int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      int ho = H / k, wo = W / k;
      Tensor out({N, C, ho, wo});
      auto& idx = const_cast<Node&>(n).idx;
      idx.assign(out.data.size(), 0);
      size_t o = 0;
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox, ++o) {
              double best = -1e308;
              int best_idx = -1;
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                  int y = oy * k + i, xx = ox * k + j;
                  double v = x.at4(b, c, y, xx);
                  if (v > best) {  // strict: lower flat index wins ties
                    best = v;
                    best_idx =
                        ((b * C + c) * H + y) * W + xx;
                  }
                }
              out.data[o] = best;
              idx[o] = best_idx;
            }
      return out;
    }
    case Op::kMaxPoolScatter: {
      const Tensor& g = value(n.a);
      int C = static_cast<int>(n.s0);
      Tensor out({n.i1, C, n.i2, n.i3});
      for (size_t i = 0; i < g.data.size(); ++i) {
        out.data[n.idx[i]] += g.data[i];
      }
      return out;
    }
    case Op::kMaxPoolGather: {
      const Tensor& u = value(n.a);
      int C = static_cast<int>(n.s0);
      Tensor out({n.i1, C, n.i2, n.i3});
      for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = u.data[n.idx[i]];
      }
      return out;
    }
    case Op::kAvgPool2d: {
      const Tensor& x = value(n.a);
      int k = n.i0;
      int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
      int ho = H / k, wo = W / k;
      Tensor out({N, C, ho, wo});
      double inv = 1.0 / (k * k);
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              double acc = 0.0;
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                  acc += x.at4(b, c, oy * k + i, ox * k + j);
              out.at4(b, c, oy, ox) = acc * inv;
            }
      return out;
    }
    case Op::kAvgPoolScatter: {
      const Tensor& g = value(n.a);
      int k = n.i0;
      int C = static_cast<int>(n.s0);
      Tensor out({n.i1, C, n.i2, n.i3});
      int N = n.i1, H = n.i2, W = n.i3;
      int ho = H / k, wo = W / k;
      double inv = 1.0 / (k * k);
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
              double v = g.at4(b, c, oy, ox) * inv;
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                  out.at4(b, c, oy * k + i, ox * k + j) += v;
            }
      return out;
    }
    case Op::kSigmoid: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
      return out;
    }
    case Op::kTanh: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = std::tanh(v);
      return out;
    }
    case Op::kRelu: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
      return out;
    }
    case Op::kMaskMul: {
      Tensor out = value(n.a);
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= n.mask[i];
      return out;
    }
    case Op::kSoftmax: {
      const Tensor& a = value(n.a);
      Tensor out = a;
      int rows = a.shape.size() == 2 ? a.shape[0] : 1;
      int cols = a.shape.size() == 2 ? a.shape[1] : a.shape[0];
      for (int r = 0; r < rows; ++r) {
        double* row = out.data.data() + static_cast<size_t>(r) * cols;
        double m = row[0];
        for (int c = 1; c < cols; ++c) m = std::max(m, row[c]);
        double s = 0.0;
        for (int c = 0; c < cols; ++c) {
          row[c] = std::exp(row[c] - m);
          s += row[c];
        }
        for (int c = 0; c < cols; ++c) row[c] /= s;
      }
      return out;
    }
    case Op::kLog: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = std::log(v);
      return out;
    }
    case Op::kExp: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = std::exp(v);
      return out;
    }
    case Op::kSquare: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v *= v;
      return out;
    }
    case Op::kSumAll: {
      const Tensor& a = value(n.a);
      double s = 0.0;
      for (double v : a.data) s += v;
      return Tensor::scalar(s);
    }
    case Op::kMeanAll: {
      const Tensor& a = value(n.a);
      double s = 0.0;
      for (double v : a.data) s += v;
      return Tensor::scalar(s / static_cast<double>(a.numel()));
    }
    case Op::kL2Sq: {
      const Tensor& a = value(n.a);
      double s = 0.0;
      for (double v : a.data) s += v * v;
      return Tensor::scalar(s);
    }
    case Op::kBcastScalar: {
      std::vector<int> shape(n.idx.begin(), n.idx.end());
      return Tensor::full(shape, value(n.a).data[0]);
    }
    case Op::kRowSum: {
      const Tensor& a = value(n.a);
      Tensor out({a.shape[0], 1});
      for (int r = 0; r < a.shape[0]; ++r) {
        double s = 0.0;
        for (int c = 0; c < a.shape[1]; ++c) s += a.at2(r, c);
        out.data[r] = s;
      }
      return out;
    }
    case Op::kRowBroadcast: {
      const Tensor& a = value(n.a);
      Tensor out({a.shape[0], n.i0});
      for (int r = 0; r < a.shape[0]; ++r)
        for (int c = 0; c < n.i0; ++c) out.at2(r, c) = a.data[r];
      return out;
    }
    case Op::kColSum: {
      const Tensor& a = value(n.a);
      Tensor out({a.shape[1]});
      for (int r = 0; r < a.shape[0]; ++r)
        for (int c = 0; c < a.shape[1]; ++c) out.data[c] += a.at2(r, c);
      return out;
    }
    case Op::kRowRep: {
      const Tensor& a = value(n.a);
      Tensor out({n.i0, a.shape[0]});
      for (int r = 0; r < n.i0; ++r)
        for (int c = 0; c < a.shape[0]; ++c) out.at2(r, c) = a.data[c];
      return out;
    }
    case Op::kBiasAdd: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      for (int r = 0; r < out.shape[0]; ++r)
        for (int c = 0; c < out.shape[1]; ++c) out.at2(r, c) += b.data[c];
      return out;
    }
    case Op::kChanBiasAdd: {
      Tensor out = value(n.a);
      const Tensor& b = value(n.b);
      int N = out.shape[0], C = out.shape[1], H = out.shape[2], W = out.shape[3];
      for (int bb = 0; bb < N; ++bb)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.at4(bb, c, y, x) += b.data[c];
      return out;
    }
    case Op::kChanSum: {
      const Tensor& a = value(n.a);
      int N = a.shape[0], C = a.shape[1], H = a.shape[2], W = a.shape[3];
      Tensor out({C});
      for (int b = 0; b < N; ++b)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) out.data[c] += a.at4(b, c, y, x);
      return out;
    }
    case Op::kChanRep: {
      const Tensor& a = value(n.a);
      int C = a.shape[0];
      Tensor out({n.i0, C, n.i1, n.i2});
      for (int b = 0; b < n.i0; ++b)
        for (int c = 0; c < C; ++c)
          for (int y = 0; y < n.i1; ++y)
            for (int x = 0; x < n.i2; ++x) out.at4(b, c, y, x) = a.data[c];
      return out;
    }
    case Op::kClamp: {
      Tensor out = value(n.a);
      for (auto& v : out.data) v = std::min(n.s1, std::max(n.s0, v));
      return out;
    }
    case Op::kSelectIndex:
      return Tensor::scalar(value(n.a).data[n.i0]);
    case Op::kScatterIndex: {
      std::vector<int> shape(n.idx.begin(), n.idx.end());
      Tensor out = Tensor::zeros(shape);
      out.data[n.i0] = value(n.a).data[0];
      return out;
    }
  }
  throw ContractError("Tape::eval: unknown op");
}

void Tape::set_leaf(int id, Tensor v) {
  check(id);
  Node& n = nodes_[id];
  if (n.op != Op::kLeaf) throw ContractError("set_leaf: node is not a leaf");
  if (v.shape != n.val.shape) {
    throw DimensionError("set_leaf: shape mismatch " +
                         Tensor::shape_str(v.shape) + " vs " +
                         Tensor::shape_str(n.val.shape));
  }
  check_finite(v, "set_leaf");
  n.val = std::move(v);
}

void Tape::replay() {
  for (auto& n : nodes_) {
    if (n.op == Op::kLeaf || n.op == Op::kConstant) continue;
    n.val = eval(n);
  }
}

// ---------------------------------------------------------------- backward

void Tape::accumulate(std::vector<int>& adj, int node, int contribution) {
  adj[node] = adj[node] < 0 ? contribution : add(adj[node], contribution);
}

std::vector<int> Tape::backward_nodes(int objective,
                                      const std::vector<int>& leaves) {
  check(objective);
  for (int l : leaves) check(l);
  if (!value(objective).is_scalar()) {
    throw ContractError("backward: objective must be scalar, got " +
                        Tensor::shape_str(value(objective).shape));
  }

  std::vector<int> adj(nodes_.size(), -1);
  adj[objective] = constant(Tensor::scalar(1.0));
  adj.resize(nodes_.size(), -1);  // the seed constant extended the tape

  for (int id = objective; id >= 0; --id) {
    int g = adj[id];
    if (g < 0) continue;
    // Copy the fields we dispatch on: pushing adjoint nodes may reallocate.
    const Node n = nodes_[id];
    switch (n.op) {
      case Op::kLeaf:
      case Op::kConstant:
        break;
      case Op::kAdd:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, g);
        break;
      case Op::kSub:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, scalar_mul(g, -1.0));
        break;
      case Op::kMul:
        accumulate(adj, n.a, mul(g, n.b));
        accumulate(adj, n.b, mul(g, n.a));
        break;
      case Op::kDiv:
        accumulate(adj, n.a, div(g, n.b));
        accumulate(adj, n.b,
                   scalar_mul(div(mul(g, n.a), mul(n.b, n.b)), -1.0));
        break;
      case Op::kScalarMul:
        accumulate(adj, n.a, scalar_mul(g, n.s0));
        break;
      case Op::kScalarNodeMul:
        accumulate(adj, n.a, scalar_node_mul(g, n.b));
        accumulate(adj, n.b, sum_all(mul(g, n.a)));
        break;
      case Op::kMatmul:
        accumulate(adj, n.a, matmul(g, transpose(n.b)));
        accumulate(adj, n.b, matmul(transpose(n.a), g));
        break;
      case Op::kTranspose:
        accumulate(adj, n.a, transpose(g));
        break;
      case Op::kReshape:
        accumulate(adj, n.a, reshape(g, value(n.a).shape));
        break;
      case Op::kConv2d: {
        const auto xs = value(n.a).shape;  // copy: pushes invalidate refs
        const auto ws = value(n.b).shape;
        accumulate(adj, n.a, conv2d_dx(g, n.b, n.i0, n.i1, xs[2], xs[3]));
        accumulate(adj, n.b, conv2d_dw(n.a, g, n.i0, n.i1, ws[2], ws[3]));
        break;
      }
      case Op::kConv2dDx: {
        // out = dxOp(gy, w); adjoints via the bilinear-pair identities.
        const auto ws = value(n.b).shape;
        accumulate(adj, n.a, conv2d(g, n.b, n.i0, n.i1));
        accumulate(adj, n.b, conv2d_dw(g, n.a, n.i0, n.i1, ws[2], ws[3]));
        break;
      }
      case Op::kConv2dDw: {
        const auto xs = value(n.a).shape;
        accumulate(adj, n.a, conv2d_dx(n.b, g, n.i0, n.i1, xs[2], xs[3]));
        accumulate(adj, n.b, conv2d(n.a, g, n.i0, n.i1));
        break;
      }
      case Op::kMaxPool2d:
        accumulate(adj, n.a,
                   maxpool_scatter(g, n.idx, value(n.a).shape, n.i0));
        break;
      case Op::kMaxPoolScatter: {
        std::vector<int> out_shape = value(n.a).shape;
        accumulate(adj, n.a, maxpool_gather(g, n.idx, out_shape, n.i0));
        break;
      }
      case Op::kMaxPoolGather:
        accumulate(adj, n.a, maxpool_scatter(g, n.idx, value(n.a).shape, n.i0));
        break;
      case Op::kAvgPool2d:
        accumulate(adj, n.a, avgpool_scatter(g, n.i0, value(n.a).shape));
        break;
      case Op::kAvgPoolScatter:
        accumulate(adj, n.a, avgpool2d(g, n.i0));
        break;
      case Op::kSigmoid:
        // y' = y - y^2
        accumulate(adj, n.a, mul(g, sub(id, mul(id, id))));
        break;
      case Op::kTanh: {
        int ones = constant(Tensor::full(value(id).shape, 1.0));
        accumulate(adj, n.a, mul(g, sub(ones, mul(id, id))));
        break;
      }
      case Op::kRelu:
        accumulate(adj, n.a, mask_mul(g, n.mask));
        break;
      case Op::kMaskMul:
        accumulate(adj, n.a, mask_mul(g, n.mask));
        break;
      case Op::kSoftmax: {
        // gx = y * (g - rowbroadcast(rowsum(y*g)))
        const std::vector<int> ys = value(id).shape;  // copy: pushes realloc
        bool vec = ys.size() == 1;
        int yy = vec ? reshape(id, {1, ys[0]}) : id;
        int gg = vec ? reshape(g, {1, ys[0]}) : g;
        int cols = vec ? ys[0] : ys[1];
        int inner = rowbroadcast(rowsum(mul(yy, gg)), cols);
        int gx = mul(yy, sub(gg, inner));
        if (vec) gx = reshape(gx, {ys[0]});
        accumulate(adj, n.a, gx);
        break;
      }
      case Op::kLog:
        accumulate(adj, n.a, div(g, n.a));
        break;
      case Op::kExp:
        accumulate(adj, n.a, mul(g, id));
        break;
      case Op::kSquare:
        accumulate(adj, n.a, scalar_mul(mul(g, n.a), 2.0));
        break;
      case Op::kSumAll:
        accumulate(adj, n.a, bcast_scalar(g, value(n.a).shape));
        break;
      case Op::kMeanAll:
        accumulate(adj, n.a,
                   scalar_mul(bcast_scalar(g, value(n.a).shape),
                              1.0 / static_cast<double>(value(n.a).numel())));
        break;
      case Op::kL2Sq:
        accumulate(adj, n.a, scalar_node_mul(n.a, scalar_mul(g, 2.0)));
        break;
      case Op::kBcastScalar:
        accumulate(adj, n.a, sum_all(g));
        break;
      case Op::kRowSum:
        accumulate(adj, n.a, rowbroadcast(g, value(n.a).shape[1]));
        break;
      case Op::kRowBroadcast:
        accumulate(adj, n.a, rowsum(g));
        break;
      case Op::kColSum:
        accumulate(adj, n.a, rowrep(g, value(n.a).shape[0]));
        break;
      case Op::kRowRep:
        accumulate(adj, n.a, colsum(g));
        break;
      case Op::kBiasAdd:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, colsum(g));
        break;
      case Op::kChanBiasAdd:
        accumulate(adj, n.a, g);
        accumulate(adj, n.b, chan_sum(g));
        break;
      case Op::kChanSum: {
        const auto s = value(n.a).shape;
        accumulate(adj, n.a, chan_rep(g, s[0], s[2], s[3]));
        break;
      }
      case Op::kChanRep:
        accumulate(adj, n.a, chan_sum(g));
        break;
      case Op::kClamp:
        accumulate(adj, n.a, mask_mul(g, n.mask));
        break;
      case Op::kSelectIndex:
        accumulate(adj, n.a, scatter_index(g, n.i0, value(n.a).shape));
        break;
      case Op::kScatterIndex:
        accumulate(adj, n.a, select_index(g, n.i0));
        break;
    }
    adj.resize(nodes_.size(), -1);
  }

  std::vector<int> out;
  out.reserve(leaves.size());
  for (int l : leaves) {
    if (adj[l] >= 0) {
      out.push_back(adj[l]);
    } else {
      out.push_back(constant(Tensor::zeros(value(l).shape)));
    }
  }
  return out;
}

std::unordered_map<int, Tensor> Tape::backward(
    int objective, const std::vector<int>& leaves) {
  auto nodes = backward_nodes(objective, leaves);
  std::unordered_map<int, Tensor> out;
  for (size_t i = 0; i < leaves.size(); ++i) out[leaves[i]] = value(nodes[i]);
  return out;
}

std::unordered_map<int, Tensor> Tape::grad_of_grad(
    const DualGradientRequest& req) {
  check(req.objective);
  if (!value(req.objective).is_scalar()) {
    throw ContractError("grad_of_grad: objective must be scalar");
  }
  for (int g : req.inner_gradients) check(g);
  for (int l : req.outer_leaves) check(l);
  return backward(req.objective, req.outer_leaves);
}

}  // namespace gradlab
