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
#ifndef GRADLAB_TAPE_HPP_
#define GRADLAB_TAPE_HPP_

#include <unordered_map>
#include <vector>

#include "gradlab/tensor.hpp"

namespace gradlab {

// Reverse-mode autodiff over a recorded graph of dense-tensor ops.
//
// The backward pass emits its adjoint computations as ordinary nodes on the
// same tape, so the gradient of a leaf is itself a differentiable quantity.
// Running backward a second time on a scalar built from those gradient nodes
// yields gradient-of-gradient, which the reconstruction attack needs to
// differentiate its gradient-matching objective with respect to the seed
// image.
//
// Subgradient conventions (piecewise-linear ops):
//   - relu uses the zero side at the kink: d/dx relu(0) = 0.
//   - maxpool breaks ties toward the lower flat index.
//   - maxpool/relu double-backward treats the argmax/sign mask as constant.
//
// A tape is single-threaded; distinct tapes are independent.
class Tape {
 public:
  enum class Op {
    kLeaf,
    kConstant,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kScalarMul,      // tensor * compile-time constant (s0)
    kScalarNodeMul,  // tensor * scalar node
    kMatmul,
    kTranspose,
    kReshape,
    kConv2d,    // a: input NCHW, b: weight [F,C,kh,kw]; i0=stride, i1=pad
    kConv2dDx,  // a: upstream NFHoWo, b: weight; i2,i3 = target H,W
    kConv2dDw,  // a: input, b: upstream; i2,i3 = kh,kw
    kMaxPool2d,       // i0 = window/stride; saves argmax flat indices
    kMaxPoolScatter,  // a: pooled-shape grad -> input shape via saved argmax
    kMaxPoolGather,   // a: input-shape tensor -> pooled shape via saved argmax
    kAvgPool2d,       // i0 = window/stride
    kAvgPoolScatter,
    kSigmoid,
    kTanh,
    kRelu,     // saves 0/1 mask
    kMaskMul,  // elementwise multiply by saved constant mask
    kSoftmax,  // over last dim; 1-D or 2-D input
    kLog,
    kExp,
    kSquare,
    kSumAll,   // -> scalar
    kMeanAll,  // -> scalar
    kL2Sq,     // sum of squares -> scalar
    kBcastScalar,      // scalar -> given shape
    kRowSum,           // [r,c] -> [r,1]
    kRowBroadcast,     // [r,1] -> [r,c] (i0 = c)
    kColSum,           // [m,n] -> [n]
    kRowRep,           // [n] -> [m,n]   (i0 = m)
    kBiasAdd,          // a: [m,n], b: [n]
    kChanBiasAdd,      // a: NCHW, b: [C]
    kChanSum,          // NCHW -> [C]
    kChanRep,          // [C] -> NCHW    (i0,i1,i2 = N,H,W)
    kClamp,            // s0=lo, s1=hi; saves pass-through mask
    kSelectIndex,      // flat element i0 -> scalar
    kScatterIndex,     // scalar -> zeros of saved shape with element i0 set
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    Tensor val;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;
    double s0 = 0.0, s1 = 0.0;
    std::vector<int> idx;       // argmax indices
    std::vector<double> mask;   // relu/clamp mask
  };

  int leaf(Tensor v);
  int constant(Tensor v);

  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int div(int a, int b);
  int scalar_mul(int a, double s);
  int scalar_node_mul(int a, int s);
  int matmul(int a, int b);
  int transpose(int a);
  int reshape(int a, std::vector<int> shape);
  int conv2d(int x, int w, int stride, int pad);
  int conv2d_dx(int gy, int w, int stride, int pad, int h, int w_extent);
  int conv2d_dw(int x, int gy, int stride, int pad, int kh, int kw);
  int maxpool2d(int x, int window);
  int avgpool2d(int x, int window);
  int sigmoid(int a);
  int tanh_(int a);
  int relu(int a);
  int softmax(int a);
  int log_(int a);
  int exp_(int a);
  int square(int a);
  int sum_all(int a);
  int mean_all(int a);
  int l2_norm_squared(int a);
  int rowsum(int a);
  int rowbroadcast(int a, int cols);
  int colsum(int a);
  int rowrep(int a, int rows);
  int bias_add(int x, int b);
  int chan_bias_add(int x, int b);
  int chan_sum(int a);
  int clamp(int a, double lo, double hi);
  int select_index(int a, int flat_index);

  const Tensor& value(int id) const { return nodes_.at(id).val; }

  // Overwrites a leaf's value in place; call replay() to propagate.
  void set_leaf(int id, Tensor v);

  size_t size() const { return nodes_.size(); }

  // Reverse pass from a scalar objective. Returns one gradient node per leaf,
  // in leaf order; leaves not reached by the objective get zero constants.
  // The returned ids are live tape nodes and may be differentiated again.
  std::vector<int> backward_nodes(int objective, const std::vector<int>& leaves);

  // Convenience wrapper returning materialized gradients.
  std::unordered_map<int, Tensor> backward(int objective,
                                           const std::vector<int>& leaves);

  // Second-order request: objective must be a scalar already expressed in
  // terms of first-order gradient nodes (from backward_nodes).
  struct DualGradientRequest {
    int objective;
    std::vector<int> inner_gradients;  // first backward's outputs (checked)
    std::vector<int> outer_leaves;
  };
  std::unordered_map<int, Tensor> grad_of_grad(const DualGradientRequest& req);

  // Re-executes the recorded graph with current leaf values. Used by the
  // replay-determinism tests.
  void replay();

 private:
  int push(Node n);
  int check(int id) const;
  void check_finite(const Tensor& t, const char* op) const;
  Tensor eval(const Node& n) const;

  int maxpool_scatter(int g, const std::vector<int>& idx,
                      std::vector<int> in_shape, int window);
  int maxpool_gather(int u, const std::vector<int>& idx,
                     std::vector<int> out_shape, int window);
  int avgpool_scatter(int g, int window, std::vector<int> in_shape);
  int mask_mul(int a, std::vector<double> mask);
  int bcast_scalar(int a, std::vector<int> shape);
  int chan_rep(int a, int n, int h, int w);
  int scatter_index(int g, int flat_index, std::vector<int> shape);

  void accumulate(std::vector<int>& adj, int node, int contribution);

  std::vector<Node> nodes_;
};

}  // namespace gradlab

#endif  // GRADLAB_TAPE_HPP_
