/*
 * Copyright 2026 The mlim Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Reverse-mode automatic differentiation over row-major double matrices.
//
// A Tape records every operation of one forward pass. Values are computed
// eagerly; Tape::backward() then walks the recorded nodes in reverse order and
// accumulates gradients into the inputs, finally adding the gradients of
// parameter leaves into a caller-supplied ParamStore.

#ifndef MLIM_AUTOGRAD_HPP_
#define MLIM_AUTOGRAD_HPP_

#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mlim/params.hpp"
#include "mlim/rng.hpp"

namespace mlim {

class Tape;

// Handle to a node of a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  // With grads == nullptr the tape records values only. Otherwise parameters
  // whose names appear in *grads are differentiable and receive gradients.
  explicit Tape(const ParamStore& params, ParamStore* grads = nullptr);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Non-differentiable leaf.
  Var constant(Matrix value);
  // Differentiable leaf that is not a parameter; its gradient can be read back
  // with grad() after backward(). Used for input-gradient checks.
  Var input(Matrix value);
  // Parameter leaf, one node per name per tape.
  Var param(std::string_view name);

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  // Gradient of the last backward() root with respect to v; zeros if v did
  // not influence the root.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

  // root must be 1x1.
  void backward(Var root, double seed = 1.0);

  bool tracking() const { return grads_ != nullptr; }
  size_t size() const { return nodes_.size(); }
  const ParamStore& params() const { return params_; }

  // Used by op implementations.
  Var push(Matrix value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Matrix value, std::span<const Var> inputs, Backward backward);
  const Matrix& node_value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Matrix& node_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  // Lazily zero-initialized gradient buffer of a node.
  Matrix& grad_buffer(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    int param_index = -1;  // index into params_ when this is a parameter leaf
  };

  const ParamStore& params_;
  ParamStore* grads_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All inputs must belong to the same tape.

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
// Adds a 1 x n row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double factor);

Var relu(Var a);
// Exact (erf-based) GELU.
Var gelu(Var a);
Var sigmoid(Var a);

// Row-wise layer normalization with 1 x n gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
Var softmax_rows(Var a);

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
// Gathers rows by index; repeated indices are allowed (embedding lookup).
Var select_rows(Var a, std::span<const int> rows);
// Rows with mask[i] set are replaced by the single 1 x n row.
Var replace_rows(Var a, const std::vector<bool>& mask, Var row);

// Grid reshuffles for 2x2 / stride-2 (de)convolution. The input of
// space_to_depth is a side x side grid stored row-major as side*side rows of
// C channels; the output is a (side/2)^2 x 4C grid whose channel index is
// (dy * 2 + dx) * C + c. depth_to_space is the exact inverse.
Var space_to_depth(Var a, int side);
Var depth_to_space(Var a, int side);

// Inverted dropout. p == 0 is the identity.
Var dropout(Var a, double p, Rng& rng);

// Sum over rows of -log softmax(logits)[target].
Var cross_entropy_sum(Var logits, std::span<const int> targets);
// Sum of squared differences against a constant target.
Var squared_error_sum(Var a, const Matrix& target);
// Binary cross-entropy of a 1x1 logit against label in {0, 1}.
Var bce_with_logits(Var logit, double label);
// Sum of all elements.
Var sum_all(Var a);
// Sum of a .* weights for a constant weight matrix.
Var weighted_sum(Var a, const Matrix& weights);

}  // namespace mlim

#endif  // MLIM_AUTOGRAD_HPP_
