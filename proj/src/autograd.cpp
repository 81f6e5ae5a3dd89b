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

#include "mlim/autograd.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "mlim/error.hpp"

namespace mlim {

namespace {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw Error("variable is not attached to a tape");
  return *v.tape;
}

}  // namespace

const Matrix& Var::value() const { return tape->value(*this); }

Tape::Tape(const ParamStore& params, ParamStore* grads) : params_(params), grads_(grads) {
  nodes_.reserve(256);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = tracking();
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(std::string_view name) {
  std::string key(name);
  auto it = param_nodes_.find(key);
  if (it != param_nodes_.end()) return Var{this, it->second};
  const auto& names = params_.names();
  int index = -1;
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == key) {
      index = static_cast<int>(i);
      break;
    }
  }
  if (index < 0) throw ConfigError("unknown parameter: " + key);
  Node node;
  node.value = params_.value(static_cast<size_t>(index));
  node.param_index = index;
  node.requires_grad = grads_ != nullptr && grads_->contains(key);
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(std::move(key), id);
  return Var{this, id};
}

Matrix Tape::grad(Var v) const {
  const Node& node = nodes_[static_cast<size_t>(v.id)];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Matrix& Tape::grad_buffer(int id) {
  Node& node = nodes_[static_cast<size_t>(id)];
  if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

Var Tape::push(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
              std::move(backward));
}

Var Tape::push(Matrix value, std::span<const Var> inputs, Backward backward) {
  Node node;
  node.value = std::move(value);
  if (tracking()) {
    for (const Var& in : inputs) {
      if (in.tape != this) throw Error("mixing variables from different tapes");
      if (nodes_[static_cast<size_t>(in.id)].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
  }
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root, double seed) {
  if (!tracking()) throw Error("backward() on a tape without gradient tracking");
  if (root.tape != this) throw Error("backward root belongs to another tape");
  const Node& r = nodes_[static_cast<size_t>(root.id)];
  if (r.value.rows() != 1 || r.value.cols() != 1) {
    throw ShapeError("backward root must be 1x1, got " + shape_str(r.value));
  }
  if (!r.value.allFinite()) throw NumericError("non-finite loss value at backward root");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  grad_buffer(root.id)(0, 0) = seed;
  for (int i = root.id; i >= 0; --i) {
    Node& node = nodes_[static_cast<size_t>(i)];
    if (!node.requires_grad || node.grad.size() == 0) continue;
    if (node.backward) node.backward(*this, i);
  }
  for (const Node& node : nodes_) {
    if (node.param_index < 0 || !node.requires_grad || node.grad.size() == 0) continue;
    grads_->at(params_.names()[static_cast<size_t>(node.param_index)]) += node.grad;
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: " + shape_str(av) + " * " + shape_str(bv));
  }
  Matrix out(av.rows(), bv.cols());
  out.noalias() = av * bv;
  return t.push(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a)) t.grad_buffer(a).noalias() += g * t.node_value(b).transpose();
    if (t.node_requires_grad(b)) t.grad_buffer(b).noalias() += t.node_value(a).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("matmul_nt: " + shape_str(av) + " * " + shape_str(bv) + "^T");
  }
  Matrix out(av.rows(), bv.rows());
  out.noalias() = av * bv.transpose();
  return t.push(std::move(out), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a)) t.grad_buffer(a).noalias() += g * t.node_value(b);
    if (t.node_requires_grad(b)) t.grad_buffer(b).noalias() += g.transpose() * t.node_value(a);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  return t.push(a.value() + b.value(), {a, b}, [a = a.id, b = b.id](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a)) t.grad_buffer(a) += g;
    if (t.node_requires_grad(b)) t.grad_buffer(b) += g;
  });
}

Var add_row(Var a, Var row) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  const Matrix& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols()) {
    throw ShapeError("add_row: " + shape_str(av) + " + " + shape_str(rv));
  }
  Matrix out = av;
  out.rowwise() += rv.row(0);
  return t.push(std::move(out), {a, row}, [a = a.id, r = row.id](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    if (t.node_requires_grad(a)) t.grad_buffer(a) += g;
    if (t.node_requires_grad(r)) t.grad_buffer(r) += g.colwise().sum();
  });
}

Var scale(Var a, double factor) {
  Tape& t = tape_of(a);
  return t.push(a.value() * factor, {a}, [a = a.id, factor](Tape& t, int self) {
    t.grad_buffer(a) += factor * t.node_grad(self);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  return t.push(a.value().cwiseMax(0.0), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& x = t.node_value(a);
    t.grad_buffer(a) += (x.array() > 0.0).cast<double>().matrix().cwiseProduct(t.node_grad(self));
  });
}

Var gelu(Var a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)); });
  return t.push(std::move(out), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& x = t.node_value(a);
    const double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    Matrix d = x.unaryExpr([inv_sqrt_2pi](double v) {
      const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
      return cdf + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    });
    t.grad_buffer(a) += d.cwiseProduct(t.node_grad(self));
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value().unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return t.push(std::move(out), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.node_value(self);
    t.grad_buffer(a).array() += y.array() * (1.0 - y.array()) * t.node_grad(self).array();
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = tape_of(x);
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n || bias.rows() != 1 || bias.cols() != n) {
    throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(n));
  }
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mean = xv.row(r).mean();
    const double var = (xv.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = xhat;
  out.array().rowwise() *= gain.value().row(0).array();
  out.rowwise() += bias.value().row(0);
  return t.push(std::move(out), {x, gain, bias},
                [x = x.id, g = gain.id, b = bias.id, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, int self) {
                  const Matrix& dy = t.node_grad(self);
                  if (t.node_requires_grad(b)) t.grad_buffer(b) += dy.colwise().sum();
                  if (t.node_requires_grad(g)) {
                    t.grad_buffer(g) += dy.cwiseProduct(xhat).colwise().sum();
                  }
                  if (t.node_requires_grad(x)) {
                    Matrix dxhat = dy;
                    dxhat.array().rowwise() *= t.node_value(g).row(0).array();
                    Matrix& dx = t.grad_buffer(x);
                    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
                      const double m1 = dxhat.row(r).mean();
                      const double m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<double>(dxhat.cols());
                      dx.row(r).array() +=
                          inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                    }
                  }
                });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r).array() = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  return t.push(std::move(out), {a}, [a = a.id](Tape& t, int self) {
    const Matrix& y = t.node_value(self);
    const Matrix& dy = t.node_grad(self);
    Matrix& da = t.grad_buffer(a);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double inner = y.row(r).dot(dy.row(r));
      da.row(r).array() += y.row(r).array() * (dy.row(r).array() - inner);
    }
  });
}

Var slice_cols(Var a, Eigen::Index begin, Eigen::Index count) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (begin < 0 || count < 0 || begin + count > av.cols()) {
    throw ShapeError("slice_cols out of range on " + shape_str(av));
  }
  Matrix out = av.middleCols(begin, count);
  return t.push(std::move(out), {a}, [a = a.id, begin, count](Tape& t, int self) {
    t.grad_buffer(a).middleCols(begin, count) += t.node_grad(self);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), parts, [ids = std::move(ids)](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index c = t.node_value(id).cols();
      if (t.node_requires_grad(id)) t.grad_buffer(id) += g.middleCols(at, c);
      at += c;
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape& t = tape_of(parts[0]);
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
    ids.push_back(p.id);
  }
  return t.push(std::move(out), parts, [ids = std::move(ids)](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    Eigen::Index at = 0;
    for (int id : ids) {
      const Eigen::Index r = t.node_value(id).rows();
      if (t.node_requires_grad(id)) t.grad_buffer(id) += g.middleRows(at, r);
      at += r;
    }
  });
}

Var select_rows(Var a, std::span<const int> rows) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= av.rows()) {
      throw ShapeError("select_rows: index " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(av));
    }
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return t.push(std::move(out), {a},
                [a = a.id, rows = std::vector<int>(rows.begin(), rows.end())](Tape& t, int self) {
                  const Matrix& g = t.node_grad(self);
                  Matrix& da = t.grad_buffer(a);
                  for (size_t i = 0; i < rows.size(); ++i) {
                    da.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
                  }
                });
}

Var replace_rows(Var a, const std::vector<bool>& mask, Var row) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (static_cast<Eigen::Index>(mask.size()) != av.rows()) {
    throw ShapeError("replace_rows: mask length " + std::to_string(mask.size()) +
                     " != rows " + std::to_string(av.rows()));
  }
  if (row.rows() != 1 || row.cols() != av.cols()) {
    throw ShapeError("replace_rows: replacement must be 1x" + std::to_string(av.cols()));
  }
  Matrix out = av;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) out.row(static_cast<Eigen::Index>(i)) = row.value().row(0);
  }
  return t.push(std::move(out), {a, row}, [a = a.id, r = row.id, mask](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    const bool need_a = t.node_requires_grad(a);
    const bool need_r = t.node_requires_grad(r);
    for (size_t i = 0; i < mask.size(); ++i) {
      const auto ri = static_cast<Eigen::Index>(i);
      if (mask[i]) {
        if (need_r) t.grad_buffer(r).row(0) += g.row(ri);
      } else if (need_a) {
        t.grad_buffer(a).row(ri) += g.row(ri);
      }
    }
  });
}

namespace {

// Row/column of the coarse grid element for a fine-grid pixel.
struct S2dIndex {
  Eigen::Index coarse_row;
  Eigen::Index col_offset;
};

inline S2dIndex s2d_index(int y, int x, int side, Eigen::Index channels) {
  const int half = side / 2;
  const int cell = (y / 2) * half + (x / 2);
  const int sub = (y % 2) * 2 + (x % 2);
  return {cell, sub * channels};
}

}  // namespace

Var space_to_depth(Var a, int side) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (side <= 0 || side % 2 != 0 || av.rows() != static_cast<Eigen::Index>(side) * side) {
    throw ShapeError("space_to_depth: " + shape_str(av) + " is not an even " +
                     std::to_string(side) + "x" + std::to_string(side) + " grid");
  }
  const Eigen::Index c = av.cols();
  const int half = side / 2;
  Matrix out(static_cast<Eigen::Index>(half) * half, 4 * c);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const S2dIndex ix = s2d_index(y, x, side, c);
      out.row(ix.coarse_row).segment(ix.col_offset, c) = av.row(y * side + x);
    }
  }
  return t.push(std::move(out), {a}, [a = a.id, side, c](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    Matrix& da = t.grad_buffer(a);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const S2dIndex ix = s2d_index(y, x, side, c);
        da.row(y * side + x) += g.row(ix.coarse_row).segment(ix.col_offset, c);
      }
    }
  });
}

Var depth_to_space(Var a, int side) {
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  if (side <= 0 || av.rows() != static_cast<Eigen::Index>(side) * side || av.cols() % 4 != 0) {
    throw ShapeError("depth_to_space: " + shape_str(av) + " is not a " + std::to_string(side) +
                     "x" + std::to_string(side) + " grid with 4k channels");
  }
  const Eigen::Index c = av.cols() / 4;
  const int fine = side * 2;
  Matrix out(static_cast<Eigen::Index>(fine) * fine, c);
  for (int y = 0; y < fine; ++y) {
    for (int x = 0; x < fine; ++x) {
      const S2dIndex ix = s2d_index(y, x, fine, c);
      out.row(y * fine + x) = av.row(ix.coarse_row).segment(ix.col_offset, c);
    }
  }
  return t.push(std::move(out), {a}, [a = a.id, fine, c](Tape& t, int self) {
    const Matrix& g = t.node_grad(self);
    Matrix& da = t.grad_buffer(a);
    for (int y = 0; y < fine; ++y) {
      for (int x = 0; x < fine; ++x) {
        const S2dIndex ix = s2d_index(y, x, fine, c);
        da.row(ix.coarse_row).segment(ix.col_offset, c) += g.row(y * fine + x);
      }
    }
  });
}

Var dropout(Var a, double p, Rng& rng) {
  if (p <= 0.0) return a;
  if (p >= 1.0) throw ConfigError("dropout probability must be < 1");
  Tape& t = tape_of(a);
  const Matrix& av = a.value();
  Matrix keep(av.rows(), av.cols());
  const double s = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.bernoulli(p) ? 0.0 : s;
  Matrix out = av.cwiseProduct(keep);
  return t.push(std::move(out), {a}, [a = a.id, keep = std::move(keep)](Tape& t, int self) {
    t.grad_buffer(a) += keep.cwiseProduct(t.node_grad(self));
  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets) {
  Tape& t = tape_of(logits);
  const Matrix& z = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(z) + " logits");
  }
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int target = targets[static_cast<size_t>(r)];
    if (target < 0 || target >= z.cols()) {
      throw ConfigError("cross_entropy: target id " + std::to_string(target) + " out of range");
    }
    const double m = z.row(r).maxCoeff();
    probs.row(r).array() = (z.row(r).array() - m).exp();
    const double denom = probs.row(r).sum();
    probs.row(r) /= denom;
    total += (m + std::log(denom)) - z(r, target);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  return t.push(std::move(out), {logits},
                [l = logits.id, probs = std::move(probs),
                 targets = std::vector<int>(targets.begin(), targets.end())](Tape& t, int self) {
                  const double g = t.node_grad(self)(0, 0);
                  Matrix d = probs;
                  for (size_t r = 0; r < targets.size(); ++r) {
                    d(static_cast<Eigen::Index>(r), targets[r]) -= 1.0;
                  }
                  t.grad_buffer(l) += g * d;
                });
}

Var squared_error_sum(Var a, const Matrix& target) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), target, "squared_error_sum");
  Matrix diff = a.value() - target;
  Matrix out(1, 1);
  out(0, 0) = diff.squaredNorm();
  return t.push(std::move(out), {a}, [a = a.id, diff = std::move(diff)](Tape& t, int self) {
    t.grad_buffer(a) += (2.0 * t.node_grad(self)(0, 0)) * diff;
  });
}

Var bce_with_logits(Var logit, double label) {
  Tape& t = tape_of(logit);
  if (logit.rows() != 1 || logit.cols() != 1) throw ShapeError("bce_with_logits expects 1x1");
  const double z = logit.scalar();
  // log(1 + exp(-|z|)) + max(z, 0) - z * y
  Matrix out(1, 1);
  out(0, 0) = std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - z * label;
  return t.push(std::move(out), {logit}, [l = logit.id, label](Tape& t, int self) {
    const double z = t.node_value(l)(0, 0);
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    t.grad_buffer(l)(0, 0) += t.node_grad(self)(0, 0) * (p - label);
  });
}

Var sum_all(Var a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.push(std::move(out), {a}, [a = a.id](Tape& t, int self) {
    t.grad_buffer(a).array() += t.node_grad(self)(0, 0);
  });
}

Var weighted_sum(Var a, const Matrix& weights) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), weights, "weighted_sum");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  return t.push(std::move(out), {a}, [a = a.id, weights](Tape& t, int self) {
    t.grad_buffer(a) += t.node_grad(self)(0, 0) * weights;
  });
}

}  // namespace mlim
