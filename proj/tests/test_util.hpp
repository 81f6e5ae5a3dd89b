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

// Shared helpers for the unit tests: small model configs, a finite-difference
// checker and temporary directories.

#ifndef MLIM_TESTS_TEST_UTIL_HPP_
#define MLIM_TESTS_TEST_UTIL_HPP_

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <string>

#include "mlim/autograd.hpp"
#include "mlim/config.hpp"
#include "mlim/model.hpp"

namespace mlim::testing {

// d_model 8, one layer, two heads; channels 3 -> 4 -> 8 -> 8.
inline RunConfig tiny_run_config(int layers = 1) {
  RunConfig c;
  c.model.d_model = 8;
  c.model.layers = layers;
  c.model.heads = 2;
  c.model.d_ff = 16;
  c.model.dropout = 0.0;
  c.model.embedder_channels = {4, 8};
  c.model.decoder_channels = {8, 4};
  c.data.n_items = 32;
  c.data.pairs_train = 16;
  c.data.pairs_test = 16;
  c.pretrain = {4, 8, 4};
  c.finetune = {4, 8, 4};
  c.probe.eval_items = 8;
  return c;
}

inline ModelConfig tiny_model_config(int layers = 1) { return tiny_run_config(layers).model_config(); }

// Small but trainable; used where a test needs the model to learn.
inline RunConfig small_run_config() {
  RunConfig c;
  c.model.d_model = 32;
  c.model.layers = 2;
  c.model.heads = 4;
  c.model.d_ff = 64;
  c.model.embedder_channels = {16, 32};
  c.model.decoder_channels = {32, 16};
  c.pretrain = {500, 16, 8};
  c.finetune = {300, 16, 8};
  return c;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(gen);
  return m;
}

struct GradCheckResult {
  double worst_relative = 0.0;
  std::string worst_name;
};

// Norm-wise relative error between backprop and central differences for
// every tensor: |g_bp - g_fd| / max(|g_bp|, |g_fd|, floor). The floor turns
// the check absolute for tensors whose true gradient vanishes (key biases
// under softmax), where both sides are pure roundoff.
inline double relative_error(const Matrix& a, const Matrix& b, double floor = 1e-5) {
  const double denom = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / denom;
}

// `loss` builds a scalar on a fresh tape reading the given parameters.
inline GradCheckResult check_param_gradients(ParamStore params, const std::function<Var(Tape&)>& loss,
                                             double h = 1e-4) {
  ParamStore grads = params.zeros_like();
  {
    Tape tape(params, &grads);
    tape.backward(loss(tape));
  }
  GradCheckResult result;
  for (size_t k = 0; k < params.size(); ++k) {
    Matrix& w = params.value(k);
    Matrix numeric(w.rows(), w.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double saved = w.data()[i];
      w.data()[i] = saved + h;
      double up;
      {
        Tape tape(params);
        up = loss(tape).scalar();
      }
      w.data()[i] = saved - h;
      double down;
      {
        Tape tape(params);
        down = loss(tape).scalar();
      }
      w.data()[i] = saved;
      numeric.data()[i] = (up - down) / (2 * h);
    }
    const double err = relative_error(grads.value(k), numeric);
    if (err > result.worst_relative) {
      result.worst_relative = err;
      result.worst_name = params.names()[k];
    }
  }
  return result;
}

// Same check for a non-parameter input built with Tape::input().
inline double check_input_gradient(Matrix x, const std::function<Var(Tape&, Var)>& loss,
                                   const ParamStore& params = {}, double h = 1e-4) {
  ParamStore no_grads;
  Matrix analytic;
  {
    Tape tape(params, &no_grads);
    Var in = tape.input(x);
    tape.backward(loss(tape, in));
    analytic = tape.grad(in);
  }
  Matrix numeric(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    double up;
    {
      Tape tape(params);
      up = loss(tape, tape.input(x)).scalar();
    }
    x.data()[i] = saved - h;
    double down;
    {
      Tape tape(params);
      down = loss(tape, tape.input(x)).scalar();
    }
    x.data()[i] = saved;
    numeric.data()[i] = (up - down) / (2 * h);
  }
  return relative_error(analytic, numeric);
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("mlim_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace mlim::testing

#endif  // MLIM_TESTS_TEST_UTIL_HPP_
