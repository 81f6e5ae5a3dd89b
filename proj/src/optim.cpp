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

#include "mlim/optim.hpp"

#include <cmath>

#include "mlim/error.hpp"

namespace mlim {

void AdamConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("optimizer.lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
}

AdamState make_adam_state(const ParamStore& trainable_layout) {
  return {trainable_layout.zeros_like(), trainable_layout.zeros_like(), 0};
}

void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state, const AdamConfig& config) {
  if (!grads.same_layout(state.m)) throw ShapeError("gradient layout does not match optimizer state");
  if (!grads.all_finite()) throw NumericError("non-finite gradient passed to adam_update");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < grads.size(); ++i) {
    const Matrix& g = grads.value(i);
    Matrix& m = state.m.value(i);
    Matrix& v = state.v.value(i);
    Matrix& p = params.at(grads.names()[i]);
    if (p.rows() != g.rows() || p.cols() != g.cols()) {
      throw ShapeError("gradient shape mismatch for " + grads.names()[i]);
    }
    m = config.beta1 * m + (1.0 - config.beta1) * g;
    v = config.beta2 * v + (1.0 - config.beta2) * g.cwiseProduct(g);
    p.array() -= config.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config.eps);
  }
}

double clip_global_norm(ParamStore& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace mlim
