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

#ifndef MLIM_OPTIM_HPP_
#define MLIM_OPTIM_HPP_

#include <cstdint>

#include "mlim/params.hpp"

namespace mlim {

struct AdamConfig {
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

// First/second moment buffers mirror the trainable subset of the parameters.
struct AdamState {
  ParamStore m;
  ParamStore v;
  int64_t step = 0;
};

AdamState make_adam_state(const ParamStore& trainable_layout);

// Bias-corrected Adam over the names in grads. Throws NumericError on
// non-finite gradients and ShapeError on layout mismatch.
void adam_update(ParamStore& params, const ParamStore& grads, AdamState& state, const AdamConfig& config);

// Rescales grads in place so the global L2 norm is at most max_norm (no-op
// when max_norm <= 0). Returns the norm before clipping.
double clip_global_norm(ParamStore& grads, double max_norm);

}  // namespace mlim

#endif  // MLIM_OPTIM_HPP_
