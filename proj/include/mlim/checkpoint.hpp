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

// Checkpoint file layout:
//
//   u64 (little-endian)  length of the JSON header in bytes
//   JSON header          {"format_version", "dtype", "tensors": [{"name",
//                        "shape", "offset", "nbytes"}], "payload_bytes",
//                        "optimizer_step", "config"}
//   payload              contiguous little-endian f32 (or f64) tensors, in
//                        header order, offsets relative to payload start
//
// Optimizer moments are stored as extra tensors named adam.m/<param> and
// adam.v/<param>.

#ifndef MLIM_CHECKPOINT_HPP_
#define MLIM_CHECKPOINT_HPP_

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "mlim/optim.hpp"
#include "mlim/params.hpp"

namespace mlim {

inline constexpr int kCheckpointVersion = 1;

enum class Dtype { kF32, kF64 };

struct Checkpoint {
  ParamStore params;
  std::optional<AdamState> optimizer;
  nlohmann::json config;
  Dtype dtype = Dtype::kF32;
};

void save_checkpoint(const ParamStore& params, const AdamState* optimizer, const nlohmann::json& config,
                     const std::filesystem::path& path, Dtype dtype = Dtype::kF32);

// Throws FormatError on version mismatch, bad offsets or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Additionally throws ShapeError unless the stored parameters have exactly
// the names and shapes of expected.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ParamStore& expected);

}  // namespace mlim

#endif  // MLIM_CHECKPOINT_HPP_
