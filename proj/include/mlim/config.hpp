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

// Run configuration: a strict JSON schema with built-in defaults. Unknown
// keys anywhere in a config file are rejected.

#ifndef MLIM_CONFIG_HPP_
#define MLIM_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlim/masking.hpp"
#include "mlim/model.hpp"
#include "mlim/optim.hpp"

namespace mlim {

struct DataConfig {
  std::string corpus_dir;  // empty: generate the corpus in memory
  size_t n_items = 2000;
  int image_side = kImageSide;
  size_t pairs_train = 2000;
  size_t pairs_test = 1000;
  double match_fraction = 0.5;
};

struct ModelSection {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int d_ff = 512;
  double dropout = 0.1;
  bool pre_norm = true;
  int max_text_len = kMaxTextLen;
  std::vector<int> embedder_channels{32, 64};
  std::vector<int> decoder_channels{64, 32};
  bool decoder_refine = true;
};

struct LossWeights {
  double mlm = 1.0;
  double recon = 1.0;
  double itm = 0.0;  // 0 disables the ITM objective
};

enum class MaskingPolicy { kMam, kNaive };

struct MaskingConfig {
  MaskingPolicy policy = MaskingPolicy::kMam;
  double naive_prob = 0.2;
};

struct TrainConfig {
  int64_t steps = 2000;
  size_t batch_size = 32;
  size_t micro_batch_size = 8;
};

struct OptimizerSection {
  AdamConfig adam;
  double clip_norm = 1.0;
};

struct ProbeConfig {
  std::string checkpoint;
  std::vector<double> mask_probs{0.1, 0.3, 0.5, 0.75};
  size_t eval_items = 200;
  double gray_level = 0.5;
};

struct AblationVariant {
  std::string name;
  bool mlm = true;
  bool recon = true;
  bool itm = false;
  bool mam = true;
  bool naive_masking = false;
  bool mdo = true;

  void validate() const;
};

struct AblationConfig {
  std::vector<uint64_t> seeds{1, 2, 3};
  std::vector<AblationVariant> variants;  // defaults to default_variants()
};

std::vector<AblationVariant> default_variants();

struct RunConfig {
  uint64_t seed = 1;
  int threads = 1;
  DataConfig data;
  ModelSection model;
  LossWeights losses;
  MaskingConfig masking;
  MamConfig mam;
  MdoConfig mdo;
  OptimizerSection optimizer;
  TrainConfig pretrain;
  TrainConfig finetune{1000, 32, 8};
  std::string finetune_checkpoint;
  ProbeConfig probe;
  AblationConfig ablation{{1, 2, 3}, default_variants()};

  ModelConfig model_config() const;
  // Throws ConfigError describing the first violated constraint.
  void validate() const;
  // Copy of this config with the variant's objectives and policies applied.
  RunConfig with_variant(const AblationVariant& variant) const;
};

nlohmann::json to_json(const RunConfig& config);
nlohmann::json to_json(const AblationVariant& variant);
// Starts from the defaults and overrides every key present in j.
RunConfig config_from_json(const nlohmann::json& j);
AblationVariant variant_from_json(const nlohmann::json& j);
// Throws ConfigError naming the path when the file is missing or invalid.
RunConfig load_config(const std::filesystem::path& path);
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace mlim

#endif  // MLIM_CONFIG_HPP_
