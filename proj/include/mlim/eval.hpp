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

// Cross-modality probes, the PR-AUC metric and the ablation harness.

#ifndef MLIM_EVAL_HPP_
#define MLIM_EVAL_HPP_

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlim/config.hpp"
#include "mlim/training.hpp"

namespace mlim {

// Average precision: scores sorted descending, tied scores form one
// threshold, AP = sum_n (R_n - R_{n-1}) * P_n. Throws ConfigError unless
// both classes are present and the lengths agree.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

enum class ImageCondition { kOriginal, kRandomImage, kGrayImage };
enum class TextCondition { kOriginal, kRandomText, kEmptyText };
std::string_view name_of(ImageCondition c);
std::string_view name_of(TextCondition c);

struct ProbePoint {
  double mask_prob = 0.0;
  double mean = 0.0;
  double std = 0.0;  // across items
  size_t n = 0;
};

struct ProbeCurve {
  std::string task;       // "mlm" or "recon"
  std::string condition;  // e.g. "gray_image"
  std::vector<ProbePoint> points;

  // Mean at the given mask probability; throws if absent.
  const ProbePoint& at(double mask_prob) const;
};

struct ProbeOptions {
  uint64_t seed = 0;
  double gray_level = 0.5;
  int threads = 1;
};

// Model input of one probe item at sweep index `point`.
struct ProbeInput {
  TokenSequence tokens;
  MaskPlan plan;
  ImageTensor image;
};

// The caption and its mask depend only on (seed, point, item); the image is
// replaced according to the condition.
ProbeInput mlm_probe_input(const std::vector<Example>& dataset, size_t item, size_t point, double mask_prob,
                           ImageCondition condition, const ModelConfig& config, const ProbeOptions& options);
// The image and its mask depend only on (seed, point, item); the caption is
// replaced according to the condition.
ProbeInput recon_probe_input(const std::vector<Example>& dataset, size_t item, size_t point, double mask_prob,
                             TextCondition condition, const ModelConfig& config, const ProbeOptions& options);

// Masks exactly round(p * 8) caption tokens per item (p = 0 points are
// skipped and left out of the curve) and swaps the paired image for the
// condition.
ProbeCurve probe_mlm(const ParamStore& params, const ModelConfig& config, const std::vector<Example>& dataset,
                     ImageCondition condition, std::span<const double> mask_probs, const ProbeOptions& options);

// Masks exactly round(p * grid) image positions per item and swaps the
// caption for the condition.
ProbeCurve probe_recon(const ParamStore& params, const ModelConfig& config, const std::vector<Example>& dataset,
                       TextCondition condition, std::span<const double> mask_probs, const ProbeOptions& options);

// All six curves (three per task).
std::vector<ProbeCurve> run_probes(const ParamStore& params, const ModelConfig& config,
                                   const std::vector<Example>& dataset, std::span<const double> mask_probs,
                                   const ProbeOptions& options);

// Mean over the sweep of (curve - original) / original for the two
// "random partner" conditions; reported, not asserted.
struct ProbeAsymmetry {
  double recon_random_text = 0.0;
  double mlm_random_image = 0.0;
};
ProbeAsymmetry probe_asymmetry(const std::vector<ProbeCurve>& curves);

struct AblationRow {
  std::string variant;
  std::optional<uint64_t> seed;  // empty on the per-variant median row
  double pr_auc = 0.0;
  uint64_t init_hash = 0;
  uint64_t data_hash = 0;
};

struct AblationData {
  const std::vector<Example>& corpus;
  const std::vector<PairItem>& train_pairs;
  const std::vector<PairItem>& test_pairs;
};

// Pre-trained parameters keyed by pretrain_cache_key(); variants that differ
// only in fine-tuning share one pre-training run.
using PretrainCache = std::map<std::string, ParamStore>;
std::string pretrain_cache_key(const RunConfig& config);

using AblationProgress = std::function<void(const std::string& variant, uint64_t seed, double pr_auc)>;

// Rows grouped by variant: one per seed followed by the median row.
std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const AblationVariant> variants,
                                      std::span<const uint64_t> seeds, const AblationData& data,
                                      PretrainCache* cache = nullptr, const AblationProgress& progress = {});

double median(std::vector<double> values);

}  // namespace mlim

#endif  // MLIM_EVAL_HPP_
