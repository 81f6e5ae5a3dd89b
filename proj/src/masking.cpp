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

#include "mlim/masking.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "mlim/error.hpp"

namespace mlim {

namespace {

std::atomic<uint64_t> g_plans_constructed{0};

void validate_weights(const std::array<double, 3>& w, const char* what) {
  double total = 0.0;
  for (double x : w) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError(std::string(what) + " weights must be >= 0");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ConfigError(std::string(what) + " weights must sum to 1");
  }
}

void check_rate(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

std::vector<bool> bernoulli_mask(size_t n, double p, Rng& rng, std::span<const int> ids) {
  std::vector<bool> mask(n, false);
  for (size_t i = 0; i < n; ++i) {
    const bool draw = rng.bernoulli(p);
    if (!ids.empty() && Vocab::is_special(ids[i])) continue;
    mask[i] = draw;
  }
  return mask;
}

std::vector<bool> fixed_count_mask(size_t n, double rate, Rng& rng, std::span<const int> ids) {
  std::vector<int> eligible;
  for (size_t i = 0; i < n; ++i) {
    if (ids.empty() || !Vocab::is_special(ids[i])) eligible.push_back(static_cast<int>(i));
  }
  const auto k = static_cast<size_t>(std::llround(rate * static_cast<double>(eligible.size())));
  rng.shuffle(std::span<int>(eligible));
  std::vector<bool> mask(n, false);
  for (size_t i = 0; i < k && i < eligible.size(); ++i) mask[static_cast<size_t>(eligible[i])] = true;
  return mask;
}

}  // namespace

std::string_view name_of(MaskMode mode) {
  switch (mode) {
    case MaskMode::kHeavyImage:
      return "heavy_image";
    case MaskMode::kHeavyText:
      return "heavy_text";
    case MaskMode::kLightLight:
      return "light_light";
  }
  return "?";
}

std::string_view name_of(MdoMode mode) {
  switch (mode) {
    case MdoMode::kTextOnly:
      return "text_only";
    case MdoMode::kImageOnly:
      return "image_only";
    case MdoMode::kImageText:
      return "image_text";
  }
  return "?";
}

void MamConfig::validate() const {
  check_rate(p_heavy, "mam.p_heavy");
  check_rate(p_light, "mam.p_light");
  if (p_light > p_heavy) throw ConfigError("mam.p_light must not exceed mam.p_heavy");
  validate_weights(mode_weights, "mam.mode_weights");
}

void MdoConfig::validate() const { validate_weights(mode_weights, "mdo.mode_weights"); }

size_t MaskPlan::text_masked() const { return static_cast<size_t>(std::count(text_mask.begin(), text_mask.end(), true)); }
size_t MaskPlan::image_masked() const {
  return static_cast<size_t>(std::count(image_mask.begin(), image_mask.end(), true));
}

MaskMode sample_mode(Rng& rng, const MamConfig& config) {
  return static_cast<MaskMode>(rng.categorical(config.mode_weights));
}

MaskPlan make_plan(MaskMode mode, std::span<const int> text_ids, int image_len, Rng& rng,
                   const MamConfig& config) {
  double text_rate = config.p_light;
  double image_rate = config.p_light;
  if (mode == MaskMode::kHeavyImage) image_rate = config.p_heavy;
  if (mode == MaskMode::kHeavyText) text_rate = config.p_heavy;
  MaskPlan plan = make_bernoulli_plan(text_rate, image_rate, text_ids, image_len, rng);
  plan.mode = mode;
  return plan;
}

MaskPlan make_bernoulli_plan(double text_rate, double image_rate, std::span<const int> text_ids,
                             int image_len, Rng& rng) {
  check_rate(text_rate, "text masking rate");
  check_rate(image_rate, "image masking rate");
  if (image_len < 0) throw ConfigError("negative image length");
  g_plans_constructed.fetch_add(1, std::memory_order_relaxed);
  MaskPlan plan;
  plan.text_mask = bernoulli_mask(text_ids.size(), text_rate, rng, text_ids);
  plan.image_mask = bernoulli_mask(static_cast<size_t>(image_len), image_rate, rng, {});
  return plan;
}

MaskPlan make_fixed_count_plan(double text_rate, double image_rate, std::span<const int> text_ids,
                               int image_len, Rng& rng) {
  check_rate(text_rate, "text masking rate");
  check_rate(image_rate, "image masking rate");
  g_plans_constructed.fetch_add(1, std::memory_order_relaxed);
  MaskPlan plan;
  plan.text_mask = fixed_count_mask(text_ids.size(), text_rate, rng, text_ids);
  plan.image_mask = fixed_count_mask(static_cast<size_t>(image_len), image_rate, rng, {});
  return plan;
}

uint64_t plans_constructed() { return g_plans_constructed.load(std::memory_order_relaxed); }

MaskedInputs apply_masking(const EmbeddingSequence& text, const EmbeddingSequence& image,
                           const MaskPlan& plan, std::span<const int> text_ids) {
  if (static_cast<Eigen::Index>(plan.text_mask.size()) != text.length() ||
      text_ids.size() != plan.text_mask.size()) {
    throw ShapeError("mask plan text length does not match the text sequence");
  }
  if (static_cast<Eigen::Index>(plan.image_mask.size()) != image.length()) {
    throw ShapeError("mask plan image length does not match the image sequence");
  }
  Tape& tape = *text.vectors.tape;
  const int mask_id = Vocab::kMask;
  Var mask_row = select_rows(tape.param("embed.word"), std::span<const int>(&mask_id, 1));

  MaskedInputs out;
  out.text = plan.text_masked() == 0 ? text
                                     : EmbeddingSequence{replace_rows(text.vectors, plan.text_mask, mask_row),
                                                         Modality::kText};
  out.image = plan.image_masked() == 0
                  ? image
                  : EmbeddingSequence{replace_rows(image.vectors, plan.image_mask, mask_row), Modality::kImage};
  for (size_t i = 0; i < plan.text_mask.size(); ++i) {
    if (plan.text_mask[i]) {
      out.mlm_positions.push_back(static_cast<int>(i));
      out.mlm_targets.push_back(text_ids[i]);
    }
  }
  return out;
}

MdoMode sample_mdo_mode(Rng& rng, const MdoConfig& config) {
  return static_cast<MdoMode>(rng.categorical(config.mode_weights));
}

PairSegments apply_mdo(PairSegments input, MdoMode mode) {
  if (mode == MdoMode::kTextOnly) {
    input.image_a.reset();
    input.image_b.reset();
  } else if (mode == MdoMode::kImageOnly) {
    input.text_a.reset();
    input.text_b.reset();
  }
  return input;
}

}  // namespace mlim
