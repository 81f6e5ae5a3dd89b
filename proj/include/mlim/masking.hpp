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

// Modality-aware masking for pre-training and modality dropout for
// fine-tuning. Both modalities are masked by substituting the single [MASK]
// row of the word-embedding table before positions are added.

#ifndef MLIM_MASKING_HPP_
#define MLIM_MASKING_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mlim/embedding.hpp"
#include "mlim/rng.hpp"

namespace mlim {

enum class MaskMode { kHeavyImage, kHeavyText, kLightLight };
std::string_view name_of(MaskMode mode);

struct MamConfig {
  double p_heavy = 0.6;
  double p_light = 0.15;
  std::array<double, 3> mode_weights{1.0 / 3, 1.0 / 3, 1.0 / 3};  // indexed by MaskMode

  void validate() const;
};

struct MaskPlan {
  std::vector<bool> text_mask;
  std::vector<bool> image_mask;
  std::optional<MaskMode> mode;  // empty for plans not drawn through MAM

  size_t text_masked() const;
  size_t image_masked() const;
};

MaskMode sample_mode(Rng& rng, const MamConfig& config);

// Bernoulli rates per modality follow the mode; special tokens in text_ids
// are never masked.
MaskPlan make_plan(MaskMode mode, std::span<const int> text_ids, int image_len, Rng& rng,
                   const MamConfig& config);
// Fixed-rate plan used for naive masking (same rate on both modalities).
MaskPlan make_bernoulli_plan(double text_rate, double image_rate, std::span<const int> text_ids,
                             int image_len, Rng& rng);
// Masks exactly round(rate * eligible) positions of each modality, chosen
// uniformly without replacement. Used by the evaluation probes.
MaskPlan make_fixed_count_plan(double text_rate, double image_rate, std::span<const int> text_ids,
                               int image_len, Rng& rng);

// Number of plans constructed by this process so far, across all threads.
uint64_t plans_constructed();

struct MaskedInputs {
  EmbeddingSequence text;
  EmbeddingSequence image;
  std::vector<int> mlm_positions;  // indices into the text sequence
  std::vector<int> mlm_targets;    // original ids at those positions
};

// Expects pre-positional embeddings. Masked rows of both sequences become the
// embed.word row of [MASK].
MaskedInputs apply_masking(const EmbeddingSequence& text, const EmbeddingSequence& image,
                           const MaskPlan& plan, std::span<const int> text_ids);

enum class MdoMode { kTextOnly, kImageOnly, kImageText };
std::string_view name_of(MdoMode mode);

struct MdoConfig {
  bool enabled = true;
  std::array<double, 3> mode_weights{1.0 / 3, 1.0 / 3, 1.0 / 3};  // indexed by MdoMode

  void validate() const;
};

MdoMode sample_mdo_mode(Rng& rng, const MdoConfig& config);

// The four segments of a pair input, positions already added. Absent
// segments are left out of the assembled sequence.
struct PairSegments {
  std::optional<EmbeddingSequence> text_a;
  std::optional<EmbeddingSequence> image_a;
  std::optional<EmbeddingSequence> text_b;
  std::optional<EmbeddingSequence> image_b;
};

PairSegments apply_mdo(PairSegments input, MdoMode mode);

}  // namespace mlim

#endif  // MLIM_MASKING_HPP_
