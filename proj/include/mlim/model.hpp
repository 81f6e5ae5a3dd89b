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

// Input assembly, transformer encoder, MLM head, image decoder, the pre-train
// losses and the classification heads used for the ITM baseline and for
// pair fine-tuning.

#ifndef MLIM_MODEL_HPP_
#define MLIM_MODEL_HPP_

#include <span>
#include <vector>

#include "mlim/autograd.hpp"
#include "mlim/embedding.hpp"
#include "mlim/masking.hpp"

namespace mlim {

struct TransformerConfig {
  int layers = 4;
  int heads = 4;
  int d_model = 128;
  int d_ff = 512;
  double dropout = 0.1;
  bool pre_norm = true;

  void validate() const;
};

struct ModelConfig {
  int vocab_size = 0;
  int max_text_len = kMaxTextLen;
  EmbedderConfig embedder;
  TransformerConfig transformer;
  // Output channels of the upsampling stages before the final RGB stage.
  std::vector<int> decoder_channels{64, 32};
  // Adds a pointwise conv + ReLU after every non-final upsampling stage.
  bool decoder_refine = true;

  void validate() const;
};

// All learnable tensors, initialized from seed. Every head is created up
// front so that model variants share identical initial values.
ParamStore init_params(const ModelConfig& config, uint64_t seed);

enum class SegmentRole { kCls, kSep, kTextA, kImageA, kTextB, kImageB };

struct AssembledInput {
  Var vectors;
  std::vector<SegmentRole> roles;  // one per row

  // Row indices carrying the given role, in order.
  std::vector<int> positions(SegmentRole role) const;
};

// [CLS] text [SEP] image. Inputs are post-masking, post-position.
AssembledInput assemble(const EmbeddingSequence& text, const EmbeddingSequence& image,
                        int max_seq = 0);
// [CLS] textA [SEP] imageA [SEP] textB [SEP] imageB with absent segments
// skipped and every separator kept.
AssembledInput assemble_pair(Tape& tape, const PairSegments& segments);

// Encoder stack; dropout only when rng != nullptr. Throws NumericError when
// the output is not finite.
Var transformer_forward(const AssembledInput& input, const TransformerConfig& config, Rng* rng = nullptr);
Var transformer_forward(Var input, const TransformerConfig& config, Rng* rng = nullptr);

// Two affine layers with a GELU between them; |positions| x |V|.
Var mlm_logits(Var outputs, std::span<const int> positions);

struct LossValue {
  Var value;
  bool skipped = false;  // no positions contributed
};

// Mean negative log-likelihood of the targets.
LossValue mlm_loss(Var logits, std::span<const int> targets);

// Row-major 8x8 (grid) reshape, upsampling transposed convolutions and an
// element-wise sigmoid; image_side^2 x 3.
Var decode_image(Var outputs, std::span<const int> image_positions, const ModelConfig& config);

// Per-pixel sum of squared errors over the channels, averaged over pixels.
Var recon_loss(Var reconstruction, const ImageTensor& original);

// 1 x 2 logits from the [CLS] output; column 1 is "aligned".
Var itm_logits(Var outputs);
// 1 x 1 logit from the [CLS] output; sigmoid gives the match score.
Var pairwise_logit(Var outputs);

}  // namespace mlim

#endif  // MLIM_MODEL_HPP_
