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

// Image and word embedders plus the per-modality positional tables.
//
// The image embedder is a stack of 2x2 / stride-2 convolutions. Because the
// kernel equals the stride at every stage, each output vector sees exactly one
// disjoint (2^stages)-pixel square block of the input image.

#ifndef MLIM_EMBEDDING_HPP_
#define MLIM_EMBEDDING_HPP_

#include <span>
#include <utility>
#include <vector>

#include "mlim/autograd.hpp"
#include "mlim/data.hpp"

namespace mlim {

enum class Modality { kText, kImage };

struct EmbeddingSequence {
  Var vectors;  // length x d_model
  Modality modality = Modality::kText;

  Eigen::Index length() const { return vectors.rows(); }
};

struct EmbedderConfig {
  // (in_channels, out_channels) per stage; kernel and stride are both 2.
  std::vector<std::pair<int, int>> stages{{3, 32}, {32, 64}, {64, 128}};
  int image_side = kImageSide;

  int grid_side() const { return image_side >> static_cast<int>(stages.size()); }
  int grid_length() const { return grid_side() * grid_side(); }
  int d_model() const { return stages.empty() ? 3 : stages.back().second; }
  // Throws ConfigError on broken channel chains or indivisible image sides.
  void validate() const;
};

// Default channel plan 3 -> hidden... -> d_model.
EmbedderConfig make_embedder_config(std::span<const int> hidden_channels, int d_model,
                                    int image_side = kImageSide);

// Adds embed.word, embed.text_pos, embed.image_pos and embedder.conv* tensors.
// Tables are N(0, 0.02^2); conv filters are uniform in +-1/sqrt(fan_in) with
// zero biases.
void init_embedding_params(ParamStore& params, const EmbedderConfig& config, int vocab_size,
                           int max_text_len, Rng& rng);

// grid_length() vectors in row-major grid order, no positions added.
EmbeddingSequence embed_image(Tape& tape, const ImageTensor& image, const EmbedderConfig& config);
// Same, for an image already placed on the tape (e.g. as a differentiable input).
EmbeddingSequence embed_image(Var pixels, const EmbedderConfig& config);

// Row lookup into embed.word. Throws ConfigError for ids outside the vocab.
EmbeddingSequence embed_text(Tape& tape, std::span<const int> ids);

// Adds row i of the modality's own position table to vector i.
EmbeddingSequence add_positions(const EmbeddingSequence& seq);

}  // namespace mlim

#endif  // MLIM_EMBEDDING_HPP_
