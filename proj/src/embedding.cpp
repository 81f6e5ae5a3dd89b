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

#include "mlim/embedding.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mlim/error.hpp"

namespace mlim {

namespace {

std::string conv_name(size_t stage, const char* what) {
  return "embedder.conv" + std::to_string(stage) + "." + what;
}

}  // namespace

void EmbedderConfig::validate() const {
  if (stages.empty()) throw ConfigError("image embedder needs at least one stage");
  if (stages.front().first != 3) throw ConfigError("image embedder must take 3 input channels");
  for (size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].first <= 0 || stages[i].second <= 0) {
      throw ConfigError("image embedder channels must be positive");
    }
    if (i > 0 && stages[i].first != stages[i - 1].second) {
      throw ConfigError("image embedder stage " + std::to_string(i) + " input channels do not chain");
    }
  }
  const int factor = 1 << stages.size();
  if (image_side <= 0 || image_side % factor != 0) {
    throw ConfigError("image side " + std::to_string(image_side) + " is not divisible by 2^" +
                      std::to_string(stages.size()));
  }
}

EmbedderConfig make_embedder_config(std::span<const int> hidden_channels, int d_model, int image_side) {
  EmbedderConfig config;
  config.stages.clear();
  config.image_side = image_side;
  int in = 3;
  for (int c : hidden_channels) {
    config.stages.emplace_back(in, c);
    in = c;
  }
  config.stages.emplace_back(in, d_model);
  config.validate();
  return config;
}

void init_embedding_params(ParamStore& params, const EmbedderConfig& config, int vocab_size,
                           int max_text_len, Rng& rng) {
  config.validate();
  const int d = config.d_model();
  auto normal_table = [&rng](int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = 0.02 * rng.normal();
    return m;
  };
  params.add("embed.word", normal_table(vocab_size, d));
  params.add("embed.text_pos", normal_table(max_text_len, d));
  params.add("embed.image_pos", normal_table(config.grid_length(), d));
  for (size_t s = 0; s < config.stages.size(); ++s) {
    const auto [in, out] = config.stages[s];
    const int fan_in = 4 * in;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, out);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    params.add(conv_name(s, "weight"), std::move(w));
    params.add(conv_name(s, "bias"), Matrix::Zero(1, out));
  }
}

EmbeddingSequence embed_image(Var pixels, const EmbedderConfig& config) {
  const int side = config.image_side;
  if (pixels.rows() != static_cast<Eigen::Index>(side) * side || pixels.cols() != 3) {
    throw ShapeError("embed_image expects a " + std::to_string(side) + "x" + std::to_string(side) +
                     "x3 image");
  }
  Tape& tape = *pixels.tape;
  Var h = pixels;
  int grid = side;
  for (size_t s = 0; s < config.stages.size(); ++s) {
    h = space_to_depth(h, grid);
    grid /= 2;
    h = add_row(matmul(h, tape.param(conv_name(s, "weight"))), tape.param(conv_name(s, "bias")));
    if (s + 1 < config.stages.size()) h = relu(h);
  }
  return {h, Modality::kImage};
}

EmbeddingSequence embed_image(Tape& tape, const ImageTensor& image, const EmbedderConfig& config) {
  if (image.height() != config.image_side || image.width() != config.image_side) {
    throw ShapeError("image is " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     ", embedder expects " + std::to_string(config.image_side));
  }
  return embed_image(tape.constant(image.pixels()), config);
}

EmbeddingSequence embed_text(Tape& tape, std::span<const int> ids) {
  Var table = tape.param("embed.word");
  for (int id : ids) {
    if (id < 0 || id >= table.rows()) {
      throw ConfigError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(table.rows()));
    }
  }
  return {select_rows(table, ids), Modality::kText};
}

EmbeddingSequence add_positions(const EmbeddingSequence& seq) {
  Tape& tape = *seq.vectors.tape;
  Var table = tape.param(seq.modality == Modality::kText ? "embed.text_pos" : "embed.image_pos");
  const Eigen::Index n = seq.length();
  if (n > table.rows()) {
    throw ShapeError("sequence of length " + std::to_string(n) + " exceeds the " +
                     std::to_string(table.rows()) + "-row position table");
  }
  std::vector<int> rows(static_cast<size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  return {add(seq.vectors, select_rows(table, rows)), seq.modality};
}

}  // namespace mlim
