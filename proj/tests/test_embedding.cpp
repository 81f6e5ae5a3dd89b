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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cctype>
#include <random>

#include "mlim/embedding.hpp"
#include "mlim/error.hpp"
#include "mlim/masking.hpp"
#include "mlim/model.hpp"
#include "test_util.hpp"

using namespace mlim;
using mlim::testing::tiny_model_config;

namespace {

ImageTensor random_image(uint64_t seed, int side = 64) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageTensor img(side, side);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = u(gen);
  return img;
}

Matrix embed(const ParamStore& params, const ImageTensor& img, const EmbedderConfig& cfg) {
  Tape tape(params);
  return embed_image(tape, img, cfg).vectors.value();
}

}  // namespace

TEST_CASE("image embedding has one vector per 8x8 block") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 1);
  const Matrix e = embed(params, random_image(1), mc.embedder);
  CHECK(e.rows() == 64);
  CHECK(e.cols() == mc.transformer.d_model);
  CHECK(mc.embedder.grid_length() == 64);
}

TEST_CASE("perturbing one pixel block changes exactly one embedding") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 2);
  const ImageTensor base = random_image(2);
  const Matrix e0 = embed(params, base, mc.embedder);
  for (int by = 0; by < 8; ++by) {
    for (int bx = 0; bx < 8; ++bx) {
      ImageTensor img = base;
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          for (int c = 0; c < 3; ++c) img.at(by * 8 + y, bx * 8 + x, c) = 1.0 - img.at(by * 8 + y, bx * 8 + x, c);
        }
      }
      const Matrix e1 = embed(params, img, mc.embedder);
      int changed = 0, changed_index = -1;
      for (int r = 0; r < 64; ++r) {
        if (e1.row(r) != e0.row(r)) ++changed, changed_index = r;
      }
      CHECK(changed == 1);
      CHECK(changed_index == by * 8 + bx);
    }
  }
}

TEST_CASE("embedding Jacobian is block diagonal") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 3);
  const ImageTensor img = random_image(3);
  for (int b = 0; b < 64; ++b) {
    ParamStore grads = params.zeros_like();
    Tape tape(params, &grads);
    Var pixels = tape.input(img.pixels());
    const EmbeddingSequence seq = embed_image(pixels, mc.embedder);
    Matrix w = Matrix::Zero(64, mc.transformer.d_model);
    w.row(b).setOnes();
    tape.backward(weighted_sum(seq.vectors, w));
    const Matrix g = tape.grad(pixels);
    const int by = b / 8, bx = b % 8;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        const bool inside = y / 8 == by && x / 8 == bx;
        if (!inside) REQUIRE(g.row(y * 64 + x).isZero(0.0));
      }
    }
  }
}

TEST_CASE("constant zero image gives identical vectors") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 4);
  const Matrix e = embed(params, ImageTensor(64, 64, 0.0), mc.embedder);
  for (int r = 1; r < 64; ++r) CHECK(e.row(r) == e.row(0));
}

TEST_CASE("text embedding is a table lookup") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 5);
  Tape tape(params);
  const std::vector<int> ids = {5, 5};
  const EmbeddingSequence seq = embed_text(tape, ids);
  CHECK(seq.length() == 2);
  CHECK(seq.vectors.value().row(0) == seq.vectors.value().row(1));
  CHECK(seq.vectors.value().row(0) == params.at("embed.word").row(5));

  const std::vector<int> three = {2, 7, 3};
  CHECK(embed_text(tape, three).length() == 3);
  const std::vector<int> bad = {mc.vocab_size};
  CHECK_THROWS_AS(embed_text(tape, bad), ConfigError);
}

TEST_CASE("zero position tables are the identity") {
  const ModelConfig mc = tiny_model_config();
  ParamStore params = init_params(mc, 6);
  params.at("embed.text_pos").setZero();
  params.at("embed.image_pos").setZero();
  Tape tape(params);
  const std::vector<int> ids = {5, 9, 12};
  const EmbeddingSequence text = embed_text(tape, ids);
  CHECK(add_positions(text).vectors.value() == text.vectors.value());
  const EmbeddingSequence image = embed_image(tape, random_image(6), mc.embedder);
  CHECK(add_positions(image).vectors.value() == image.vectors.value());
}

TEST_CASE("masked positions differ only by their position rows") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 7);
  Tape tape(params);
  const std::vector<int> ids = {5, 9, 12, 14};
  const EmbeddingSequence text = embed_text(tape, ids);
  const EmbeddingSequence image = embed_image(tape, random_image(7), mc.embedder);
  MaskPlan plan;
  plan.text_mask = {true, false, false, true};
  plan.image_mask.assign(64, false);
  plan.image_mask[10] = plan.image_mask[40] = true;
  const MaskedInputs masked = apply_masking(text, image, plan, ids);

  const Matrix t = add_positions(masked.text).vectors.value();
  const Matrix& tp = params.at("embed.text_pos");
  CHECK((t.row(0) - t.row(3) - (tp.row(0) - tp.row(3))).cwiseAbs().maxCoeff() < 1e-15);

  const Matrix im = add_positions(masked.image).vectors.value();
  const Matrix& ip = params.at("embed.image_pos");
  CHECK((im.row(10) - im.row(40) - (ip.row(10) - ip.row(40))).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("text and image use separate position tables") {
  const ModelConfig mc = tiny_model_config();
  ParamStore params = init_params(mc, 8);
  const std::vector<int> ids = {5, 9};
  const ImageTensor img = random_image(8);
  auto run = [&](const ParamStore& p) {
    Tape tape(p);
    return std::make_pair(add_positions(embed_text(tape, ids)).vectors.value(),
                          add_positions(embed_image(tape, img, mc.embedder)).vectors.value());
  };
  const auto [text0, image0] = run(params);
  params.at("embed.image_pos").array() += 1.0;
  const auto [text1, image1] = run(params);
  CHECK(text1 == text0);
  CHECK(image1 != image0);
  params.at("embed.text_pos").array() += 1.0;
  const auto [text2, image2] = run(params);
  CHECK(text2 != text1);
  CHECK(image2 == image1);
}

TEST_CASE("text longer than the position table is rejected") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 9);
  Tape tape(params);
  const std::vector<int> ids(static_cast<size_t>(mc.max_text_len) + 1, 5);
  CHECK_THROWS_AS(add_positions(embed_text(tape, ids)), ShapeError);
}

TEST_CASE("no modality, segment or per-modality mask embedding exists") {
  for (const ModelConfig& mc : {tiny_model_config(), RunConfig{}.model_config()}) {
    const ParamStore params = init_params(mc, 1);
    for (const auto& name : params.names()) {
      std::string lower = name;
      std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
      CHECK_MESSAGE(lower.find("modality") == std::string::npos, name);
      CHECK_MESSAGE(lower.find("segment") == std::string::npos, name);
      CHECK_MESSAGE(lower.find("type") == std::string::npos, name);
      CHECK_MESSAGE(lower.find("mask") == std::string::npos, name);
    }
    const auto tables = std::count_if(params.names().begin(), params.names().end(),
                                      [](const std::string& n) { return n.rfind("embed.", 0) == 0; });
    CHECK(tables == 3);  // word, text positions, image positions
  }
}

TEST_CASE("image embedder is lighter than the decoder") {
  for (const ModelConfig& mc : {tiny_model_config(), RunConfig{}.model_config()}) {
    const ParamStore params = init_params(mc, 1);
    CHECK(params.scalar_count("embedder.") < params.scalar_count("decoder."));
  }
}

TEST_CASE("embedder config validation") {
  EmbedderConfig cfg;
  cfg.stages = {{3, 8}, {4, 8}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.stages = {{3, 8}, {8, 8}, {8, 8}};
  cfg.image_side = 60;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
