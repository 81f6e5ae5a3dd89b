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

#include <cmath>
#include <random>

#include "mlim/error.hpp"
#include "mlim/model.hpp"
#include "mlim/training.hpp"
#include "test_util.hpp"

using namespace mlim;
using mlim::testing::random_matrix;
using mlim::testing::tiny_model_config;

namespace {

// Independent LayerNorm with unit gain and zero bias.
Matrix reference_layer_norm(const Matrix& x, double eps = 1e-5) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean) / std::sqrt(var + eps);
  }
  return out;
}

ImageTensor random_image(uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  ImageTensor img(64, 64);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = u(gen);
  return img;
}

}  // namespace

TEST_CASE("single-item assembly layout") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 1);
  Tape tape(params);
  const std::vector<int> ids = {5, 6, 7, 8, 9, 10, 11, 12};
  const AssembledInput in = assemble(add_positions(embed_text(tape, ids)),
                                     add_positions(embed_image(tape, random_image(1), mc.embedder)));
  CHECK(in.vectors.rows() == 1 + 8 + 1 + 64);
  CHECK(in.roles.front() == SegmentRole::kCls);
  CHECK(in.roles[9] == SegmentRole::kSep);
  const auto image_rows = in.positions(SegmentRole::kImageA);
  REQUIRE(image_rows.size() == 64);
  for (int k = 0; k < 64; ++k) CHECK(image_rows[static_cast<size_t>(k)] == 10 + k);
  CHECK(in.positions(SegmentRole::kTextA).size() == 8);
}

TEST_CASE("decoder reads exactly the assembled image rows") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 2);
  Tape tape(params);
  const std::vector<int> ids = {5, 6, 7};
  const AssembledInput in = assemble(add_positions(embed_text(tape, ids)),
                                     add_positions(embed_image(tape, random_image(2), mc.embedder)));
  const Var out = transformer_forward(in, mc.transformer);
  const auto rows = in.positions(SegmentRole::kImageA);
  const Matrix a = decode_image(out, rows, mc).value();
  // Perturbing non-image rows leaves the reconstruction unchanged.
  Matrix shifted = out.value();
  for (int r = 0; r < 1 + 3 + 1; ++r) shifted.row(r).array() += 5.0;
  const Matrix b = decode_image(tape.constant(shifted), rows, mc).value();
  CHECK(a == b);
}

TEST_CASE("pair assembly layout") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 3);
  Tape tape(params);
  const std::vector<int> ta = {5, 6, 7, 8}, tb = {9, 10};
  PairSegments seg;
  seg.text_a = add_positions(embed_text(tape, ta));
  seg.image_a = add_positions(embed_image(tape, random_image(3), mc.embedder));
  seg.text_b = add_positions(embed_text(tape, tb));
  seg.image_b = add_positions(embed_image(tape, random_image(4), mc.embedder));
  const AssembledInput in = assemble_pair(tape, seg);
  CHECK(in.vectors.rows() == 1 + 4 + 1 + 64 + 1 + 2 + 1 + 64);
  CHECK(in.positions(SegmentRole::kSep).size() == 3);
  CHECK(in.positions(SegmentRole::kImageB).front() == 1 + 4 + 1 + 64 + 1 + 2 + 1);
}

TEST_CASE("zero-layer encoder is the final layer norm") {
  ModelConfig mc = tiny_model_config(0);
  const ParamStore params = init_params(mc, 4);
  std::mt19937_64 gen(4);
  const Matrix x = random_matrix(20, 8, gen);
  Tape tape(params);
  const Matrix y = transformer_forward(tape.constant(x), mc.transformer).value();
  CHECK((y - reference_layer_norm(x)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention is permutation equivariant") {
  for (bool pre_norm : {true, false}) {
    ModelConfig mc = tiny_model_config(2);
    mc.transformer.pre_norm = pre_norm;
    const ParamStore params = init_params(mc, 5);
    std::mt19937_64 gen(5);
    const Matrix x = random_matrix(12, 8, gen);
    Matrix px = x;
    px.row(3).swap(px.row(9));
    Tape tape(params);
    const Matrix y = transformer_forward(tape.constant(x), mc.transformer).value();
    Matrix py = transformer_forward(tape.constant(px), mc.transformer).value();
    py.row(3).swap(py.row(9));
    CHECK((y - py).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("zero MLM head gives zero logits") {
  const ModelConfig mc = tiny_model_config();
  ParamStore params = init_params(mc, 6);
  for (const auto& name : params.names()) {
    if (name.rfind("mlm_head.", 0) == 0) params.at(name).setZero();
  }
  std::mt19937_64 gen(6);
  Tape tape(params);
  const std::vector<int> pos = {1, 4, 7};
  const Matrix logits = mlm_logits(tape.constant(random_matrix(10, 8, gen)), pos).value();
  CHECK(logits.rows() == 3);
  CHECK(logits.cols() == mc.vocab_size);
  CHECK(logits.isZero(0.0));
}

TEST_CASE("softmax rows sum to one") {
  const ParamStore none;
  std::mt19937_64 gen(7);
  Tape tape(none);
  const Matrix p = softmax_rows(tape.constant(random_matrix(6, 22, gen, 10.0))).value();
  for (Eigen::Index r = 0; r < p.rows(); ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-9);
}

TEST_CASE("MLM loss analytics") {
  const ParamStore none;
  Tape tape(none);
  const int v = 22;
  const std::vector<int> targets = {3, 17, 8, 21};

  const LossValue uniform = mlm_loss(tape.constant(Matrix::Constant(4, v, 0.7)), targets);
  CHECK(std::abs(uniform.value.scalar() - std::log(static_cast<double>(v))) < 1e-9);

  Matrix onehot = Matrix::Zero(4, v);
  for (size_t i = 0; i < targets.size(); ++i) onehot(static_cast<Eigen::Index>(i), targets[i]) = 1e6;
  CHECK(mlm_loss(tape.constant(onehot), targets).value.scalar() < 1e-12);

  const LossValue empty = mlm_loss(tape.constant(Matrix::Zero(0, v)), std::vector<int>{});
  CHECK(empty.skipped);
  CHECK(empty.value.scalar() == 0.0);
}

TEST_CASE("MLM loss matches a direct NLL on random 3-way cases") {
  const ParamStore none;
  std::mt19937_64 gen(8);
  std::uniform_int_distribution<int> pick(0, 2);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix logits = random_matrix(5, 3, gen, 3.0);
    std::vector<int> targets(5);
    for (int& t : targets) t = pick(gen);
    double nll = 0.0;
    for (int r = 0; r < 5; ++r) {
      const double z = std::exp(logits(r, 0)) + std::exp(logits(r, 1)) + std::exp(logits(r, 2));
      nll += -std::log(std::exp(logits(r, targets[static_cast<size_t>(r)])) / z);
    }
    Tape tape(none);
    CHECK(std::abs(mlm_loss(tape.constant(logits), targets).value.scalar() - nll / 5.0) < 1e-12);
  }
}

TEST_CASE("decoder output is a 64x64x3 image in (0, 1)") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 9);
  std::mt19937_64 gen(9);
  Tape tape(params);
  std::vector<int> rows(64);
  for (int i = 0; i < 64; ++i) rows[static_cast<size_t>(i)] = i + 2;
  const Matrix img = decode_image(tape.constant(random_matrix(66, 8, gen, 3.0)), rows, mc).value();
  CHECK(img.rows() == 64 * 64);
  CHECK(img.cols() == 3);
  CHECK(img.minCoeff() > 0.0);
  CHECK(img.maxCoeff() < 1.0);
}

TEST_CASE("decoder outweighs the image embedder") {
  const ModelConfig mc = RunConfig{}.model_config();
  const ParamStore params = init_params(mc, 1);
  CHECK(params.scalar_count("decoder.") > params.scalar_count("embedder."));
}

TEST_CASE("RECON loss analytics") {
  const ParamStore none;
  Tape tape(none);
  const ImageTensor x = random_image(10, 0.1, 0.85);
  CHECK(recon_loss(tape.constant(x.pixels()), x).scalar() == 0.0);
  Matrix shifted = x.pixels().array() + 0.1;
  CHECK(std::abs(recon_loss(tape.constant(shifted), x).scalar() - 0.03) < 1e-9);
}

TEST_CASE("RECON loss matches brute-force summation") {
  const ParamStore none;
  for (uint64_t s = 0; s < 20; ++s) {
    const ImageTensor a = random_image(100 + s), b = random_image(200 + s);
    double sse = 0.0;
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        for (int c = 0; c < 3; ++c) sse += (a.at(y, x, c) - b.at(y, x, c)) * (a.at(y, x, c) - b.at(y, x, c));
      }
    }
    Tape tape(none);
    CHECK(std::abs(recon_loss(tape.constant(a.pixels()), b).scalar() - sse / 4096.0) < 1e-12);
  }
}

TEST_CASE("MLM gradients reach only masked text rows; RECON covers every pixel") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 11);
  std::mt19937_64 gen(11);
  {
    ParamStore grads = params.zeros_like();
    Tape tape(params, &grads);
    Var out = tape.input(random_matrix(74, 8, gen));
    const std::vector<int> pos = {2, 5};
    const std::vector<int> targets = {7, 9};
    tape.backward(mlm_loss(mlm_logits(out, pos), targets).value);
    const Matrix g = tape.grad(out);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      if (r == 2 || r == 5) {
        CHECK_FALSE(g.row(r).isZero(0.0));
      } else {
        CHECK(g.row(r).isZero(0.0));
      }
    }
  }
  {
    const ParamStore none;
    ParamStore no_grads;
    Tape tape(none, &no_grads);
    const ImageTensor target = random_image(12);
    Var recon = tape.input(random_image(13).pixels());
    tape.backward(recon_loss(recon, target));
    const Matrix g = tape.grad(recon);
    for (Eigen::Index i = 0; i < g.size(); ++i) REQUIRE(g.data()[i] != 0.0);
  }
}

TEST_CASE("ITM head shape and zero-parameter loss") {
  const ModelConfig mc = tiny_model_config();
  ParamStore params = init_params(mc, 14);
  params.at("itm_head.weight").setZero();
  params.at("itm_head.bias").setZero();
  std::mt19937_64 gen(14);
  Tape tape(params);
  const Var logits = itm_logits(tape.constant(random_matrix(10, 8, gen)));
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 2);
  for (int label : {0, 1}) {
    const Var ce = cross_entropy_sum(logits, std::span<const int>(&label, 1));
    CHECK(std::abs(ce.scalar() - std::log(2.0)) < 1e-12);
  }
}

TEST_CASE("ITM negatives are balanced") {
  // Misaligned fraction over 10K micro-batches of 8: Bernoulli(1/2) mean.
  Rng rng(15);
  size_t misaligned = 0, total = 0;
  for (int b = 0; b < 10000; ++b) {
    const ItmPairing p = sample_itm_pairing(8, rng);
    for (size_t i = 0; i < 8; ++i) {
      if (!p.aligned[i]) {
        CHECK(p.image_source[i] != i);
        ++misaligned;
      } else {
        CHECK(p.image_source[i] == i);
      }
      ++total;
    }
  }
  const double f = static_cast<double>(misaligned) / static_cast<double>(total);
  CHECK(f >= 0.49);
  CHECK(f <= 0.51);
}

TEST_CASE("pairwise head scores") {
  const ModelConfig mc = tiny_model_config();
  ParamStore params = init_params(mc, 16);
  std::mt19937_64 gen(16);
  const Matrix out = random_matrix(10, 8, gen, 4.0);
  {
    Tape tape(params);
    const double s = sigmoid(pairwise_logit(tape.constant(out))).scalar();
    CHECK(s > 0.0);
    CHECK(s < 1.0);
  }
  params.at("pair_head.weight").setZero();
  params.at("pair_head.bias").setZero();
  Tape tape(params);
  CHECK(sigmoid(pairwise_logit(tape.constant(out))).scalar() == 0.5);
}

TEST_CASE("model config validation") {
  ModelConfig mc = tiny_model_config();
  mc.transformer.heads = 3;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_model_config();
  mc.decoder_channels = {8};
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("non-finite activations raise a numeric error") {
  const ModelConfig mc = tiny_model_config();
  const ParamStore params = init_params(mc, 17);
  Matrix x = Matrix::Zero(4, 8);
  x(1, 2) = std::numeric_limits<double>::quiet_NaN();
  Tape tape(params);
  CHECK_THROWS_AS(transformer_forward(tape.constant(x), mc.transformer), NumericError);
}
