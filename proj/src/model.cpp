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

#include "mlim/model.hpp"

#include <cmath>
#include <string>

#include "mlim/error.hpp"

namespace mlim {

namespace {

std::string layer_prefix(int layer) { return "encoder.layer" + std::to_string(layer) + "."; }

Matrix uniform_matrix(int rows, int cols, double bound, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

// Weight uniform in +-1/sqrt(fan_in), zero bias.
void add_dense(ParamStore& params, const std::string& prefix, int in, int out, Rng& rng) {
  params.add(prefix + ".weight", uniform_matrix(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  params.add(prefix + ".bias", Matrix::Zero(1, out));
}

void add_norm(ParamStore& params, const std::string& prefix, int width) {
  params.add(prefix + ".gain", Matrix::Ones(1, width));
  params.add(prefix + ".bias", Matrix::Zero(1, width));
}

Var dense(Var x, const std::string& prefix) {
  Tape& t = *x.tape;
  return add_row(matmul(x, t.param(prefix + ".weight")), t.param(prefix + ".bias"));
}

Var norm(Var x, const std::string& prefix) {
  Tape& t = *x.tape;
  return layer_norm(x, t.param(prefix + ".gain"), t.param(prefix + ".bias"));
}

Var maybe_dropout(Var x, double p, Rng* rng) { return rng != nullptr ? dropout(x, p, *rng) : x; }

Var self_attention(Var x, const std::string& prefix, const TransformerConfig& config, Rng* rng) {
  const int dk = config.d_model / config.heads;
  Var q = dense(x, prefix + "attn.q");
  Var k = dense(x, prefix + "attn.k");
  Var v = dense(x, prefix + "attn.v");
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> heads;
  heads.reserve(static_cast<size_t>(config.heads));
  for (int h = 0; h < config.heads; ++h) {
    Var qh = slice_cols(q, h * dk, dk);
    Var kh = slice_cols(k, h * dk, dk);
    Var vh = slice_cols(v, h * dk, dk);
    Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt_dk));
    heads.push_back(matmul(weights, vh));
  }
  Var context = config.heads == 1 ? heads[0] : concat_cols(heads);
  return maybe_dropout(dense(context, prefix + "attn.out"), config.dropout, rng);
}

Var feed_forward(Var x, const std::string& prefix, const TransformerConfig& config, Rng* rng) {
  Var h = gelu(dense(x, prefix + "ffn.in"));
  return maybe_dropout(dense(h, prefix + "ffn.out"), config.dropout, rng);
}

}  // namespace

void TransformerConfig::validate() const {
  if (layers < 0) throw ConfigError("model.layers must be >= 0");
  if (d_model <= 0 || heads <= 0) throw ConfigError("model.d_model and model.heads must be positive");
  if (d_model % heads != 0) throw ConfigError("model.d_model must be divisible by model.heads");
  if (d_ff <= 0) throw ConfigError("model.d_ff must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
}

void ModelConfig::validate() const {
  transformer.validate();
  embedder.validate();
  if (embedder.d_model() != transformer.d_model) {
    throw ConfigError("image embedder output width must equal model.d_model");
  }
  if (vocab_size <= Vocab::kUnk) throw ConfigError("vocabulary too small");
  if (max_text_len <= 0) throw ConfigError("model.max_text_len must be positive");
  if (decoder_channels.size() + 1 != embedder.stages.size()) {
    throw ConfigError("decoder needs one upsampling stage per embedder stage");
  }
  for (int c : decoder_channels) {
    if (c <= 0) throw ConfigError("decoder channels must be positive");
  }
}

ParamStore init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, Stream::kInit));
  ParamStore params;
  init_embedding_params(params, config.embedder, config.vocab_size, config.max_text_len, rng);

  const int d = config.transformer.d_model;
  for (int l = 0; l < config.transformer.layers; ++l) {
    const std::string p = layer_prefix(l);
    add_norm(params, p + "ln1", d);
    add_dense(params, p + "attn.q", d, d, rng);
    add_dense(params, p + "attn.k", d, d, rng);
    add_dense(params, p + "attn.v", d, d, rng);
    add_dense(params, p + "attn.out", d, d, rng);
    add_norm(params, p + "ln2", d);
    add_dense(params, p + "ffn.in", d, config.transformer.d_ff, rng);
    add_dense(params, p + "ffn.out", config.transformer.d_ff, d, rng);
  }
  add_norm(params, "encoder.final_ln", d);

  add_dense(params, "mlm_head.dense", d, d, rng);
  add_dense(params, "mlm_head.out", d, config.vocab_size, rng);

  int in = d;
  const size_t stages = config.decoder_channels.size() + 1;
  for (size_t s = 0; s < stages; ++s) {
    const int out = s + 1 < stages ? config.decoder_channels[s] : 3;
    const std::string p = "decoder.deconv" + std::to_string(s);
    params.add(p + ".weight", uniform_matrix(in, 4 * out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    params.add(p + ".bias", Matrix::Zero(1, out));
    if (config.decoder_refine && s + 1 < stages) {
      add_dense(params, "decoder.refine" + std::to_string(s), out, out, rng);
    }
    in = out;
  }

  add_dense(params, "itm_head", d, 2, rng);
  add_dense(params, "pair_head", d, 1, rng);
  return params;
}

std::vector<int> AssembledInput::positions(SegmentRole role) const {
  std::vector<int> out;
  for (size_t i = 0; i < roles.size(); ++i) {
    if (roles[i] == role) out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace {

struct Assembler {
  Tape& tape;
  std::vector<Var> parts;
  std::vector<SegmentRole> roles;

  void special(int id, SegmentRole role) {
    parts.push_back(select_rows(tape.param("embed.word"), std::span<const int>(&id, 1)));
    roles.push_back(role);
  }
  void segment(const EmbeddingSequence& seq, SegmentRole role) {
    if (seq.length() == 0) return;
    parts.push_back(seq.vectors);
    roles.insert(roles.end(), static_cast<size_t>(seq.length()), role);
  }
  AssembledInput finish() { return {concat_rows(parts), std::move(roles)}; }
};

}  // namespace

AssembledInput assemble(const EmbeddingSequence& text, const EmbeddingSequence& image, int max_seq) {
  if (text.modality != Modality::kText || image.modality != Modality::kImage) {
    throw ConfigError("assemble expects a text sequence and an image sequence");
  }
  const Eigen::Index length = 2 + text.length() + image.length();
  if (max_seq > 0 && length > max_seq) {
    throw ShapeError("assembled length " + std::to_string(length) + " exceeds max_seq " + std::to_string(max_seq));
  }
  Assembler a{*text.vectors.tape, {}, {}};
  a.special(Vocab::kCls, SegmentRole::kCls);
  a.segment(text, SegmentRole::kTextA);
  a.special(Vocab::kSep, SegmentRole::kSep);
  a.segment(image, SegmentRole::kImageA);
  return a.finish();
}

AssembledInput assemble_pair(Tape& tape, const PairSegments& s) {
  Assembler a{tape, {}, {}};
  a.special(Vocab::kCls, SegmentRole::kCls);
  if (s.text_a) a.segment(*s.text_a, SegmentRole::kTextA);
  a.special(Vocab::kSep, SegmentRole::kSep);
  if (s.image_a) a.segment(*s.image_a, SegmentRole::kImageA);
  a.special(Vocab::kSep, SegmentRole::kSep);
  if (s.text_b) a.segment(*s.text_b, SegmentRole::kTextB);
  a.special(Vocab::kSep, SegmentRole::kSep);
  if (s.image_b) a.segment(*s.image_b, SegmentRole::kImageB);
  return a.finish();
}

Var transformer_forward(Var x, const TransformerConfig& config, Rng* rng) {
  if (!x.value().allFinite()) throw NumericError("non-finite transformer input");
  if (x.cols() != config.d_model) throw ShapeError("transformer input width does not match d_model");
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = layer_prefix(l);
    if (config.pre_norm) {
      x = add(x, self_attention(norm(x, p + "ln1"), p, config, rng));
      x = add(x, feed_forward(norm(x, p + "ln2"), p, config, rng));
    } else {
      x = norm(add(x, self_attention(x, p, config, rng)), p + "ln1");
      x = norm(add(x, feed_forward(x, p, config, rng)), p + "ln2");
    }
  }
  Var out = norm(x, "encoder.final_ln");
  if (!out.value().allFinite()) {
    throw NumericError("non-finite transformer output (" + std::to_string(out.rows()) + " positions, " +
                       std::to_string(config.layers) + " layers)");
  }
  return out;
}

Var transformer_forward(const AssembledInput& input, const TransformerConfig& config, Rng* rng) {
  return transformer_forward(input.vectors, config, rng);
}

Var mlm_logits(Var outputs, std::span<const int> positions) {
  Var picked = select_rows(outputs, positions);
  return dense(gelu(dense(picked, "mlm_head.dense")), "mlm_head.out");
}

LossValue mlm_loss(Var logits, std::span<const int> targets) {
  Tape& t = *logits.tape;
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw ShapeError("mlm_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " logit rows");
  }
  if (targets.empty()) return {t.constant(Matrix::Zero(1, 1)), true};
  return {scale(cross_entropy_sum(logits, targets), 1.0 / static_cast<double>(targets.size())), false};
}

Var decode_image(Var outputs, std::span<const int> image_positions, const ModelConfig& config) {
  const int grid = config.embedder.grid_side();
  if (static_cast<int>(image_positions.size()) != grid * grid) {
    throw ShapeError("decode_image needs exactly " + std::to_string(grid * grid) + " image positions, got " +
                     std::to_string(image_positions.size()));
  }
  Tape& t = *outputs.tape;
  Var h = select_rows(outputs, image_positions);
  int side = grid;
  const size_t stages = config.decoder_channels.size() + 1;
  for (size_t s = 0; s < stages; ++s) {
    const std::string p = "decoder.deconv" + std::to_string(s);
    h = depth_to_space(matmul(h, t.param(p + ".weight")), side);
    side *= 2;
    h = add_row(h, t.param(p + ".bias"));
    if (s + 1 < stages) {
      h = relu(h);
      if (config.decoder_refine) h = relu(dense(h, "decoder.refine" + std::to_string(s)));
    }
  }
  return sigmoid(h);
}

Var recon_loss(Var reconstruction, const ImageTensor& original) {
  const Matrix& target = original.pixels();
  if (reconstruction.rows() != target.rows() || reconstruction.cols() != target.cols()) {
    throw ShapeError("recon_loss: reconstruction and original differ in size");
  }
  return scale(squared_error_sum(reconstruction, target), 1.0 / static_cast<double>(target.rows()));
}

Var itm_logits(Var outputs) {
  const int cls = 0;
  return dense(select_rows(outputs, std::span<const int>(&cls, 1)), "itm_head");
}

Var pairwise_logit(Var outputs) {
  const int cls = 0;
  return dense(select_rows(outputs, std::span<const int>(&cls, 1)), "pair_head");
}

}  // namespace mlim
