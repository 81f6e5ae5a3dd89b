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

#include "mlim/training.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <thread>

#include "mlim/error.hpp"

namespace mlim {

std::vector<Example> render_examples(const std::vector<CorpusItem>& items, int side) {
  std::vector<Example> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back({item.tokens, render_scene_bytes(item.spec, side), side});
  return out;
}

std::vector<Example> load_examples(const std::filesystem::path& corpus_dir) {
  const auto items = load_manifest(corpus_dir);
  std::vector<Example> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const ImageTensor img = load_image(corpus_dir / item.image);
    if (img.height() != img.width()) throw FormatError("corpus image " + item.image + " is not square");
    out.push_back({item.tokens, to_bytes(img), img.height()});
  }
  return out;
}

std::vector<PairItem> render_pairs(const std::vector<PairExample>& pairs, int side) {
  std::vector<PairItem> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    out.push_back({{p.a.tokens, render_scene_bytes(p.a.spec, side), side},
                   {p.b.tokens, render_scene_bytes(p.b.spec, side), side},
                   p.label});
  }
  return out;
}

void parallel_chunks(size_t n, int threads, const std::function<void(size_t, size_t, size_t)>& fn) {
  const size_t t = std::max<size_t>(1, static_cast<size_t>(threads));
  if (t == 1 || n < 2) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(t);
  std::vector<std::thread> workers;
  auto run = [&](size_t c) {
    const size_t begin = n * c / t;
    const size_t end = n * (c + 1) / t;
    try {
      fn(c, begin, end);
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  for (size_t c = 1; c < t; ++c) workers.emplace_back(run, c);
  run(0);
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------

PretrainGraph build_pretrain_graph(Tape& tape, std::span<const int> tokens, const ImageTensor& image,
                                   const MaskPlan& plan, const ModelConfig& config, const GraphRequest& request,
                                   Rng* dropout_rng) {
  const EmbeddingSequence text = embed_text(tape, tokens);
  const EmbeddingSequence img = embed_image(tape, image, config.embedder);
  const MaskedInputs masked = apply_masking(text, img, plan, tokens);
  const EmbeddingSequence text_in = add_positions(masked.text);
  const EmbeddingSequence image_in = add_positions(masked.image);

  PretrainGraph g{assemble(text_in, image_in), {}, {}, 0, {}, {}};
  g.outputs = transformer_forward(g.input, config.transformer, dropout_rng);

  if (request.mlm && !masked.mlm_positions.empty()) {
    const std::vector<int> text_rows = g.input.positions(SegmentRole::kTextA);
    std::vector<int> rows;
    rows.reserve(masked.mlm_positions.size());
    for (int p : masked.mlm_positions) rows.push_back(text_rows[static_cast<size_t>(p)]);
    g.mlm_nll_sum = cross_entropy_sum(mlm_logits(g.outputs, rows), masked.mlm_targets);
    g.mlm_count = rows.size();
  }
  if (request.recon) {
    const Var recon = decode_image(g.outputs, g.input.positions(SegmentRole::kImageA), config);
    g.recon = recon_loss(recon, image);
  }
  if (request.itm) g.itm_logits = itm_logits(g.outputs);
  return g;
}

Var build_pair_logit(Tape& tape, const PairItem& pair, MdoMode mode, const ModelConfig& config,
                     Rng* dropout_rng) {
  auto text = [&](const Example& e) { return add_positions(embed_text(tape, e.tokens)); };
  auto image = [&](const Example& e) { return add_positions(embed_image(tape, e.image(), config.embedder)); };
  PairSegments segments;
  segments.text_a = text(pair.a);
  segments.text_b = text(pair.b);
  if (mode != MdoMode::kTextOnly) {
    segments.image_a = image(pair.a);
    segments.image_b = image(pair.b);
  }
  const AssembledInput input = assemble_pair(tape, apply_mdo(std::move(segments), mode));
  return pairwise_logit(transformer_forward(input, config.transformer, dropout_rng));
}

// ---------------------------------------------------------------------------

namespace {

uint64_t item_dropout_seed(uint64_t seed, int64_t step, size_t index) {
  return derive_seed(derive_seed(seed, static_cast<uint64_t>(Stream::kDropout), static_cast<uint64_t>(step)),
                     index);
}

void check_batch(size_t batch, const TrainConfig& t, const char* what) {
  if (batch == 0 || batch % t.micro_batch_size != 0) {
    throw ConfigError(std::string(what) + " batch of " + std::to_string(batch) +
                      " items is not a multiple of the micro-batch size");
  }
}

void apply_update(TrainState& state, ParamStore& grads, const RunConfig& config) {
  if (!grads.all_finite()) {
    throw NumericError("non-finite gradient at step " + std::to_string(state.step));
  }
  clip_global_norm(grads, config.optimizer.clip_norm);
  adam_update(state.params, grads, state.optimizer, config.optimizer.adam);
  state.step += 1;
}

}  // namespace

TrainState make_pretrain_state(const RunConfig& config) {
  TrainState state;
  state.params = init_params(config.model_config(), config.seed);
  state.optimizer = make_adam_state(state.params);
  return state;
}

bool is_finetune_trainable(const std::string& name) { return !name.starts_with("decoder."); }

TrainState make_finetune_state(const ParamStore& pretrained) {
  TrainState state;
  state.params = pretrained;
  state.optimizer = make_adam_state(pretrained.zeros_like(is_finetune_trainable));
  return state;
}

ItmPairing sample_itm_pairing(size_t n, Rng& rng) {
  if (n < 2) throw ConfigError("ITM in-batch shuffling needs at least 2 items per micro-batch");
  ItmPairing p;
  p.image_source.resize(n);
  std::iota(p.image_source.begin(), p.image_source.end(), size_t{0});
  p.aligned.assign(n, 1);
  for (size_t i = 0; i < n; ++i) {
    if (rng.bernoulli(0.5)) {
      size_t j = rng.below(n - 1);
      if (j >= i) ++j;
      p.image_source[i] = j;
      p.aligned[i] = 0;
    }
  }
  return p;
}

std::vector<PretrainStats> pretrain_step(std::span<const Example* const> batch, TrainState& state,
                                         const RunConfig& config, PretrainRngs& rngs) {
  check_batch(batch.size(), config.pretrain, "pretrain");
  const ModelConfig mc = config.model_config();
  const int grid_len = mc.embedder.grid_length();
  const size_t micro = config.pretrain.micro_batch_size;
  const size_t n_micro = batch.size() / micro;
  const GraphRequest request{config.losses.mlm > 0, config.losses.recon > 0, config.losses.itm > 0};
  const double dropout = mc.transformer.dropout;
  const int threads = std::max(1, config.threads);

  ParamStore grads = state.optimizer.m.zeros_like();
  std::vector<ParamStore> chunk_grads(static_cast<size_t>(threads));
  std::vector<PretrainStats> rows;

  for (size_t mb = 0; mb < n_micro; ++mb) {
    const auto items = batch.subspan(mb * micro, micro);
    const size_t n = items.size();

    PretrainStats stats;
    stats.step = state.step;
    std::vector<MaskPlan> plans;
    plans.reserve(n);
    if (config.masking.policy == MaskingPolicy::kMam) {
      stats.mode = sample_mode(rngs.masking, config.mam);
      for (const Example* e : items) plans.push_back(make_plan(*stats.mode, e->tokens, grid_len, rngs.masking, config.mam));
    } else {
      const double p = config.masking.naive_prob;
      for (const Example* e : items) plans.push_back(make_bernoulli_plan(p, p, e->tokens, grid_len, rngs.masking));
    }

    std::vector<size_t> image_source(n);
    std::iota(image_source.begin(), image_source.end(), size_t{0});
    std::vector<int> aligned(n, 1);
    if (request.itm) {
      const ItmPairing pairing = sample_itm_pairing(n, rngs.itm);
      image_source = pairing.image_source;
      aligned = pairing.aligned;
    }

    // MLM and RECON are computed on aligned items only.
    size_t mlm_total = 0;
    size_t recon_items = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!aligned[i]) continue;
      mlm_total += plans[i].text_masked();
      ++recon_items;
    }

    std::vector<double> mlm_sums(n, 0.0), recons(n, 0.0), itms(n, 0.0);
    for (auto& g : chunk_grads) g = state.optimizer.m.zeros_like();

    parallel_chunks(n, threads, [&](size_t chunk, size_t begin, size_t end) {
      ParamStore& g = chunk_grads[chunk];
      for (size_t i = begin; i < end; ++i) {
        Tape tape(state.params, &g);
        Rng drop(item_dropout_seed(config.seed, state.step, mb * micro + i));
        const ImageTensor image = items[image_source[i]]->image();
        GraphRequest req = request;
        req.mlm = request.mlm && aligned[i];
        req.recon = request.recon && aligned[i];
        const PretrainGraph graph =
            build_pretrain_graph(tape, items[i]->tokens, image, plans[i], mc, req, dropout > 0 ? &drop : nullptr);

        std::vector<Var> terms;
        if (graph.mlm_nll_sum) {
          mlm_sums[i] = graph.mlm_nll_sum->scalar();
          terms.push_back(scale(*graph.mlm_nll_sum, config.losses.mlm / static_cast<double>(mlm_total)));
        }
        if (graph.recon) {
          recons[i] = graph.recon->scalar();
          terms.push_back(scale(*graph.recon, config.losses.recon / static_cast<double>(recon_items)));
        }
        if (graph.itm_logits) {
          const int label = aligned[i];
          const Var ce = cross_entropy_sum(*graph.itm_logits, std::span<const int>(&label, 1));
          itms[i] = ce.scalar();
          terms.push_back(scale(ce, config.losses.itm / static_cast<double>(n)));
        }
        if (terms.empty()) continue;
        Var total = terms[0];
        for (size_t k = 1; k < terms.size(); ++k) total = add(total, terms[k]);
        if (!std::isfinite(total.scalar())) {
          throw NumericError("non-finite pre-train loss at step " + std::to_string(state.step));
        }
        tape.backward(total);
      }
    });
    for (const auto& g : chunk_grads) grads.add_scaled(g, 1.0 / static_cast<double>(n_micro));

    stats.mlm_skipped = !request.mlm || mlm_total == 0;
    if (!stats.mlm_skipped) {
      stats.mlm_loss = std::accumulate(mlm_sums.begin(), mlm_sums.end(), 0.0) / static_cast<double>(mlm_total);
    }
    if (request.recon && recon_items > 0) {
      stats.recon_loss = std::accumulate(recons.begin(), recons.end(), 0.0) / static_cast<double>(recon_items);
    }
    if (request.itm) stats.itm_loss = std::accumulate(itms.begin(), itms.end(), 0.0) / static_cast<double>(n);
    stats.total = config.losses.mlm * stats.mlm_loss + config.losses.recon * stats.recon_loss +
                  config.losses.itm * stats.itm_loss;
    rows.push_back(stats);
  }

  apply_update(state, grads, config);
  return rows;
}

std::vector<FinetuneStats> finetune_step(std::span<const PairItem* const> batch, TrainState& state,
                                         const RunConfig& config, Rng& mdo_rng) {
  check_batch(batch.size(), config.finetune, "finetune");
  const ModelConfig mc = config.model_config();
  const size_t micro = config.finetune.micro_batch_size;
  const size_t n_micro = batch.size() / micro;
  const double dropout = mc.transformer.dropout;
  const int threads = std::max(1, config.threads);

  ParamStore grads = state.optimizer.m.zeros_like();
  std::vector<ParamStore> chunk_grads(static_cast<size_t>(threads));
  std::vector<FinetuneStats> rows;

  for (size_t mb = 0; mb < n_micro; ++mb) {
    const auto items = batch.subspan(mb * micro, micro);
    const size_t n = items.size();
    FinetuneStats stats;
    stats.step = state.step;
    stats.mode = config.mdo.enabled ? sample_mdo_mode(mdo_rng, config.mdo) : MdoMode::kImageText;

    std::vector<double> losses(n, 0.0);
    for (auto& g : chunk_grads) g = state.optimizer.m.zeros_like();
    parallel_chunks(n, threads, [&](size_t chunk, size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        Tape tape(state.params, &chunk_grads[chunk]);
        Rng drop(item_dropout_seed(config.seed, state.step, mb * micro + i));
        const Var logit = build_pair_logit(tape, *items[i], stats.mode, mc, dropout > 0 ? &drop : nullptr);
        const Var bce = bce_with_logits(logit, static_cast<double>(items[i]->label));
        losses[i] = bce.scalar();
        if (!std::isfinite(losses[i])) {
          throw NumericError("non-finite fine-tune loss at step " + std::to_string(state.step));
        }
        tape.backward(scale(bce, 1.0 / static_cast<double>(n)));
      }
    });
    for (const auto& g : chunk_grads) grads.add_scaled(g, 1.0 / static_cast<double>(n_micro));
    stats.loss = std::accumulate(losses.begin(), losses.end(), 0.0) / static_cast<double>(n);
    rows.push_back(stats);
  }

  apply_update(state, grads, config);
  return rows;
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(size_t n, uint64_t seed) : order_(n), cursor_(n), rng_(seed) {
  if (n == 0) throw ConfigError("cannot sample batches from an empty dataset");
  std::iota(order_.begin(), order_.end(), size_t{0});
}

std::vector<size_t> BatchSampler::next(size_t batch_size) {
  std::vector<size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (cursor_ == order_.size()) {
      rng_.shuffle(std::span<size_t>(order_));
      cursor_ = 0;
    }
    out.push_back(order_[cursor_++]);
  }
  return out;
}

PretrainResult pretrain(const RunConfig& config, const std::vector<Example>& corpus, const StepCallback& on_step) {
  config.validate();
  PretrainResult result{make_pretrain_state(config), {}};
  BatchSampler sampler(corpus.size(), derive_seed(config.seed, Stream::kDataOrder));
  PretrainRngs rngs(config.seed);
  std::vector<const Example*> batch;
  for (int64_t s = 0; s < config.pretrain.steps; ++s) {
    batch.clear();
    for (size_t i : sampler.next(config.pretrain.batch_size)) batch.push_back(&corpus[i]);
    auto rows = pretrain_step(batch, result.state, config, rngs);
    result.log.insert(result.log.end(), rows.begin(), rows.end());
    if (on_step) on_step(result.state);
  }
  return result;
}

FinetuneResult finetune(const RunConfig& config, const ParamStore& pretrained, const std::vector<PairItem>& pairs,
                        const StepCallback& on_step) {
  config.validate();
  FinetuneResult result{make_finetune_state(pretrained), {}};
  BatchSampler sampler(pairs.size(), derive_seed(config.seed, static_cast<uint64_t>(Stream::kDataOrder), 1));
  Rng mdo_rng(derive_seed(config.seed, Stream::kMdo));
  std::vector<const PairItem*> batch;
  for (int64_t s = 0; s < config.finetune.steps; ++s) {
    batch.clear();
    for (size_t i : sampler.next(config.finetune.batch_size)) batch.push_back(&pairs[i]);
    auto rows = finetune_step(batch, result.state, config, mdo_rng);
    result.log.insert(result.log.end(), rows.begin(), rows.end());
    if (on_step) on_step(result.state);
  }
  return result;
}

std::vector<double> score_pairs(const ParamStore& params, const ModelConfig& config,
                                const std::vector<PairItem>& pairs, int threads) {
  std::vector<double> scores(pairs.size());
  parallel_chunks(pairs.size(), threads, [&](size_t, size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      Tape tape(params);
      const double z = build_pair_logit(tape, pairs[i], MdoMode::kImageText, config).scalar();
      scores[i] = 1.0 / (1.0 + std::exp(-z));
    }
  });
  return scores;
}

void write_pretrain_log(const std::vector<PretrainStats>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write training log " + path.string());
  out.precision(17);
  out << "step,mode,mlm_loss,recon_loss,total\n";
  for (const auto& r : log) {
    out << r.step << ',' << (r.mode ? name_of(*r.mode) : std::string_view("naive")) << ',';
    if (r.mlm_skipped) {
      out << "";
    } else {
      out << r.mlm_loss;
    }
    out << ',' << r.recon_loss << ',' << r.total << '\n';
  }
}

void write_finetune_log(const std::vector<FinetuneStats>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write training log " + path.string());
  out.precision(17);
  out << "step,mdo_mode,loss\n";
  for (const auto& r : log) out << r.step << ',' << name_of(r.mode) << ',' << r.loss << '\n';
}

}  // namespace mlim
