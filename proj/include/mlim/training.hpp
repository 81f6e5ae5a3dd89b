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

// Pre-training (MLM + RECON [+ ITM] under MAM or naive masking) and pair
// fine-tuning (BCE under modality dropout).

#ifndef MLIM_TRAINING_HPP_
#define MLIM_TRAINING_HPP_

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlim/config.hpp"
#include "mlim/data.hpp"
#include "mlim/masking.hpp"
#include "mlim/model.hpp"
#include "mlim/optim.hpp"

namespace mlim {

// One caption with its image kept as raw RGB bytes.
struct Example {
  TokenSequence tokens;
  std::vector<uint8_t> rgb;
  int side = kImageSide;

  ImageTensor image() const { return ImageTensor::from_bytes(side, side, rgb); }
};

std::vector<Example> render_examples(const std::vector<CorpusItem>& items, int side = kImageSide);
// Reads manifest.jsonl and the referenced PPM files.
std::vector<Example> load_examples(const std::filesystem::path& corpus_dir);

struct PairItem {
  Example a;
  Example b;
  int label = 0;
};

std::vector<PairItem> render_pairs(const std::vector<PairExample>& pairs, int side = kImageSide);

// ---------------------------------------------------------------------------
// Single-item graphs, shared by training and evaluation.

struct PretrainGraph {
  AssembledInput input;
  Var outputs;
  std::optional<Var> mlm_nll_sum;  // present when at least one token is masked
  size_t mlm_count = 0;
  std::optional<Var> recon;        // per-image RECON loss
  std::optional<Var> itm_logits;
};

struct GraphRequest {
  bool mlm = true;
  bool recon = true;
  bool itm = false;
};

// embed -> mask -> add positions -> assemble -> encoder -> heads.
PretrainGraph build_pretrain_graph(Tape& tape, std::span<const int> tokens, const ImageTensor& image,
                                   const MaskPlan& plan, const ModelConfig& config, const GraphRequest& request,
                                   Rng* dropout_rng = nullptr);

// Pair input under an MDO mode; returns the 1x1 match logit. No masking.
Var build_pair_logit(Tape& tape, const PairItem& pair, MdoMode mode, const ModelConfig& config,
                     Rng* dropout_rng = nullptr);

// ---------------------------------------------------------------------------

struct TrainState {
  ParamStore params;
  AdamState optimizer;
  int64_t step = 0;
};

struct PretrainStats {
  int64_t step = 0;
  std::optional<MaskMode> mode;  // empty under naive masking
  double mlm_loss = 0.0;
  bool mlm_skipped = false;
  double recon_loss = 0.0;
  double itm_loss = 0.0;
  double total = 0.0;
};

struct PretrainRngs {
  Rng masking;
  Rng itm;

  explicit PretrainRngs(uint64_t seed)
      : masking(derive_seed(seed, Stream::kMasking)), itm(derive_seed(seed, Stream::kItm)) {}
};

// ITM negatives: each item independently gets, with probability 1/2, the
// image of another item of the micro-batch.
struct ItmPairing {
  std::vector<size_t> image_source;
  std::vector<int> aligned;  // 1 when the item keeps its own image
};
ItmPairing sample_itm_pairing(size_t n, Rng& rng);

// One optimizer step over `batch`, split into micro-batches that each draw
// their own masking mode. Returns one stats row per micro-batch.
std::vector<PretrainStats> pretrain_step(std::span<const Example* const> batch, TrainState& state,
                                         const RunConfig& config, PretrainRngs& rngs);

struct FinetuneStats {
  int64_t step = 0;
  MdoMode mode = MdoMode::kImageText;
  double loss = 0.0;
};

// One optimizer step of pair fine-tuning. The decoder is never evaluated and
// is absent from state.optimizer; no mask plan is constructed.
std::vector<FinetuneStats> finetune_step(std::span<const PairItem* const> batch, TrainState& state,
                                         const RunConfig& config, Rng& mdo_rng);

// Fresh state: init_params(config.seed) and Adam over every parameter.
TrainState make_pretrain_state(const RunConfig& config);
// Fine-tune state from pre-trained parameters: decoder.* excluded from the
// optimizer.
TrainState make_finetune_state(const ParamStore& pretrained);
bool is_finetune_trainable(const std::string& name);

using StepCallback = std::function<void(const TrainState&)>;

struct PretrainResult {
  TrainState state;
  std::vector<PretrainStats> log;
};

// Runs config.pretrain.steps steps over a shuffled stream of the corpus.
// on_step (optional) is invoked after every optimizer step. A non-finite
// loss aborts with NumericError naming the failing step.
PretrainResult pretrain(const RunConfig& config, const std::vector<Example>& corpus,
                        const StepCallback& on_step = {});

struct FinetuneResult {
  TrainState state;
  std::vector<FinetuneStats> log;
};

FinetuneResult finetune(const RunConfig& config, const ParamStore& pretrained, const std::vector<PairItem>& pairs,
                        const StepCallback& on_step = {});

// Match scores sigmoid(logit) with both modalities present.
std::vector<double> score_pairs(const ParamStore& params, const ModelConfig& config,
                                const std::vector<PairItem>& pairs, int threads = 1);

// Stream of batch indices: consecutive reshuffled epochs of [0, n).
class BatchSampler {
 public:
  BatchSampler(size_t n, uint64_t seed);
  std::vector<size_t> next(size_t batch_size);

 private:
  std::vector<size_t> order_;
  size_t cursor_ = 0;
  Rng rng_;
};

// Writes step,mode,mlm_loss,recon_loss,total.
void write_pretrain_log(const std::vector<PretrainStats>& log, const std::filesystem::path& path);
void write_finetune_log(const std::vector<FinetuneStats>& log, const std::filesystem::path& path);

// Splits [0, n) into `threads` contiguous chunks and runs fn(chunk, begin,
// end) for each, concurrently when threads > 1.
void parallel_chunks(size_t n, int threads, const std::function<void(size_t, size_t, size_t)>& fn);

}  // namespace mlim

#endif  // MLIM_TRAINING_HPP_
