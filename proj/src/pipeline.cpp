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

#include "mlim/pipeline.hpp"

namespace mlim {

std::vector<Example> pretrain_corpus(const RunConfig& config) {
  if (!config.data.corpus_dir.empty()) return load_examples(config.data.corpus_dir);
  return render_examples(sample_corpus(config.data.n_items, config.seed, config.data.image_side),
                         config.data.image_side);
}

std::vector<PairExample> pair_specs(const RunConfig& config, PairSplit split) {
  const size_t n = split == PairSplit::kTrain ? config.data.pairs_train : config.data.pairs_test;
  const uint64_t seed = derive_seed(config.seed, static_cast<uint64_t>(Stream::kPairs),
                                    split == PairSplit::kTrain ? 0 : 1);
  return generate_pairs(n, seed, config.data.match_fraction, config.data.image_side);
}

std::vector<PairItem> pair_dataset(const RunConfig& config, PairSplit split) {
  return render_pairs(pair_specs(config, split), config.data.image_side);
}

std::vector<Example> probe_dataset(const RunConfig& config) {
  return render_examples(
      sample_corpus(config.probe.eval_items, derive_seed(config.seed, Stream::kProbe), config.data.image_side),
      config.data.image_side);
}

}  // namespace mlim
