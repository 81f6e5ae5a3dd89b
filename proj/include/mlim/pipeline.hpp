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

// Dataset construction from a run config, shared by the CLI and tests.

#ifndef MLIM_PIPELINE_HPP_
#define MLIM_PIPELINE_HPP_

#include <vector>

#include "mlim/config.hpp"
#include "mlim/training.hpp"

namespace mlim {

// Pre-training corpus: loaded from data.corpus_dir when set, otherwise
// sampled in memory from the run seed.
std::vector<Example> pretrain_corpus(const RunConfig& config);

enum class PairSplit { kTrain, kTest };
std::vector<PairExample> pair_specs(const RunConfig& config, PairSplit split);
std::vector<PairItem> pair_dataset(const RunConfig& config, PairSplit split);

// Held-out probe items drawn from a stream disjoint from the corpus.
std::vector<Example> probe_dataset(const RunConfig& config);

}  // namespace mlim

#endif  // MLIM_PIPELINE_HPP_
