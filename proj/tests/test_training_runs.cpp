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

// End-to-end training runs at toy scale (minutes, labelled "slow").

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "mlim/data.hpp"
#include "mlim/eval.hpp"
#include "mlim/pipeline.hpp"
#include "mlim/training.hpp"
#include "test_util.hpp"

using namespace mlim;

namespace {

const std::vector<uint64_t> kSeeds = {1, 2, 3};

RunConfig toy(uint64_t seed) {
  RunConfig c = mlim::testing::small_run_config();
  c.seed = seed;
  c.data.n_items = 2000;
  c.data.pairs_train = 1000;
  c.data.pairs_test = 500;
  c.pretrain = {2000, 16, 8};
  c.finetune = {2000, 16, 8};
  return c;
}

double step_mean(const std::vector<PretrainStats>& log, int64_t step) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : log) {
    if (r.step == step) sum += r.total, ++n;
  }
  REQUIRE(n > 0);
  return sum / n;
}

// Toy-budget (2000-step) pre-training per seed, shared by the cases below.
const PretrainResult& pretrained(uint64_t seed) {
  static std::map<uint64_t, PretrainResult> cache;
  auto it = cache.find(seed);
  if (it == cache.end()) {
    const RunConfig c = toy(seed);
    it = cache.emplace(seed, pretrain(c, pretrain_corpus(c))).first;
  }
  return it->second;
}

double test_pr_auc(const RunConfig& c, const ParamStore& params) {
  const auto test = pair_dataset(c, PairSplit::kTest);
  const auto scores = score_pairs(params, c.model_config(), test, c.threads);
  std::vector<int> labels;
  for (const auto& p : test) labels.push_back(p.label);
  return pr_auc(scores, labels);
}

}  // namespace

TEST_CASE("pre-training lowers the total loss") {
  std::vector<double> early, late;
  for (uint64_t seed : kSeeds) {
    const auto& log = pretrained(seed).log;
    early.push_back(step_mean(log, 9));
    late.push_back(step_mean(log, 499));
    MESSAGE("seed " << seed << ": step 10 " << early.back() << ", step 500 " << late.back());
  }
  CHECK(median(late) < median(early));
}

TEST_CASE("held-out MLM loss falls below the uniform baseline") {
  const double uniform = std::log(static_cast<double>(Vocab::standard().size()));
  std::vector<double> losses;
  for (uint64_t seed : kSeeds) {
    const RunConfig c = toy(seed);
    const auto items = probe_dataset(c);
    const std::vector<double> probs = {0.3};
    const ProbeCurve curve = probe_mlm(pretrained(seed).state.params, c.model_config(), items,
                                       ImageCondition::kOriginal, probs, {seed, 0.5, 1});
    losses.push_back(curve.at(0.3).mean);
  }
  CHECK(median(losses) < uniform);
}

TEST_CASE("an autoencoder overfits one batch at mask probability 0") {
  RunConfig c = mlim::testing::small_run_config();
  c.losses.mlm = 0.0;
  c.masking.policy = MaskingPolicy::kNaive;
  c.masking.naive_prob = 0.0;
  c.model.dropout = 0.0;
  c.optimizer.adam.lr = 3e-3;
  c.pretrain = {2000, 4, 4};
  const auto batch = render_examples(sample_corpus(4, 5));
  const auto result = pretrain(c, batch);
  const double first = result.log.front().recon_loss;
  const double last = result.log.back().recon_loss;

  // Best constant color per image: per-pixel SSE around the channel means.
  double constant = 0.0;
  for (const auto& e : batch) {
    const Matrix px = e.image().pixels();
    const Eigen::RowVectorXd mean = px.colwise().mean();
    constant += (px.rowwise() - mean).rowwise().squaredNorm().mean();
  }
  constant /= static_cast<double>(batch.size());
  MESSAGE("RECON " << first << " -> " << last << ", constant-color baseline " << constant);
  CHECK(last < 0.02 * first);
  CHECK(last < 0.1 * constant);
}

TEST_CASE("image-only fine-tuning classifies above chance") {
  for (uint64_t seed : kSeeds) {
    RunConfig c = toy(seed);
    c.mdo.mode_weights = {0.0, 1.0, 0.0};
    c.finetune.steps = 1000;
    const auto train = pair_dataset(c, PairSplit::kTrain);
    const auto test = pair_dataset(c, PairSplit::kTest);
    const auto result = finetune(c, pretrained(seed).state.params, train);
    size_t correct = 0, positives = 0;
    for (const auto& p : test) {
      Tape tape(result.state.params);
      const double z = build_pair_logit(tape, p, MdoMode::kImageOnly, c.model_config()).scalar();
      correct += static_cast<size_t>((z > 0.0) == (p.label == 1));
      positives += static_cast<size_t>(p.label);
    }
    const double n = static_cast<double>(test.size());
    const double majority = std::max(positives, test.size() - positives) / n;
    const double accuracy = static_cast<double>(correct) / n;
    MESSAGE("seed " << seed << ": image-only accuracy " << accuracy << ", majority rate " << majority);
    CHECK(accuracy > majority + 2.0 * std::sqrt(majority * (1.0 - majority) / n));
  }
}

TEST_CASE("modality dropout does not hurt fine-tuning") {
  int wins = 0;
  for (uint64_t seed : kSeeds) {
    RunConfig with = toy(seed);
    RunConfig without = with;
    without.mdo.enabled = false;
    const auto train = pair_dataset(with, PairSplit::kTrain);
    const ParamStore& base = pretrained(seed).state.params;
    const double a = test_pr_auc(with, finetune(with, base, train).state.params);
    const double b = test_pr_auc(without, finetune(without, base, train).state.params);
    MESSAGE("seed " << seed << ": PR-AUC with MDO " << a << ", without " << b);
    wins += a >= b ? 1 : 0;
  }
  CHECK(wins >= 2);
}
