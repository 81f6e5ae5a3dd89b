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

#include "mlim/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mlim/error.hpp"

namespace mlim {

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("pr_auc: scores and labels differ in length");
  size_t positives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ConfigError("pr_auc: labels must be 0 or 1");
    positives += static_cast<size_t>(l);
  }
  if (positives == 0 || positives == labels.size()) {
    throw ConfigError("pr_auc needs at least one positive and one negative label");
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double prev_recall = 0.0;
  size_t tp = 0;
  size_t seen = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += static_cast<size_t>(labels[order[j]]);
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

std::string_view name_of(ImageCondition c) {
  switch (c) {
    case ImageCondition::kOriginal:
      return "original";
    case ImageCondition::kRandomImage:
      return "random_image";
    case ImageCondition::kGrayImage:
      return "gray_image";
  }
  return "?";
}

std::string_view name_of(TextCondition c) {
  switch (c) {
    case TextCondition::kOriginal:
      return "original";
    case TextCondition::kRandomText:
      return "random_text";
    case TextCondition::kEmptyText:
      return "empty_text";
  }
  return "?";
}

const ProbePoint& ProbeCurve::at(double mask_prob) const {
  for (const auto& p : points) {
    if (std::abs(p.mask_prob - mask_prob) < 1e-12) return p;
  }
  throw ConfigError("probe curve " + task + "/" + condition + " has no point at mask probability " +
                    std::to_string(mask_prob));
}

namespace {

// Uniform over the other items; fixed per (seed, item).
size_t partner_of(size_t n, size_t item, uint64_t seed) {
  if (n < 2) return item;
  Rng rng(derive_seed(derive_seed(seed, static_cast<uint64_t>(Stream::kProbe), 0), item));
  size_t j = rng.below(n - 1);
  if (j >= item) ++j;
  return j;
}

uint64_t plan_seed(uint64_t seed, size_t point, size_t item) {
  return derive_seed(derive_seed(seed, static_cast<uint64_t>(Stream::kProbe), point + 1), item);
}

ProbePoint summarize(double mask_prob, const std::vector<double>& values) {
  ProbePoint p;
  p.mask_prob = mask_prob;
  p.n = values.size();
  if (values.empty()) return p;
  p.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - p.mean) * (v - p.mean);
  p.std = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
  return p;
}

void require_dataset(const std::vector<Example>& dataset) {
  if (dataset.empty()) throw ConfigError("probe dataset is empty");
}

}  // namespace

ProbeInput mlm_probe_input(const std::vector<Example>& dataset, size_t item, size_t point, double mask_prob,
                           ImageCondition condition, const ModelConfig& config, const ProbeOptions& options) {
  const Example& e = dataset.at(item);
  Rng rng(plan_seed(options.seed, point, item));
  ProbeInput in{e.tokens, make_fixed_count_plan(mask_prob, 0.0, e.tokens, config.embedder.grid_length(), rng), {}};
  switch (condition) {
    case ImageCondition::kOriginal:
      in.image = e.image();
      break;
    case ImageCondition::kRandomImage:
      in.image = dataset[partner_of(dataset.size(), item, options.seed)].image();
      break;
    case ImageCondition::kGrayImage:
      in.image = ImageTensor(config.embedder.image_side, config.embedder.image_side, options.gray_level);
      break;
  }
  return in;
}

ProbeInput recon_probe_input(const std::vector<Example>& dataset, size_t item, size_t point, double mask_prob,
                             TextCondition condition, const ModelConfig& config, const ProbeOptions& options) {
  const Example& e = dataset.at(item);
  Rng rng(plan_seed(options.seed, point, item));
  ProbeInput in{{}, make_fixed_count_plan(0.0, mask_prob, e.tokens, config.embedder.grid_length(), rng), e.image()};
  switch (condition) {
    case TextCondition::kOriginal:
      in.tokens = e.tokens;
      break;
    case TextCondition::kRandomText:
      in.tokens = dataset[partner_of(dataset.size(), item, options.seed)].tokens;
      break;
    case TextCondition::kEmptyText:
      break;
  }
  in.plan.text_mask.assign(in.tokens.size(), false);
  return in;
}

ProbeCurve probe_mlm(const ParamStore& params, const ModelConfig& config, const std::vector<Example>& dataset,
                     ImageCondition condition, std::span<const double> mask_probs, const ProbeOptions& options) {
  require_dataset(dataset);
  ProbeCurve curve{"mlm", std::string(name_of(condition)), {}};
  for (size_t k = 0; k < mask_probs.size(); ++k) {
    std::vector<double> losses(dataset.size(), 0.0);
    std::vector<char> valid(dataset.size(), 0);
    parallel_chunks(dataset.size(), options.threads, [&](size_t, size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        const ProbeInput in = mlm_probe_input(dataset, i, k, mask_probs[k], condition, config, options);
        if (in.plan.text_masked() == 0) continue;
        Tape tape(params);
        const PretrainGraph g = build_pretrain_graph(tape, in.tokens, in.image, in.plan, config, {true, false, false});
        losses[i] = g.mlm_nll_sum->scalar() / static_cast<double>(g.mlm_count);
        valid[i] = 1;
      }
    });
    std::vector<double> kept;
    for (size_t i = 0; i < dataset.size(); ++i) {
      if (valid[i]) kept.push_back(losses[i]);
    }
    if (kept.empty()) continue;  // nothing masked at this probability
    curve.points.push_back(summarize(mask_probs[k], kept));
  }
  return curve;
}

ProbeCurve probe_recon(const ParamStore& params, const ModelConfig& config, const std::vector<Example>& dataset,
                       TextCondition condition, std::span<const double> mask_probs, const ProbeOptions& options) {
  require_dataset(dataset);
  ProbeCurve curve{"recon", std::string(name_of(condition)), {}};
  for (size_t k = 0; k < mask_probs.size(); ++k) {
    std::vector<double> losses(dataset.size(), 0.0);
    parallel_chunks(dataset.size(), options.threads, [&](size_t, size_t begin, size_t end) {
      for (size_t i = begin; i < end; ++i) {
        const ProbeInput in = recon_probe_input(dataset, i, k, mask_probs[k], condition, config, options);
        Tape tape(params);
        const PretrainGraph g = build_pretrain_graph(tape, in.tokens, in.image, in.plan, config, {false, true, false});
        losses[i] = g.recon->scalar();
      }
    });
    curve.points.push_back(summarize(mask_probs[k], losses));
  }
  return curve;
}

std::vector<ProbeCurve> run_probes(const ParamStore& params, const ModelConfig& config,
                                   const std::vector<Example>& dataset, std::span<const double> mask_probs,
                                   const ProbeOptions& options) {
  std::vector<ProbeCurve> curves;
  for (auto c : {ImageCondition::kOriginal, ImageCondition::kRandomImage, ImageCondition::kGrayImage}) {
    curves.push_back(probe_mlm(params, config, dataset, c, mask_probs, options));
  }
  for (auto c : {TextCondition::kOriginal, TextCondition::kRandomText, TextCondition::kEmptyText}) {
    curves.push_back(probe_recon(params, config, dataset, c, mask_probs, options));
  }
  return curves;
}

ProbeAsymmetry probe_asymmetry(const std::vector<ProbeCurve>& curves) {
  auto find = [&](std::string_view task, std::string_view cond) -> const ProbeCurve& {
    for (const auto& c : curves) {
      if (c.task == task && c.condition == cond) return c;
    }
    throw ConfigError("missing probe curve " + std::string(task) + "/" + std::string(cond));
  };
  auto degradation = [&](const ProbeCurve& base, const ProbeCurve& other) {
    double total = 0.0;
    size_t n = 0;
    for (const auto& p : base.points) {
      if (p.mean <= 0.0) continue;
      total += (other.at(p.mask_prob).mean - p.mean) / p.mean;
      ++n;
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
  };
  return {degradation(find("recon", "original"), find("recon", "random_text")),
          degradation(find("mlm", "original"), find("mlm", "random_image"))};
}

// ---------------------------------------------------------------------------

double median(std::vector<double> values) {
  if (values.empty()) throw ConfigError("median of no values");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string pretrain_cache_key(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  os << c.seed << '|' << c.losses.mlm << '|' << c.losses.recon << '|' << c.losses.itm << '|'
     << (c.masking.policy == MaskingPolicy::kMam ? "mam" : "naive") << '|' << c.masking.naive_prob << '|'
     << c.pretrain.steps;
  return os.str();
}

namespace {

uint64_t data_order_hash(const RunConfig& c, size_t corpus_size, size_t pair_count) {
  uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](uint64_t v) {
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xFF;
      h *= 0x100000001B3ULL;
    }
  };
  BatchSampler pre(corpus_size, derive_seed(c.seed, Stream::kDataOrder));
  for (int64_t s = 0; s < c.pretrain.steps; ++s) {
    for (size_t i : pre.next(c.pretrain.batch_size)) mix(i);
  }
  BatchSampler fine(pair_count, derive_seed(c.seed, static_cast<uint64_t>(Stream::kDataOrder), 1));
  for (int64_t s = 0; s < c.finetune.steps; ++s) {
    for (size_t i : fine.next(c.finetune.batch_size)) mix(i);
  }
  return h;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& base, std::span<const AblationVariant> variants,
                                      std::span<const uint64_t> seeds, const AblationData& data,
                                      PretrainCache* cache, const AblationProgress& progress) {
  if (variants.empty() || seeds.empty()) throw ConfigError("ablation needs at least one variant and one seed");
  for (const auto& v : variants) v.validate();
  PretrainCache local;
  PretrainCache& store = cache != nullptr ? *cache : local;
  std::vector<int> test_labels;
  for (const auto& p : data.test_pairs) test_labels.push_back(p.label);

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    std::vector<double> aucs;
    for (uint64_t seed : seeds) {
      RunConfig cfg = base.with_variant(variant);
      cfg.seed = seed;
      cfg.validate();
      const ModelConfig mc = cfg.model_config();

      const std::string key = pretrain_cache_key(cfg);
      auto it = store.find(key);
      if (it == store.end()) {
        it = store.emplace(key, pretrain(cfg, data.corpus).state.params).first;
      }
      const FinetuneResult tuned = finetune(cfg, it->second, data.train_pairs);
      const auto scores = score_pairs(tuned.state.params, mc, data.test_pairs, cfg.threads);

      AblationRow row;
      row.variant = variant.name;
      row.seed = seed;
      row.pr_auc = pr_auc(scores, test_labels);
      row.init_hash = init_params(mc, seed).fingerprint();
      row.data_hash = data_order_hash(cfg, data.corpus.size(), data.train_pairs.size());
      aucs.push_back(row.pr_auc);
      if (progress) progress(variant.name, seed, row.pr_auc);
      rows.push_back(row);
    }
    AblationRow med;
    med.variant = variant.name;
    med.pr_auc = median(aucs);
    rows.push_back(med);
  }
  return rows;
}

}  // namespace mlim
