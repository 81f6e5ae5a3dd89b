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

// mlim: data generation, pre-training, fine-tuning, probes and ablations.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mlim/checkpoint.hpp"
#include "mlim/config.hpp"
#include "mlim/error.hpp"
#include "mlim/eval.hpp"
#include "mlim/pipeline.hpp"
#include "mlim/report.hpp"

namespace fs = std::filesystem;
using namespace mlim;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonArgs {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
  std::string out = "runs";
  std::string checkpoint;
  std::string data;
};

void log(const std::string& msg) { std::cerr << "[mlim] " << msg << '\n'; }

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig config = args.config.empty() ? RunConfig{} : load_config(args.config);
  if (args.seed) {
    config.seed = *args.seed;
  } else if (const char* env = std::getenv("MLIM_SEED"); env != nullptr && *env != '\0') {
    try {
      size_t used = 0;
      config.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
    } catch (const std::exception&) {
      throw ConfigError(std::string("MLIM_SEED is not an unsigned integer: ") + env);
    }
  }
  if (args.threads) config.threads = *args.threads;
  config.validate();
  return config;
}

// <out>/<command>-<UTC timestamp>[-k]; never reuses an existing directory.
fs::path make_run_dir(const std::string& out, const std::string& command) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%dT%H%M%SZ", &tm);
  fs::create_directories(out);
  const std::string base = command + "-" + stamp;
  fs::path dir = fs::path(out) / base;
  for (int k = 1; fs::exists(dir); ++k) dir = fs::path(out) / (base + "-" + std::to_string(k));
  fs::create_directory(dir);
  return dir;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write " + path.string());
}

fs::path start_run(const CommonArgs& args, const std::string& command, const RunConfig& config) {
  const fs::path dir = make_run_dir(args.out, command);
  save_config(config, dir / "resolved_config.json");
  log(command + " -> " + dir.string());
  return dir;
}

std::string checkpoint_path(const CommonArgs& args, const std::string& fallback, const char* what) {
  const std::string path = args.checkpoint.empty() ? fallback : args.checkpoint;
  if (path.empty()) throw ConfigError(std::string(what) + " needs --checkpoint or a checkpoint in the config");
  return path;
}

ParamStore load_params(const std::string& path, const RunConfig& config) {
  return load_checkpoint(path, init_params(config.model_config(), config.seed)).params;
}

int cmd_gen_data(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const fs::path dir = start_run(args, "gen-data", config);
  generate_corpus(config.data.n_items, config.seed, dir / "corpus", config.data.image_side);
  write_pairs(pair_specs(config, PairSplit::kTrain), dir / "pairs_train.jsonl");
  write_pairs(pair_specs(config, PairSplit::kTest), dir / "pairs_test.jsonl");
  log("wrote " + std::to_string(config.data.n_items) + " items");
  return 0;
}

int cmd_pretrain(const CommonArgs& args) {
  RunConfig config = resolve_config(args);
  if (!args.data.empty()) config.data.corpus_dir = args.data;
  const fs::path dir = start_run(args, "pretrain", config);
  const auto corpus = pretrain_corpus(config);
  const nlohmann::json config_json = to_json(config);

  std::optional<TrainState> last_good;
  try {
    const auto result = pretrain(config, corpus, [&](const TrainState& s) {
      last_good = s;
      if (s.step % 100 == 0) log("pretrain step " + std::to_string(s.step));
    });
    save_checkpoint(result.state.params, &result.state.optimizer, config_json, dir / "pretrained.ckpt");
    write_pretrain_log(result.log, dir / "pretrain_log.csv");
  } catch (const NumericError& e) {
    if (last_good) {
      const fs::path path = dir / "last_good.ckpt";
      save_checkpoint(last_good->params, &last_good->optimizer, config_json, path);
      throw NumericError(std::string(e.what()) + "; last good checkpoint: " + path.string());
    }
    throw;
  }
  log("checkpoint " + (dir / "pretrained.ckpt").string());
  return 0;
}

int cmd_finetune(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const std::string ckpt = checkpoint_path(args, config.finetune_checkpoint, "finetune");
  const fs::path dir = start_run(args, "finetune", config);
  const ParamStore pretrained = load_params(ckpt, config);

  std::vector<PairItem> train, test;
  if (!args.data.empty()) {
    train = render_pairs(read_pairs(fs::path(args.data) / "pairs_train.jsonl"), config.data.image_side);
    test = render_pairs(read_pairs(fs::path(args.data) / "pairs_test.jsonl"), config.data.image_side);
  } else {
    train = pair_dataset(config, PairSplit::kTrain);
    test = pair_dataset(config, PairSplit::kTest);
  }
  const auto result = finetune(config, pretrained, train);
  save_checkpoint(result.state.params, &result.state.optimizer, to_json(config), dir / "finetuned.ckpt");
  write_finetune_log(result.log, dir / "finetune_log.csv");

  const auto scores = score_pairs(result.state.params, config.model_config(), test, config.threads);
  std::vector<int> labels;
  for (const auto& p : test) labels.push_back(p.label);
  const double auc = pr_auc(scores, labels);
  write_json({{"pr_auc", auc}, {"test_pairs", test.size()}}, dir / "metrics.json");
  log("test PR-AUC " + format_number(auc));
  return 0;
}

int cmd_probe(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const std::string ckpt = checkpoint_path(args, config.probe.checkpoint, "probe");
  const fs::path dir = start_run(args, "probe", config);
  const ParamStore params = load_params(ckpt, config);
  const auto dataset = probe_dataset(config);
  const auto curves = run_probes(params, config.model_config(), dataset, config.probe.mask_probs,
                                 {config.seed, config.probe.gray_level, config.threads});
  const auto asym = probe_asymmetry(curves);

  nlohmann::json j;
  j["curves"] = nlohmann::json::array();
  for (const auto& c : curves) j["curves"].push_back(to_json(c));
  j["asymmetry"] = {{"recon_random_text", asym.recon_random_text}, {"mlm_random_image", asym.mlm_random_image}};
  write_json(j, dir / "probe.json");
  emit_report(curves, {}, dir);
  log("probe curves written");
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const RunConfig config = resolve_config(args);
  const fs::path dir = start_run(args, "ablate", config);
  const auto corpus = pretrain_corpus(config);
  const auto train = pair_dataset(config, PairSplit::kTrain);
  const auto test = pair_dataset(config, PairSplit::kTest);
  const auto rows = run_ablation(config, config.ablation.variants, config.ablation.seeds, {corpus, train, test},
                                 nullptr, [](const std::string& v, uint64_t seed, double auc) {
                                   log(v + " seed " + std::to_string(seed) + ": PR-AUC " + format_number(auc));
                                 });
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(to_json(r));
  write_json({{"rows", j}}, dir / "ablation.json");
  emit_report({}, rows, dir);
  return 0;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

int cmd_report(const CommonArgs& args) {
  if (args.data.empty()) throw ConfigError("report needs --data <run dir> containing probe.json or ablation.json");
  const fs::path src(args.data);
  std::vector<ProbeCurve> curves;
  std::vector<AblationRow> rows;
  if (fs::exists(src / "probe.json")) {
    const nlohmann::json j = read_json(src / "probe.json");
    for (const auto& c : j.at("curves")) curves.push_back(curve_from_json(c));
  }
  if (fs::exists(src / "ablation.json")) {
    const nlohmann::json j = read_json(src / "ablation.json");
    for (const auto& r : j.at("rows")) rows.push_back(ablation_row_from_json(r));
  }
  if (curves.empty() && rows.empty()) throw ConfigError("no probe.json or ablation.json in " + src.string());
  const RunConfig config = resolve_config(args);
  const fs::path dir = start_run(args, "report", config);
  emit_report(curves, rows, dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked language and image modeling on synthetic shapes"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "JSON config file");
    sub->add_option("--seed", args.seed, "Seed (overrides MLIM_SEED and the config)");
    sub->add_option("--threads", args.threads, "Worker threads");
    sub->add_option("--out", args.out, "Output root; each run gets a fresh subdirectory");
  };
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus and pair splits");
  auto* pre = app.add_subcommand("pretrain", "Pre-train with the configured objectives");
  auto* fine = app.add_subcommand("finetune", "Fine-tune the pair classifier");
  auto* probe = app.add_subcommand("probe", "Cross-modality probe curves");
  auto* ablate = app.add_subcommand("ablate", "Run the ablation grid");
  auto* report = app.add_subcommand("report", "Re-emit CSV and SVG from a probe or ablation run");
  for (auto* sub : {gen, pre, fine, probe, ablate, report}) add_common(sub);
  pre->add_option("--data", args.data, "Corpus directory from gen-data");
  fine->add_option("--checkpoint", args.checkpoint, "Pre-trained checkpoint");
  fine->add_option("--data", args.data, "gen-data run directory holding the pair splits");
  probe->add_option("--checkpoint", args.checkpoint, "Pre-trained checkpoint");
  report->add_option("--data", args.data, "Run directory to read");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (pre->parsed()) return cmd_pretrain(args);
    if (fine->parsed()) return cmd_finetune(args);
    if (probe->parsed()) return cmd_probe(args);
    if (ablate->parsed()) return cmd_ablate(args);
    return cmd_report(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
