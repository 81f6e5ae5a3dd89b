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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "mlim/config.hpp"
#include "test_util.hpp"

using namespace mlim;
using mlim::testing::read_file;
using mlim::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string err;
};

Result run(const TempDir& dir, const std::string& args, const std::string& env = "") {
  const fs::path err = dir.path() / "stderr.txt";
  const std::string cmd = env + " \"" + std::string(MLIM_CLI_PATH) + "\" " + args + " 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.err = read_file(err);
  return r;
}

// Run directories under root whose name starts with prefix, sorted.
std::vector<fs::path> runs(const fs::path& root, const std::string& prefix) {
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind(prefix, 0) == 0) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

fs::path write_tiny_config(const TempDir& dir) {
  RunConfig c = mlim::testing::tiny_run_config();
  c.seed = 11;
  c.probe.mask_probs = {0.25, 0.5};
  const fs::path path = dir.path() / "tiny.json";
  save_config(c, path);
  return path;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("gen-data twice yields identical corpora in fresh run directories") {
  TempDir dir("cli_gen");
  const fs::path cfg = write_tiny_config(dir);
  const fs::path out = dir.path() / "runs";
  for (int i = 0; i < 2; ++i) {
    const Result r = run(dir, "gen-data --config " + q(cfg) + " --out " + q(out));
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  const auto dirs = runs(out, "gen-data-");
  REQUIRE(dirs.size() == 2);
  CHECK(dirs[0] != dirs[1]);
  size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), dirs[0]);
    CHECK(read_file(e.path()) == read_file(dirs[1] / rel));
    ++files;
  }
  CHECK(files == 32 + 1 + 2 + 1);  // images, manifest, two pair files, resolved config
}

TEST_CASE("a missing config exits 1 and names the path") {
  TempDir dir("cli_missing");
  const fs::path cfg = dir.path() / "nope.json";
  const Result r = run(dir, "pretrain --config " + q(cfg) + " --out " + q(dir.path() / "runs"));
  CHECK(r.code == 1);
  CHECK(r.err.find(cfg.string()) != std::string::npos);
  CHECK(run(dir, "frobnicate").code == 1);
  CHECK(run(dir, "probe --config " + q(write_tiny_config(dir))).code == 1);  // no checkpoint
}

TEST_CASE("seed precedence: flag over environment over config") {
  TempDir dir("cli_seed");
  const fs::path cfg = write_tiny_config(dir);
  const fs::path out = dir.path() / "runs";
  const std::string base = "gen-data --config " + q(cfg);
  REQUIRE(run(dir, base + " --out " + q(out / "a")).code == 0);
  REQUIRE(run(dir, base + " --out " + q(out / "b"), "MLIM_SEED=22").code == 0);
  REQUIRE(run(dir, base + " --seed 33 --out " + q(out / "c"), "MLIM_SEED=22").code == 0);
  CHECK(load_config(runs(out / "a", "gen-data-")[0] / "resolved_config.json").seed == 11);
  CHECK(load_config(runs(out / "b", "gen-data-")[0] / "resolved_config.json").seed == 22);
  CHECK(load_config(runs(out / "c", "gen-data-")[0] / "resolved_config.json").seed == 33);
  CHECK(run(dir, base + " --out " + q(out / "d"), "MLIM_SEED=abc").code == 1);
}

TEST_CASE("pretrain, replay, finetune, probe and report") {
  TempDir dir("cli_flow");
  const fs::path cfg = write_tiny_config(dir);
  const fs::path out = dir.path() / "runs";

  Result r = run(dir, "pretrain --config " + q(cfg) + " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path pre = runs(out, "pretrain-").at(0);
  CHECK(fs::exists(pre / "pretrained.ckpt"));
  CHECK(read_file(pre / "pretrain_log.csv").rfind("step,mode,", 0) == 0);

  // The resolved config alone reproduces the run.
  r = run(dir, "pretrain --config " + q(pre / "resolved_config.json") + " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto pres = runs(out, "pretrain-");
  REQUIRE(pres.size() == 2);
  CHECK(read_file(pres[0] / "pretrain_log.csv") == read_file(pres[1] / "pretrain_log.csv"));
  CHECK(read_file(pres[0] / "pretrained.ckpt") == read_file(pres[1] / "pretrained.ckpt"));

  r = run(dir, "finetune --config " + q(cfg) + " --checkpoint " + q(pre / "pretrained.ckpt") + " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path fine = runs(out, "finetune-").at(0);
  const auto metrics = nlohmann::json::parse(read_file(fine / "metrics.json"));
  CHECK(metrics.at("pr_auc").get<double>() >= 0.0);
  CHECK(metrics.at("test_pairs").get<int>() == 16);
  CHECK(fs::exists(fine / "finetune_log.csv"));

  r = run(dir, "probe --config " + q(cfg) + " --checkpoint " + q(pre / "pretrained.ckpt") + " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path probe = runs(out, "probe-").at(0);
  for (const char* name : {"probe_mlm_original.csv", "probe_mlm_random_image.csv", "probe_mlm_gray_image.csv",
                           "probe_recon_original.csv", "probe_recon_random_text.csv",
                           "probe_recon_empty_text.csv", "probe_mlm.svg", "probe_recon.svg", "probe.json"}) {
    CHECK_MESSAGE(fs::exists(probe / name), name);
  }

  r = run(dir, "report --data " + q(probe) + " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const fs::path rep = runs(out, "report-").at(0);
  CHECK(read_file(rep / "probe_recon_empty_text.csv") == read_file(probe / "probe_recon_empty_text.csv"));
  CHECK(read_file(rep / "probe_mlm.svg") == read_file(probe / "probe_mlm.svg"));
}

TEST_CASE("finetune reads pair splits from a gen-data run") {
  TempDir dir("cli_pairs");
  const fs::path cfg = write_tiny_config(dir);
  const fs::path out = dir.path() / "runs";
  REQUIRE(run(dir, "gen-data --config " + q(cfg) + " --out " + q(out)).code == 0);
  REQUIRE(run(dir, "pretrain --config " + q(cfg) + " --out " + q(out)).code == 0);
  const fs::path data = runs(out, "gen-data-").at(0);
  const fs::path ckpt = runs(out, "pretrain-").at(0) / "pretrained.ckpt";
  const Result r = run(dir, "finetune --config " + q(cfg) + " --checkpoint " + q(ckpt) + " --data " + q(data) +
                                " --out " + q(out));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  // Same pairs as the in-memory split for this seed.
  REQUIRE(run(dir, "finetune --config " + q(cfg) + " --checkpoint " + q(ckpt) + " --out " + q(out)).code == 0);
  const auto fines = runs(out, "finetune-");
  REQUIRE(fines.size() == 2);
  CHECK(read_file(fines[0] / "metrics.json") == read_file(fines[1] / "metrics.json"));
}
