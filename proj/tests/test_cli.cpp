// Copyright 2026 The detailvae Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include <nlohmann/json.hpp>

#include "dvae/checkpoint.h"
#include "test_util.h"

#ifndef DVAE_CLI_PATH
#error "DVAE_CLI_PATH must name the davae executable"
#endif
#ifndef DVAE_SOURCE_DIR
#error "DVAE_SOURCE_DIR must point at the repository root"
#endif

namespace dvae {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() { tmp_ = new testing::TempDir(); }
  static void TearDownTestSuite() {
    delete tmp_;
    tmp_ = nullptr;
  }

  static fs::path dir() { return tmp_->path(); }
  static fs::path runs() { return dir() / "runs"; }

  static Outcome run(const std::string& args) {
    static int counter = 0;
    const auto out = dir() / ("out" + std::to_string(counter) + ".txt");
    const auto err = dir() / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    const std::string cmd = std::string("'") + DVAE_CLI_PATH + "' -q --run-root '" + runs().string() + "' " + args +
                            " > '" + out.string() + "' 2> '" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Outcome o;
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    o.out = testing::read_file(out);
    o.err = testing::read_file(err);
    return o;
  }

  static fs::path write_config(const std::string& name, const json& doc) {
    const auto p = dir() / name;
    std::ofstream(p) << doc.dump(2);
    return p;
  }

  static json tiny(const std::string& stage) {
    return {{"stage", stage},
            {"log_interval", 1},
            {"layout", {{"f", 2}, {"p", 2}, {"C", 2}, {"D", 6}, {"s", 2}}},
            {"dataset", {{"size", 8}, {"resolution", 16}, {"num_classes", 4}}},
            {"vae", {{"batch_size", 4}, {"total_steps", 4}, {"widths", {4, 8}}}},
            {"dit", {{"batch_size", 4}, {"total_steps", 4}, {"hidden", 16}, {"depth", 1}, {"heads", 2}, {"n_warm", 2},
                     {"equivalence_pairs", 4}}}};
  }

  static std::string trim(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
  }

  // Pretrain plus DA-VAE training at toy scale, shared by the eval tests.
  static const fs::path& pretrain_run() {
    static fs::path p = [] {
      auto o = run("pretrain --config '" + write_config("pre.json", tiny("pretrain_base_vae")).string() + "'");
      EXPECT_EQ(o.code, 0) << o.err;
      return fs::path(trim(o.out));
    }();
    return p;
  }
  static const fs::path& davae_run() {
    static fs::path p = [] {
      auto o = run("train-vae --config '" + write_config("vae.json", tiny("train_davae")).string() +
                   "' --base-vae '" + (pretrain_run() / "checkpoints" / "base_vae").string() + "'");
      EXPECT_EQ(o.code, 0) << o.err;
      return fs::path(trim(o.out));
    }();
    return p;
  }
  static std::string data_flags() { return " --dataset-size 8 --resolution 16 --classes 4"; }

  static testing::TempDir* tmp_;
};
testing::TempDir* Cli::tmp_ = nullptr;

TEST_F(Cli, MissingConfigIsUsageErrorNamingPath) {
  auto o = run("pretrain --config /no/such/config.json");
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("/no/such/config.json"), std::string::npos) << o.err;
}

TEST_F(Cli, UnknownConfigKeyIsUsageError) {
  auto doc = tiny("pretrain_base_vae");
  doc["vae"]["learnig_rate"] = 1.0;
  auto o = run("pretrain --config '" + write_config("bad.json", doc).string() + "'");
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("learnig_rate"), std::string::npos) << o.err;
}

TEST_F(Cli, StageMismatchIsUsageError) {
  auto o = run("train-vae --config '" + write_config("stage.json", tiny("pretrain_base_vae")).string() + "'");
  EXPECT_EQ(o.code, 2);
}

TEST_F(Cli, BadFlagIsUsageError) { EXPECT_EQ(run("eval --no-such-flag").code, 2); }

TEST_F(Cli, HelpListsDefaults) {
  auto top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"pretrain", "train-vae", "finetune", "eval", "spectrum", "ablate", "sample", "plot"}) {
    EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  }
  auto vae = run("train-vae --help");
  EXPECT_NE(vae.out.find("1e-4"), std::string::npos);
  EXPECT_NE(vae.out.find("--ablate-no-alignment"), std::string::npos);
  auto fin = run("finetune --help");
  for (const char* s : {"2e-4", "10000", "0.999", "--ablate-random-init", "--ablate-no-scheduler"}) {
    EXPECT_NE(fin.out.find(s), std::string::npos) << s;
  }
  auto smp = run("sample --help");
  for (const char* s : {"250", "4", "0.2", "0.3", "--no-ema"}) EXPECT_NE(smp.out.find(s), std::string::npos) << s;
}

TEST_F(Cli, SchemaMatchesShippedFile) {
  auto o = run("schema");
  EXPECT_EQ(o.code, 0);
  EXPECT_EQ(json::parse(o.out),
            json::parse(testing::read_file(fs::path(DVAE_SOURCE_DIR) / "schemas" / "train_config.schema.json")));
}

TEST_F(Cli, IdentityEvalReportsCappedPsnr) {
  auto o = run("eval --identity" + data_flags());
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_DOUBLE_EQ(json::parse(o.out).at("psnr").get<double>(), 99.0);
}

TEST_F(Cli, EveryRunGetsAFreshDirectory) {
  auto a = run("eval --identity" + data_flags());
  auto b = run("eval --identity" + data_flags());
  ASSERT_EQ(a.code, 0);
  ASSERT_EQ(b.code, 0);
  std::set<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(runs())) {
    if (e.path().filename().string().rfind("eval-", 0) == 0) dirs.insert(e.path());
  }
  EXPECT_GE(dirs.size(), 2u);
  for (const auto& d : dirs) {
    EXPECT_EQ(json::parse(testing::read_file(d / "manifest.json")).at("status"), "completed");
  }
}

TEST_F(Cli, MissingPrerequisiteIsRuntimeError) {
  auto o = run("train-vae --config '" + write_config("v.json", tiny("train_davae")).string() +
               "' --base-vae '" + (dir() / "absent").string() + "'");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("base VAE"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("absent"), std::string::npos) << o.err;
}

TEST_F(Cli, PretrainWritesManifestAndCheckpoints) {
  const auto& p = pretrain_run();
  ASSERT_TRUE(fs::exists(p / "manifest.json"));
  const auto m = json::parse(testing::read_file(p / "manifest.json"));
  EXPECT_EQ(m.at("status"), "completed");
  EXPECT_EQ(m.at("stage"), "pretrain_base_vae");
  EXPECT_TRUE(fs::exists(p / "checkpoints" / "base_vae" / "manifest.json"));
  EXPECT_TRUE(fs::exists(p / "checkpoints" / "base_dit" / "manifest.json"));
  // Same config and seed: identical telemetry.
  auto again = run("pretrain --config '" + (dir() / "pre.json").string() + "'");
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(sha256_file(p / "telemetry.csv"), sha256_file(fs::path(trim(again.out)) / "telemetry.csv"));
}

TEST_F(Cli, AblateEmitsAllThreeReports) {
  auto o = run("ablate --model '" + (davae_run() / "checkpoints" / "davae").string() + "'" + data_flags());
  ASSERT_EQ(o.code, 0) << o.err;
  fs::path run_dir;
  for (const auto& e : fs::directory_iterator(runs())) {
    if (e.path().filename().string().rfind("ablate-", 0) == 0) run_dir = e.path();
  }
  const auto j = json::parse(testing::read_file(run_dir / "ablation.json"));
  for (const char* mode : {"full", "zero_detail", "random_detail"}) {
    ASSERT_TRUE(j.at("reports").contains(mode)) << mode;
    EXPECT_EQ(j["reports"][mode]["count"], 8);
  }
  EXPECT_TRUE(fs::exists(run_dir / "ablation.png"));
}

TEST_F(Cli, EvalAndSpectrumWriteArtifacts) {
  const auto model = (davae_run() / "checkpoints" / "davae").string();
  auto e = run("eval --model '" + model + "'" + data_flags());
  ASSERT_EQ(e.code, 0) << e.err;
  auto s = run("spectrum --model '" + model + "'" + data_flags());
  ASSERT_EQ(s.code, 0) << s.err;
  const auto frac = json::parse(s.out);
  EXPECT_TRUE(frac.contains("base"));
  EXPECT_TRUE(frac.contains("detail"));
}

TEST_F(Cli, CorruptCheckpointIsRefusedWithBothHashes) {
  const auto src = davae_run() / "checkpoints" / "davae";
  const auto bad = dir() / "corrupt";
  fs::copy(src, bad, fs::copy_options::recursive);
  const auto expected = checkpoint_blob_hash(bad);
  {
    std::fstream f(bad / "params.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(100);
    f.put('\x01');
    f.put('\x02');
  }
  const auto actual = sha256_file(bad / "params.bin");
  auto o = run("ablate --model '" + bad.string() + "'" + data_flags());
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find(expected), std::string::npos) << o.err;
  EXPECT_NE(o.err.find(actual), std::string::npos) << o.err;
}

TEST_F(Cli, FinetuneRandomInitFailsEquivalenceAndSamples) {
  const auto base_dit = (pretrain_run() / "checkpoints" / "base_dit").string();
  const auto davae = (davae_run() / "checkpoints" / "davae").string();
  const auto cfg = write_config("ft.json", tiny("finetune_dit")).string();
  auto zero = run("finetune --config '" + cfg + "' --base-dit '" + base_dit + "' --davae '" + davae + "'");
  ASSERT_EQ(zero.code, 0) << zero.err;
  auto rnd = run("finetune --config '" + cfg + "' --base-dit '" + base_dit + "' --davae '" + davae +
                 "' --ablate-random-init");
  ASSERT_EQ(rnd.code, 0) << rnd.err;
  auto summary = [](const Outcome& o) { return json::parse(testing::read_file(fs::path(trim(o.out)) / "summary.json")); };
  EXPECT_TRUE(summary(zero)["equivalence"]["passed"].get<bool>());
  EXPECT_FALSE(summary(rnd)["equivalence"]["passed"].get<bool>());

  auto smp = run("sample --model '" + (fs::path(trim(zero.out)) / "checkpoints" / "dit_adapter").string() +
                 "' --vae '" + davae + "' --labels 0,1,2 --steps 3");
  ASSERT_EQ(smp.code, 0) << smp.err;
  EXPECT_TRUE(fs::exists(trim(smp.out)));

  auto plot = run("plot --telemetry '" + (fs::path(trim(zero.out)) / "telemetry.csv").string() + "'");
  ASSERT_EQ(plot.code, 0) << plot.err;
  EXPECT_TRUE(fs::exists(fs::path(trim(plot.out)) / "finetune_losses.png"));
}

TEST_F(Cli, RunRootFromEnvironment) {
  const auto root = dir() / "envroot";
  const std::string cmd = "DAVAE_RUN_ROOT='" + root.string() + "' '" + DVAE_CLI_PATH + "' -q eval --identity" +
                          data_flags() + " > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_FALSE(fs::is_empty(root));
}

}  // namespace
}  // namespace dvae
