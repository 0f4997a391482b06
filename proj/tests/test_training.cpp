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

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dvae/checkpoint.h"
#include "dvae/config.h"
#include "dvae/dataset.h"
#include "dvae/error.h"
#include "dvae/telemetry.h"
#include "dvae/training.h"
#include "test_util.h"

#ifndef DVAE_SOURCE_DIR
#error "DVAE_SOURCE_DIR must point at the repository root"
#endif

namespace dvae {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

TEST(Ema, HandExamples) {
  torch::nn::Linear lin(1, 1);
  {
    torch::NoGradGuard g;
    lin->weight.fill_(2.0);
    lin->bias.fill_(2.0);
  }
  auto zero_shadow = [&](double decay) {
    auto e = EmaState::from_module(*lin, decay);
    for (auto& s : e.shadow) s.zero_();
    return e;
  };
  auto e0 = zero_shadow(0.0);
  ema_update(e0, *lin);
  EXPECT_EQ(e0.shadow[0].item<double>(), 2.0);

  auto e1 = zero_shadow(1.0);
  for (int i = 0; i < 3; ++i) ema_update(e1, *lin);
  EXPECT_EQ(e1.shadow[0].item<double>(), 0.0);

  auto eh = zero_shadow(0.5);
  ema_update(eh, *lin);
  ema_update(eh, *lin);
  EXPECT_DOUBLE_EQ(eh.shadow[0].item<double>(), 1.5);

  torch::nn::Linear other(1, 1);
  eh.copy_to(*other);
  EXPECT_DOUBLE_EQ(other->weight.item<double>(), 1.5);
}

TEST(Ema, ShapeDriftIsAnError) {
  torch::nn::Linear lin(2, 3);
  auto e = EmaState::from_module(*lin, 0.9);
  EXPECT_THROW(ema_update(e, {torch::zeros({3, 2})}), ShapeError);
  EXPECT_THROW(ema_update(e, {torch::zeros({2, 3}), torch::zeros({3})}), ShapeError);
  EXPECT_THROW(EmaState::from_module(*lin, 1.5), ConfigError);
}

TEST(BatchSampler, DeterministicEpochPermutations) {
  BatchSampler a(10, 4, 3), b(10, 4, 3), c(10, 4, 4);
  bool differs = false;
  for (int64_t step = 0; step < 12; ++step) {
    auto ia = a.indices(step);
    ASSERT_EQ(ia.size(0), 4);
    EXPECT_TRUE(torch::equal(ia, b.indices(step)));
    differs |= !torch::equal(ia, c.indices(step));
    EXPECT_GE(ia.min().item<int64_t>(), 0);
    EXPECT_LT(ia.max().item<int64_t>(), 10);
  }
  EXPECT_TRUE(differs);
  // Revisiting an earlier step after moving on gives the same batch.
  auto late = a.indices(11);
  EXPECT_TRUE(torch::equal(a.indices(0), b.indices(0)));
  EXPECT_TRUE(torch::equal(a.indices(11), late));
}

TEST(Dataset, ProceduralIsDeterministicAndBalanced) {
  DatasetSpec spec;
  spec.size = 40;
  spec.resolution = 32;
  auto a = make_procedural_dataset(spec);
  auto b = make_procedural_dataset(spec);
  EXPECT_EQ(a.images.sizes(), (std::vector<int64_t>{40, 3, 32, 32}));
  EXPECT_TRUE(torch::equal(a.images, b.images));
  EXPECT_TRUE(torch::equal(a.labels, b.labels));
  EXPECT_LE(a.images.abs().max().item<double>(), 1.0);
  EXPECT_TRUE(torch::equal(torch::bincount(a.labels), torch::full({10}, 4, torch::kLong)));
  EXPECT_EQ(a.base_images(2).sizes(), (std::vector<int64_t>{40, 3, 16, 16}));
  spec.seed = 1;
  EXPECT_FALSE(torch::equal(make_procedural_dataset(spec).images, a.images));
}

TEST(Dataset, ClassesAreDistinct) {
  // Same class renders differ (random placement), but class means separate.
  auto x0 = render_procedural(0, 0, 32, 0), x1 = render_procedural(1, 0, 32, 0);
  EXPECT_FALSE(torch::equal(x0, x1));
  auto y = render_procedural(0, 7, 32, 0);
  EXPECT_FALSE(torch::equal(x0, y));
}

TEST(Telemetry, RecordRoundTrip) {
  TelemetryRecord r;
  r.step = 7;
  r.phase = "finetune";
  r.w = 0.25;
  r.lr = 2e-4;
  r.loss_total = 0.123456789;
  r.dit_base_unweighted = 0.5;
  r.dit_detail_unweighted = 1.5;
  r.ema_active = true;
  const auto line = format_record(r);
  const auto p = parse_record(line);
  EXPECT_EQ(p.step, 7);
  EXPECT_EQ(p.phase, "finetune");
  EXPECT_EQ(p.w, 0.25);
  EXPECT_EQ(p.loss_total, 0.123456789);
  EXPECT_TRUE(std::isnan(p.loss_l1));
  EXPECT_TRUE(p.ema_active);
  EXPECT_EQ(format_record(p), line);
  EXPECT_EQ(telemetry_value(p, "dit_detail_unweighted"), 1.5);
  EXPECT_THROW(telemetry_value(p, "nope"), Error);
}

TEST(Telemetry, WriterAndReader) {
  testing::TempDir tmp;
  {
    TelemetryWriter w(tmp.path() / "t.csv", tmp.path() / "timing.csv");
    for (int i = 0; i < 3; ++i) {
      TelemetryRecord r;
      r.step = i;
      r.phase = "davae";
      r.loss_total = i;
      w.write(r, 0.1 * i);
    }
  }
  const auto text = testing::read_file(tmp.path() / "t.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), kTelemetryHeader);
  const auto rows = read_telemetry(tmp.path() / "t.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[2].loss_total, 2.0);
  EXPECT_EQ(testing::read_file(tmp.path() / "timing.csv").substr(0, 23), "step,phase,wallclock_s\n");
}

TEST(Telemetry, TrailingMean) {
  const auto m = trailing_mean({1, 2, 3, 4, 5}, 2);
  ASSERT_EQ(m.size(), 5u);
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 1.5);
  EXPECT_EQ(m[4], 4.5);
  EXPECT_EQ(trailing_mean({3, 3, 3}, 50)[2], 3.0);
}

TEST(Config, StageDefaults) {
  const TrainConfig c;
  EXPECT_EQ(c.dit.optim.learning_rate, 2e-4);
  EXPECT_EQ(c.dit.n_warm, 10000);
  EXPECT_EQ(c.dit.optim.beta1, 0.9);
  EXPECT_EQ(c.dit.optim.beta2, 0.95);
  EXPECT_EQ(c.dit.ema_decay, 0.999);
  EXPECT_EQ(c.vae.optim.learning_rate, 1e-4);
  EXPECT_EQ(c.vae.optim.beta1, 0.5);
  EXPECT_EQ(c.vae.optim.beta2, 0.9);
  EXPECT_EQ(c.vae.optim.grad_clip, 1.0);
  EXPECT_EQ(VaeStageConfig{}.weights.l1, 1.0);
  EXPECT_EQ(c.log_interval, 50);
}

TEST(Config, UnknownKeysAreRejectedWithPointers) {
  const json doc = {{"stage", "train_davae"}, {"bogus", 1}, {"vae", {{"learning_rat", 0.1}}}};
  try {
    parse_train_config(doc, ".");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos) << msg;
    EXPECT_NE(msg.find("/vae"), std::string::npos) << msg;
    EXPECT_NE(msg.find("learning_rat"), std::string::npos) << msg;
  }
}

TEST(Config, TypeAndRangeViolations) {
  EXPECT_THROW(parse_train_config({{"stage", "nope"}}, "."), ConfigError);
  EXPECT_THROW(parse_train_config({{"stage", "finetune_dit"}, {"dit", {{"ema_decay", 1.0}}}}, "."), ConfigError);
  EXPECT_THROW(parse_train_config({{"stage", "train_davae"}, {"seed", "x"}}, "."), ConfigError);
  EXPECT_THROW(parse_train_config({{"stage", "train_davae"}, {"layout", {{"f", 4}, {"p", 2}, {"C", 3}, {"D", 8}, {"s", 2}}}}, "."),
               ConfigError);
  const auto ok = parse_train_config({{"stage", "train_davae"}}, ".");
  EXPECT_THROW(ok.require_inputs(), ConfigError);
}

TEST(Config, ShippedSchemaMatchesEmbedded) {
  const auto on_disk = json::parse(testing::read_file(fs::path(DVAE_SOURCE_DIR) / "schemas" / "train_config.schema.json"));
  EXPECT_EQ(on_disk, train_config_schema());
  EXPECT_EQ(json::parse(train_config_schema_text()), on_disk);
}

TEST(Config, DeskConfigsValidate) {
  for (const char* name : {"pretrain.json", "train_vae.json", "finetune.json"}) {
    const auto c = load_train_config(fs::path(DVAE_SOURCE_DIR) / "configs" / "desk" / name);
    EXPECT_NO_THROW(c.validate()) << name;
    EXPECT_EQ(c.layout, LatentLayout(4, 2, 4, 8, 2)) << name;
  }
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_train_config("/nonexistent/cfg.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/cfg.json"), std::string::npos);
  }
}

TEST(Config, RelativePathsResolveAgainstConfigDir) {
  testing::TempDir tmp;
  fs::create_directories(tmp.path() / "cfg");
  std::ofstream(tmp.path() / "cfg" / "l.json") << R"({"f":2,"p":1,"C":2,"D":6,"s":2})";
  std::ofstream(tmp.path() / "cfg" / "c.json")
      << R"({"stage":"train_davae","layout":"l.json","vae":{"widths":[4,8]},"inputs":{"base_vae":"../ck"}})";
  const auto c = load_train_config(tmp.path() / "cfg" / "c.json");
  EXPECT_EQ(c.layout, LatentLayout(2, 1, 2, 6, 2));
  EXPECT_EQ(fs::weakly_canonical(c.inputs.base_vae), fs::weakly_canonical(tmp.path() / "ck"));
  EXPECT_EQ(c.hash(), load_train_config(tmp.path() / "cfg" / "c.json").hash());
}

// Tiny end-to-end pipeline shared by the integration tests below.
json tiny_doc(const std::string& stage, int64_t steps) {
  return {{"stage", stage},
          {"seed", 3},
          {"log_interval", 1},
          {"layout", {{"f", 2}, {"p", 2}, {"C", 2}, {"D", 6}, {"s", 2}}},
          {"dataset", {{"size", 16}, {"resolution", 16}, {"num_classes", 4}}},
          {"vae",
           {{"batch_size", 4},
            {"total_steps", steps},
            {"learning_rate", 1e-3},
            {"widths", {4, 8}},
            {"loss_weights", {{"lpips", 0.5}}}}},
          {"dit",
           {{"batch_size", 4},
            {"total_steps", steps},
            {"hidden", 16},
            {"depth", 1},
            {"heads", 2},
            {"n_warm", 4},
            {"equivalence_pairs", 4}}}};
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir();
    auto cfg = parse_train_config(tiny_doc("pretrain_base_vae", 10), ".");
    pretrain_base(cfg, root() / "pre");
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path root() { return dir_->path(); }
  static fs::path base_vae() { return root() / "pre" / "checkpoints" / kBaseVaeKind; }
  static fs::path base_dit() { return root() / "pre" / "checkpoints" / kBaseDitKind; }

  static TrainConfig davae_config(int64_t steps, int64_t ckpt_interval = 0) {
    auto doc = tiny_doc("train_davae", steps);
    doc["checkpoint_interval"] = ckpt_interval;
    doc["inputs"] = {{"base_vae", base_vae().string()}};
    return parse_train_config(doc, ".");
  }

  static testing::TempDir* dir_;
};
testing::TempDir* Pipeline::dir_ = nullptr;

TEST_F(Pipeline, PretrainWritesBothCheckpoints) {
  const auto vae = load_checkpoint_of_kind(base_vae(), kBaseVaeKind);
  const auto dit = load_checkpoint_of_kind(base_dit(), kBaseDitKind);
  EXPECT_FALSE(vae.frozen_encoder_sha256.empty());
  EXPECT_EQ(dit.frozen_encoder_sha256, vae.frozen_encoder_sha256);
  EXPECT_THROW(load_checkpoint_of_kind(base_vae(), kBaseDitKind), CheckpointError);
  const auto rows = read_telemetry(root() / "pre" / "telemetry.csv");
  EXPECT_EQ(rows.size(), 20u);
  EXPECT_TRUE(fs::exists(root() / "pre" / "config.resolved.json"));
  EXPECT_TRUE(fs::exists(root() / "pre" / "timing.csv"));
}

TEST_F(Pipeline, FreshBaseDitAttachesEquivalently) {
  auto base = load_base_dit(load_checkpoint_of_kind(base_dit(), kBaseDitKind));
  auto adapter = attach_adapter(*base, LatentLayout(2, 2, 2, 6, 2));
  EXPECT_TRUE(check_zero_init_equivalence(*base, *adapter, 8, 1).passed);
}

TEST_F(Pipeline, DaVaeTelemetryIsByteIdenticalAcrossRuns) {
  const auto cfg = davae_config(6);
  train_davae(cfg, root() / "d1");
  train_davae(cfg, root() / "d2");
  EXPECT_EQ(testing::read_file(root() / "d1" / "telemetry.csv"),
            testing::read_file(root() / "d2" / "telemetry.csv"));
  EXPECT_EQ(checkpoint_blob_hash(root() / "d1" / "checkpoints" / kDaVaeKind),
            checkpoint_blob_hash(root() / "d2" / "checkpoints" / kDaVaeKind));
  EXPECT_THROW(train_davae(cfg, root() / "d1"), Error);
}

TEST_F(Pipeline, ResumeMatchesUninterruptedRun) {
  const auto cfg = davae_config(8, 4);
  train_davae(cfg, root() / "full");
  StageOptions o;
  o.resume = root() / "full" / "checkpoints" / "step-000004";
  train_davae(cfg, root() / "resumed", o);
  EXPECT_EQ(testing::read_file(root() / "full" / "telemetry.csv"),
            testing::read_file(root() / "resumed" / "telemetry.csv"));
  EXPECT_EQ(checkpoint_blob_hash(root() / "full" / "checkpoints" / kDaVaeKind),
            checkpoint_blob_hash(root() / "resumed" / "checkpoints" / kDaVaeKind));

  auto other = davae_config(9, 4);
  EXPECT_THROW(train_davae(other, root() / "mismatch", o), ConfigError);
}

TEST_F(Pipeline, BaseEncoderIdenticalAcrossDaVaeCheckpoints) {
  const auto cfg = davae_config(9, 3);
  train_davae(cfg, root() / "hash");
  const auto base = load_checkpoint_of_kind(base_vae(), kBaseVaeKind);
  std::optional<Checkpoint> first;
  for (const char* name : {"step-000003", "step-000006", kDaVaeKind}) {
    const auto c = load_checkpoint(root() / "hash" / "checkpoints" / name);
    EXPECT_EQ(c.frozen_encoder_sha256, base.frozen_encoder_sha256) << name;
    EXPECT_EQ(parameter_hash(*load_davae(c)->base_encoder), base.frozen_encoder_sha256) << name;
    if (!first) {
      first = c;
      continue;
    }
    for (const auto& [n, t] : c.arrays) {
      if (n.rfind("base_encoder.", 0) == 0) {
        EXPECT_TRUE(torch::equal(t, first->get(n))) << n;
      }
    }
  }
}

TEST_F(Pipeline, NonFiniteLossAbortsWithLastGood) {
  const auto cfg = davae_config(6);
  StageOptions o;
  o.inject_nonfinite_at_step = 3;
  try {
    train_davae(cfg, root() / "nan", o);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(fs::path(e.last_good()), root() / "nan" / "checkpoints" / "last_good");
    const auto c = load_checkpoint_of_kind(e.last_good(), kDaVaeKind);
    EXPECT_EQ(c.meta.at("step").get<int64_t>(), 3);
  }
  EXPECT_EQ(read_telemetry(root() / "nan" / "telemetry.csv").size(), 3u);
  EXPECT_FALSE(fs::exists(root() / "nan" / "checkpoints" / kDaVaeKind));
}

TEST_F(Pipeline, MissingPrerequisiteIsAnError) {
  auto doc = tiny_doc("train_davae", 2);
  doc["inputs"] = {{"base_vae", (root() / "nowhere").string()}};
  const auto cfg = parse_train_config(doc, ".");
  try {
    train_davae(cfg, root() / "missing");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere"), std::string::npos);
  }
}

TEST_F(Pipeline, FinetuneLogsUnweightedBranchLosses) {
  const auto vcfg = davae_config(4);
  train_davae(vcfg, root() / "ft-vae");
  auto doc = tiny_doc("finetune_dit", 8);
  doc["inputs"] = {{"base_dit", base_dit().string()},
                   {"davae", (root() / "ft-vae" / "checkpoints" / kDaVaeKind).string()}};
  const auto cfg = parse_train_config(doc, ".");
  const auto res = finetune_dit(cfg, root() / "ft");
  EXPECT_TRUE(res.summary.at("equivalence").at("passed").get<bool>());
  const auto rows = read_telemetry(root() / "ft" / "telemetry.csv");
  ASSERT_EQ(rows.size(), 8u);
  for (const auto& r : rows) {
    const double w = loss_weight(WarmupSchedule(4), r.step);
    EXPECT_DOUBLE_EQ(r.w, w);
    ASSERT_FALSE(std::isnan(r.dit_base_unweighted));
    ASSERT_FALSE(std::isnan(r.dit_detail_unweighted));
    // The logged mixed loss is recoverable from the unweighted branches: the
    // base and detail element counts are 2 and 4 channels on the same grid.
    const double expect = (2 * r.dit_base_unweighted + w * 6 * r.dit_detail_unweighted) / (2 + w * 6);
    EXPECT_NEAR(r.loss_total, expect, 1e-6 * std::max(1.0, expect));
  }
  auto adapter = load_adapter(load_checkpoint_of_kind(res.checkpoints.back(), kAdapterKind));
  EXPECT_EQ(adapter->detail_channels(), 6);
}

// Alignment term of a fresh detail encoder is positive and falls over the
// first 500 steps (window-50 block means nonincreasing). The 10-step suite
// base is too weak a target for this, so a 200-step base is pretrained here.
TEST_F(Pipeline, AlignmentDecreasesOverTraining) {
  auto pre = tiny_doc("pretrain_base_vae", 10);
  pre["vae"]["total_steps"] = 200;
  pretrain_base(parse_train_config(pre, "."), root() / "pre200");
  auto doc = tiny_doc("train_davae", 500);
  doc["inputs"] = {{"base_vae", (root() / "pre200" / "checkpoints" / kBaseVaeKind).string()}};
  doc["vae"]["learning_rate"] = 1e-4;
  doc["vae"]["betas"] = {0.5, 0.9};
  const auto cfg = parse_train_config(doc, ".");
  train_davae(cfg, root() / "align");
  const auto rows = read_telemetry(root() / "align" / "telemetry.csv");
  ASSERT_EQ(rows.size(), 500u);
  EXPECT_GT(rows.front().loss_align, 0.0);
  std::vector<double> blocks;
  for (size_t b = 0; b < 10; ++b) {
    double s = 0.0;
    for (size_t i = 0; i < 50; ++i) s += rows[b * 50 + i].loss_align;
    blocks.push_back(s / 50.0);
  }
  for (size_t b = 1; b < blocks.size(); ++b) EXPECT_LE(blocks[b], blocks[b - 1]) << "block " << b;
  EXPECT_LT(blocks.back(), blocks.front());
}

}  // namespace
}  // namespace dvae
