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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dvae/checkpoint.h"
#include "dvae/config.h"
#include "dvae/dit.h"
#include "dvae/tokenizer.h"

namespace dvae {

/// Shadow copies of a module's trainable parameters, in named_parameters order.
struct EmaState {
  std::vector<std::string> names;
  std::vector<torch::Tensor> shadow;
  double decay = 0.999;

  static EmaState from_module(const torch::nn::Module& module, double decay);
  void copy_to(torch::nn::Module& module) const;
};

/// shadow <- decay * shadow + (1 - decay) * live. Throws ShapeError when the
/// parameter count or any shape differs from the shadow.
void ema_update(EmaState& ema, const std::vector<torch::Tensor>& live);
void ema_update(EmaState& ema, const torch::nn::Module& module);

struct StageOptions {
  /// Stage checkpoint to continue from (train_davae and finetune_dit only).
  std::filesystem::path resume;
  /// Test hook: poison the loss at this step to exercise the abort path.
  int64_t inject_nonfinite_at_step = -1;
  std::function<void(const std::string&)> log;
};

struct StageResult {
  std::vector<std::filesystem::path> checkpoints;  // final checkpoints, in creation order
  std::filesystem::path telemetry;
  nlohmann::json summary;
};

/// Runs the configured stage inside `run_dir` (created if missing). Writes
/// config.resolved.json, telemetry.csv, timing.csv, summary.json and
/// checkpoints/<name>.
StageResult run_stage(const TrainConfig& config, const std::filesystem::path& run_dir,
                      const StageOptions& options = {});

StageResult pretrain_base(const TrainConfig& config, const std::filesystem::path& run_dir,
                          const StageOptions& options = {});
StageResult train_davae(const TrainConfig& config, const std::filesystem::path& run_dir,
                        const StageOptions& options = {});
StageResult finetune_dit(const TrainConfig& config, const std::filesystem::path& run_dir,
                         const StageOptions& options = {});

// Checkpoint kinds written by the stages.
inline constexpr const char* kBaseVaeKind = "base_vae";
inline constexpr const char* kBaseDitKind = "base_dit";
inline constexpr const char* kDaVaeKind = "davae";
inline constexpr const char* kAdapterKind = "dit_adapter";

Checkpoint load_checkpoint_of_kind(const std::filesystem::path& dir, const std::string& kind);

BaseVae load_base_vae(const Checkpoint& ckpt);
VaeModel load_davae(const Checkpoint& ckpt);
/// `use_ema` selects the EMA shadow when the checkpoint carries one.
BaseDiT load_base_dit(const Checkpoint& ckpt, bool use_ema = true);
DiTAdapter load_adapter(const Checkpoint& ckpt, bool use_ema = true);

/// Posterior means of every dataset item, packed base-first: (n, C+D, h, w).
torch::Tensor encode_dataset(VaeModelImpl& vae, const torch::Tensor& images_hr, int64_t chunk = 64);

}  // namespace dvae
