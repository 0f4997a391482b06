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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dvae/dataset.h"
#include "dvae/dit.h"
#include "dvae/latent.h"
#include "dvae/tokenizer.h"

namespace dvae {

enum class Stage { kPretrainBaseVae, kTrainDaVae, kFinetuneDit };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct OptimConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int64_t batch_size = 8;
  int64_t total_steps = 1000;
  double grad_clip = 1.0;  // global norm; 0 disables
};

struct VaeStageConfig {
  OptimConfig optim{1e-4, 0.5, 0.9, 8, 2000, 1.0};
  VaeArch arch;
  VaeLossWeights weights;
  uint64_t perceptual_seed = 0x5eed;
  int64_t discriminator_width = 32;
};

struct DitStageConfig {
  OptimConfig optim{2e-4, 0.9, 0.95, 32, 2000, 1.0};
  int64_t hidden = 256;
  int64_t depth = 6;
  int64_t heads = 4;
  double mlp_ratio = 4.0;
  int64_t n_warm = 10000;
  double ema_decay = 0.999;
  double label_dropout = 0.1;
  bool scheduler = true;  // false fixes w = 1
  AdapterInit adapter_init = AdapterInit::kZero;
  int64_t equivalence_pairs = 32;
};

struct InputPaths {
  std::filesystem::path base_vae;
  std::filesystem::path base_dit;
  std::filesystem::path davae;
};

struct TrainConfig {
  Stage stage = Stage::kPretrainBaseVae;
  uint64_t seed = 0;
  int64_t threads = 1;
  int64_t log_interval = 50;
  int64_t checkpoint_interval = 0;
  LatentLayout layout{4, 2, 4, 8, 2};
  DatasetSpec dataset;
  VaeStageConfig vae;
  DitStageConfig dit;
  InputPaths inputs;

  /// DiT geometry implied by layout and dataset resolution.
  DiTConfig dit_config() const;

  void validate() const;
  /// Stage prerequisites named in `inputs` are set (existence is checked by
  /// the stage itself).
  void require_inputs() const;
  /// Fully resolved document (all defaults filled in, layout inlined,
  /// absolute input paths). Stable key order.
  nlohmann::json to_json() const;
  std::string hash() const;
};

/// The published JSON schema for stage configs.
const nlohmann::json& train_config_schema();
const std::string& train_config_schema_text();

/// Supports the draft-07 subset used by the published schema: type, enum,
/// properties, required, additionalProperties=false, items, minItems,
/// maxItems, minimum, maximum, exclusiveMinimum, exclusiveMaximum.
/// Returns one message per violation, each prefixed with its JSON pointer.
std::vector<std::string> validate_json(const nlohmann::json& doc, const nlohmann::json& schema);

/// Relative paths (layout file, inputs, dataset folder) resolve against
/// `base_dir`. Throws ConfigError listing every violation.
TrainConfig parse_train_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
TrainConfig load_train_config(const std::filesystem::path& path);

LatentLayout load_layout_file(const std::filesystem::path& path);

}  // namespace dvae
