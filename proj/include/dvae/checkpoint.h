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

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dvae/latent.h"

namespace dvae {

/// On-disk layout: a directory holding `manifest.json` and `params.bin`.
/// The manifest lists every array (name, dtype, shape, byte offset) in blob
/// order; the blob is the concatenation of row-major little-endian float32
/// arrays. The manifest also carries the SHA-256 of the blob, the latent
/// layout and, for models containing a frozen base encoder, that encoder's
/// content hash.
struct Checkpoint {
  static constexpr const char* kFormat = "detailvae-checkpoint";
  static constexpr int kVersion = 1;

  std::string kind;
  std::optional<LatentLayout> layout;
  std::string frozen_encoder_sha256;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, torch::Tensor>> arrays;

  void add(const std::string& name, const torch::Tensor& value);
  // Adds every parameter of `module` as "<prefix><name>".
  void add_module(const std::string& prefix, const torch::nn::Module& module);

  bool has(const std::string& name) const;
  const torch::Tensor& get(const std::string& name) const;
  bool has_prefix(const std::string& prefix) const;
  // Copies arrays "<prefix><name>" into the parameters of `module`.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;
};

/// Writes a new checkpoint directory. Refuses to overwrite an existing path.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);

/// Reads and verifies a checkpoint; a blob hash mismatch raises
/// CheckpointError quoting both hashes.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

/// SHA-256 of the blob as recorded in the manifest (no blob read).
std::string checkpoint_blob_hash(const std::filesystem::path& dir);

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& file);

/// Content hash of a module: SHA-256 over its parameter names, shapes and
/// float32 data, in registration order.
std::string parameter_hash(const torch::nn::Module& module);

}  // namespace dvae
