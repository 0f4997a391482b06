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
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace dvae {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kRunRootEnv = "DAVAE_RUN_ROOT";

/// Flag value if given, else $DAVAE_RUN_ROOT, else ./runs.
std::filesystem::path resolve_run_root(const std::string& flag);

/// Creates <root>/<command>-<UTC timestamp>[-n]; never reuses an existing
/// directory.
std::filesystem::path create_run_dir(const std::filesystem::path& root, const std::string& command);

struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::vector<std::string> argv;
  std::string stage;
  std::string config_path;
  std::string config_hash;
  uint64_t seed = 0;
  std::filesystem::path run_dir;
  std::map<std::string, std::string> inputs;  // path -> blob sha256
  std::vector<std::string> outputs;
  std::string status = "started";

  nlohmann::json to_json() const;
};

/// Writes run_dir/manifest.json via a temporary file and rename.
void write_manifest(const RunManifest& manifest);

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace dvae
