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

#include "dvae/run.h"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>

#include "dvae/error.h"

namespace fs = std::filesystem;

namespace dvae {

fs::path resolve_run_root(const std::string& flag) {
  if (!flag.empty()) return fs::absolute(flag);
  if (const char* env = std::getenv(kRunRootEnv); env != nullptr && *env != '\0') return fs::absolute(env);
  return fs::absolute("runs");
}

fs::path create_run_dir(const fs::path& root, const std::string& command) {
  fs::create_directories(root);
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  const std::string base = command + "-" + stamp;
  for (int n = 0; n < 10000; ++n) {
    const fs::path dir = root / (n == 0 ? base : base + "-" + std::to_string(n));
    // create_directory returns false when the directory already exists.
    if (fs::create_directory(dir)) return dir;
  }
  throw Error("could not allocate a fresh run directory under " + root.string());
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in = nlohmann::json::object();
  for (const auto& [path, hash] : inputs) in[path] = hash;
  return {{"tool_version", tool_version}, {"command", command}, {"argv", argv},
          {"stage", stage},               {"config_path", config_path},
          {"config_hash", config_hash},   {"seed", seed},
          {"run_dir", run_dir.string()},  {"inputs", in},
          {"outputs", outputs},           {"status", status}};
}

void write_json_atomic(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << j.dump(2) << '\n';
  }
  fs::rename(tmp, path);
}

void write_manifest(const RunManifest& manifest) {
  write_json_atomic(manifest.run_dir / "manifest.json", manifest.to_json());
}

}  // namespace dvae
