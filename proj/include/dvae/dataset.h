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

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

namespace dvae {

struct DatasetSpec {
  std::string kind = "procedural";  // procedural | folder
  int64_t size = 1024;
  int64_t resolution = 64;  // high-res side
  int64_t num_classes = 10;
  uint64_t seed = 0;
  std::string path;  // folder datasets only

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);
};

/// In-memory image set. Images are (n, 3, R, R) in [-1, 1].
struct ImageDataset {
  torch::Tensor images;
  torch::Tensor labels;  // (n) int64
  int64_t num_classes = 0;

  int64_t size() const { return images.size(0); }
  torch::Tensor base_images(int64_t scale) const;
};

/// One procedural item: a shape silhouette filled with a fine periodic
/// texture over a smooth background gradient. Classes combine five shapes
/// with two texture families.
torch::Tensor render_procedural(int64_t index, int64_t label, int64_t resolution, uint64_t seed);

ImageDataset make_procedural_dataset(const DatasetSpec& spec);

/// PNG files under `root` (recursively, sorted by path). Immediate
/// subdirectory names become class labels; files directly under root get
/// label 0. Images are resized to resolution x resolution.
ImageDataset load_folder_dataset(const std::filesystem::path& root, int64_t resolution);

ImageDataset load_dataset(const DatasetSpec& spec);

/// Step-indexed batches drawn from per-epoch permutations so that batch n is
/// a pure function of (seed, n) regardless of how many batches preceded it.
class BatchSampler {
 public:
  BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed);

  torch::Tensor indices(int64_t step);
  int64_t batch_size() const { return batch_size_; }

 private:
  const torch::Tensor& permutation(int64_t epoch);

  int64_t n_;
  int64_t batch_size_;
  uint64_t seed_;
  int64_t cached_epoch_ = -1;
  torch::Tensor cached_;
};

}  // namespace dvae
