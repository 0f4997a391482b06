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

#include "dvae/dataset.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>

#include "dvae/error.h"
#include "dvae/image_io.h"
#include "dvae/rng.h"
#include "dvae/tokenizer.h"

namespace fs = std::filesystem;

namespace dvae {

void DatasetSpec::validate() const {
  if (kind != "procedural" && kind != "folder") {
    throw ConfigError("dataset.kind must be 'procedural' or 'folder', got '" + kind + "'");
  }
  if (size <= 0) throw ConfigError("dataset.size must be positive");
  if (resolution <= 0) throw ConfigError("dataset.resolution must be positive");
  if (kind == "procedural" && (num_classes < 1 || num_classes > 10)) {
    throw ConfigError("dataset.num_classes must be in [1, 10] for the procedural dataset");
  }
  if (kind == "folder" && path.empty()) throw ConfigError("dataset.path is required for folder datasets");
}

nlohmann::json DatasetSpec::to_json() const {
  nlohmann::json j{{"kind", kind}, {"size", size}, {"resolution", resolution},
                   {"num_classes", num_classes}, {"seed", seed}};
  if (!path.empty()) j["path"] = path;
  return j;
}

DatasetSpec DatasetSpec::from_json(const nlohmann::json& j) {
  DatasetSpec s;
  s.kind = j.value("kind", s.kind);
  s.size = j.value("size", s.size);
  s.resolution = j.value("resolution", s.resolution);
  s.num_classes = j.value("num_classes", s.num_classes);
  s.seed = j.value("seed", s.seed);
  s.path = j.value("path", s.path);
  s.validate();
  return s;
}

torch::Tensor ImageDataset::base_images(int64_t scale) const { return area_downsample(images, scale); }

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Signed inside test in normalized coordinates centered on the shape.
bool inside_shape(int64_t shape, double u, double v) {
  switch (shape) {
    case 0:  // disc
      return u * u + v * v <= 1.0;
    case 1:  // square
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 2:  // triangle
      return v <= 0.8 && v >= -0.9 + 1.7 * std::abs(u) * 1.05;
    case 3:  // cross
      return (std::abs(u) <= 0.3 && std::abs(v) <= 0.95) || (std::abs(v) <= 0.3 && std::abs(u) <= 0.95);
    default: {  // ring
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.36;
    }
  }
}

}  // namespace

torch::Tensor render_procedural(int64_t index, int64_t label, int64_t res, uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, Stream::kDataset, static_cast<uint64_t>(index)));
  const int64_t shape = label % 5;
  const int64_t texture = (label / 5) % 2;
  const double scale = static_cast<double>(res) / 64.0;

  const double cx = uniform(rng, 0.35, 0.65) * res, cy = uniform(rng, 0.35, 0.65) * res;
  const double radius = uniform(rng, 0.22, 0.32) * res;
  const double angle = uniform(rng, 0.0, std::numbers::pi);
  const double ca = std::cos(angle), sa = std::sin(angle);
  // Texture period of roughly 3 high-res pixels: resolvable at full
  // resolution, largely averaged away by a 2x area downsample.
  const double period = uniform(rng, 2.6, 3.6) * scale;
  const double tex_angle = uniform(rng, 0.0, std::numbers::pi);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  double fg[3], bg0[3], bg1[3];
  for (int c = 0; c < 3; ++c) {
    fg[c] = uniform(rng, -0.2, 0.9);
    bg0[c] = uniform(rng, -0.9, 0.1);
    bg1[c] = uniform(rng, -0.9, 0.1);
  }
  const double bg_tex = uniform(rng, 0.05, 0.2);

  auto img = torch::empty({3, res, res});
  auto acc = img.accessor<float, 3>();
  const double tc = std::cos(tex_angle), ts = std::sin(tex_angle);
  const double k = 2.0 * std::numbers::pi / period;
  for (int64_t y = 0; y < res; ++y) {
    for (int64_t x = 0; x < res; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double dx = px - cx, dy = py - cy;
      const double u = (ca * dx + sa * dy) / radius, v = (-sa * dx + ca * dy) / radius;
      const double a = tc * px + ts * py, b = -ts * px + tc * py;
      double pattern;
      if (texture == 0) {
        pattern = std::sin(k * a + phase);
      } else {
        pattern = std::sin(k * a + phase) * std::sin(k * b + phase);
        pattern = pattern >= 0 ? 1.0 : -1.0;
      }
      const double g = static_cast<double>(y) / std::max<int64_t>(res - 1, 1);
      for (int c = 0; c < 3; ++c) {
        double value;
        if (inside_shape(shape, u, v)) {
          value = fg[c] + 0.35 * pattern;
        } else {
          value = (1.0 - g) * bg0[c] + g * bg1[c] + bg_tex * std::sin(0.5 * k * b);
        }
        acc[c][y][x] = static_cast<float>(std::clamp(value, -1.0, 1.0));
      }
    }
  }
  return img;
}

ImageDataset make_procedural_dataset(const DatasetSpec& spec) {
  spec.validate();
  ImageDataset ds;
  ds.num_classes = spec.num_classes;
  ds.images = torch::empty({spec.size, 3, spec.resolution, spec.resolution});
  ds.labels = torch::empty({spec.size}, torch::kLong);
  auto labels = ds.labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < spec.size; ++i) {
    labels[i] = i % spec.num_classes;  // balanced classes
    ds.images[i].copy_(render_procedural(i, labels[i], spec.resolution, spec.seed));
  }
  return ds;
}

ImageDataset load_folder_dataset(const fs::path& root, int64_t resolution) {
  if (!fs::is_directory(root)) throw Error("dataset folder not found: " + root.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("no PNG images under " + root.string());

  std::map<std::string, int64_t> classes;
  for (const auto& f : files) {
    auto rel = fs::relative(f, root);
    if (std::distance(rel.begin(), rel.end()) > 1) classes.emplace(rel.begin()->string(), 0);
  }
  int64_t next = 0;
  for (auto& [name, id] : classes) id = next++;

  ImageDataset ds;
  ds.num_classes = std::max<int64_t>(1, next);
  ds.images = torch::empty({static_cast<int64_t>(files.size()), 3, resolution, resolution});
  ds.labels = torch::zeros({static_cast<int64_t>(files.size())}, torch::kLong);
  for (size_t i = 0; i < files.size(); ++i) {
    auto t = image_to_tensor(read_png(files[i])).unsqueeze(0);
    if (t.size(2) != resolution || t.size(3) != resolution) {
      t = torch::nn::functional::interpolate(
          t, torch::nn::functional::InterpolateFuncOptions()
                 .size(std::vector<int64_t>{resolution, resolution})
                 .mode(torch::kArea));
    }
    ds.images[static_cast<int64_t>(i)].copy_(t[0]);
    auto rel = fs::relative(files[i], root);
    if (std::distance(rel.begin(), rel.end()) > 1) {
      ds.labels[static_cast<int64_t>(i)] = classes.at(rel.begin()->string());
    }
  }
  return ds;
}

ImageDataset load_dataset(const DatasetSpec& spec) {
  spec.validate();
  if (spec.kind == "folder") {
    auto ds = load_folder_dataset(spec.path, spec.resolution);
    if (spec.size < ds.size()) {
      ds.images = ds.images.narrow(0, 0, spec.size);
      ds.labels = ds.labels.narrow(0, 0, spec.size);
    }
    return ds;
  }
  return make_procedural_dataset(spec);
}

BatchSampler::BatchSampler(int64_t dataset_size, int64_t batch_size, uint64_t seed)
    : n_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (dataset_size <= 0) throw ConfigError("dataset is empty");
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
}

const torch::Tensor& BatchSampler::permutation(int64_t epoch) {
  if (epoch != cached_epoch_) {
    auto gen = make_generator(derive_seed(seed_, Stream::kDataOrder, static_cast<uint64_t>(epoch)));
    cached_ = torch::randperm(n_, gen, torch::kLong);
    cached_epoch_ = epoch;
  }
  return cached_;
}

torch::Tensor BatchSampler::indices(int64_t step) {
  if (step < 0) throw Error("batch step must be non-negative");
  auto out = torch::empty({batch_size_}, torch::kLong);
  auto acc = out.accessor<int64_t, 1>();
  int64_t pos = step * batch_size_;
  for (int64_t i = 0; i < batch_size_; ++i, ++pos) {
    const auto& perm = permutation(pos / n_);
    acc[i] = perm[pos % n_].item<int64_t>();
  }
  return out;
}

}  // namespace dvae
