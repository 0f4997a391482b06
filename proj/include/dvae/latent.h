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
#include <optional>
#include <string>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

namespace dvae {

/// Compression geometry shared by the tokenizer and the diffusion model.
///
/// An image of size H x W is encoded to a `base_channels` x H/f x W/f latent.
/// A `scale`-times larger image is encoded to the same grid with an extra
/// `detail_channels` block. The diffusion model folds p x p latent cells into
/// one token. `detail_channels` must be a multiple of `base_channels`; the
/// quotient is the group size used by the grouped projection.
class LatentLayout {
 public:
  LatentLayout(int64_t downsample, int64_t patch, int64_t base_channels,
               int64_t detail_channels, int64_t scale = 2);

  int64_t downsample() const { return downsample_; }
  int64_t patch() const { return patch_; }
  int64_t base_channels() const { return base_channels_; }
  int64_t detail_channels() const { return detail_channels_; }
  int64_t scale() const { return scale_; }
  int64_t group_size() const { return detail_channels_ / base_channels_; }
  int64_t total_channels() const { return base_channels_ + detail_channels_; }

  // Latent grid side for a base-resolution image side.
  int64_t latent_side(int64_t base_side) const;
  // Number of diffusion tokens for a base-resolution image.
  int64_t token_count(int64_t base_height, int64_t base_width) const;

  std::string describe() const;

  nlohmann::json to_json() const;
  static LatentLayout from_json(const nlohmann::json& j);

  bool operator==(const LatentLayout&) const = default;

 private:
  int64_t downsample_;
  int64_t patch_;
  int64_t base_channels_;
  int64_t detail_channels_;
  int64_t scale_;
};

/// Base and detail latents sharing one spatial grid. Tensors are either
/// (c, h, w) or batched (n, c, h, w); the channel axis is always dim -3.
struct StructuredLatent {
  torch::Tensor base;
  torch::Tensor detail;

  StructuredLatent() = default;
  StructuredLatent(torch::Tensor base_latent, torch::Tensor detail_latent);

  // Base-first channel concatenation.
  torch::Tensor packed() const;
};

/// A homogeneous batch of structured latents with optional class ids.
struct LatentBatch {
  StructuredLatent latents;  // batched, (n, c, h, w)
  std::optional<torch::Tensor> labels;

  LatentBatch(StructuredLatent batched, std::optional<torch::Tensor> labels = std::nullopt);
  int64_t size() const { return latents.base.size(0); }
};

torch::Tensor concat_structured(const torch::Tensor& base, const torch::Tensor& detail);

StructuredLatent split_structured(const torch::Tensor& packed, const LatentLayout& layout);

/// Parameter-free grouped reduction of the detail latent onto the base
/// channel count: output channel i is the mean of detail channels
/// [i*r, (i+1)*r).
torch::Tensor grouped_projection(const torch::Tensor& detail, const LatentLayout& layout);

/// Mean squared error between grouped_projection(detail) and base, averaged
/// over every element (and batch item).
torch::Tensor alignment_loss(const torch::Tensor& detail, const torch::Tensor& base,
                             const LatentLayout& layout);

}  // namespace dvae
