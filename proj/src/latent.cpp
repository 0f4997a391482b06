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

#include "dvae/latent.h"

#include <sstream>

#include <nlohmann/json.hpp>

#include "dvae/error.h"

namespace dvae {

namespace {

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void require_rank(const torch::Tensor& t, const char* what) {
  if (t.dim() != 3 && t.dim() != 4) {
    throw ShapeError(std::string(what) + ": expected a (c,h,w) or (n,c,h,w) tensor, got " +
                     shape_str(t));
  }
}

}  // namespace

LatentLayout::LatentLayout(int64_t downsample, int64_t patch, int64_t base_channels,
                           int64_t detail_channels, int64_t scale)
    : downsample_(downsample),
      patch_(patch),
      base_channels_(base_channels),
      detail_channels_(detail_channels),
      scale_(scale) {
  if (downsample < 1 || patch < 1 || base_channels < 1 || detail_channels < 1 || scale < 1) {
    throw LayoutError("layout fields must be strictly positive: " + describe());
  }
  if (detail_channels % base_channels != 0) {
    throw LayoutError("detail channels (" + std::to_string(detail_channels) +
                      ") must be a multiple of base channels (" + std::to_string(base_channels) +
                      ")");
  }
}

int64_t LatentLayout::latent_side(int64_t base_side) const {
  if (base_side % downsample_ != 0) {
    throw ShapeError("image side " + std::to_string(base_side) + " is not divisible by f=" +
                     std::to_string(downsample_));
  }
  return base_side / downsample_;
}

int64_t LatentLayout::token_count(int64_t base_height, int64_t base_width) const {
  const int64_t cell = downsample_ * patch_;
  if (base_height % cell != 0 || base_width % cell != 0) {
    throw ShapeError("image " + std::to_string(base_height) + "x" + std::to_string(base_width) +
                     " is not divisible by f*p=" + std::to_string(cell));
  }
  return (base_height / cell) * (base_width / cell);
}

std::string LatentLayout::describe() const {
  std::ostringstream os;
  os << "f" << downsample_ << "c" << total_channels() << "p" << patch_ << " (C=" << base_channels_
     << ", D=" << detail_channels_ << ", s=" << scale_ << ")";
  return os.str();
}

nlohmann::json LatentLayout::to_json() const {
  return {{"f", downsample_},
          {"p", patch_},
          {"C", base_channels_},
          {"D", detail_channels_},
          {"s", scale_}};
}

LatentLayout LatentLayout::from_json(const nlohmann::json& j) {
  try {
    return LatentLayout(j.at("f").get<int64_t>(), j.at("p").get<int64_t>(),
                        j.at("C").get<int64_t>(), j.at("D").get<int64_t>(),
                        j.value("s", int64_t{2}));
  } catch (const nlohmann::json::exception& e) {
    throw LayoutError(std::string("malformed layout: ") + e.what());
  }
}

StructuredLatent::StructuredLatent(torch::Tensor base_latent, torch::Tensor detail_latent)
    : base(std::move(base_latent)), detail(std::move(detail_latent)) {
  require_rank(base, "base latent");
  require_rank(detail, "detail latent");
  const bool same_lead = base.dim() == detail.dim() && (base.dim() == 3 || base.size(0) == detail.size(0));
  if (!same_lead || base.size(-1) != detail.size(-1) || base.size(-2) != detail.size(-2)) {
    throw ShapeError("base " + shape_str(base) + " and detail " + shape_str(detail) +
                     " do not share batch and spatial dimensions");
  }
}

torch::Tensor StructuredLatent::packed() const { return concat_structured(base, detail); }

LatentBatch::LatentBatch(StructuredLatent batched, std::optional<torch::Tensor> item_labels)
    : latents(std::move(batched)), labels(std::move(item_labels)) {
  if (latents.base.dim() != 4 || latents.base.size(0) == 0) {
    throw ShapeError("latent batch must be a non-empty (n,c,h,w) batch");
  }
  if (labels && labels->numel() != latents.base.size(0)) {
    throw ShapeError("label count does not match batch size");
  }
}

torch::Tensor concat_structured(const torch::Tensor& base, const torch::Tensor& detail) {
  // The constructor performs the shape validation.
  StructuredLatent checked(base, detail);
  return torch::cat({checked.base, checked.detail}, -3);
}

StructuredLatent split_structured(const torch::Tensor& packed, const LatentLayout& layout) {
  require_rank(packed, "structured latent");
  const int64_t channels = packed.size(-3);
  if (channels != layout.total_channels()) {
    throw ShapeError("structured latent has " + std::to_string(channels) +
                     " channels, layout expects " + std::to_string(layout.total_channels()) +
                     " (C=" + std::to_string(layout.base_channels()) +
                     " + D=" + std::to_string(layout.detail_channels()) + ")");
  }
  auto base = packed.narrow(-3, 0, layout.base_channels());
  auto detail = packed.narrow(-3, layout.base_channels(), layout.detail_channels());
  return {base, detail};
}

torch::Tensor grouped_projection(const torch::Tensor& detail, const LatentLayout& layout) {
  require_rank(detail, "detail latent");
  if (detail.size(-3) != layout.detail_channels()) {
    throw ShapeError("detail latent has " + std::to_string(detail.size(-3)) +
                     " channels, layout expects D=" + std::to_string(layout.detail_channels()));
  }
  const int64_t r = layout.group_size();
  if (r == 1) {
    return detail;
  }
  std::vector<int64_t> grouped(detail.sizes().begin(), detail.sizes().end() - 3);
  grouped.insert(grouped.end(),
                 {layout.base_channels(), r, detail.size(-2), detail.size(-1)});
  return detail.reshape(grouped).mean(-3);
}

torch::Tensor alignment_loss(const torch::Tensor& detail, const torch::Tensor& base,
                             const LatentLayout& layout) {
  auto projected = grouped_projection(detail, layout);
  if (!projected.sizes().equals(base.sizes())) {
    throw ShapeError("alignment target " + shape_str(base) + " does not match projected detail " +
                     shape_str(projected));
  }
  return (projected - base).pow(2).mean();
}

}  // namespace dvae
