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
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "dvae/latent.h"

namespace dvae {

/// Diagonal Gaussian posterior. The log-variance is clamped on construction.
struct GaussianParams {
  static constexpr double kLogvarMin = -30.0;
  static constexpr double kLogvarMax = 20.0;

  torch::Tensor mean;
  torch::Tensor logvar;

  GaussianParams(torch::Tensor mean_, torch::Tensor logvar_);
};

/// Reparameterized draw mean + exp(logvar/2) * eps with eps from `seed`.
torch::Tensor sample_latent(const GaussianParams& params, uint64_t seed);
torch::Tensor sample_latent(const GaussianParams& params, torch::Generator& gen);

/// Mean over elements of 0.5 * (mu^2 + exp(logvar) - 1 - logvar).
torch::Tensor kl_loss(const GaussianParams& params);

struct VaeLossWeights {
  double lpips = 1.0;
  double l1 = 1.0;
  double adv = 0.0;  // 0 disables the discriminator path
  double kl = 1e-6;
  double align = 0.5;

  // Class-conditional recipe: (1.0, 1.0, 0.1, 1e-6, 0.5).
  static VaeLossWeights class_conditional();
  // Text-to-image recipe: (1.0, 2.0, 0.1, 1e-7, 1.0).
  static VaeLossWeights text_to_image();

  void validate() const;
  nlohmann::json to_json() const;
  static VaeLossWeights from_json(const nlohmann::json& j, const VaeLossWeights& defaults);
};

/// Channel widths of the convolutional backbone, one per resolution level.
/// The backbone downsamples by 2 between consecutive levels, so a backbone
/// with k widths has spatial factor 2^(k-1).
struct VaeArch {
  std::vector<int64_t> widths{16, 32, 64};

  int64_t downsample() const { return int64_t{1} << (widths.size() - 1); }
  void validate(const LatentLayout& layout) const;
  nlohmann::json to_json() const;
  static VaeArch from_json(const nlohmann::json& j);
};

class ResBlockImpl : public torch::nn::Module {
 public:
  explicit ResBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
};
TORCH_MODULE(ResBlock);

class EncoderBackboneImpl : public torch::nn::Module {
 public:
  explicit EncoderBackboneImpl(const VaeArch& arch);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(EncoderBackbone);

class DecoderBackboneImpl : public torch::nn::Module {
 public:
  explicit DecoderBackboneImpl(const VaeArch& arch);
  torch::Tensor forward(torch::Tensor x);

 private:
  torch::nn::Sequential layers_{nullptr};
};
TORCH_MODULE(DecoderBackbone);

/// Backbone followed by a latent head. `extra_downsample` adds strided 3x3
/// conv blocks (width preserved) between backbone and head; the detail
/// encoder uses it to absorb the resolution scale factor.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const VaeArch& arch, int64_t latent_channels, int64_t extra_downsample);
  GaussianParams forward(const torch::Tensor& image);

  EncoderBackbone backbone{nullptr};

 private:
  torch::nn::Sequential head_{nullptr};
  int64_t latent_channels_;
};
TORCH_MODULE(Encoder);

/// Latent stem followed by the decoder backbone. With `upsample_scale` > 1 the
/// stem is a channel-to-space rearrangement (pixel shuffle) and a 3x3 conv to
/// the backbone width; otherwise a plain 3x3 conv.
class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(const VaeArch& arch, int64_t latent_channels, int64_t upsample_scale);
  torch::Tensor forward(const torch::Tensor& latent);

  DecoderBackbone backbone{nullptr};

 private:
  torch::nn::Sequential stem_{nullptr};
  int64_t latent_channels_;
};
TORCH_MODULE(Decoder);

/// Conventional single-resolution VAE. Its encoder becomes the frozen base
/// encoder of the detail-augmented model.
class BaseVaeImpl : public torch::nn::Module {
 public:
  BaseVaeImpl(const LatentLayout& layout, const VaeArch& arch);

  const LatentLayout& layout() const { return layout_; }
  const VaeArch& arch() const { return arch_; }

  Encoder encoder{nullptr};
  Decoder decoder{nullptr};

 private:
  LatentLayout layout_;
  VaeArch arch_;
};
TORCH_MODULE(BaseVae);

/// Frozen base encoder, trainable detail encoder and a joint decoder over the
/// (C + D)-channel structured latent.
class VaeModelImpl : public torch::nn::Module {
 public:
  VaeModelImpl(const LatentLayout& layout, const VaeArch& arch);

  // Copies the base VAE encoder into `base_encoder` and seeds the detail
  // encoder and decoder backbones from the base VAE backbones.
  void init_from_base(BaseVaeImpl& base);

  // Parameters touched by the optimizer (detail encoder and decoder).
  std::vector<torch::Tensor> trainable_parameters();

  const LatentLayout& layout() const { return layout_; }
  const VaeArch& arch() const { return arch_; }

  Encoder base_encoder{nullptr};
  Encoder detail_encoder{nullptr};
  Decoder decoder{nullptr};

  int64_t trained_steps = 0;

 private:
  LatentLayout layout_;
  VaeArch arch_;
};
TORCH_MODULE(VaeModel);

/// Box-filter downsample by an integer factor (area interpolation).
torch::Tensor area_downsample(const torch::Tensor& image, int64_t factor);

GaussianParams encode_base(VaeModelImpl& model, const torch::Tensor& image_base);
GaussianParams encode_detail(VaeModelImpl& model, const torch::Tensor& image_hr);

/// Samples the base latent with `seed` and the detail latent with a derived
/// stream, packed base-first.
StructuredLatent encode(VaeModelImpl& model, const torch::Tensor& image_base,
                        const torch::Tensor& image_hr, uint64_t seed);
/// Posterior means of both branches (evaluation convention).
StructuredLatent encode_mean(VaeModelImpl& model, const torch::Tensor& image_base,
                             const torch::Tensor& image_hr);

torch::Tensor decode(VaeModelImpl& model, const StructuredLatent& latent);

/// Feature extractor behind the perceptual term. Implementations return a
/// list of (n, c, h, w) activations; gradients must flow to the input.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  virtual std::vector<torch::Tensor> features(const torch::Tensor& image) = 0;
};

/// Fixed randomly initialized conv stack used as a perceptual-distance proxy
/// when no pretrained network is available.
class RandomFeaturePerceptual : public PerceptualExtractor {
 public:
  explicit RandomFeaturePerceptual(uint64_t seed = 0x5eed, std::vector<int64_t> widths = {16, 32, 64});
  std::vector<torch::Tensor> features(const torch::Tensor& image) override;
  void to(torch::Dtype dtype);

 private:
  std::vector<torch::nn::Conv2d> convs_;
};

/// LPIPS-style distance: unit-normalize features over channels, squared
/// difference summed over channels, averaged spatially and over layers.
/// Returns one value per batch item.
torch::Tensor perceptual_distance(PerceptualExtractor& extractor, const torch::Tensor& x,
                                  const torch::Tensor& y);

/// Patch-level hinge discriminator.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(int64_t width = 32);
  torch::Tensor forward(const torch::Tensor& image);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Discriminator);

torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_logits,
                                       const torch::Tensor& fake_logits);

/// Unweighted per-term values plus the weighted reconstruction sum.
struct VaeLossTerms {
  torch::Tensor lpips;
  torch::Tensor l1;
  torch::Tensor adv;
  torch::Tensor kl;
  torch::Tensor reconstruction;
};

VaeLossTerms vae_reconstruction_loss(const torch::Tensor& x_hr, const torch::Tensor& x_rec,
                                     const VaeLossWeights& weights,
                                     PerceptualExtractor* perceptual,
                                     DiscriminatorImpl* discriminator,
                                     const GaussianParams* posterior);

struct VaeTotalLoss {
  torch::Tensor total;
  torch::Tensor align;
};

/// reconstruction + lambda_align * alignment_loss(z_d, z). Throws
/// NonFiniteLossError naming the first non-finite term.
VaeTotalLoss vae_total_loss(const VaeLossTerms& recon, const torch::Tensor& z,
                            const torch::Tensor& z_d, const VaeLossWeights& weights,
                            const LatentLayout& layout);

}  // namespace dvae
