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
#include <utility>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "dvae/latent.h"

namespace dvae {

class VaeModelImpl;

/// Class-conditional toy diffusion transformer geometry.
struct DiTConfig {
  int64_t hidden = 256;
  int64_t depth = 6;
  int64_t heads = 4;
  double mlp_ratio = 4.0;
  int64_t num_classes = 10;
  bool null_label = true;  // extra embedding row used for classifier-free guidance
  int64_t in_channels = 4;  // C
  int64_t patch = 2;        // p
  int64_t grid_h = 8;       // latent grid (h/f)
  int64_t grid_w = 8;

  int64_t token_grid_h() const { return grid_h / patch; }
  int64_t token_grid_w() const { return grid_w / patch; }
  int64_t tokens() const { return token_grid_h() * token_grid_w(); }

  void validate() const;
  std::string describe() const;
  nlohmann::json to_json() const;
  static DiTConfig from_json(const nlohmann::json& j);
};

/// Per-channel affine normalization applied to latents before diffusion.
struct LatentNormalizer {
  torch::Tensor mean;  // (c)
  torch::Tensor std;   // (c)

  bool defined() const { return mean.defined(); }
  torch::Tensor normalize(const torch::Tensor& x) const;
  torch::Tensor denormalize(const torch::Tensor& x) const;
  // Channel statistics over (n, h, w) of a (n, c, h, w) batch.
  static LatentNormalizer fit(const torch::Tensor& latents);
  static LatentNormalizer concat(const LatentNormalizer& a, const LatentNormalizer& b);
  LatentNormalizer slice(int64_t start, int64_t length) const;
};

/// (n, c, h, w) -> (n, (h/p)*(w/p), c*p*p), row-major over the token grid.
torch::Tensor patchify(const torch::Tensor& x, int64_t patch);
torch::Tensor unpatchify(const torch::Tensor& tokens, int64_t channels, int64_t patch,
                         int64_t grid_h, int64_t grid_w);

class DiTBlockImpl : public torch::nn::Module {
 public:
  DiTBlockImpl(int64_t hidden, int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

 private:
  int64_t heads_;
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear qkv_{nullptr}, proj_{nullptr}, fc1_{nullptr}, fc2_{nullptr}, ada_{nullptr};
};
TORCH_MODULE(DiTBlock);

/// Everything between the patch embedders and the output heads: timestep
/// and label embedding, fixed 2D position embedding, adaLN-Zero blocks and
/// the modulated final norm.
class DiTBackboneImpl : public torch::nn::Module {
 public:
  explicit DiTBackboneImpl(const DiTConfig& config);
  torch::Tensor forward(const torch::Tensor& tokens, const torch::Tensor& t,
                        const torch::Tensor& labels);

 private:
  DiTConfig config_;
  torch::Tensor pos_embed_;
  torch::nn::Sequential t_mlp_{nullptr};
  torch::nn::Embedding label_embed_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::LayerNorm final_norm_{nullptr};
  torch::nn::Linear final_ada_{nullptr};
};
TORCH_MODULE(DiTBackbone);

/// Pretrained-style DiT over the base latent: P -> backbone -> O.
class BaseDiTImpl : public torch::nn::Module {
 public:
  explicit BaseDiTImpl(const DiTConfig& config);
  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& t, const torch::Tensor& labels);

  const DiTConfig& config() const { return config_; }

  torch::nn::Linear patch_embed{nullptr};  // P
  DiTBackbone backbone{nullptr};
  torch::nn::Linear head{nullptr};  // O
  LatentNormalizer normalizer;      // base channels

 private:
  DiTConfig config_;
};
TORCH_MODULE(BaseDiT);

/// Base DiT extended with a detail patch embedder P' and detail head O'.
class DiTAdapterImpl : public torch::nn::Module {
 public:
  DiTAdapterImpl(const DiTConfig& config, int64_t detail_channels);

  // (n, L, h/p, w/p) token grid: P(z) + P'(z_d).
  torch::Tensor embed_tokens(const torch::Tensor& z, const torch::Tensor& z_d);
  // Token grid -> (u_hat, u_hat_d).
  std::pair<torch::Tensor, torch::Tensor> decode_outputs(const torch::Tensor& features);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z, const torch::Tensor& z_d,
                                                  const torch::Tensor& t,
                                                  const torch::Tensor& labels);

  const DiTConfig& config() const { return config_; }
  int64_t detail_channels() const { return detail_channels_; }

  torch::nn::Linear patch_embed{nullptr};         // P
  torch::nn::Linear detail_patch_embed{nullptr};  // P'
  DiTBackbone backbone{nullptr};
  torch::nn::Linear head{nullptr};         // O
  torch::nn::Linear detail_head{nullptr};  // O'
  LatentNormalizer normalizer;             // all C + D channels

 private:
  torch::Tensor embed_sequence(const torch::Tensor& z, const torch::Tensor& z_d);
  std::pair<torch::Tensor, torch::Tensor> heads_from_sequence(const torch::Tensor& features);

  DiTConfig config_;
  int64_t detail_channels_;
};
TORCH_MODULE(DiTAdapter);

enum class AdapterInit { kZero, kRandom };

struct AttachOptions {
  AdapterInit init = AdapterInit::kZero;
  uint64_t seed = 0;  // only used by AdapterInit::kRandom
  // Token grid the caller expects; checked against the pretrained model.
  std::optional<std::pair<int64_t, int64_t>> latent_grid;
};

/// Copies P, the backbone and O from `pretrained` and creates P', O' with
/// D * p^2 features. With AdapterInit::kZero the new weights and biases are
/// exactly zero, so the adapted model reproduces the pretrained one.
DiTAdapter attach_adapter(BaseDiTImpl& pretrained, const LatentLayout& layout,
                          const AttachOptions& options = {});

struct EquivalenceReport {
  double max_abs_base_diff = 0.0;
  double max_abs_detail = 0.0;
  int64_t pairs = 0;
  bool passed = false;  // base diff <= 1e-6 and detail output identically zero
};

/// Runs both models on `pairs` random (z, z_d, t, label) draws.
EquivalenceReport check_zero_init_equivalence(BaseDiTImpl& pretrained, DiTAdapterImpl& adapter,
                                              int64_t pairs, uint64_t seed);

/// Cosine ramp of the detail-branch loss weight over `n_warm` steps.
struct WarmupSchedule {
  int64_t n_warm = 10000;
  explicit WarmupSchedule(int64_t warm = 10000);
};

double loss_weight(const WarmupSchedule& schedule, int64_t n);

struct VelocityTarget {
  torch::Tensor u;
  torch::Tensor u_d;
};

struct DitLossTerms {
  torch::Tensor total;        // weighted, normalized by |B| + w |R|
  torch::Tensor base_mse;     // unweighted
  torch::Tensor detail_mse;   // unweighted; undefined for base-only models
};

DitLossTerms dit_loss(const torch::Tensor& u_hat, const torch::Tensor& u_hat_d,
                      const VelocityTarget& target, double w);

/// Linear path x_t = (1 - t) x0 + t x1 with velocity u = x1 - x0. `x0` is
/// noise, `x1` the clean latent.
std::pair<StructuredLatent, VelocityTarget> make_velocity_target(const StructuredLatent& x0,
                                                                 const StructuredLatent& x1,
                                                                 double t);
// Per-item times, `t` of shape (n).
std::pair<StructuredLatent, VelocityTarget> make_velocity_target(const StructuredLatent& x0,
                                                                 const StructuredLatent& x1,
                                                                 const torch::Tensor& t);

struct SamplerConfig {
  int64_t steps = 250;
  double guidance_scale = 4.0;
  double cfg_interval_start = 0.2;  // guidance only for t >= this value
  double timestep_shift = 0.3;

  void validate() const;
  nlohmann::json to_json() const;
};

/// t' = shift * t / (1 + (shift - 1) * t).
double shift_timestep(double t, double shift);

/// Classifier-free guided velocity. With scale 1 (or guidance inactive) the
/// conditional prediction is returned unchanged.
std::pair<torch::Tensor, torch::Tensor> guided_velocity(DiTAdapterImpl& adapter,
                                                        const StructuredLatent& x,
                                                        const torch::Tensor& t,
                                                        const torch::Tensor& labels,
                                                        double guidance_scale);

/// Euler integration from noise (t = 0) to data (t = 1) in normalized latent
/// space. Returns denormalized latents.
StructuredLatent sample_latents(DiTAdapterImpl& adapter, const torch::Tensor& labels,
                                const SamplerConfig& cfg, uint64_t seed);

/// sample_latents followed by the detail-aware decoder.
torch::Tensor sample(DiTAdapterImpl& adapter, VaeModelImpl& vae, const torch::Tensor& labels,
                     const SamplerConfig& cfg, uint64_t seed);

}  // namespace dvae
