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
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "dvae/latent.h"
#include "dvae/tokenizer.h"

namespace dvae {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(range^2 / MSE) over all elements; kPsnrCap when MSE == 0.
double psnr(const torch::Tensor& x, const torch::Tensor& y, double range = 1.0, double cap = kPsnrCap);

/// Mean SSIM over all valid window positions and channels of (c, h, w) or
/// (n, c, h, w) inputs, using a uniform window. Throws when the image is
/// smaller than the window.
double ssim(const torch::Tensor& x, const torch::Tensor& y, int64_t window = 7, double range = 1.0);

struct ReconReport {
  std::string mode;
  std::vector<double> psnr;
  std::vector<double> ssim;
  std::vector<double> perceptual;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  double mean_perceptual = 0.0;
  std::optional<double> frechet_distance;  // filled only with a user-supplied feature extractor
  std::vector<std::string> warnings;

  nlohmann::json to_json(bool per_image = true) const;
};

/// Compares images in [-1, 1] after mapping both to [0, 1].
ReconReport reconstruction_report(const torch::Tensor& reference, const torch::Tensor& reconstruction,
                                  PerceptualExtractor* perceptual, int64_t ssim_window = 7);

enum class AblationMode { kFull, kZeroDetail, kRandomDetail };

std::string ablation_name(AblationMode mode);
AblationMode parse_ablation(const std::string& name);

/// Reconstructions of high-res images with the detail latent kept (full),
/// zeroed, or replaced by N(0, 1) noise drawn from `seed`. The base latent is
/// always the posterior mean.
torch::Tensor decode_with_mode(VaeModelImpl& vae, const torch::Tensor& images_hr, AblationMode mode,
                               uint64_t seed, int64_t chunk = 64);

ReconReport decoder_sensitivity(VaeModelImpl& vae, const torch::Tensor& images_hr, AblationMode mode,
                                uint64_t seed, PerceptualExtractor* perceptual);

enum class LatentBranch { kBase, kDetail };

struct SpectrumProfile {
  LatentBranch branch = LatentBranch::kBase;
  std::vector<int64_t> radius;  // 0 .. nyquist
  std::vector<double> power;    // energy per radius bin, averaged over channels and items
  double total_energy = 0.0;    // sum of power
  double spatial_energy = 0.0;  // mean over channels and items of sum x^2

  int64_t nyquist() const { return radius.empty() ? 0 : radius.back(); }
  nlohmann::json to_json() const;
};

/// Radius bin of frequency index (ky, kx) on an h x w grid: integer
/// rounding of the distance from DC, clamped to min(h, w) / 2.
int64_t radial_bin(int64_t ky, int64_t kx, int64_t h, int64_t w);

SpectrumProfile radial_power_spectrum(const LatentBatch& batch, LatentBranch branch);
SpectrumProfile radial_power_spectrum(const torch::Tensor& latents, LatentBranch branch);

/// Energy in bins with radius > cutoff_fraction * nyquist over total energy.
double high_freq_energy_fraction(const SpectrumProfile& profile, double cutoff_fraction);

struct EmbeddingPoint {
  double x;
  double y;
  int64_t label;
};

struct Embedding2d {
  std::vector<EmbeddingPoint> points;
  std::vector<double> explained_variance;  // top-2 eigenvalues
  std::optional<std::string> warning;
};

/// Top-2 principal components of per-item detail features (2x2 average
/// pooled, flattened). Eigenvector signs are fixed so the largest-magnitude
/// loading is positive.
Embedding2d latent_embedding_2d(const LatentBatch& batch);

}  // namespace dvae
