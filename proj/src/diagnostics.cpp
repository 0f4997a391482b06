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

#include "dvae/diagnostics.h"

#include <cmath>

#include <nlohmann/json.hpp>

#include "dvae/error.h"
#include "dvae/rng.h"

namespace dvae {

namespace {

torch::Tensor to_unit(const torch::Tensor& x) { return ((x.to(torch::kFloat64) + 1.0) * 0.5).clamp(0.0, 1.0); }

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double psnr(const torch::Tensor& x, const torch::Tensor& y, double range, double cap) {
  if (!x.sizes().equals(y.sizes())) throw ShapeError("psnr inputs differ in shape");
  const double mse = (x.to(torch::kFloat64) - y.to(torch::kFloat64)).pow(2).mean().item<double>();
  if (mse <= 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(range * range / mse));
}

double ssim(const torch::Tensor& x, const torch::Tensor& y, int64_t window, double range) {
  if (!x.sizes().equals(y.sizes())) throw ShapeError("ssim inputs differ in shape");
  if (x.dim() != 3 && x.dim() != 4) throw ShapeError("ssim expects (c, h, w) or (n, c, h, w)");
  if (x.size(-1) < window || x.size(-2) < window) {
    throw ShapeError("image " + std::to_string(x.size(-2)) + "x" + std::to_string(x.size(-1)) +
                     " is smaller than the SSIM window " + std::to_string(window));
  }
  auto a = x.to(torch::kFloat64), b = y.to(torch::kFloat64);
  if (a.dim() == 3) {
    a = a.unsqueeze(0);
    b = b.unsqueeze(0);
  }
  const int64_t n = a.size(0), c = a.size(1);
  a = a.reshape({n * c, 1, a.size(2), a.size(3)});
  b = b.reshape({n * c, 1, b.size(2), b.size(3)});
  auto pool = [window](const torch::Tensor& t) { return torch::avg_pool2d(t, {window, window}, {1, 1}); };
  const double c1 = std::pow(0.01 * range, 2), c2 = std::pow(0.03 * range, 2);
  auto mu_a = pool(a), mu_b = pool(b);
  auto var_a = pool(a * a) - mu_a * mu_a;
  auto var_b = pool(b * b) - mu_b * mu_b;
  auto cov = pool(a * b) - mu_a * mu_b;
  auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
  return map.mean().item<double>();
}

nlohmann::json ReconReport::to_json(bool per_image) const {
  nlohmann::json j{{"mode", mode},
                   {"count", psnr.size()},
                   {"psnr", mean_psnr},
                   {"ssim", mean_ssim},
                   {"perceptual_distance", mean_perceptual},
                   {"frechet_distance", frechet_distance ? nlohmann::json(*frechet_distance) : nlohmann::json()},
                   {"warnings", warnings}};
  if (per_image) {
    j["per_image"] = {{"psnr", psnr}, {"ssim", ssim}, {"perceptual_distance", perceptual}};
  }
  return j;
}

ReconReport reconstruction_report(const torch::Tensor& reference, const torch::Tensor& reconstruction,
                                  PerceptualExtractor* perceptual, int64_t ssim_window) {
  if (!reference.sizes().equals(reconstruction.sizes()) || reference.dim() != 4) {
    throw ShapeError("reconstruction report expects two (n, 3, h, w) batches of equal shape");
  }
  torch::NoGradGuard no_grad;
  ReconReport r;
  r.mode = "full";
  const auto ref = to_unit(reference), rec = to_unit(reconstruction);
  torch::Tensor dist;
  if (perceptual) dist = perceptual_distance(*perceptual, reconstruction.to(torch::kFloat32), reference.to(torch::kFloat32));
  for (int64_t i = 0; i < reference.size(0); ++i) {
    r.psnr.push_back(psnr(ref[i], rec[i]));
    r.ssim.push_back(ssim(ref[i], rec[i], ssim_window));
    r.perceptual.push_back(perceptual ? dist[i].item<double>() : 0.0);
  }
  r.mean_psnr = mean_of(r.psnr);
  r.mean_ssim = mean_of(r.ssim);
  r.mean_perceptual = mean_of(r.perceptual);
  return r;
}

std::string ablation_name(AblationMode mode) {
  switch (mode) {
    case AblationMode::kFull:
      return "full";
    case AblationMode::kZeroDetail:
      return "zero_detail";
    case AblationMode::kRandomDetail:
      return "random_detail";
  }
  return "unknown";
}

AblationMode parse_ablation(const std::string& name) {
  if (name == "full") return AblationMode::kFull;
  if (name == "zero_detail") return AblationMode::kZeroDetail;
  if (name == "random_detail") return AblationMode::kRandomDetail;
  throw ConfigError("unknown ablation mode '" + name + "' (full | zero_detail | random_detail)");
}

torch::Tensor decode_with_mode(VaeModelImpl& vae, const torch::Tensor& images_hr, AblationMode mode,
                               uint64_t seed, int64_t chunk) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(derive_seed(seed, Stream::kEval));
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < images_hr.size(0); i += chunk) {
    auto x = images_hr.narrow(0, i, std::min(chunk, images_hr.size(0) - i));
    auto z = encode_mean(vae, area_downsample(x, vae.layout().scale()), x);
    if (mode == AblationMode::kZeroDetail) z.detail = torch::zeros_like(z.detail);
    if (mode == AblationMode::kRandomDetail) z.detail = torch::randn(z.detail.sizes(), gen);
    out.push_back(decode(vae, z));
  }
  return torch::cat(out, 0);
}

ReconReport decoder_sensitivity(VaeModelImpl& vae, const torch::Tensor& images_hr, AblationMode mode,
                                uint64_t seed, PerceptualExtractor* perceptual) {
  auto rec = decode_with_mode(vae, images_hr, mode, seed);
  auto r = reconstruction_report(images_hr, rec, perceptual);
  r.mode = ablation_name(mode);
  if (vae.trained_steps == 0) {
    r.warnings.push_back("model reports zero training steps; sensitivity of an untrained decoder is not meaningful");
  }
  return r;
}

nlohmann::json SpectrumProfile::to_json() const {
  return {{"branch", branch == LatentBranch::kBase ? "base" : "detail"},
          {"radius", radius},
          {"power", power},
          {"total_energy", total_energy},
          {"spatial_energy", spatial_energy}};
}

int64_t radial_bin(int64_t ky, int64_t kx, int64_t h, int64_t w) {
  const int64_t fy = ky <= h / 2 ? ky : ky - h;
  const int64_t fx = kx <= w / 2 ? kx : kx - w;
  const auto r = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(fy * fy + fx * fx))));
  return std::min(r, std::min(h, w) / 2);
}

SpectrumProfile radial_power_spectrum(const torch::Tensor& latents, LatentBranch branch) {
  if (latents.dim() != 4 || latents.size(0) == 0) {
    throw ShapeError("radial_power_spectrum expects a non-empty (n, c, h, w) batch");
  }
  torch::NoGradGuard no_grad;
  const auto x = latents.detach().to(torch::kFloat64);
  const int64_t h = x.size(2), w = x.size(3);
  // |FFT|^2 / (h w) so that the bins sum to the spatial energy.
  const auto power = (torch::abs(torch::fft::fft2(x)).pow(2) / static_cast<double>(h * w)).mean({0, 1});
  const auto acc = power.accessor<double, 2>();
  SpectrumProfile p;
  p.branch = branch;
  const int64_t nyq = std::min(h, w) / 2;
  for (int64_t r = 0; r <= nyq; ++r) p.radius.push_back(r);
  p.power.assign(nyq + 1, 0.0);
  for (int64_t ky = 0; ky < h; ++ky) {
    for (int64_t kx = 0; kx < w; ++kx) p.power[radial_bin(ky, kx, h, w)] += acc[ky][kx];
  }
  for (double v : p.power) p.total_energy += v;
  p.spatial_energy = x.pow(2).sum({2, 3}).mean().item<double>();
  return p;
}

SpectrumProfile radial_power_spectrum(const LatentBatch& batch, LatentBranch branch) {
  return radial_power_spectrum(branch == LatentBranch::kBase ? batch.latents.base : batch.latents.detail,
                               branch);
}

double high_freq_energy_fraction(const SpectrumProfile& profile, double cutoff_fraction) {
  if (!(cutoff_fraction > 0.0 && cutoff_fraction < 1.0)) {
    throw ConfigError("cutoff fraction must lie in (0, 1), got " + std::to_string(cutoff_fraction));
  }
  if (profile.total_energy <= 0.0) return 0.0;
  const double cutoff = cutoff_fraction * static_cast<double>(profile.nyquist());
  double high = 0.0;
  for (size_t i = 0; i < profile.power.size(); ++i) {
    if (static_cast<double>(profile.radius[i]) > cutoff) high += profile.power[i];
  }
  return high / profile.total_energy;
}

Embedding2d latent_embedding_2d(const LatentBatch& batch) {
  if (batch.size() < 2) throw ShapeError("latent embedding needs at least two items");
  if (!batch.labels) throw ConfigError("latent embedding needs class labels");
  torch::NoGradGuard no_grad;
  const auto& d = batch.latents.detail;
  auto feats = torch::adaptive_avg_pool2d(d.to(torch::kFloat64), {std::min<int64_t>(2, d.size(2)),
                                                                  std::min<int64_t>(2, d.size(3))})
                   .reshape({batch.size(), -1});
  auto centered = feats - feats.mean(0, true);
  auto cov = centered.t().mm(centered) / static_cast<double>(std::max<int64_t>(1, batch.size() - 1));
  Embedding2d out;
  torch::Tensor coords;
  const double trace = cov.trace().item<double>();
  bool degenerate = feats.size(1) < 2 || !(trace > 0.0);
  if (!degenerate) {
    auto [evals, evecs] = torch::linalg_eigh(cov);  // ascending
    const int64_t k = evals.size(0);
    auto top = evecs.narrow(1, k - 2, 2).flip({1}).clone();
    out.explained_variance = {evals[k - 1].item<double>(), evals[k - 2].item<double>()};
    if (out.explained_variance[1] <= 1e-12 * trace) degenerate = true;
    for (int64_t j = 0; j < 2; ++j) {
      auto col = top.select(1, j);
      const auto idx = col.abs().argmax().item<int64_t>();
      if (col[idx].item<double>() < 0) col.neg_();
    }
    coords = centered.mm(top);
  }
  if (degenerate) {
    out.warning = "degenerate feature covariance; using the first two feature coordinates";
    auto padded = feats.size(1) >= 2 ? centered : torch::cat({centered, torch::zeros_like(centered)}, 1);
    coords = padded.narrow(1, 0, 2);
    out.explained_variance.clear();
  }
  const auto labels = batch.labels->to(torch::kLong);
  for (int64_t i = 0; i < batch.size(); ++i) {
    out.points.push_back({coords[i][0].item<double>(), coords[i][1].item<double>(), labels[i].item<int64_t>()});
  }
  return out;
}

}  // namespace dvae
