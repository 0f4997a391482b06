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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>

#include <torch/torch.h>

#include "dvae/diagnostics.h"
#include "dvae/error.h"
#include "dvae/tokenizer.h"

namespace dvae {
namespace {

TEST(Psnr, ClosedForms) {
  auto x = torch::rand({3, 8, 8});
  EXPECT_EQ(psnr(x, x), kPsnrCap);
  EXPECT_NEAR(psnr(torch::zeros({3, 8, 8}, torch::kFloat64), torch::full({3, 8, 8}, 0.1, torch::kFloat64)),
              20.0, 1e-9);
  EXPECT_NEAR(psnr(torch::zeros({4}), torch::full({4}, 2.0), 20.0), 20.0, 1e-9);
  auto y = torch::rand({3, 8, 8});
  EXPECT_EQ(psnr(x, y), psnr(y, x));
  EXPECT_NEAR(psnr(x + 0.25, y + 0.25), psnr(x, y), 1e-5);
  EXPECT_THROW(psnr(x, torch::rand({3, 8, 7})), ShapeError);
}

TEST(Ssim, IdentityNegationAndUniform) {
  auto x = torch::rand({3, 16, 16}, torch::kFloat64);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  // Mirroring about the mean keeps luminance and flips the structure term.
  auto z = 0.5 + 0.1 * torch::randn({1, 16, 16}, torch::kFloat64);
  EXPECT_LT(ssim(z, 1.0 - z), 0.0);
  const double a = 0.2, b = 0.7, c1 = 1e-4;
  const double expect = (2 * a * b + c1) / (a * a + b * b + c1);
  EXPECT_NEAR(ssim(torch::full({1, 9, 9}, a, torch::kFloat64), torch::full({1, 9, 9}, b, torch::kFloat64)),
              expect, 1e-9);
  EXPECT_THROW(ssim(torch::rand({1, 6, 6}), torch::rand({1, 6, 6})), ShapeError);
  EXPECT_NO_THROW(ssim(torch::rand({1, 6, 6}), torch::rand({1, 6, 6}), 5));
}

TEST(ReconReport, AggregatesAreMeans) {
  auto ref = torch::rand({3, 3, 16, 16}) * 2 - 1;
  auto rec = (ref + 0.1 * torch::randn_like(ref)).clamp(-1, 1);
  RandomFeaturePerceptual perc;
  auto r = reconstruction_report(ref, rec, &perc);
  ASSERT_EQ(r.psnr.size(), 3u);
  EXPECT_NEAR(r.mean_psnr, (r.psnr[0] + r.psnr[1] + r.psnr[2]) / 3.0, 1e-12);
  EXPECT_NEAR(r.mean_ssim, (r.ssim[0] + r.ssim[1] + r.ssim[2]) / 3.0, 1e-12);
  EXPECT_GT(r.mean_perceptual, 0.0);
  auto id = reconstruction_report(ref, ref, &perc);
  EXPECT_EQ(id.mean_psnr, kPsnrCap);
  EXPECT_EQ(id.mean_perceptual, 0.0);
  EXPECT_TRUE(id.to_json().at("frechet_distance").is_null());
}

// Independent naive DFT with signed-frequency integer-radius bins.
std::vector<double> naive_profile(const torch::Tensor& x) {
  const auto t = x.to(torch::kFloat64).contiguous();
  const int64_t n = t.size(0), c = t.size(1), h = t.size(2), w = t.size(3);
  const int64_t nyq = std::min(h, w) / 2;
  std::vector<double> bins(nyq + 1, 0.0);
  auto a = t.accessor<double, 4>();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      for (int64_t u = 0; u < h; ++u) {
        for (int64_t v = 0; v < w; ++v) {
          std::complex<double> acc = 0.0;
          for (int64_t y = 0; y < h; ++y) {
            for (int64_t xx = 0; xx < w; ++xx) {
              const double ang = -2.0 * M_PI * (static_cast<double>(u * y) / h + static_cast<double>(v * xx) / w);
              acc += a[i][ch][y][xx] * std::complex<double>(std::cos(ang), std::sin(ang));
            }
          }
          const double fy = u > h / 2 ? u - h : u, fx = v > w / 2 ? v - w : v;
          int64_t r = static_cast<int64_t>(std::floor(std::sqrt(fy * fy + fx * fx) + 0.5));
          r = std::min(r, nyq);
          bins[r] += std::norm(acc) / static_cast<double>(h * w) / static_cast<double>(n * c);
        }
      }
    }
  }
  return bins;
}

TEST(Spectrum, MatchesNaiveDft) {
  for (int64_t side : {4, 8}) {
    auto x = torch::randn({3, 2, side, side}, torch::kFloat64);
    auto p = radial_power_spectrum(x, LatentBranch::kDetail);
    const auto oracle = naive_profile(x);
    ASSERT_EQ(p.power.size(), oracle.size());
    EXPECT_EQ(p.nyquist(), side / 2);
    for (size_t r = 0; r < oracle.size(); ++r) {
      EXPECT_NEAR(p.power[r], oracle[r], 1e-6 * std::max(1.0, std::abs(oracle[r]))) << side << " r=" << r;
    }
  }
}

TEST(Spectrum, ConstantHasOnlyDc) {
  auto p = radial_power_spectrum(torch::full({2, 3, 8, 8}, 1.5), LatentBranch::kBase);
  EXPECT_GT(p.power[0], 0.0);
  for (size_t r = 1; r < p.power.size(); ++r) EXPECT_NEAR(p.power[r], 0.0, 1e-12);
  EXPECT_EQ(high_freq_energy_fraction(p, 0.5), 0.0);
}

TEST(Spectrum, SinusoidPeaksAtItsFrequency) {
  const int64_t n = 16;
  for (int64_t k : {1, 3, 5}) {
    auto xs = torch::arange(n, torch::kFloat64);
    auto row = torch::cos(2 * M_PI * k * xs / n);
    auto img = row.view({1, 1, 1, n}).expand({1, 1, n, n}).contiguous();
    auto p = radial_power_spectrum(img, LatentBranch::kBase);
    const auto best = std::max_element(p.power.begin(), p.power.end()) - p.power.begin();
    EXPECT_EQ(best, k);
  }
}

TEST(Spectrum, ParsevalHolds) {
  auto x = torch::randn({4, 3, 8, 12});
  auto p = radial_power_spectrum(x, LatentBranch::kDetail);
  EXPECT_NEAR(p.total_energy / p.spatial_energy, 1.0, 1e-5);
  for (double v : p.power) EXPECT_GE(v, 0.0);
}

TEST(Spectrum, WhiteNoiseMatchesAnnulusArea) {
  const int64_t side = 16, nyq = 8;
  const double cutoff = 0.5;
  int64_t above = 0;
  for (int64_t u = 0; u < side; ++u) {
    for (int64_t v = 0; v < side; ++v) {
      const double fy = u > side / 2 ? u - side : u, fx = v > side / 2 ? v - side : v;
      const double r = std::min<double>(std::floor(std::hypot(fy, fx) + 0.5), nyq);
      if (r > cutoff * nyq) ++above;
    }
  }
  const double expected = static_cast<double>(above) / static_cast<double>(side * side);
  torch::manual_seed(0);
  auto p = radial_power_spectrum(torch::randn({256, 4, side, side}), LatentBranch::kDetail);
  EXPECT_NEAR(high_freq_energy_fraction(p, cutoff), expected, 0.01);
}

TEST(Spectrum, FractionMonotoneAndCutoffChecked) {
  auto p = radial_power_spectrum(torch::randn({4, 2, 16, 16}), LatentBranch::kDetail);
  double prev = 1.0;
  for (double c = 0.05; c < 1.0; c += 0.05) {
    const double f = high_freq_energy_fraction(p, c);
    EXPECT_LE(f, prev + 1e-15);
    EXPECT_GE(f, 0.0);
    prev = f;
  }
  EXPECT_THROW(high_freq_energy_fraction(p, 0.0), ConfigError);
  EXPECT_THROW(high_freq_energy_fraction(p, 1.0), ConfigError);
  EXPECT_THROW(high_freq_energy_fraction(p, -0.2), ConfigError);
}

LatentBatch cluster_batch(int64_t per_class, uint64_t seed) {
  torch::manual_seed(seed);
  auto dir = torch::randn({1, 8, 4, 4});
  auto noise = 0.1 * torch::randn({2 * per_class, 8, 4, 4});
  auto sign = torch::cat({torch::ones({per_class}), -torch::ones({per_class})}).view({-1, 1, 1, 1});
  auto detail = 3.0 * sign * dir + noise;
  auto labels = torch::cat({torch::zeros({per_class}, torch::kLong), torch::ones({per_class}, torch::kLong)});
  return LatentBatch(StructuredLatent(torch::zeros({2 * per_class, 4, 4, 4}), detail), labels);
}

TEST(Embedding, SeparatesGaussianClusters) {
  auto e = latent_embedding_2d(cluster_batch(20, 1));
  ASSERT_EQ(e.points.size(), 40u);
  EXPECT_FALSE(e.warning.has_value());
  double max0 = -1e9, min0 = 1e9, max1 = -1e9, min1 = 1e9;
  for (const auto& p : e.points) {
    if (p.label == 0) {
      max0 = std::max(max0, p.x);
      min0 = std::min(min0, p.x);
    } else {
      max1 = std::max(max1, p.x);
      min1 = std::min(min1, p.x);
    }
  }
  EXPECT_TRUE(max0 < min1 || max1 < min0);
  EXPECT_GE(e.explained_variance[0], e.explained_variance[1]);
}

TEST(Embedding, DuplicatesAndDeterminism) {
  auto b = cluster_batch(5, 2);
  LatentBatch doubled(StructuredLatent(torch::cat({b.latents.base, b.latents.base}),
                                       torch::cat({b.latents.detail, b.latents.detail})),
                      torch::cat({*b.labels, *b.labels}));
  auto e = latent_embedding_2d(doubled);
  for (size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(e.points[i].x, e.points[i + 10].x, 1e-9);
    EXPECT_NEAR(e.points[i].y, e.points[i + 10].y, 1e-9);
  }
  auto again = latent_embedding_2d(doubled);
  for (size_t i = 0; i < e.points.size(); ++i) {
    EXPECT_EQ(e.points[i].x, again.points[i].x);
    EXPECT_EQ(e.points[i].y, again.points[i].y);
  }
}

TEST(Embedding, DegenerateCovarianceFallsBack) {
  LatentBatch b(StructuredLatent(torch::zeros({4, 2, 2, 2}), torch::ones({4, 4, 2, 2})),
                torch::tensor({0, 1, 0, 1}, torch::kLong));
  auto e = latent_embedding_2d(b);
  ASSERT_TRUE(e.warning.has_value());
  EXPECT_EQ(e.points.size(), 4u);
  LatentBatch unlabeled(StructuredLatent(torch::zeros({4, 2, 2, 2}), torch::randn({4, 4, 2, 2})));
  EXPECT_THROW(latent_embedding_2d(unlabeled), ConfigError);
}

TEST(Sensitivity, ModesBehave) {
  torch::manual_seed(3);
  const LatentLayout layout(4, 1, 4, 8, 2);
  VaeArch arch;
  arch.widths = {4, 4, 4};
  VaeModel vae(layout, arch);
  auto imgs = torch::rand({2, 3, 32, 32}) * 2 - 1;

  auto full = decoder_sensitivity(*vae, imgs, AblationMode::kFull, 0, nullptr);
  torch::Tensor plain;
  {
    torch::NoGradGuard g;
    plain = decode(*vae, encode_mean(*vae, area_downsample(imgs, 2), imgs));
  }
  auto ref = reconstruction_report(imgs, plain, nullptr);
  EXPECT_EQ(full.psnr, ref.psnr);
  EXPECT_EQ(full.ssim, ref.ssim);
  EXPECT_EQ(full.mode, "full");
  ASSERT_FALSE(full.warnings.empty());

  auto r1 = decoder_sensitivity(*vae, imgs, AblationMode::kRandomDetail, 1, nullptr);
  auto r2 = decoder_sensitivity(*vae, imgs, AblationMode::kRandomDetail, 2, nullptr);
  auto r1b = decoder_sensitivity(*vae, imgs, AblationMode::kRandomDetail, 1, nullptr);
  EXPECT_NE(r1.psnr, r2.psnr);
  EXPECT_EQ(r1.psnr, r1b.psnr);

  vae->trained_steps = 10;
  EXPECT_TRUE(decoder_sensitivity(*vae, imgs, AblationMode::kZeroDetail, 0, nullptr).warnings.empty());
  EXPECT_EQ(parse_ablation("random_detail"), AblationMode::kRandomDetail);
  EXPECT_THROW(parse_ablation("half"), ConfigError);
}

}  // namespace
}  // namespace dvae
