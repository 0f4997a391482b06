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

#include "dvae/tokenizer.h"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dvae/error.h"
#include "dvae/module_util.h"
#include "dvae/rng.h"

namespace dvae {

namespace nn = torch::nn;

namespace {

int64_t norm_groups(int64_t channels) {
  for (int64_t g : {8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

nn::Conv2d conv3x3(int64_t in, int64_t out, int64_t stride = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

bool is_power_of_two(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int64_t log2_exact(int64_t v) {
  int64_t k = 0;
  while ((int64_t{1} << k) < v) ++k;
  return k;
}

void require_image_batch(const torch::Tensor& image, const char* what) {
  if (image.dim() != 4 || image.size(1) != 3) {
    std::ostringstream os;
    os << what << ": expected an (n,3,h,w) image batch, got " << image.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

GaussianParams::GaussianParams(torch::Tensor mean_, torch::Tensor logvar_)
    : mean(std::move(mean_)), logvar(torch::clamp(logvar_, kLogvarMin, kLogvarMax)) {
  if (!mean.sizes().equals(logvar.sizes())) {
    throw ShapeError("gaussian mean and logvar shapes differ");
  }
}

torch::Tensor sample_latent(const GaussianParams& params, torch::Generator& gen) {
  auto eps = torch::randn(params.mean.sizes(), gen, params.mean.options());
  return params.mean + torch::exp(0.5 * params.logvar) * eps;
}

torch::Tensor sample_latent(const GaussianParams& params, uint64_t seed) {
  auto gen = make_generator(seed);
  return sample_latent(params, gen);
}

torch::Tensor kl_loss(const GaussianParams& params) {
  return (0.5 * (params.mean.pow(2) + params.logvar.exp() - 1.0 - params.logvar)).mean();
}

VaeLossWeights VaeLossWeights::class_conditional() { return {1.0, 1.0, 0.1, 1e-6, 0.5}; }

VaeLossWeights VaeLossWeights::text_to_image() { return {1.0, 2.0, 0.1, 1e-7, 1.0}; }

void VaeLossWeights::validate() const {
  for (double w : {lpips, l1, adv, kl, align}) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError("loss weights must be finite and non-negative");
    }
  }
}

nlohmann::json VaeLossWeights::to_json() const {
  return {{"lpips", lpips}, {"l1", l1}, {"adv", adv}, {"kl", kl}, {"align", align}};
}

VaeLossWeights VaeLossWeights::from_json(const nlohmann::json& j, const VaeLossWeights& defaults) {
  VaeLossWeights w = defaults;
  w.lpips = j.value("lpips", w.lpips);
  w.l1 = j.value("l1", w.l1);
  w.adv = j.value("adv", w.adv);
  w.kl = j.value("kl", w.kl);
  w.align = j.value("align", w.align);
  w.validate();
  return w;
}

void VaeArch::validate(const LatentLayout& layout) const {
  if (widths.empty()) {
    throw ConfigError("vae widths must not be empty");
  }
  for (auto w : widths) {
    if (w < 1) throw ConfigError("vae widths must be positive");
  }
  if (downsample() != layout.downsample()) {
    throw ConfigError("vae backbone with " + std::to_string(widths.size()) +
                      " levels downsamples by " + std::to_string(downsample()) +
                      ", layout requires f=" + std::to_string(layout.downsample()));
  }
  if (!is_power_of_two(layout.scale())) {
    throw ConfigError("resolution scale s=" + std::to_string(layout.scale()) +
                      " must be a power of two for the strided detail head");
  }
  const int64_t s2 = layout.scale() * layout.scale();
  if (layout.total_channels() % s2 != 0) {
    throw ConfigError("C+D=" + std::to_string(layout.total_channels()) +
                      " must be divisible by s^2=" + std::to_string(s2) +
                      " for the pixel-shuffle decoder stem");
  }
}

nlohmann::json VaeArch::to_json() const { return {{"widths", widths}}; }

VaeArch VaeArch::from_json(const nlohmann::json& j) {
  VaeArch arch;
  if (j.contains("widths")) arch.widths = j.at("widths").get<std::vector<int64_t>>();
  return arch;
}

ResBlockImpl::ResBlockImpl(int64_t channels) {
  norm1_ = register_module("norm1", nn::GroupNorm(norm_groups(channels), channels));
  conv1_ = register_module("conv1", conv3x3(channels, channels));
  norm2_ = register_module("norm2", nn::GroupNorm(norm_groups(channels), channels));
  conv2_ = register_module("conv2", conv3x3(channels, channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = conv2_(torch::silu(norm2_(h)));
  return x + h;
}

EncoderBackboneImpl::EncoderBackboneImpl(const VaeArch& arch) {
  const auto& w = arch.widths;
  layers_ = nn::Sequential();
  layers_->push_back(conv3x3(3, w.front()));
  for (size_t i = 0; i + 1 < w.size(); ++i) {
    layers_->push_back(ResBlock(w[i]));
    layers_->push_back(conv3x3(w[i], w[i + 1], /*stride=*/2));
  }
  layers_->push_back(ResBlock(w.back()));
  register_module("layers", layers_);
}

torch::Tensor EncoderBackboneImpl::forward(torch::Tensor x) { return layers_->forward(x); }

DecoderBackboneImpl::DecoderBackboneImpl(const VaeArch& arch) {
  const auto& w = arch.widths;
  layers_ = nn::Sequential();
  layers_->push_back(ResBlock(w.back()));
  for (size_t i = w.size() - 1; i > 0; --i) {
    layers_->push_back(nn::Upsample(
        nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)));
    layers_->push_back(conv3x3(w[i], w[i - 1]));
    layers_->push_back(ResBlock(w[i - 1]));
  }
  layers_->push_back(nn::GroupNorm(norm_groups(w.front()), w.front()));
  layers_->push_back(nn::SiLU());
  layers_->push_back(conv3x3(w.front(), 3));
  register_module("layers", layers_);
}

torch::Tensor DecoderBackboneImpl::forward(torch::Tensor x) { return layers_->forward(x); }

EncoderImpl::EncoderImpl(const VaeArch& arch, int64_t latent_channels, int64_t extra_downsample)
    : latent_channels_(latent_channels) {
  if (!is_power_of_two(extra_downsample)) {
    throw ConfigError("extra encoder downsampling must be a power of two");
  }
  backbone = register_module("backbone", EncoderBackbone(arch));
  const int64_t width = arch.widths.back();
  head_ = nn::Sequential();
  for (int64_t k = 0; k < log2_exact(extra_downsample); ++k) {
    head_->push_back(conv3x3(width, width, /*stride=*/2));
    head_->push_back(nn::SiLU());
  }
  head_->push_back(nn::GroupNorm(norm_groups(width), width));
  head_->push_back(nn::SiLU());
  head_->push_back(conv3x3(width, 2 * latent_channels));
  register_module("head", head_);
}

GaussianParams EncoderImpl::forward(const torch::Tensor& image) {
  auto moments = head_->forward(backbone->forward(image));
  auto parts = moments.chunk(2, 1);
  return GaussianParams(parts[0], parts[1]);
}

DecoderImpl::DecoderImpl(const VaeArch& arch, int64_t latent_channels, int64_t upsample_scale)
    : latent_channels_(latent_channels) {
  stem_ = nn::Sequential();
  const int64_t width = arch.widths.back();
  if (upsample_scale > 1) {
    const int64_t s2 = upsample_scale * upsample_scale;
    if (latent_channels % s2 != 0) {
      throw ConfigError("pixel-shuffle stem needs latent channels divisible by s^2");
    }
    stem_->push_back(nn::PixelShuffle(nn::PixelShuffleOptions(upsample_scale)));
    stem_->push_back(conv3x3(latent_channels / s2, width));
  } else {
    stem_->push_back(conv3x3(latent_channels, width));
  }
  register_module("stem", stem_);
  backbone = register_module("backbone", DecoderBackbone(arch));
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& latent) {
  if (latent.dim() != 4 || latent.size(1) != latent_channels_) {
    std::ostringstream os;
    os << "decoder expects " << latent_channels_ << " latent channels, got " << latent.sizes();
    throw ShapeError(os.str());
  }
  return backbone->forward(stem_->forward(latent));
}

BaseVaeImpl::BaseVaeImpl(const LatentLayout& layout, const VaeArch& arch)
    : layout_(layout), arch_(arch) {
  arch.validate(layout);
  encoder = register_module("encoder", Encoder(arch, layout.base_channels(), 1));
  decoder = register_module("decoder", Decoder(arch, layout.base_channels(), 1));
}

VaeModelImpl::VaeModelImpl(const LatentLayout& layout, const VaeArch& arch)
    : layout_(layout), arch_(arch) {
  arch.validate(layout);
  base_encoder = register_module("base_encoder", Encoder(arch, layout.base_channels(), 1));
  detail_encoder =
      register_module("detail_encoder", Encoder(arch, layout.detail_channels(), layout.scale()));
  decoder = register_module("decoder", Decoder(arch, layout.total_channels(), layout.scale()));
  set_requires_grad(*base_encoder, false);
}

void VaeModelImpl::init_from_base(BaseVaeImpl& base) {
  if (!(base.layout().base_channels() == layout_.base_channels() &&
        base.layout().downsample() == layout_.downsample() && base.arch().widths == arch_.widths)) {
    throw ConfigError("base VAE geometry " + base.layout().describe() +
                      " is incompatible with " + layout_.describe());
  }
  copy_parameters(*base_encoder, *base.encoder);
  copy_parameters(*detail_encoder->backbone, *base.encoder->backbone);
  copy_parameters(*decoder->backbone, *base.decoder->backbone);
  set_requires_grad(*base_encoder, false);
}

std::vector<torch::Tensor> VaeModelImpl::trainable_parameters() {
  auto params = detail_encoder->parameters();
  auto dec = decoder->parameters();
  params.insert(params.end(), dec.begin(), dec.end());
  return params;
}

torch::Tensor area_downsample(const torch::Tensor& image, int64_t factor) {
  if (factor == 1) return image;
  if (image.size(-1) % factor != 0 || image.size(-2) % factor != 0) {
    throw ShapeError("image side not divisible by downsample factor " + std::to_string(factor));
  }
  return torch::avg_pool2d(image, {factor, factor}, {factor, factor});
}

GaussianParams encode_base(VaeModelImpl& model, const torch::Tensor& image_base) {
  require_image_batch(image_base, "encode_base");
  const auto& layout = model.layout();
  layout.latent_side(image_base.size(2));
  layout.latent_side(image_base.size(3));
  torch::NoGradGuard no_grad;
  return model.base_encoder->forward(image_base);
}

GaussianParams encode_detail(VaeModelImpl& model, const torch::Tensor& image_hr) {
  require_image_batch(image_hr, "encode_detail");
  const auto& layout = model.layout();
  const int64_t cell = layout.scale() * layout.downsample();
  if (image_hr.size(2) % cell != 0 || image_hr.size(3) % cell != 0) {
    throw ShapeError("high-resolution image side must be divisible by s*f=" +
                     std::to_string(cell));
  }
  return model.detail_encoder->forward(image_hr);
}

namespace {

void check_scale_ratio(const LatentLayout& layout, const torch::Tensor& image_base,
                       const torch::Tensor& image_hr) {
  require_image_batch(image_base, "encode");
  require_image_batch(image_hr, "encode");
  if (image_hr.size(2) != layout.scale() * image_base.size(2) ||
      image_hr.size(3) != layout.scale() * image_base.size(3) ||
      image_hr.size(0) != image_base.size(0)) {
    std::ostringstream os;
    os << "high-resolution image " << image_hr.sizes() << " must be exactly s="
       << layout.scale() << " times the base image " << image_base.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

StructuredLatent encode(VaeModelImpl& model, const torch::Tensor& image_base,
                        const torch::Tensor& image_hr, uint64_t seed) {
  check_scale_ratio(model.layout(), image_base, image_hr);
  auto z = sample_latent(encode_base(model, image_base), seed);
  auto z_d = sample_latent(encode_detail(model, image_hr), derive_seed(seed, Stream::kDetailPosterior));
  return {z, z_d};
}

StructuredLatent encode_mean(VaeModelImpl& model, const torch::Tensor& image_base,
                             const torch::Tensor& image_hr) {
  check_scale_ratio(model.layout(), image_base, image_hr);
  return {encode_base(model, image_base).mean, encode_detail(model, image_hr).mean};
}

torch::Tensor decode(VaeModelImpl& model, const StructuredLatent& latent) {
  const auto& layout = model.layout();
  if (latent.base.dim() != 4 || latent.base.size(1) != layout.base_channels() ||
      latent.detail.size(1) != layout.detail_channels()) {
    std::ostringstream os;
    os << "latent (" << latent.base.sizes() << ", " << latent.detail.sizes()
       << ") does not match layout " << layout.describe();
    throw ShapeError(os.str());
  }
  return model.decoder->forward(latent.packed());
}

RandomFeaturePerceptual::RandomFeaturePerceptual(uint64_t seed, std::vector<int64_t> widths) {
  auto gen = make_generator(seed);
  torch::NoGradGuard no_grad;
  int64_t in = 3;
  for (size_t i = 0; i < widths.size(); ++i) {
    const int64_t stride = i == 0 ? 1 : 2;
    nn::Conv2d conv(nn::Conv2dOptions(in, widths[i], 3).stride(stride).padding(1));
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    conv->weight.copy_(torch::randn(conv->weight.sizes(), gen) * std);
    conv->bias.zero_();
    conv->weight.set_requires_grad(false);
    conv->bias.set_requires_grad(false);
    convs_.push_back(conv);
    in = widths[i];
  }
}

void RandomFeaturePerceptual::to(torch::Dtype dtype) {
  for (auto& c : convs_) c->to(dtype);
}

std::vector<torch::Tensor> RandomFeaturePerceptual::features(const torch::Tensor& image) {
  std::vector<torch::Tensor> out;
  auto h = image;
  for (auto& conv : convs_) {
    h = torch::relu(conv->forward(h));
    out.push_back(h);
  }
  return out;
}

torch::Tensor perceptual_distance(PerceptualExtractor& extractor, const torch::Tensor& x,
                                  const torch::Tensor& y) {
  if (!x.sizes().equals(y.sizes())) {
    throw ShapeError("perceptual distance needs equally shaped images");
  }
  auto fx = extractor.features(x);
  auto fy = extractor.features(y);
  torch::Tensor total;
  for (size_t i = 0; i < fx.size(); ++i) {
    auto nx = fx[i] / (fx[i].pow(2).sum(1, true).sqrt() + 1e-10);
    auto ny = fy[i] / (fy[i].pow(2).sum(1, true).sqrt() + 1e-10);
    auto d = (nx - ny).pow(2).sum(1).mean({1, 2});
    total = total.defined() ? total + d : d;
  }
  return total / static_cast<double>(fx.size());
}

DiscriminatorImpl::DiscriminatorImpl(int64_t width) {
  net_ = nn::Sequential(
      nn::Conv2d(nn::Conv2dOptions(3, width, 4).stride(2).padding(1)),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
      nn::Conv2d(nn::Conv2dOptions(width, 2 * width, 4).stride(2).padding(1)),
      nn::GroupNorm(norm_groups(2 * width), 2 * width),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)),
      nn::Conv2d(nn::Conv2dOptions(2 * width, 1, 3).padding(1)));
  register_module("net", net_);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& image) { return net_->forward(image); }

torch::Tensor hinge_discriminator_loss(const torch::Tensor& real_logits,
                                       const torch::Tensor& fake_logits) {
  return 0.5 * (torch::relu(1.0 - real_logits).mean() + torch::relu(1.0 + fake_logits).mean());
}

VaeLossTerms vae_reconstruction_loss(const torch::Tensor& x_hr, const torch::Tensor& x_rec,
                                     const VaeLossWeights& weights,
                                     PerceptualExtractor* perceptual,
                                     DiscriminatorImpl* discriminator,
                                     const GaussianParams* posterior) {
  if (!x_hr.sizes().equals(x_rec.sizes())) {
    std::ostringstream os;
    os << "reconstruction " << x_rec.sizes() << " does not match target " << x_hr.sizes();
    throw ShapeError(os.str());
  }
  if (weights.adv > 0.0 && discriminator == nullptr) {
    throw ConfigError("lambda_adv > 0 requires a discriminator");
  }
  if (weights.lpips > 0.0 && perceptual == nullptr) {
    throw ConfigError("lambda_lpips > 0 requires a perceptual feature extractor");
  }
  if (weights.kl > 0.0 && posterior == nullptr) {
    throw ConfigError("lambda_kl > 0 requires the posterior parameters");
  }
  auto zero = torch::zeros({}, x_rec.options());
  VaeLossTerms t;
  t.l1 = (x_rec - x_hr).abs().mean();
  t.lpips = perceptual ? perceptual_distance(*perceptual, x_rec, x_hr).mean() : zero;
  t.adv = weights.adv > 0.0 ? -discriminator->forward(x_rec).mean() : zero;
  t.kl = posterior ? kl_loss(*posterior) : zero;
  t.reconstruction = weights.lpips * t.lpips + weights.l1 * t.l1 + weights.adv * t.adv +
                     weights.kl * t.kl;
  return t;
}

VaeTotalLoss vae_total_loss(const VaeLossTerms& recon, const torch::Tensor& z,
                            const torch::Tensor& z_d, const VaeLossWeights& weights,
                            const LatentLayout& layout) {
  VaeTotalLoss out;
  out.align = alignment_loss(z_d, z, layout);
  const std::pair<const char*, const torch::Tensor*> terms[] = {
      {"lpips", &recon.lpips}, {"l1", &recon.l1},   {"adv", &recon.adv},
      {"kl", &recon.kl},       {"align", &out.align}};
  for (const auto& [name, value] : terms) {
    const double v = value->item<double>();
    if (!std::isfinite(v)) {
      throw NonFiniteLossError(name, std::string("non-finite ") + name + " loss term (" +
                                         std::to_string(v) + ")");
    }
  }
  out.total = weights.align == 0.0 ? recon.reconstruction
                                   : recon.reconstruction + weights.align * out.align;
  return out;
}

}  // namespace dvae
