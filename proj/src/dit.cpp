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

#include "dvae/dit.h"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dvae/error.h"
#include "dvae/module_util.h"
#include "dvae/rng.h"
#include "dvae/tokenizer.h"

namespace dvae {

namespace nn = torch::nn;

namespace {

constexpr int64_t kTimeFrequencyDim = 256;

std::string shape_str(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

torch::Tensor modulate(const torch::Tensor& x, const torch::Tensor& shift,
                       const torch::Tensor& scale) {
  return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1);
}

torch::Tensor sincos_1d(int64_t dim, const torch::Tensor& pos) {
  auto omega = torch::arange(dim / 2, torch::kFloat64) / (dim / 2.0);
  omega = 1.0 / torch::pow(10000.0, omega);
  auto out = pos.to(torch::kFloat64).reshape({-1, 1}) * omega.reshape({1, -1});
  return torch::cat({torch::sin(out), torch::cos(out)}, 1);
}

torch::Tensor sincos_2d(int64_t dim, int64_t grid_h, int64_t grid_w) {
  auto ys = torch::arange(grid_h, torch::kFloat64);
  auto xs = torch::arange(grid_w, torch::kFloat64);
  auto mesh = torch::meshgrid({ys, xs}, "ij");
  auto emb_h = sincos_1d(dim / 2, mesh[0].reshape({-1}));
  auto emb_w = sincos_1d(dim / 2, mesh[1].reshape({-1}));
  return torch::cat({emb_h, emb_w}, 1).to(torch::kFloat32).unsqueeze(0);
}

torch::Tensor timestep_features(const torch::Tensor& t) {
  const int64_t half = kTimeFrequencyDim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, t.options().dtype(torch::kFloat32)) / half);
  auto args = (t.to(torch::kFloat32) * 1000.0).reshape({-1, 1}) * freqs.reshape({1, -1});
  return torch::cat({torch::cos(args), torch::sin(args)}, 1);
}

void xavier_(torch::Tensor w, torch::Generator* gen = nullptr) {
  torch::NoGradGuard no_grad;
  const double bound = std::sqrt(6.0 / static_cast<double>(w.size(0) + w.size(1)));
  if (gen != nullptr) {
    w.copy_((torch::rand(w.sizes(), *gen) * 2.0 - 1.0) * bound);
  } else {
    w.uniform_(-bound, bound);
  }
}

void init_linear_xavier(nn::Linear& l) {
  xavier_(l->weight);
  torch::NoGradGuard no_grad;
  l->bias.zero_();
}

void init_linear_zero(nn::Linear& l) {
  torch::NoGradGuard no_grad;
  l->weight.zero_();
  l->bias.zero_();
}

void require_latent(const torch::Tensor& x, int64_t channels, const DiTConfig& cfg,
                    const char* what) {
  if (x.dim() != 4 || x.size(1) != channels || x.size(2) != cfg.grid_h || x.size(3) != cfg.grid_w) {
    std::ostringstream os;
    os << what << ": expected (n," << channels << "," << cfg.grid_h << "," << cfg.grid_w
       << "), got " << x.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

void DiTConfig::validate() const {
  if (hidden < 4 || hidden % 4 != 0) throw ConfigError("dit hidden width must be a positive multiple of 4");
  if (depth < 1) throw ConfigError("dit depth must be >= 1");
  if (heads < 1 || hidden % heads != 0) throw ConfigError("dit heads must divide the hidden width");
  if (!(mlp_ratio > 0.0)) throw ConfigError("dit mlp_ratio must be positive");
  if (num_classes < 1) throw ConfigError("dit num_classes must be >= 1");
  if (in_channels < 1 || patch < 1) throw ConfigError("dit channels and patch must be positive");
  if (grid_h % patch != 0 || grid_w % patch != 0) {
    throw ShapeError("latent grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " is not divisible by patch size " + std::to_string(patch));
  }
}

std::string DiTConfig::describe() const {
  std::ostringstream os;
  os << "C=" << in_channels << " p=" << patch << " grid=" << grid_h << "x" << grid_w
     << " tokens=" << tokens() << " L=" << hidden << " depth=" << depth;
  return os.str();
}

nlohmann::json DiTConfig::to_json() const {
  return {{"hidden", hidden},       {"depth", depth},         {"heads", heads},
          {"mlp_ratio", mlp_ratio}, {"num_classes", num_classes}, {"null_label", null_label},
          {"in_channels", in_channels}, {"patch", patch},     {"grid_h", grid_h},
          {"grid_w", grid_w}};
}

DiTConfig DiTConfig::from_json(const nlohmann::json& j) {
  DiTConfig c;
  c.hidden = j.at("hidden").get<int64_t>();
  c.depth = j.at("depth").get<int64_t>();
  c.heads = j.at("heads").get<int64_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<double>();
  c.num_classes = j.at("num_classes").get<int64_t>();
  c.null_label = j.at("null_label").get<bool>();
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.patch = j.at("patch").get<int64_t>();
  c.grid_h = j.at("grid_h").get<int64_t>();
  c.grid_w = j.at("grid_w").get<int64_t>();
  c.validate();
  return c;
}

torch::Tensor LatentNormalizer::normalize(const torch::Tensor& x) const {
  if (!defined()) return x;
  return (x - mean.view({1, -1, 1, 1})) / std.view({1, -1, 1, 1});
}

torch::Tensor LatentNormalizer::denormalize(const torch::Tensor& x) const {
  if (!defined()) return x;
  return x * std.view({1, -1, 1, 1}) + mean.view({1, -1, 1, 1});
}

LatentNormalizer LatentNormalizer::fit(const torch::Tensor& latents) {
  auto flat = latents.transpose(0, 1).reshape({latents.size(1), -1}).to(torch::kFloat64);
  auto m = flat.mean(1);
  auto s = flat.std(1, /*unbiased=*/false).clamp_min(1e-6);
  return {m.to(torch::kFloat32), s.to(torch::kFloat32)};
}

LatentNormalizer LatentNormalizer::concat(const LatentNormalizer& a, const LatentNormalizer& b) {
  return {torch::cat({a.mean, b.mean}), torch::cat({a.std, b.std})};
}

LatentNormalizer LatentNormalizer::slice(int64_t start, int64_t length) const {
  return {mean.narrow(0, start, length).clone(), std.narrow(0, start, length).clone()};
}

torch::Tensor patchify(const torch::Tensor& x, int64_t p) {
  const int64_t n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  if (h % p != 0 || w % p != 0) {
    throw ShapeError("latent " + shape_str(x) + " is not divisible by patch size " +
                     std::to_string(p));
  }
  return x.reshape({n, c, h / p, p, w / p, p})
      .permute({0, 2, 4, 1, 3, 5})
      .reshape({n, (h / p) * (w / p), c * p * p});
}

torch::Tensor unpatchify(const torch::Tensor& tokens, int64_t c, int64_t p, int64_t gh,
                         int64_t gw) {
  const int64_t n = tokens.size(0);
  if (tokens.size(1) != gh * gw || tokens.size(2) != c * p * p) {
    throw ShapeError("token tensor " + shape_str(tokens) + " does not match a " +
                     std::to_string(gh) + "x" + std::to_string(gw) + " grid of " +
                     std::to_string(c) + "x" + std::to_string(p) + "x" + std::to_string(p) +
                     " patches");
  }
  return tokens.reshape({n, gh, gw, c, p, p})
      .permute({0, 3, 1, 4, 2, 5})
      .reshape({n, c, gh * p, gw * p});
}

DiTBlockImpl::DiTBlockImpl(int64_t hidden, int64_t heads, double mlp_ratio) : heads_(heads) {
  const auto mlp = static_cast<int64_t>(std::lround(hidden * mlp_ratio));
  auto ln = nn::LayerNormOptions({hidden}).elementwise_affine(false).eps(1e-6);
  norm1_ = register_module("norm1", nn::LayerNorm(ln));
  norm2_ = register_module("norm2", nn::LayerNorm(ln));
  qkv_ = register_module("qkv", nn::Linear(hidden, 3 * hidden));
  proj_ = register_module("proj", nn::Linear(hidden, hidden));
  fc1_ = register_module("fc1", nn::Linear(hidden, mlp));
  fc2_ = register_module("fc2", nn::Linear(mlp, hidden));
  ada_ = register_module("ada", nn::Linear(hidden, 6 * hidden));
  for (auto* l : {&qkv_, &proj_, &fc1_, &fc2_}) init_linear_xavier(*l);
  init_linear_zero(ada_);
}

torch::Tensor DiTBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  auto mod = ada_(torch::silu(cond)).chunk(6, 1);
  const int64_t n = x.size(0), t = x.size(1), h = x.size(2), hd = h / heads_;

  auto a = modulate(norm1_(x), mod[0], mod[1]);
  auto qkv = qkv_(a).reshape({n, t, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
  auto q = qkv[0], k = qkv[1], v = qkv[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(double(hd)), -1);
  auto out = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({n, t, h});
  auto y = x + mod[2].unsqueeze(1) * proj_(out);

  auto m = modulate(norm2_(y), mod[3], mod[4]);
  m = fc2_(torch::gelu(fc1_(m), "tanh"));
  return y + mod[5].unsqueeze(1) * m;
}

DiTBackboneImpl::DiTBackboneImpl(const DiTConfig& config) : config_(config) {
  config.validate();
  const int64_t h = config.hidden;
  pos_embed_ = sincos_2d(h, config.token_grid_h(), config.token_grid_w());
  t_mlp_ = register_module("t_mlp", nn::Sequential(nn::Linear(kTimeFrequencyDim, h), nn::SiLU(),
                                                   nn::Linear(h, h)));
  label_embed_ = register_module(
      "label_embed", nn::Embedding(config.num_classes + (config.null_label ? 1 : 0), h));
  blocks_ = register_module("blocks", nn::ModuleList());
  for (int64_t i = 0; i < config.depth; ++i) {
    blocks_->push_back(DiTBlock(h, config.heads, config.mlp_ratio));
  }
  final_norm_ = register_module(
      "final_norm", nn::LayerNorm(nn::LayerNormOptions({h}).elementwise_affine(false).eps(1e-6)));
  final_ada_ = register_module("final_ada", nn::Linear(h, 2 * h));
  init_linear_zero(final_ada_);

  torch::NoGradGuard no_grad;
  for (auto& p : t_mlp_->named_parameters()) {
    if (p.key().find("weight") != std::string::npos) p.value().normal_(0.0, 0.02);
    else p.value().zero_();
  }
  label_embed_->weight.normal_(0.0, 0.02);
}

torch::Tensor DiTBackboneImpl::forward(const torch::Tensor& tokens, const torch::Tensor& t,
                                       const torch::Tensor& labels) {
  if (tokens.dim() != 3 || tokens.size(1) != config_.tokens() || tokens.size(2) != config_.hidden) {
    throw ShapeError("backbone expects (n," + std::to_string(config_.tokens()) + "," +
                     std::to_string(config_.hidden) + ") tokens, got " + shape_str(tokens));
  }
  auto x = tokens + pos_embed_.to(tokens.dtype());
  auto cond = t_mlp_->forward(timestep_features(t).to(tokens.dtype())) + label_embed_(labels);
  for (const auto& block : *blocks_) {
    x = block->as<DiTBlockImpl>()->forward(x, cond);
  }
  auto mod = final_ada_(torch::silu(cond)).chunk(2, 1);
  return modulate(final_norm_(x), mod[0], mod[1]);
}

BaseDiTImpl::BaseDiTImpl(const DiTConfig& config) : config_(config) {
  config.validate();
  const int64_t pdim = config.in_channels * config.patch * config.patch;
  patch_embed = register_module("patch_embed", nn::Linear(pdim, config.hidden));
  backbone = register_module("backbone", DiTBackbone(config));
  head = register_module("head", nn::Linear(config.hidden, pdim));
  init_linear_xavier(patch_embed);
  init_linear_zero(head);
}

torch::Tensor BaseDiTImpl::forward(const torch::Tensor& z, const torch::Tensor& t,
                                   const torch::Tensor& labels) {
  require_latent(z, config_.in_channels, config_, "base DiT input");
  auto tokens = patch_embed(patchify(z, config_.patch));
  auto features = backbone->forward(tokens, t, labels);
  return unpatchify(head(features), config_.in_channels, config_.patch, config_.token_grid_h(),
                    config_.token_grid_w());
}

DiTAdapterImpl::DiTAdapterImpl(const DiTConfig& config, int64_t detail_channels)
    : config_(config), detail_channels_(detail_channels) {
  config.validate();
  const int64_t p2 = config.patch * config.patch;
  patch_embed = register_module("patch_embed", nn::Linear(config.in_channels * p2, config.hidden));
  detail_patch_embed =
      register_module("detail_patch_embed", nn::Linear(detail_channels * p2, config.hidden));
  backbone = register_module("backbone", DiTBackbone(config));
  head = register_module("head", nn::Linear(config.hidden, config.in_channels * p2));
  detail_head = register_module("detail_head", nn::Linear(config.hidden, detail_channels * p2));
  init_linear_xavier(patch_embed);
  init_linear_zero(head);
  init_linear_zero(detail_patch_embed);
  init_linear_zero(detail_head);
}

torch::Tensor DiTAdapterImpl::embed_sequence(const torch::Tensor& z, const torch::Tensor& z_d) {
  require_latent(z, config_.in_channels, config_, "adapter base input");
  require_latent(z_d, detail_channels_, config_, "adapter detail input");
  return patch_embed(patchify(z, config_.patch)) +
         detail_patch_embed(patchify(z_d, config_.patch));
}

std::pair<torch::Tensor, torch::Tensor> DiTAdapterImpl::heads_from_sequence(
    const torch::Tensor& features) {
  const int64_t gh = config_.token_grid_h(), gw = config_.token_grid_w();
  auto u = unpatchify(head(features), config_.in_channels, config_.patch, gh, gw);
  auto u_d = unpatchify(detail_head(features), detail_channels_, config_.patch, gh, gw);
  return {u, u_d};
}

torch::Tensor DiTAdapterImpl::embed_tokens(const torch::Tensor& z, const torch::Tensor& z_d) {
  auto seq = embed_sequence(z, z_d);
  return seq.reshape({seq.size(0), config_.token_grid_h(), config_.token_grid_w(), config_.hidden})
      .permute({0, 3, 1, 2});
}

std::pair<torch::Tensor, torch::Tensor> DiTAdapterImpl::decode_outputs(const torch::Tensor& features) {
  if (features.dim() != 4 || features.size(1) != config_.hidden ||
      features.size(2) != config_.token_grid_h() || features.size(3) != config_.token_grid_w()) {
    throw ShapeError("feature grid " + shape_str(features) + " does not match backbone output (n," +
                     std::to_string(config_.hidden) + "," + std::to_string(config_.token_grid_h()) +
                     "," + std::to_string(config_.token_grid_w()) + ")");
  }
  auto seq = features.permute({0, 2, 3, 1}).reshape({features.size(0), -1, config_.hidden});
  return heads_from_sequence(seq);
}

std::pair<torch::Tensor, torch::Tensor> DiTAdapterImpl::forward(const torch::Tensor& z,
                                                                const torch::Tensor& z_d,
                                                                const torch::Tensor& t,
                                                                const torch::Tensor& labels) {
  return heads_from_sequence(backbone->forward(embed_sequence(z, z_d), t, labels));
}

DiTAdapter attach_adapter(BaseDiTImpl& pretrained, const LatentLayout& layout,
                          const AttachOptions& options) {
  const auto& cfg = pretrained.config();
  const bool grid_ok =
      !options.latent_grid ||
      (options.latent_grid->first == cfg.grid_h && options.latent_grid->second == cfg.grid_w);
  if (cfg.in_channels != layout.base_channels() || cfg.patch != layout.patch() || !grid_ok) {
    std::ostringstream os;
    os << "pretrained DiT geometry (" << cfg.describe() << ") does not match layout "
       << layout.describe();
    if (options.latent_grid) {
      os << " on a " << options.latent_grid->first << "x" << options.latent_grid->second
         << " latent grid";
    }
    throw ShapeError(os.str());
  }
  DiTAdapter adapter(cfg, layout.detail_channels());
  copy_parameters(*adapter->patch_embed, *pretrained.patch_embed);
  copy_parameters(*adapter->backbone, *pretrained.backbone);
  copy_parameters(*adapter->head, *pretrained.head);
  if (options.init == AdapterInit::kRandom) {
    auto gen = make_generator(derive_seed(options.seed, Stream::kInit, 0xad));
    xavier_(adapter->detail_patch_embed->weight, &gen);
    xavier_(adapter->detail_head->weight, &gen);
  }
  if (pretrained.normalizer.defined()) {
    // Detail statistics are filled in by the caller once the detail latents are known.
    adapter->normalizer = pretrained.normalizer;
  }
  return adapter;
}

EquivalenceReport check_zero_init_equivalence(BaseDiTImpl& pretrained, DiTAdapterImpl& adapter,
                                              int64_t pairs, uint64_t seed) {
  torch::NoGradGuard no_grad;
  const auto& cfg = pretrained.config();
  auto gen = make_generator(seed);
  EquivalenceReport rep;
  rep.pairs = pairs;
  for (int64_t i = 0; i < pairs; ++i) {
    auto z = torch::randn({1, cfg.in_channels, cfg.grid_h, cfg.grid_w}, gen);
    auto z_d = torch::randn({1, adapter.detail_channels(), cfg.grid_h, cfg.grid_w}, gen);
    auto t = torch::rand({1}, gen);
    auto y = torch::randint(cfg.num_classes, {1}, gen, torch::kLong);
    auto ref = pretrained.forward(z, t, y);
    auto [u, u_d] = adapter.forward(z, z_d, t, y);
    rep.max_abs_base_diff = std::max(rep.max_abs_base_diff, (u - ref).abs().max().item<double>());
    rep.max_abs_detail = std::max(rep.max_abs_detail, u_d.abs().max().item<double>());
  }
  rep.passed = rep.max_abs_base_diff <= 1e-6 && rep.max_abs_detail == 0.0;
  return rep;
}

WarmupSchedule::WarmupSchedule(int64_t warm) : n_warm(warm) {
  if (warm <= 0) throw ConfigError("warm-up steps must be positive");
}

double loss_weight(const WarmupSchedule& schedule, int64_t n) {
  if (n < 0) throw ConfigError("training step must be non-negative");
  if (n >= schedule.n_warm) return 1.0;
  return (1.0 - std::cos(M_PI * static_cast<double>(n) / static_cast<double>(schedule.n_warm))) /
         2.0;
}

DitLossTerms dit_loss(const torch::Tensor& u_hat, const torch::Tensor& u_hat_d,
                      const VelocityTarget& target, double w) {
  if (!(w >= 0.0 && w <= 1.0)) {
    throw ConfigError("detail loss weight must lie in [0,1], got " + std::to_string(w));
  }
  if (!u_hat.sizes().equals(target.u.sizes())) {
    throw ShapeError("base prediction " + shape_str(u_hat) + " vs target " + shape_str(target.u));
  }
  DitLossTerms out;
  const auto base_sq = (u_hat - target.u).pow(2).sum();
  const auto base_n = static_cast<double>(target.u.numel());
  out.base_mse = base_sq / base_n;
  if (u_hat_d.defined()) {
    if (!u_hat_d.sizes().equals(target.u_d.sizes())) {
      throw ShapeError("detail prediction " + shape_str(u_hat_d) + " vs target " +
                       shape_str(target.u_d));
    }
    const auto detail_sq = (u_hat_d - target.u_d).pow(2).sum();
    const auto detail_n = static_cast<double>(target.u_d.numel());
    out.detail_mse = detail_sq / detail_n;
    out.total = (base_sq + w * detail_sq) / (base_n + w * detail_n);
  } else {
    out.total = out.base_mse;
  }
  const double v = out.total.item<double>();
  if (!std::isfinite(v)) {
    throw NonFiniteLossError("dit", "non-finite diffusion loss (" + std::to_string(v) + ")");
  }
  return out;
}

namespace {

std::pair<StructuredLatent, VelocityTarget> interpolate(const StructuredLatent& x0,
                                                        const StructuredLatent& x1,
                                                        const torch::Tensor& tb,
                                                        const torch::Tensor& td) {
  if (!x0.base.sizes().equals(x1.base.sizes()) || !x0.detail.sizes().equals(x1.detail.sizes())) {
    throw ShapeError("noise and data latents differ in shape");
  }
  StructuredLatent xt((1 - tb) * x0.base + tb * x1.base, (1 - td) * x0.detail + td * x1.detail);
  return {xt, VelocityTarget{x1.base - x0.base, x1.detail - x0.detail}};
}

}  // namespace

std::pair<StructuredLatent, VelocityTarget> make_velocity_target(const StructuredLatent& x0,
                                                                 const StructuredLatent& x1,
                                                                 double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ConfigError("interpolation time must lie in [0,1], got " + std::to_string(t));
  }
  auto tt = torch::full({}, t, x0.base.options());
  return interpolate(x0, x1, tt, tt);
}

std::pair<StructuredLatent, VelocityTarget> make_velocity_target(const StructuredLatent& x0,
                                                                 const StructuredLatent& x1,
                                                                 const torch::Tensor& t) {
  if (t.numel() > 0 && (t.min().item<double>() < 0.0 || t.max().item<double>() > 1.0)) {
    throw ConfigError("interpolation times must lie in [0,1]");
  }
  std::vector<int64_t> shape(x0.base.dim(), 1);
  shape[0] = -1;
  auto tv = t.to(x0.base.dtype()).view(shape);
  return interpolate(x0, x1, tv, tv);
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (!std::isfinite(guidance_scale)) throw ConfigError("guidance scale must be finite");
  if (!(cfg_interval_start >= 0.0 && cfg_interval_start <= 1.0)) {
    throw ConfigError("cfg interval start must lie in [0,1]");
  }
  if (!(timestep_shift > 0.0)) throw ConfigError("timestep shift must be positive");
}

nlohmann::json SamplerConfig::to_json() const {
  return {{"steps", steps},
          {"guidance_scale", guidance_scale},
          {"cfg_interval_start", cfg_interval_start},
          {"timestep_shift", timestep_shift}};
}

// Written as s*t / (s*t + 1 - t) so both endpoints map exactly.
double shift_timestep(double t, double shift) { return shift * t / (shift * t + (1.0 - t)); }

std::pair<torch::Tensor, torch::Tensor> guided_velocity(DiTAdapterImpl& adapter,
                                                        const StructuredLatent& x,
                                                        const torch::Tensor& t,
                                                        const torch::Tensor& labels,
                                                        double guidance_scale) {
  if (guidance_scale == 1.0) {
    return adapter.forward(x.base, x.detail, t, labels);
  }
  if (!adapter.config().null_label) {
    throw ConfigError("classifier-free guidance requested but the model has no null-label embedding");
  }
  auto null_labels = torch::full_like(labels, adapter.config().num_classes);
  auto [u_all, ud_all] = adapter.forward(torch::cat({x.base, x.base}), torch::cat({x.detail, x.detail}),
                                         torch::cat({t, t}), torch::cat({labels, null_labels}));
  const int64_t n = labels.size(0);
  auto u_c = u_all.narrow(0, 0, n), u_u = u_all.narrow(0, n, n);
  auto d_c = ud_all.narrow(0, 0, n), d_u = ud_all.narrow(0, n, n);
  return {u_u + guidance_scale * (u_c - u_u), d_u + guidance_scale * (d_c - d_u)};
}

StructuredLatent sample_latents(DiTAdapterImpl& adapter, const torch::Tensor& labels,
                                const SamplerConfig& cfg, uint64_t seed) {
  cfg.validate();
  if (cfg.guidance_scale != 1.0 && !adapter.config().null_label) {
    throw ConfigError("classifier-free guidance requested but the model has no null-label embedding");
  }
  torch::NoGradGuard no_grad;
  const auto& dc = adapter.config();
  const int64_t n = labels.size(0);
  auto gen = make_generator(derive_seed(seed, Stream::kNoise));
  StructuredLatent x(torch::randn({n, dc.in_channels, dc.grid_h, dc.grid_w}, gen),
                     torch::randn({n, adapter.detail_channels(), dc.grid_h, dc.grid_w}, gen));
  for (int64_t i = 0; i < cfg.steps; ++i) {
    const double t0 = shift_timestep(static_cast<double>(i) / cfg.steps, cfg.timestep_shift);
    const double t1 = shift_timestep(static_cast<double>(i + 1) / cfg.steps, cfg.timestep_shift);
    const double scale = t0 >= cfg.cfg_interval_start ? cfg.guidance_scale : 1.0;
    auto tt = torch::full({n}, t0);
    auto [u, u_d] = guided_velocity(adapter, x, tt, labels, scale);
    x = StructuredLatent(x.base + (t1 - t0) * u, x.detail + (t1 - t0) * u_d);
  }
  if (!adapter.normalizer.defined()) return x;
  auto packed = adapter.normalizer.denormalize(x.packed());
  return {packed.narrow(1, 0, dc.in_channels), packed.narrow(1, dc.in_channels, adapter.detail_channels())};
}

torch::Tensor sample(DiTAdapterImpl& adapter, VaeModelImpl& vae, const torch::Tensor& labels,
                     const SamplerConfig& cfg, uint64_t seed) {
  auto latents = sample_latents(adapter, labels, cfg, seed);
  torch::NoGradGuard no_grad;
  return decode(vae, latents);
}

}  // namespace dvae
