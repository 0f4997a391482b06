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

#include "dvae/training.h"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>

#include "dvae/dataset.h"
#include "dvae/error.h"
#include "dvae/latent.h"
#include "dvae/module_util.h"
#include "dvae/rng.h"
#include "dvae/run.h"
#include "dvae/telemetry.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace dvae {

EmaState EmaState::from_module(const torch::nn::Module& module, double decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("EMA decay must be in [0, 1]");
  EmaState ema;
  ema.decay = decay;
  for (const auto& item : module.named_parameters(true)) {
    ema.names.push_back(item.key());
    ema.shadow.push_back(item.value().detach().clone());
  }
  return ema;
}

void EmaState::copy_to(torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  auto params = module.named_parameters(true);
  if (params.size() != shadow.size()) throw ShapeError("EMA shadow does not match module parameters");
  for (size_t i = 0; i < shadow.size(); ++i) params[names[i]].copy_(shadow[i]);
}

void ema_update(EmaState& ema, const std::vector<torch::Tensor>& live) {
  if (live.size() != ema.shadow.size()) {
    throw ShapeError("EMA tracks " + std::to_string(ema.shadow.size()) + " parameters, got " +
                     std::to_string(live.size()));
  }
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < live.size(); ++i) {
    if (!live[i].sizes().equals(ema.shadow[i].sizes())) {
      std::ostringstream os;
      os << "EMA shape drift for parameter " << (i < ema.names.size() ? ema.names[i] : std::to_string(i))
         << ": shadow " << ema.shadow[i].sizes() << ", live " << live[i].sizes();
      throw ShapeError(os.str());
    }
  }
  for (size_t i = 0; i < live.size(); ++i) {
    ema.shadow[i].mul_(ema.decay).add_(live[i].detach(), 1.0 - ema.decay);
  }
}

void ema_update(EmaState& ema, const torch::nn::Module& module) {
  std::vector<torch::Tensor> live;
  for (const auto& item : module.named_parameters(true)) live.push_back(item.value());
  ema_update(ema, live);
}

namespace {

using Clock = std::chrono::steady_clock;

enum PhaseId : uint64_t { kPhaseBaseVae = 1, kPhaseBaseDit = 2, kPhaseDaVae = 3, kPhaseFinetune = 4 };

uint64_t phase_seed(uint64_t seed, PhaseId phase) { return derive_seed(seed, Stream::kInit, phase); }

void say(const StageOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

void write_json_file(const fs::path& path, const json& j) { write_json_atomic(path, j); }

using NamedParams = std::vector<std::pair<std::string, torch::Tensor>>;

NamedParams trainable(const torch::nn::Module& module) {
  NamedParams out;
  for (const auto& item : module.named_parameters(true)) {
    if (item.value().requires_grad()) out.emplace_back(item.key(), item.value());
  }
  return out;
}

std::vector<torch::Tensor> tensors_of(const NamedParams& named) {
  std::vector<torch::Tensor> out;
  for (const auto& [_, t] : named) out.push_back(t);
  return out;
}

std::unique_ptr<torch::optim::AdamW> make_optimizer(const NamedParams& params, const OptimConfig& o) {
  return std::make_unique<torch::optim::AdamW>(
      tensors_of(params),
      torch::optim::AdamWOptions(o.learning_rate).betas({o.beta1, o.beta2}).weight_decay(0.0));
}

void save_optimizer(Checkpoint& ckpt, const std::string& prefix, torch::optim::AdamW& opt,
                    const NamedParams& params) {
  json steps = json::object();
  for (const auto& [name, p] : params) {
    auto it = opt.state().find(p.unsafeGetTensorImpl());
    if (it == opt.state().end()) continue;
    auto& st = static_cast<torch::optim::AdamWParamState&>(*it->second);
    ckpt.add(prefix + name + ".exp_avg", st.exp_avg());
    ckpt.add(prefix + name + ".exp_avg_sq", st.exp_avg_sq());
    steps[name] = st.step();
  }
  ckpt.meta[prefix + "steps"] = steps;
}

void load_optimizer(const Checkpoint& ckpt, const std::string& prefix, torch::optim::AdamW& opt,
                    const NamedParams& params) {
  if (!ckpt.meta.contains(prefix + "steps")) {
    throw CheckpointError("checkpoint has no optimizer state under '" + prefix + "'");
  }
  const auto& steps = ckpt.meta[prefix + "steps"];
  for (const auto& [name, p] : params) {
    if (!steps.contains(name)) continue;
    auto st = std::make_unique<torch::optim::AdamWParamState>();
    st->step(steps[name].get<int64_t>());
    st->exp_avg(ckpt.get(prefix + name + ".exp_avg").clone());
    st->exp_avg_sq(ckpt.get(prefix + name + ".exp_avg_sq").clone());
    opt.state()[p.unsafeGetTensorImpl()] = std::move(st);
  }
}

void save_ema(Checkpoint& ckpt, const EmaState& ema) {
  for (size_t i = 0; i < ema.shadow.size(); ++i) ckpt.add("ema." + ema.names[i], ema.shadow[i]);
  ckpt.meta["ema_decay"] = ema.decay;
}

void load_ema(const Checkpoint& ckpt, EmaState& ema) {
  for (size_t i = 0; i < ema.shadow.size(); ++i) ema.shadow[i].copy_(ckpt.get("ema." + ema.names[i]));
}

void save_normalizer(Checkpoint& ckpt, const LatentNormalizer& n) {
  ckpt.add("normalizer.mean", n.mean);
  ckpt.add("normalizer.std", n.std);
}

LatentNormalizer load_normalizer(const Checkpoint& ckpt) {
  LatentNormalizer n;
  if (ckpt.has("normalizer.mean")) {
    n.mean = ckpt.get("normalizer.mean").clone();
    n.std = ckpt.get("normalizer.std").clone();
  }
  return n;
}

void clip(const NamedParams& params, double max_norm) {
  if (max_norm > 0.0) torch::nn::utils::clip_grad_norm_(tensors_of(params), max_norm);
}

double value_of(const torch::Tensor& t) { return t.defined() ? t.item<double>() : TelemetryRecord::kUnset; }

void require_finite(const torch::Tensor& t, const std::string& term) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) {
    throw NonFiniteLossError(term, "non-finite " + term + " loss (" + std::to_string(v) + ")");
  }
}

torch::Tensor poison(const torch::Tensor& t, const StageOptions& o, int64_t step) {
  return step == o.inject_nonfinite_at_step ? t * std::numeric_limits<double>::quiet_NaN() : t;
}

bool should_log(int64_t step, int64_t total, int64_t interval) {
  return step % interval == 0 || step == total - 1;
}

fs::path checkpoint_path(const fs::path& run_dir, const std::string& name) {
  return run_dir / "checkpoints" / name;
}

std::string step_name(int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step-%06lld", static_cast<long long>(step));
  return buf;
}

fs::path save_in_run(const Checkpoint& ckpt, const fs::path& run_dir, const std::string& name) {
  auto path = checkpoint_path(run_dir, name);
  save_checkpoint(ckpt, path);
  return path;
}

struct RunFiles {
  fs::path csv;
  fs::path timing;
};

RunFiles prepare_run_dir(const TrainConfig& config, const fs::path& run_dir) {
  fs::create_directories(run_dir / "checkpoints");
  RunFiles f{run_dir / "telemetry.csv", run_dir / "timing.csv"};
  if (fs::exists(f.csv) && fs::file_size(f.csv) > 0) {
    throw Error("run directory " + run_dir.string() + " already holds telemetry; refusing to append");
  }
  write_json_file(run_dir / "config.resolved.json", config.to_json());
  return f;
}

// Copies telemetry rows with step < `before` from the run that produced the
// resume checkpoint, so a resumed run's log matches an uninterrupted one.
void copy_prior_telemetry(const fs::path& resume_ckpt, const RunFiles& files, int64_t before) {
  const auto src_run = resume_ckpt.parent_path().parent_path();
  for (const auto& [src, dst] : {std::pair{src_run / "telemetry.csv", files.csv},
                                 std::pair{src_run / "timing.csv", files.timing}}) {
    std::ifstream in(src);
    if (!in) throw Error("cannot find the telemetry of the resumed run: " + src.string());
    std::ofstream out(dst, std::ios::binary | std::ios::trunc);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
      if (!header) {
        const auto comma = line.find(',');
        if (comma == std::string::npos || std::stoll(line.substr(0, comma)) >= before) continue;
      }
      out << line << '\n';
      header = false;
    }
  }
}

void check_resume(const Checkpoint& ckpt, const TrainConfig& config, const std::string& kind) {
  if (ckpt.kind != kind) {
    throw CheckpointError("resume checkpoint is a '" + ckpt.kind + "' checkpoint, expected '" + kind + "'");
  }
  if (ckpt.meta.value("config_hash", "") != config.hash()) {
    throw ConfigError("resume checkpoint was produced by a different config (hash " +
                      ckpt.meta.value("config_hash", std::string("?")) + ", current " + config.hash() + ")");
  }
}

torch::Tensor drop_labels(const torch::Tensor& labels, double p, int64_t null_label, uint64_t seed) {
  if (p <= 0.0) return labels;
  auto gen = make_generator(seed);
  auto mask = torch::rand({labels.size(0)}, gen) < p;
  return torch::where(mask, torch::full_like(labels, null_label), labels);
}

struct FlowBatch {
  torch::Tensor x0;
  torch::Tensor t;
  torch::Tensor labels;
};

FlowBatch flow_batch(const torch::Tensor& x1, const torch::Tensor& labels, uint64_t seed, int64_t step,
                     double label_dropout, int64_t null_label) {
  auto noise_gen = make_generator(derive_seed(seed, Stream::kNoise, step));
  auto t_gen = make_generator(derive_seed(seed, Stream::kTimestep, step));
  FlowBatch b;
  b.x0 = torch::randn(x1.sizes(), noise_gen);
  b.t = torch::rand({x1.size(0)}, t_gen);
  b.labels = drop_labels(labels, label_dropout, null_label, derive_seed(seed, Stream::kLabelDrop, step));
  return b;
}

// ---------------------------------------------------------------- base VAE

void base_vae_checkpoint(Checkpoint& c, const TrainConfig& config, BaseVaeImpl& vae, int64_t steps) {
  c.kind = kBaseVaeKind;
  c.layout = config.layout;
  c.frozen_encoder_sha256 = parameter_hash(*vae.encoder);
  c.meta["arch"] = vae.arch().to_json();
  c.meta["trained_steps"] = steps;
  c.meta["config_hash"] = config.hash();
  c.add_module("encoder.", *vae.encoder);
  c.add_module("decoder.", *vae.decoder);
}

// ----------------------------------------------------------------- DA-VAE

struct DaVaeState {
  VaeModel vae{nullptr};
  Discriminator disc{nullptr};
  NamedParams params;
  NamedParams disc_params;
  std::unique_ptr<torch::optim::AdamW> opt;
  std::unique_ptr<torch::optim::AdamW> disc_opt;
  std::string frozen_hash;
  std::string base_vae_hash;
};

Checkpoint davae_checkpoint(const TrainConfig& config, DaVaeState& s, int64_t steps) {
  const auto now = parameter_hash(*s.vae->base_encoder);
  if (now != s.frozen_hash) {
    throw Error("frozen base encoder changed during training (" + s.frozen_hash + " -> " + now + ")");
  }
  Checkpoint c;
  c.kind = kDaVaeKind;
  c.layout = config.layout;
  c.frozen_encoder_sha256 = s.frozen_hash;
  c.meta["arch"] = s.vae->arch().to_json();
  c.meta["trained_steps"] = steps;
  c.meta["step"] = steps;
  c.meta["config_hash"] = config.hash();
  c.meta["loss_weights"] = config.vae.weights.to_json();
  c.meta["base_vae_blob_sha256"] = s.base_vae_hash;
  c.add_module("", *s.vae);
  save_optimizer(c, "optim.", *s.opt, s.params);
  if (s.disc) {
    c.add_module("disc.", *s.disc);
    save_optimizer(c, "disc_optim.", *s.disc_opt, s.disc_params);
  }
  return c;
}

// ---------------------------------------------------------------- finetune

struct AdapterState {
  DiTAdapter adapter{nullptr};
  NamedParams params;
  std::unique_ptr<torch::optim::AdamW> opt;
  EmaState ema;
  json equivalence;
  std::string frozen_hash;
};

Checkpoint adapter_checkpoint(const TrainConfig& config, AdapterState& s, int64_t steps) {
  Checkpoint c;
  c.kind = kAdapterKind;
  c.layout = config.layout;
  c.frozen_encoder_sha256 = s.frozen_hash;
  c.meta["dit"] = s.adapter->config().to_json();
  c.meta["trained_steps"] = steps;
  c.meta["step"] = steps;
  c.meta["config_hash"] = config.hash();
  c.meta["adapter_init"] = config.dit.adapter_init == AdapterInit::kZero ? "zero" : "random";
  c.meta["scheduler"] = config.dit.scheduler;
  c.meta["n_warm"] = config.dit.n_warm;
  c.meta["equivalence"] = s.equivalence;
  c.add_module("model.", *s.adapter);
  save_ema(c, s.ema);
  save_normalizer(c, s.adapter->normalizer);
  save_optimizer(c, "optim.", *s.opt, s.params);
  return c;
}

}  // namespace

torch::Tensor encode_dataset(VaeModelImpl& vae, const torch::Tensor& images_hr, int64_t chunk) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images_hr.size(0); i += chunk) {
    auto x = images_hr.narrow(0, i, std::min(chunk, images_hr.size(0) - i));
    parts.push_back(encode_mean(vae, area_downsample(x, vae.layout().scale()), x).packed());
  }
  return torch::cat(parts, 0);
}

Checkpoint load_checkpoint_of_kind(const fs::path& dir, const std::string& kind) {
  if (!fs::exists(dir / "manifest.json")) {
    throw CheckpointError("missing " + kind + " checkpoint: " + dir.string());
  }
  auto c = load_checkpoint(dir);
  if (c.kind != kind) {
    throw CheckpointError(dir.string() + " is a '" + c.kind + "' checkpoint, expected '" + kind + "'");
  }
  return c;
}

BaseVae load_base_vae(const Checkpoint& ckpt) {
  if (!ckpt.layout) throw CheckpointError("base VAE checkpoint has no layout");
  BaseVae vae(*ckpt.layout, VaeArch::from_json(ckpt.meta.at("arch")));
  ckpt.load_module("encoder.", *vae->encoder);
  ckpt.load_module("decoder.", *vae->decoder);
  return vae;
}

VaeModel load_davae(const Checkpoint& ckpt) {
  if (!ckpt.layout) throw CheckpointError("DA-VAE checkpoint has no layout");
  VaeModel vae(*ckpt.layout, VaeArch::from_json(ckpt.meta.at("arch")));
  ckpt.load_module("", *vae);
  set_requires_grad(*vae->base_encoder, false);
  vae->trained_steps = ckpt.meta.value("trained_steps", int64_t{0});
  if (!ckpt.frozen_encoder_sha256.empty() &&
      parameter_hash(*vae->base_encoder) != ckpt.frozen_encoder_sha256) {
    throw CheckpointError("frozen encoder hash mismatch: manifest " + ckpt.frozen_encoder_sha256 +
                          ", arrays " + parameter_hash(*vae->base_encoder));
  }
  return vae;
}

BaseDiT load_base_dit(const Checkpoint& ckpt, bool use_ema) {
  BaseDiT dit(DiTConfig::from_json(ckpt.meta.at("dit")));
  ckpt.load_module(use_ema && ckpt.has_prefix("ema.") ? "ema." : "model.", *dit);
  dit->normalizer = load_normalizer(ckpt);
  return dit;
}

DiTAdapter load_adapter(const Checkpoint& ckpt, bool use_ema) {
  if (!ckpt.layout) throw CheckpointError("adapter checkpoint has no layout");
  DiTAdapter adapter(DiTConfig::from_json(ckpt.meta.at("dit")), ckpt.layout->detail_channels());
  ckpt.load_module(use_ema && ckpt.has_prefix("ema.") ? "ema." : "model.", *adapter);
  adapter->normalizer = load_normalizer(ckpt);
  return adapter;
}

StageResult pretrain_base(const TrainConfig& config, const fs::path& run_dir, const StageOptions& o) {
  torch::set_num_threads(static_cast<int>(config.threads));
  const auto files = prepare_run_dir(config, run_dir);
  TelemetryWriter tw(files.csv, files.timing);
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  const auto ds = load_dataset(config.dataset);
  const auto images = ds.base_images(config.layout.scale());
  StageResult result;
  result.telemetry = files.csv;

  // Base VAE: L1 + KL on base-resolution images.
  const uint64_t vs = phase_seed(config.seed, kPhaseBaseVae);
  torch::manual_seed(vs);
  BaseVae vae(config.layout, config.vae.arch);
  auto vparams = trainable(*vae);
  auto vopt = make_optimizer(vparams, config.vae.optim);
  BatchSampler vsampler(ds.size(), config.vae.optim.batch_size, vs);
  const auto& vw = config.vae.weights;
  const int64_t vsteps = config.vae.optim.total_steps;
  say(o, "base VAE: " + std::to_string(vsteps) + " steps");
  int64_t vstep = 0;
  try {
    for (; vstep < vsteps; ++vstep) {
      auto x = images.index_select(0, vsampler.indices(vstep));
      auto post = vae->encoder->forward(x);
      auto z = sample_latent(post, derive_seed(vs, Stream::kPosterior, vstep));
      auto rec = vae->decoder->forward(z);
      auto l1 = poison((rec - x).abs().mean(), o, vstep);
      auto kl = kl_loss(post);
      require_finite(l1, "l1");
      require_finite(kl, "kl");
      auto total = vw.l1 * l1 + vw.kl * kl;
      vopt->zero_grad();
      total.backward();
      clip(vparams, config.vae.optim.grad_clip);
      vopt->step();
      if (should_log(vstep, vsteps, config.log_interval)) {
        TelemetryRecord r;
        r.step = vstep;
        r.phase = "base_vae";
        r.lr = config.vae.optim.learning_rate;
        r.loss_total = total.item<double>();
        r.loss_l1 = l1.item<double>();
        r.loss_kl = kl.item<double>();
        tw.write(r, elapsed());
      }
    }
  } catch (const NonFiniteLossError& e) {
    tw.flush();
    Checkpoint c;
    base_vae_checkpoint(c, config, *vae, vstep);
    auto path = save_in_run(c, run_dir, "last_good");
    throw TrainingAborted(std::string(e.what()) + " at base VAE step " + std::to_string(vstep),
                          path.string());
  }
  Checkpoint vc;
  base_vae_checkpoint(vc, config, *vae, vsteps);
  result.checkpoints.push_back(save_in_run(vc, run_dir, "base_vae"));
  const auto frozen_hash = vc.frozen_encoder_sha256;

  // Base DiT on normalized posterior means of the frozen encoder.
  torch::Tensor latents;
  {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < images.size(0); i += 64) {
      parts.push_back(vae->encoder->forward(images.narrow(0, i, std::min<int64_t>(64, images.size(0) - i))).mean);
    }
    latents = torch::cat(parts, 0);
  }
  const uint64_t ds_seed = phase_seed(config.seed, kPhaseBaseDit);
  torch::manual_seed(ds_seed);
  const auto dcfg = config.dit_config();
  BaseDiT dit(dcfg);
  dit->normalizer = LatentNormalizer::fit(latents);
  const auto z1_all = dit->normalizer.normalize(latents);
  auto dparams = trainable(*dit);
  auto dopt = make_optimizer(dparams, config.dit.optim);
  auto ema = EmaState::from_module(*dit, config.dit.ema_decay);
  BatchSampler dsampler(ds.size(), config.dit.optim.batch_size, ds_seed);
  const int64_t dsteps = config.dit.optim.total_steps;
  say(o, "base DiT (" + dcfg.describe() + "): " + std::to_string(dsteps) + " steps");
  double last_loss = 0.0;
  for (int64_t step = 0; step < dsteps; ++step) {
    auto idx = dsampler.indices(step);
    auto x1 = z1_all.index_select(0, idx);
    auto b = flow_batch(x1, ds.labels.index_select(0, idx), ds_seed, step, config.dit.label_dropout,
                        dcfg.num_classes);
    auto tb = b.t.view({-1, 1, 1, 1});
    auto xt = (1 - tb) * b.x0 + tb * x1;
    auto pred = dit->forward(xt, b.t, b.labels);
    auto loss = poison((pred - (x1 - b.x0)).pow(2).mean(), o, step);
    try {
      require_finite(loss, "dit_base");
    } catch (const NonFiniteLossError& e) {
      tw.flush();
      Checkpoint c;
      c.kind = kBaseDitKind;
      c.frozen_encoder_sha256 = frozen_hash;
      c.meta["dit"] = dcfg.to_json();
      c.meta["trained_steps"] = step;
      c.add_module("model.", *dit);
      save_ema(c, ema);
      save_normalizer(c, dit->normalizer);
      auto path = save_in_run(c, run_dir, "last_good");
      throw TrainingAborted(std::string(e.what()) + " at base DiT step " + std::to_string(step),
                            path.string());
    }
    dopt->zero_grad();
    loss.backward();
    clip(dparams, config.dit.optim.grad_clip);
    dopt->step();
    ema_update(ema, *dit);
    last_loss = loss.item<double>();
    if (should_log(step, dsteps, config.log_interval)) {
      TelemetryRecord r;
      r.step = step;
      r.phase = "base_dit";
      r.lr = config.dit.optim.learning_rate;
      r.loss_total = last_loss;
      r.dit_base_unweighted = last_loss;
      r.ema_active = true;
      tw.write(r, elapsed());
    }
  }
  tw.flush();
  Checkpoint dc;
  dc.kind = kBaseDitKind;
  dc.frozen_encoder_sha256 = frozen_hash;
  dc.meta["dit"] = dcfg.to_json();
  dc.meta["trained_steps"] = dsteps;
  dc.meta["config_hash"] = config.hash();
  dc.add_module("model.", *dit);
  save_ema(dc, ema);
  save_normalizer(dc, dit->normalizer);
  result.checkpoints.push_back(save_in_run(dc, run_dir, "base_dit"));

  result.summary = {{"stage", stage_name(config.stage)},
                    {"base_vae_steps", vsteps},
                    {"base_dit_steps", dsteps},
                    {"final_base_dit_loss", last_loss},
                    {"frozen_encoder_sha256", frozen_hash}};
  write_json_file(run_dir / "summary.json", result.summary);
  return result;
}

StageResult train_davae(const TrainConfig& config, const fs::path& run_dir, const StageOptions& o) {
  torch::set_num_threads(static_cast<int>(config.threads));
  const auto base_ckpt = load_checkpoint_of_kind(config.inputs.base_vae, kBaseVaeKind);
  if (!base_ckpt.layout || base_ckpt.layout->base_channels() != config.layout.base_channels() ||
      base_ckpt.layout->downsample() != config.layout.downsample()) {
    throw ConfigError("base VAE checkpoint layout " +
                      (base_ckpt.layout ? base_ckpt.layout->describe() : std::string("(none)")) +
                      " is incompatible with " + config.layout.describe());
  }
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = load_checkpoint(o.resume);
    check_resume(*resume, config, kDaVaeKind);
  }
  const auto files = prepare_run_dir(config, run_dir);
  const int64_t first_step = resume ? resume->meta.at("step").get<int64_t>() : 0;
  if (resume) copy_prior_telemetry(o.resume, files, first_step);
  TelemetryWriter tw(files.csv, files.timing);
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  const auto ds = load_dataset(config.dataset);
  const uint64_t seed = phase_seed(config.seed, kPhaseDaVae);
  DaVaeState s;
  {
    auto base = load_base_vae(base_ckpt);
    torch::manual_seed(seed);
    s.vae = VaeModel(config.layout, config.vae.arch);
    s.vae->init_from_base(*base);
  }
  s.frozen_hash = parameter_hash(*s.vae->base_encoder);
  if (s.frozen_hash != base_ckpt.frozen_encoder_sha256) {
    throw CheckpointError("base encoder hash " + s.frozen_hash + " does not match the base VAE manifest " +
                          base_ckpt.frozen_encoder_sha256);
  }
  s.base_vae_hash = checkpoint_blob_hash(config.inputs.base_vae);
  const auto& w = config.vae.weights;
  s.params = trainable(*s.vae);
  s.opt = make_optimizer(s.params, config.vae.optim);
  if (w.adv > 0.0) {
    torch::manual_seed(derive_seed(seed, Stream::kDiscriminator));
    s.disc = Discriminator(config.vae.discriminator_width);
    s.disc_params = trainable(*s.disc);
    s.disc_opt = make_optimizer(s.disc_params, config.vae.optim);
  }
  if (resume) {
    resume->load_module("", *s.vae);
    load_optimizer(*resume, "optim.", *s.opt, s.params);
    if (s.disc) {
      resume->load_module("disc.", *s.disc);
      load_optimizer(*resume, "disc_optim.", *s.disc_opt, s.disc_params);
    }
  }
  RandomFeaturePerceptual perceptual(config.vae.perceptual_seed);
  BatchSampler sampler(ds.size(), config.vae.optim.batch_size, seed);
  const auto& layout = config.layout;
  const int64_t steps = config.vae.optim.total_steps;
  say(o, "DA-VAE " + layout.describe() + ": steps " + std::to_string(first_step) + ".." +
             std::to_string(steps));

  StageResult result;
  result.telemetry = files.csv;
  double last_align = 0.0, last_total = 0.0;
  int64_t step = first_step;
  try {
    for (; step < steps; ++step) {
      auto x_hr = ds.images.index_select(0, sampler.indices(step));
      auto x_b = area_downsample(x_hr, layout.scale());
      const uint64_t ps = derive_seed(seed, Stream::kPosterior, step);
      auto base_post = encode_base(*s.vae, x_b);
      auto detail_post = encode_detail(*s.vae, x_hr);
      auto z = sample_latent(base_post, ps);
      auto z_d = sample_latent(detail_post, derive_seed(ps, Stream::kDetailPosterior));
      auto rec = decode(*s.vae, StructuredLatent(z, z_d));
      auto terms = vae_reconstruction_loss(x_hr, rec, w, &perceptual, s.disc ? s.disc.get() : nullptr,
                                           &detail_post);
      terms.l1 = poison(terms.l1, o, step);
      auto total = vae_total_loss(terms, z, z_d, w, layout);
      s.opt->zero_grad();
      total.total.backward();
      clip(s.params, config.vae.optim.grad_clip);
      s.opt->step();
      double disc_loss = TelemetryRecord::kUnset;
      if (s.disc) {
        auto ld = hinge_discriminator_loss(s.disc->forward(x_hr), s.disc->forward(rec.detach()));
        require_finite(ld, "disc");
        s.disc_opt->zero_grad();
        ld.backward();
        clip(s.disc_params, config.vae.optim.grad_clip);
        s.disc_opt->step();
        disc_loss = ld.item<double>();
      }
      last_align = total.align.item<double>();
      last_total = total.total.item<double>();
      if (should_log(step, steps, config.log_interval)) {
        TelemetryRecord r;
        r.step = step;
        r.phase = "davae";
        r.lr = config.vae.optim.learning_rate;
        r.loss_total = last_total;
        r.loss_l1 = value_of(terms.l1);
        r.loss_lpips = value_of(terms.lpips);
        r.loss_adv = value_of(terms.adv);
        r.loss_kl = value_of(terms.kl);
        r.loss_align = last_align;
        r.loss_disc = disc_loss;
        tw.write(r, elapsed());
      }
      if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 && step + 1 < steps) {
        tw.flush();
        save_in_run(davae_checkpoint(config, s, step + 1), run_dir, step_name(step + 1));
      }
    }
  } catch (const NonFiniteLossError& e) {
    tw.flush();
    auto path = save_in_run(davae_checkpoint(config, s, step), run_dir, "last_good");
    write_json_file(run_dir / "summary.json",
                    {{"stage", stage_name(config.stage)}, {"aborted_at_step", step},
                     {"term", e.term()}, {"last_good", path.string()}});
    throw TrainingAborted(std::string(e.what()) + " at DA-VAE step " + std::to_string(step), path.string());
  }
  tw.flush();
  s.vae->trained_steps = steps;
  result.checkpoints.push_back(save_in_run(davae_checkpoint(config, s, steps), run_dir, "davae"));
  result.summary = {{"stage", stage_name(config.stage)},
                    {"steps", steps},
                    {"resumed_from_step", first_step},
                    {"final_loss_total", last_total},
                    {"final_loss_align", last_align},
                    {"lambda_align", w.align},
                    {"frozen_encoder_sha256", s.frozen_hash}};
  write_json_file(run_dir / "summary.json", result.summary);
  return result;
}

StageResult finetune_dit(const TrainConfig& config, const fs::path& run_dir, const StageOptions& o) {
  torch::set_num_threads(static_cast<int>(config.threads));
  const auto dit_ckpt = load_checkpoint_of_kind(config.inputs.base_dit, kBaseDitKind);
  const auto vae_ckpt = load_checkpoint_of_kind(config.inputs.davae, kDaVaeKind);
  if (!(vae_ckpt.layout && *vae_ckpt.layout == config.layout)) {
    throw ConfigError("DA-VAE checkpoint layout " +
                      (vae_ckpt.layout ? vae_ckpt.layout->describe() : std::string("(none)")) +
                      " differs from the config layout " + config.layout.describe());
  }
  if (!dit_ckpt.frozen_encoder_sha256.empty() &&
      dit_ckpt.frozen_encoder_sha256 != vae_ckpt.frozen_encoder_sha256) {
    throw CheckpointError("base DiT was trained on a different base encoder (" +
                          dit_ckpt.frozen_encoder_sha256 + " vs " + vae_ckpt.frozen_encoder_sha256 + ")");
  }
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) {
    resume = load_checkpoint(o.resume);
    check_resume(*resume, config, kAdapterKind);
  }
  const auto files = prepare_run_dir(config, run_dir);
  const int64_t first_step = resume ? resume->meta.at("step").get<int64_t>() : 0;
  if (resume) copy_prior_telemetry(o.resume, files, first_step);
  TelemetryWriter tw(files.csv, files.timing);
  const auto start = Clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

  const auto ds = load_dataset(config.dataset);
  auto base = load_base_dit(dit_ckpt, /*use_ema=*/true);
  auto vae = load_davae(vae_ckpt);
  const auto& layout = config.layout;
  const auto latents = encode_dataset(*vae, ds.images);
  const auto detail_norm = LatentNormalizer::fit(latents.narrow(1, layout.base_channels(), layout.detail_channels()));

  const uint64_t seed = phase_seed(config.seed, kPhaseFinetune);
  AdapterState s;
  s.frozen_hash = vae_ckpt.frozen_encoder_sha256;
  AttachOptions ao;
  ao.init = config.dit.adapter_init;
  ao.seed = seed;
  ao.latent_grid = std::pair{latents.size(2), latents.size(3)};
  s.adapter = attach_adapter(*base, layout, ao);
  s.adapter->normalizer = LatentNormalizer::concat(base->normalizer, detail_norm);
  const auto rep = check_zero_init_equivalence(*base, *s.adapter, config.dit.equivalence_pairs,
                                               derive_seed(seed, Stream::kEval));
  s.equivalence = {{"pairs", rep.pairs},
                   {"max_abs_base_diff", rep.max_abs_base_diff},
                   {"max_abs_detail", rep.max_abs_detail},
                   {"passed", rep.passed}};
  say(o, std::string("step-0 equivalence check ") + (rep.passed ? "passed" : "FAILED") +
             " (max base diff " + std::to_string(rep.max_abs_base_diff) + ", max detail " +
             std::to_string(rep.max_abs_detail) + ")");
  s.params = trainable(*s.adapter);
  s.opt = make_optimizer(s.params, config.dit.optim);
  s.ema = EmaState::from_module(*s.adapter, config.dit.ema_decay);
  if (resume) {
    if (resume->meta.contains("equivalence")) s.equivalence = resume->meta["equivalence"];
    resume->load_module("model.", *s.adapter);
    load_ema(*resume, s.ema);
    load_optimizer(*resume, "optim.", *s.opt, s.params);
  }
  const auto z1_all = s.adapter->normalizer.normalize(latents);
  const WarmupSchedule schedule(config.dit.n_warm);
  BatchSampler sampler(ds.size(), config.dit.optim.batch_size, seed);
  const auto dcfg = s.adapter->config();
  const int64_t steps = config.dit.optim.total_steps;
  say(o, "fine-tune " + dcfg.describe() + ": steps " + std::to_string(first_step) + ".." +
             std::to_string(steps));

  StageResult result;
  result.telemetry = files.csv;
  double last_base = 0.0, last_detail = 0.0;
  int64_t step = first_step;
  try {
    for (; step < steps; ++step) {
      auto idx = sampler.indices(step);
      auto x1 = z1_all.index_select(0, idx);
      auto b = flow_batch(x1, ds.labels.index_select(0, idx), seed, step, config.dit.label_dropout,
                          dcfg.num_classes);
      auto [xt, target] = make_velocity_target(split_structured(b.x0, layout), split_structured(x1, layout), b.t);
      auto [u, u_d] = s.adapter->forward(xt.base, xt.detail, b.t, b.labels);
      const double w = config.dit.scheduler ? loss_weight(schedule, step) : 1.0;
      auto terms = dit_loss(u, u_d, target, w);
      terms.total = poison(terms.total, o, step);
      require_finite(terms.total, "dit_total");
      s.opt->zero_grad();
      terms.total.backward();
      clip(s.params, config.dit.optim.grad_clip);
      s.opt->step();
      ema_update(s.ema, *s.adapter);
      last_base = terms.base_mse.item<double>();
      last_detail = terms.detail_mse.item<double>();
      if (should_log(step, steps, config.log_interval)) {
        TelemetryRecord r;
        r.step = step;
        r.phase = "finetune";
        r.w = w;
        r.lr = config.dit.optim.learning_rate;
        r.loss_total = terms.total.item<double>();
        r.dit_base_unweighted = last_base;
        r.dit_detail_unweighted = last_detail;
        r.ema_active = true;
        tw.write(r, elapsed());
      }
      if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0 && step + 1 < steps) {
        tw.flush();
        save_in_run(adapter_checkpoint(config, s, step + 1), run_dir, step_name(step + 1));
      }
    }
  } catch (const NonFiniteLossError& e) {
    tw.flush();
    auto path = save_in_run(adapter_checkpoint(config, s, step), run_dir, "last_good");
    write_json_file(run_dir / "summary.json",
                    {{"stage", stage_name(config.stage)}, {"aborted_at_step", step},
                     {"term", e.term()}, {"last_good", path.string()}});
    throw TrainingAborted(std::string(e.what()) + " at fine-tune step " + std::to_string(step), path.string());
  }
  tw.flush();
  result.checkpoints.push_back(save_in_run(adapter_checkpoint(config, s, steps), run_dir, "dit_adapter"));
  result.summary = {{"stage", stage_name(config.stage)},
                    {"steps", steps},
                    {"resumed_from_step", first_step},
                    {"n_warm", config.dit.n_warm},
                    {"scheduler", config.dit.scheduler},
                    {"adapter_init", config.dit.adapter_init == AdapterInit::kZero ? "zero" : "random"},
                    {"equivalence", s.equivalence},
                    {"final_dit_base_unweighted", last_base},
                    {"final_dit_detail_unweighted", last_detail}};
  write_json_file(run_dir / "summary.json", result.summary);
  return result;
}

StageResult run_stage(const TrainConfig& config, const fs::path& run_dir, const StageOptions& o) {
  config.validate();
  config.require_inputs();
  switch (config.stage) {
    case Stage::kPretrainBaseVae:
      if (!o.resume.empty()) throw ConfigError("resume is supported for train_davae and finetune_dit only");
      return pretrain_base(config, run_dir, o);
    case Stage::kTrainDaVae:
      return train_davae(config, run_dir, o);
    case Stage::kFinetuneDit:
      return finetune_dit(config, run_dir, o);
  }
  throw ConfigError("unknown stage");
}

}  // namespace dvae
