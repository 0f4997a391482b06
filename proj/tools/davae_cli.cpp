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

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "dvae/checkpoint.h"
#include "dvae/config.h"
#include "dvae/dataset.h"
#include "dvae/diagnostics.h"
#include "dvae/dit.h"
#include "dvae/error.h"
#include "dvae/image_io.h"
#include "dvae/run.h"
#include "dvae/telemetry.h"
#include "dvae/training.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dvae;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string run_root;
  bool quiet = false;
  std::vector<std::string> argv;
};

void note(const Globals& g, const std::string& msg) {
  if (!g.quiet) std::cerr << "[davae] " << msg << '\n';
}

struct TrainFlags {
  std::string config;
  std::string resume;
  std::optional<uint64_t> seed;
  std::optional<int64_t> threads;
  std::optional<int64_t> steps;
  std::optional<int64_t> vae_steps;
  std::optional<int64_t> dit_steps;
  std::optional<int64_t> batch_size;
  std::optional<double> lr;
  std::optional<double> lambda_align;
  std::optional<int64_t> n_warm;
  std::optional<double> ema_decay;
  std::string base_vae;
  std::string base_dit;
  std::string davae;
  bool ablate_no_alignment = false;
  bool ablate_random_init = false;
  bool ablate_no_scheduler = false;
};

struct DataFlags {
  std::string folder;
  int64_t size = 256;
  uint64_t seed = 1;
  int64_t resolution = 64;
  int64_t classes = 10;

  DatasetSpec spec() const {
    DatasetSpec s;
    s.kind = folder.empty() ? "procedural" : "folder";
    s.path = folder.empty() ? "" : fs::absolute(folder).string();
    s.size = size;
    s.seed = seed;
    s.resolution = resolution;
    s.num_classes = classes;
    return s;
  }
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--dataset-folder", d.folder, "Folder of PNG images (subfolders = classes); default: procedural");
  cmd->add_option("--dataset-size", d.size, "Number of evaluation images")->capture_default_str();
  cmd->add_option("--dataset-seed", d.seed, "Procedural dataset seed (training uses 0)")->capture_default_str();
  cmd->add_option("--resolution", d.resolution, "High-res image side")->capture_default_str();
  cmd->add_option("--classes", d.classes, "Procedural class count")->capture_default_str();
}

RunManifest begin_run(const Globals& g, const std::string& command) {
  RunManifest m;
  m.command = command;
  m.argv = g.argv;
  m.run_dir = create_run_dir(resolve_run_root(g.run_root), command);
  return m;
}

void add_input(RunManifest& m, const fs::path& ckpt) {
  m.inputs[fs::absolute(ckpt).lexically_normal().string()] = checkpoint_blob_hash(ckpt);
}

void require_checkpoint(const fs::path& path, const std::string& what, const std::string& hint) {
  if (!fs::exists(path / "manifest.json")) {
    throw CheckpointError("missing prerequisite " + what + " checkpoint at " + path.string() + " (" + hint + ")");
  }
}

int run_training(const Globals& g, const std::string& command, Stage expected, const TrainFlags& f) {
  auto cfg = load_train_config(f.config);
  if (cfg.stage != expected) {
    throw ConfigError("config " + f.config + " declares stage '" + stage_name(cfg.stage) + "', but '" + command +
                      "' runs stage '" + stage_name(expected) + "'");
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.threads) cfg.threads = *f.threads;
  auto& optim = expected == Stage::kFinetuneDit ? cfg.dit.optim : cfg.vae.optim;
  if (f.steps) optim.total_steps = *f.steps;
  if (f.batch_size) optim.batch_size = *f.batch_size;
  if (f.lr) optim.learning_rate = *f.lr;
  if (f.vae_steps) cfg.vae.optim.total_steps = *f.vae_steps;
  if (f.dit_steps) cfg.dit.optim.total_steps = *f.dit_steps;
  if (f.lambda_align) cfg.vae.weights.align = *f.lambda_align;
  if (f.n_warm) cfg.dit.n_warm = *f.n_warm;
  if (f.ema_decay) cfg.dit.ema_decay = *f.ema_decay;
  if (f.ablate_no_alignment) cfg.vae.weights.align = 0.0;
  if (f.ablate_random_init) cfg.dit.adapter_init = AdapterInit::kRandom;
  if (f.ablate_no_scheduler) cfg.dit.scheduler = false;
  if (!f.base_vae.empty()) cfg.inputs.base_vae = fs::absolute(f.base_vae).lexically_normal();
  if (!f.base_dit.empty()) cfg.inputs.base_dit = fs::absolute(f.base_dit).lexically_normal();
  if (!f.davae.empty()) cfg.inputs.davae = fs::absolute(f.davae).lexically_normal();
  cfg.validate();
  cfg.require_inputs();

  if (expected == Stage::kTrainDaVae) {
    require_checkpoint(cfg.inputs.base_vae, "base VAE", "produce it with `davae pretrain`");
  }
  if (expected == Stage::kFinetuneDit) {
    require_checkpoint(cfg.inputs.base_dit, "base DiT", "produce it with `davae pretrain`");
    require_checkpoint(cfg.inputs.davae, "DA-VAE", "produce it with `davae train-vae`");
  }
  if (!f.resume.empty()) require_checkpoint(f.resume, "resume", "pass a step checkpoint of the same stage");

  auto m = begin_run(g, command);
  m.stage = stage_name(cfg.stage);
  m.config_path = fs::absolute(f.config).lexically_normal().string();
  m.config_hash = cfg.hash();
  m.seed = cfg.seed;
  for (const auto* p : {&cfg.inputs.base_vae, &cfg.inputs.base_dit, &cfg.inputs.davae}) {
    if (!p->empty()) add_input(m, *p);
  }
  if (!f.resume.empty()) add_input(m, f.resume);
  write_manifest(m);
  note(g, "run directory " + m.run_dir.string());

  StageOptions opts;
  opts.resume = f.resume;
  opts.log = [&g](const std::string& s) { note(g, s); };
  try {
    auto result = run_stage(cfg, m.run_dir, opts);
    for (const auto& c : result.checkpoints) m.outputs.push_back(c.string());
    m.outputs.push_back(result.telemetry.string());
    m.status = "completed";
    write_manifest(m);
  } catch (const TrainingAborted& e) {
    m.status = "aborted";
    if (!e.last_good().empty()) m.outputs.push_back(e.last_good());
    write_manifest(m);
    throw;
  } catch (...) {
    m.status = "failed";
    write_manifest(m);
    throw;
  }
  std::cout << m.run_dir.string() << '\n';
  return kExitOk;
}

VaeModel load_vae_for_eval(const std::string& path, RunManifest& m) {
  auto ckpt = load_checkpoint_of_kind(path, kDaVaeKind);
  add_input(m, path);
  auto vae = load_davae(ckpt);
  vae->eval();
  return vae;
}

void write_grid(const fs::path& path, const std::vector<torch::Tensor>& rows, int64_t columns) {
  std::vector<torch::Tensor> parts;
  for (const auto& r : rows) parts.push_back(r.narrow(0, 0, std::min(columns, r.size(0))));
  write_png(path, tile_images(torch::cat(parts, 0), columns));
}

int cmd_eval(const Globals& g, const std::string& model, const DataFlags& d, bool identity) {
  if (!identity && model.empty()) throw ConfigError("eval needs --model (or --identity)");
  const auto spec = d.spec();
  auto m = begin_run(g, "eval");
  write_manifest(m);
  const auto ds = load_dataset(spec);
  RandomFeaturePerceptual perceptual;
  json out{{"dataset", spec.to_json()}};
  if (identity) {
    auto r = reconstruction_report(ds.images, ds.images, &perceptual);
    r.mode = "identity";
    out["report"] = r.to_json();
  } else {
    auto vae = load_vae_for_eval(model, m);
    auto rec = decode_with_mode(*vae, ds.images, AblationMode::kFull, 0);
    auto r = reconstruction_report(ds.images, rec, &perceptual);
    if (vae->trained_steps == 0) r.warnings.push_back("model reports zero training steps");
    out["model"] = model;
    out["report"] = r.to_json();
    write_grid(m.run_dir / "reconstructions.png", {ds.images, rec}, 8);
    auto latents = encode_dataset(*vae, ds.images);
    auto emb = latent_embedding_2d(LatentBatch(split_structured(latents, vae->layout()), ds.labels));
    json pts = json::array();
    std::vector<double> xs, ys;
    std::vector<int64_t> labels;
    for (const auto& p : emb.points) {
      pts.push_back({p.x, p.y, p.label});
      xs.push_back(p.x);
      ys.push_back(p.y);
      labels.push_back(p.label);
    }
    json ej{{"points", pts}, {"explained_variance", emb.explained_variance}};
    if (emb.warning) ej["warning"] = *emb.warning;
    write_json_atomic(m.run_dir / "embedding.json", ej);
    plot_scatter(m.run_dir / "embedding.png", xs, ys, labels);
    m.outputs.push_back((m.run_dir / "embedding.json").string());
  }
  write_json_atomic(m.run_dir / "eval.json", out);
  m.outputs.push_back((m.run_dir / "eval.json").string());
  m.status = "completed";
  write_manifest(m);
  std::cout << out["report"].dump(2) << '\n';
  return kExitOk;
}

int cmd_spectrum(const Globals& g, const std::string& model, const DataFlags& d, double cutoff) {
  auto m = begin_run(g, "spectrum");
  write_manifest(m);
  auto vae = load_vae_for_eval(model, m);
  const auto spec = d.spec();
  const auto ds = load_dataset(spec);
  auto latents = encode_dataset(*vae, ds.images);
  const LatentBatch batch(split_structured(latents, vae->layout()), ds.labels);
  const auto base = radial_power_spectrum(batch, LatentBranch::kBase);
  const auto detail = radial_power_spectrum(batch, LatentBranch::kDetail);
  // Same spectra after per-channel dataset standardization, the scale the DiT
  // trains on. Reported alongside the raw numbers, which stay the headline.
  auto standardize = [](const torch::Tensor& x) { return LatentNormalizer::fit(x).normalize(x); };
  const LatentBatch std_batch(
      StructuredLatent(standardize(batch.latents.base), standardize(batch.latents.detail)), ds.labels);
  const auto std_base = radial_power_spectrum(std_batch, LatentBranch::kBase);
  const auto std_detail = radial_power_spectrum(std_batch, LatentBranch::kDetail);
  json out{{"model", model},
           {"dataset", spec.to_json()},
           {"cutoff_fraction", cutoff},
           {"base", base.to_json()},
           {"detail", detail.to_json()},
           {"high_freq_fraction", {{"base", high_freq_energy_fraction(base, cutoff)},
                                   {"detail", high_freq_energy_fraction(detail, cutoff)}}},
           {"standardized",
            {{"base", std_base.to_json()},
             {"detail", std_detail.to_json()},
             {"high_freq_fraction", {{"base", high_freq_energy_fraction(std_base, cutoff)},
                                     {"detail", high_freq_energy_fraction(std_detail, cutoff)}}}}}};
  write_json_atomic(m.run_dir / "spectrum.json", out);
  auto series = [](const SpectrumProfile& p, const std::string& name, Color c) {
    Series s{name, c, {}, {}};
    for (size_t i = 0; i < p.power.size(); ++i) {
      s.x.push_back(static_cast<double>(p.radius[i]));
      s.y.push_back(p.power[i] / std::max(p.total_energy, 1e-30));
    }
    return s;
  };
  PlotOptions po;
  po.log_y = true;
  plot_lines(m.run_dir / "spectrum.png",
             {series(base, "base", palette_color(0)), series(detail, "detail", palette_color(2))}, po);
  m.outputs = {(m.run_dir / "spectrum.json").string(), (m.run_dir / "spectrum.png").string()};
  m.status = "completed";
  write_manifest(m);
  std::cout << out["high_freq_fraction"].dump() << '\n';
  return kExitOk;
}

int cmd_ablate(const Globals& g, const std::string& model, const DataFlags& d, uint64_t seed) {
  auto m = begin_run(g, "ablate");
  write_manifest(m);
  auto vae = load_vae_for_eval(model, m);
  const auto spec = d.spec();
  const auto ds = load_dataset(spec);
  RandomFeaturePerceptual perceptual;
  json reports = json::object();
  std::vector<torch::Tensor> rows{ds.images};
  std::vector<double> psnrs;
  for (auto mode : {AblationMode::kFull, AblationMode::kZeroDetail, AblationMode::kRandomDetail}) {
    auto rec = decode_with_mode(*vae, ds.images, mode, seed);
    auto r = reconstruction_report(ds.images, rec, &perceptual);
    r.mode = ablation_name(mode);
    if (vae->trained_steps == 0) {
      r.warnings.push_back("model reports zero training steps; sensitivity of an untrained decoder is not meaningful");
    }
    psnrs.push_back(r.mean_psnr);
    reports[r.mode] = r.to_json();
    rows.push_back(rec);
  }
  json out{{"model", model},
           {"dataset", spec.to_json()},
           {"seed", seed},
           {"reports", reports},
           {"ordering", {{"full_gt_zero_detail", psnrs[0] > psnrs[1]},
                         {"zero_detail_ge_random_detail", psnrs[1] >= psnrs[2]},
                         {"full_minus_zero_detail_db", psnrs[0] - psnrs[1]}}}};
  write_json_atomic(m.run_dir / "ablation.json", out);
  write_grid(m.run_dir / "ablation.png", rows, 8);
  m.outputs = {(m.run_dir / "ablation.json").string(), (m.run_dir / "ablation.png").string()};
  m.status = "completed";
  write_manifest(m);
  std::cout << out["ordering"].dump() << '\n';
  return kExitOk;
}

int cmd_sample(const Globals& g, const std::string& model, const std::string& vae_path,
               const std::vector<int64_t>& labels, const SamplerConfig& sc, uint64_t seed, bool no_ema) {
  sc.validate();
  if (labels.empty()) throw ConfigError("--labels must name at least one class");
  auto m = begin_run(g, "sample");
  m.seed = seed;
  write_manifest(m);
  auto ckpt = load_checkpoint_of_kind(model, kAdapterKind);
  add_input(m, model);
  auto adapter = load_adapter(ckpt, !no_ema);
  auto vae = load_vae_for_eval(vae_path, m);
  if (!(vae->layout() == *ckpt.layout)) {
    throw ConfigError("DA-VAE layout " + vae->layout().describe() + " differs from the adapter's " +
                      ckpt.layout->describe());
  }
  for (auto l : labels) {
    if (l < 0 || l >= adapter->config().num_classes) {
      throw ConfigError("label " + std::to_string(l) + " outside [0, " +
                        std::to_string(adapter->config().num_classes) + ")");
    }
  }
  auto images = sample(*adapter, *vae, torch::tensor(labels, torch::kLong), sc, seed);
  write_png(m.run_dir / "samples.png", tile_images(images, 8));
  json out{{"model", model}, {"vae", vae_path}, {"labels", labels}, {"seed", seed},
           {"sampler", sc.to_json()}, {"ema", !no_ema}};
  write_json_atomic(m.run_dir / "samples.json", out);
  m.outputs = {(m.run_dir / "samples.png").string(), (m.run_dir / "samples.json").string()};
  m.status = "completed";
  write_manifest(m);
  std::cout << (m.run_dir / "samples.png").string() << '\n';
  return kExitOk;
}

int cmd_plot(const Globals& g, const std::string& csv, int64_t window) {
  const auto rows = read_telemetry(csv);
  if (rows.empty()) throw Error("telemetry " + csv + " has no rows");
  auto m = begin_run(g, "plot");
  write_manifest(m);
  std::map<std::string, std::vector<const TelemetryRecord*>> phases;
  for (const auto& r : rows) phases[r.phase].push_back(&r);
  auto series = [window](const std::vector<const TelemetryRecord*>& rs, const std::string& col, Color c) {
    Series s{col, c, {}, {}};
    std::vector<double> v;
    for (const auto* r : rs) {
      s.x.push_back(static_cast<double>(r->step));
      v.push_back(telemetry_value(*r, col));
    }
    s.y = trailing_mean(v, window);
    return s;
  };
  PlotOptions po;
  po.log_y = true;
  json files = json::array();
  for (const auto& [phase, rs] : phases) {
    std::vector<Series> ss;
    if (phase == "finetune") {
      ss = {series(rs, "dit_base_unweighted", palette_color(0)), series(rs, "dit_detail_unweighted", palette_color(2))};
    } else if (phase == "base_dit") {
      ss = {series(rs, "dit_base_unweighted", palette_color(0))};
    } else {
      ss = {series(rs, "loss_total", palette_color(0)), series(rs, "loss_l1", palette_color(1))};
      if (!std::isnan(rs.front()->loss_align)) ss.push_back(series(rs, "loss_align", palette_color(3)));
    }
    const auto path = m.run_dir / (phase + "_losses.png");
    plot_lines(path, ss, po);
    json legend = json::array();
    for (const auto& s : ss) legend.push_back(s.name);
    files.push_back({{"phase", phase}, {"file", path.string()}, {"series", legend}});
    m.outputs.push_back(path.string());
  }
  write_json_atomic(m.run_dir / "plots.json", {{"telemetry", csv}, {"window", window}, {"plots", files}});
  m.status = "completed";
  write_manifest(m);
  std::cout << m.run_dir.string() << '\n';
  return kExitOk;
}

void add_train_common(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "Stage config JSON (see `davae schema`)")->required();
  cmd->add_option("--seed", f.seed, "Override config seed (default 0)");
  cmd->add_option("--threads", f.threads, "Override intra-op threads (default 1)");
}

}  // namespace

int main(int argc, char** argv) {
  Globals g;
  for (int i = 0; i < argc; ++i) g.argv.emplace_back(argv[i]);

  CLI::App app{"davae: detail-aligned VAE tokenizer, warm-start DiT fine-tuning and diagnostics"};
  app.require_subcommand(1);
  app.add_option("--run-root", g.run_root,
                 std::string("Root for run directories (default: $") + kRunRootEnv + ", else ./runs)");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress messages on stderr");

  TrainFlags pre, vae, fin;
  auto* c_pre = app.add_subcommand("pretrain", "Pretrain the base VAE and base DiT (stage pretrain_base_vae)");
  add_train_common(c_pre, pre);
  c_pre->add_option("--vae-steps", pre.vae_steps, "Override base VAE steps");
  c_pre->add_option("--dit-steps", pre.dit_steps, "Override base DiT steps");

  auto* c_vae = app.add_subcommand("train-vae", "Train the DA-VAE detail encoder and decoder (stage train_davae)");
  add_train_common(c_vae, vae);
  c_vae->add_option("--base-vae", vae.base_vae, "Base VAE checkpoint (overrides inputs.base_vae)");
  c_vae->add_option("--resume", vae.resume, "Resume from a step checkpoint of this stage");
  c_vae->add_option("--steps", vae.steps, "Override total steps");
  c_vae->add_option("--batch-size", vae.batch_size, "Override batch size");
  c_vae->add_option("--lr", vae.lr, "Override learning rate (default 1e-4)");
  c_vae->add_option("--lambda-align", vae.lambda_align, "Override alignment weight (default 0.5)");
  c_vae->add_flag("--ablate-no-alignment", vae.ablate_no_alignment, "Set lambda_align = 0");

  auto* c_fin = app.add_subcommand("finetune", "Warm-start fine-tune the DiT on structured latents (stage finetune_dit)");
  add_train_common(c_fin, fin);
  c_fin->add_option("--base-dit", fin.base_dit, "Base DiT checkpoint (overrides inputs.base_dit)");
  c_fin->add_option("--davae", fin.davae, "DA-VAE checkpoint (overrides inputs.davae)");
  c_fin->add_option("--resume", fin.resume, "Resume from a step checkpoint of this stage");
  c_fin->add_option("--steps", fin.steps, "Override total steps");
  c_fin->add_option("--batch-size", fin.batch_size, "Override batch size");
  c_fin->add_option("--lr", fin.lr, "Override learning rate (default 2e-4)");
  c_fin->add_option("--n-warm", fin.n_warm, "Override warm-up steps of the detail loss weight (default 10000)");
  c_fin->add_option("--ema-decay", fin.ema_decay, "Override EMA decay (default 0.999)");
  c_fin->add_flag("--ablate-random-init", fin.ablate_random_init, "Random (Xavier) init of the detail embedder and head");
  c_fin->add_flag("--ablate-no-scheduler", fin.ablate_no_scheduler, "Fix the detail loss weight w = 1");

  std::string model, vae_model;
  bool identity = false;
  DataFlags data;
  auto* c_eval = app.add_subcommand("eval", "Reconstruction metrics and latent embedding of a DA-VAE");
  c_eval->add_option("--model", model, "DA-VAE checkpoint directory");
  c_eval->add_flag("--identity", identity, "Compare the dataset with itself (no model)");
  add_data_flags(c_eval, data);

  double cutoff = 0.5;
  auto* c_spec = app.add_subcommand("spectrum", "Radial power spectra of base and detail latents");
  c_spec->add_option("--model", model, "DA-VAE checkpoint directory")->required();
  c_spec->add_option("--cutoff", cutoff, "High-frequency cutoff as a fraction of Nyquist")->capture_default_str();
  add_data_flags(c_spec, data);

  uint64_t seed = 0;
  auto* c_abl = app.add_subcommand("ablate", "Decoder sensitivity: full, zero_detail and random_detail");
  c_abl->add_option("--model", model, "DA-VAE checkpoint directory")->required();
  c_abl->add_option("--seed", seed, "Seed of the random detail latents")->capture_default_str();
  add_data_flags(c_abl, data);

  SamplerConfig sc;
  std::vector<int64_t> labels{0, 1, 2, 3, 4, 5, 6, 7};
  bool no_ema = false;
  auto* c_smp = app.add_subcommand("sample", "Class-conditional sampling with classifier-free guidance");
  c_smp->add_option("--model", model, "Fine-tuned adapter checkpoint directory")->required();
  c_smp->add_option("--vae", vae_model, "DA-VAE checkpoint directory")->required();
  c_smp->add_option("--labels", labels, "Class labels, one image each")->delimiter(',')->capture_default_str();
  c_smp->add_option("--steps", sc.steps, "Euler sampling steps")->capture_default_str();
  c_smp->add_option("--cfg", sc.guidance_scale, "Guidance scale")->capture_default_str();
  c_smp->add_option("--cfg-interval-start", sc.cfg_interval_start, "Guidance only for t >= this")->capture_default_str();
  c_smp->add_option("--shift", sc.timestep_shift, "Timestep shift")->capture_default_str();
  c_smp->add_option("--seed", seed, "Noise seed")->capture_default_str();
  c_smp->add_flag("--no-ema", no_ema, "Use live weights instead of the EMA shadow");

  std::string telemetry;
  int64_t window = 50;
  auto* c_plot = app.add_subcommand("plot", "Loss-curve plots from a telemetry CSV");
  c_plot->add_option("--telemetry", telemetry, "telemetry.csv of a training run")->required();
  c_plot->add_option("--window", window, "Trailing smoothing window")->capture_default_str();

  app.add_subcommand("schema", "Print the stage config JSON schema");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_pre) return run_training(g, "pretrain", Stage::kPretrainBaseVae, pre);
    if (*c_vae) return run_training(g, "train-vae", Stage::kTrainDaVae, vae);
    if (*c_fin) return run_training(g, "finetune", Stage::kFinetuneDit, fin);
    if (*c_eval) return cmd_eval(g, model, data, identity);
    if (*c_spec) return cmd_spectrum(g, model, data, cutoff);
    if (*c_abl) return cmd_ablate(g, model, data, seed);
    if (*c_smp) return cmd_sample(g, model, vae_model, labels, sc, seed, no_ema);
    if (*c_plot) return cmd_plot(g, telemetry, window);
    if (app.got_subcommand("schema")) {
      std::cout << train_config_schema_text();
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "davae: configuration error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "davae: error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
