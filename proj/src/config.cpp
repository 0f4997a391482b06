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

#include "dvae/config.h"

#include <fstream>
#include <sstream>

#include "dvae/checkpoint.h"
#include "dvae/error.h"

namespace fs = std::filesystem;

namespace dvae {

namespace {

#include "train_config_schema.inc"

using nlohmann::json;

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "boolean") return v.is_boolean();
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  if (t == "null") return v.is_null();
  return false;
}

void validate_at(const json& v, const json& s, const std::string& ptr, std::vector<std::string>& out) {
  const std::string where = ptr.empty() ? "/" : ptr;
  if (s.contains("type")) {
    std::vector<std::string> types;
    if (s["type"].is_array()) {
      for (const auto& t : s["type"]) types.push_back(t.get<std::string>());
    } else {
      types.push_back(s["type"].get<std::string>());
    }
    bool ok = false;
    for (const auto& t : types) ok = ok || has_type(v, t);
    if (!ok) {
      std::string expected;
      for (const auto& t : types) expected += (expected.empty() ? "" : " or ") + t;
      out.push_back(where + ": expected " + expected + ", got " + v.type_name());
      return;
    }
  }
  if (s.contains("enum")) {
    bool found = false;
    for (const auto& e : s["enum"]) found = found || e == v;
    if (!found) out.push_back(where + ": value " + v.dump() + " not in " + s["enum"].dump());
  }
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) {
      out.push_back(where + ": " + v.dump() + " is below the minimum " + s["minimum"].dump());
    }
    if (s.contains("maximum") && x > s["maximum"].get<double>()) {
      out.push_back(where + ": " + v.dump() + " is above the maximum " + s["maximum"].dump());
    }
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
      out.push_back(where + ": " + v.dump() + " must be greater than " + s["exclusiveMinimum"].dump());
    }
    if (s.contains("exclusiveMaximum") && x >= s["exclusiveMaximum"].get<double>()) {
      out.push_back(where + ": " + v.dump() + " must be less than " + s["exclusiveMaximum"].dump());
    }
  }
  if (v.is_array()) {
    if (s.contains("minItems") && v.size() < s["minItems"].get<size_t>()) {
      out.push_back(where + ": expected at least " + s["minItems"].dump() + " items");
    }
    if (s.contains("maxItems") && v.size() > s["maxItems"].get<size_t>()) {
      out.push_back(where + ": expected at most " + s["maxItems"].dump() + " items");
    }
    if (s.contains("items")) {
      for (size_t i = 0; i < v.size(); ++i) validate_at(v[i], s["items"], ptr + "/" + std::to_string(i), out);
    }
  }
  if (v.is_object()) {
    const json empty = json::object();
    const json& props = s.contains("properties") ? s["properties"] : empty;
    if (s.contains("required")) {
      for (const auto& r : s["required"]) {
        if (!v.contains(r.get<std::string>())) {
          out.push_back(where + ": missing required field '" + r.get<std::string>() + "'");
        }
      }
    }
    for (const auto& [key, value] : v.items()) {
      if (props.contains(key)) {
        validate_at(value, props[key], ptr + "/" + key, out);
      } else if (s.contains("additionalProperties") && s["additionalProperties"] == false) {
        out.push_back(where + ": unknown field '" + key + "'");
      }
    }
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path.lexically_normal() : (base / path).lexically_normal();
}

OptimConfig parse_optim(const json& j, OptimConfig o) {
  o.learning_rate = j.value("learning_rate", o.learning_rate);
  if (j.contains("betas")) {
    o.beta1 = j["betas"][0].get<double>();
    o.beta2 = j["betas"][1].get<double>();
  }
  o.batch_size = j.value("batch_size", o.batch_size);
  o.total_steps = j.value("total_steps", o.total_steps);
  o.grad_clip = j.value("grad_clip", o.grad_clip);
  return o;
}

json optim_json(const OptimConfig& o) {
  return {{"learning_rate", o.learning_rate},
          {"betas", {o.beta1, o.beta2}},
          {"batch_size", o.batch_size},
          {"total_steps", o.total_steps},
          {"grad_clip", o.grad_clip}};
}

}  // namespace

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::kPretrainBaseVae:
      return "pretrain_base_vae";
    case Stage::kTrainDaVae:
      return "train_davae";
    case Stage::kFinetuneDit:
      return "finetune_dit";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  if (name == "pretrain_base_vae") return Stage::kPretrainBaseVae;
  if (name == "train_davae") return Stage::kTrainDaVae;
  if (name == "finetune_dit") return Stage::kFinetuneDit;
  throw ConfigError("unknown stage '" + name + "'");
}

const std::string& train_config_schema_text() {
  static const std::string text(kTrainConfigSchema);
  return text;
}

const json& train_config_schema() {
  static const json schema = json::parse(train_config_schema_text());
  return schema;
}

std::vector<std::string> validate_json(const json& doc, const json& schema) {
  std::vector<std::string> out;
  validate_at(doc, schema, "", out);
  return out;
}

DiTConfig TrainConfig::dit_config() const {
  DiTConfig c;
  c.hidden = dit.hidden;
  c.depth = dit.depth;
  c.heads = dit.heads;
  c.mlp_ratio = dit.mlp_ratio;
  c.num_classes = dataset.num_classes;
  c.in_channels = layout.base_channels();
  c.patch = layout.patch();
  const int64_t base_res = dataset.resolution / layout.scale();
  c.grid_h = c.grid_w = base_res / layout.downsample();
  return c;
}

void TrainConfig::validate() const {
  dataset.validate();
  vae.arch.validate(layout);
  vae.weights.validate();
  const int64_t total = layout.downsample() * layout.scale();
  if (dataset.resolution % total != 0) {
    throw ConfigError("dataset.resolution " + std::to_string(dataset.resolution) +
                      " is not divisible by s*f = " + std::to_string(total));
  }
  if ((dataset.resolution / total) % layout.patch() != 0) {
    throw ConfigError("latent grid side " + std::to_string(dataset.resolution / total) +
                      " is not divisible by the patch size " + std::to_string(layout.patch()));
  }
  if (dit.hidden % dit.heads != 0) throw ConfigError("dit.hidden must be divisible by dit.heads");
  dit_config().validate();
}

void TrainConfig::require_inputs() const {
  if (stage == Stage::kTrainDaVae && inputs.base_vae.empty()) {
    throw ConfigError("train_davae requires inputs.base_vae (a pretrained base VAE checkpoint)");
  }
  if (stage == Stage::kFinetuneDit) {
    if (inputs.base_dit.empty()) throw ConfigError("finetune_dit requires inputs.base_dit (a base DiT checkpoint)");
    if (inputs.davae.empty()) throw ConfigError("finetune_dit requires inputs.davae (a DA-VAE checkpoint)");
  }
}

json TrainConfig::to_json() const {
  json weights = vae.weights.to_json();
  json inputs_j = json::object();
  if (!inputs.base_vae.empty()) inputs_j["base_vae"] = inputs.base_vae.string();
  if (!inputs.base_dit.empty()) inputs_j["base_dit"] = inputs.base_dit.string();
  if (!inputs.davae.empty()) inputs_j["davae"] = inputs.davae.string();
  json vae_j = optim_json(vae.optim);
  vae_j["widths"] = vae.arch.widths;
  vae_j["perceptual_seed"] = vae.perceptual_seed;
  vae_j["discriminator_width"] = vae.discriminator_width;
  vae_j["loss_weights"] = weights;
  json dit_j = optim_json(dit.optim);
  dit_j["hidden"] = dit.hidden;
  dit_j["depth"] = dit.depth;
  dit_j["heads"] = dit.heads;
  dit_j["mlp_ratio"] = dit.mlp_ratio;
  dit_j["n_warm"] = dit.n_warm;
  dit_j["ema_decay"] = dit.ema_decay;
  dit_j["label_dropout"] = dit.label_dropout;
  dit_j["scheduler"] = dit.scheduler;
  dit_j["adapter_init"] = dit.adapter_init == AdapterInit::kZero ? "zero" : "random";
  dit_j["equivalence_pairs"] = dit.equivalence_pairs;
  return {{"stage", stage_name(stage)},
          {"seed", seed},
          {"threads", threads},
          {"log_interval", log_interval},
          {"checkpoint_interval", checkpoint_interval},
          {"layout", layout.to_json()},
          {"dataset", dataset.to_json()},
          {"inputs", inputs_j},
          {"vae", vae_j},
          {"dit", dit_j}};
}

std::string TrainConfig::hash() const { return sha256_hex(to_json().dump()); }

LatentLayout load_layout_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read layout file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("layout file " + path.string() + " is not valid JSON: " + e.what());
  }
  auto errors = validate_json(j, train_config_schema()["properties"]["layout"]);
  if (!j.is_object()) errors.push_back("/: layout file must contain an object");
  if (!errors.empty()) {
    std::string msg = "invalid layout file " + path.string() + ":";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return LatentLayout::from_json(j);
}

TrainConfig parse_train_config(const json& doc, const fs::path& base_dir) {
  auto errors = validate_json(doc, train_config_schema());
  if (!errors.empty()) {
    std::string msg = "config does not match the schema:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  TrainConfig c;
  c.stage = parse_stage(doc["stage"].get<std::string>());
  c.seed = doc.value("seed", c.seed);
  c.threads = doc.value("threads", c.threads);
  c.log_interval = doc.value("log_interval", c.log_interval);
  c.checkpoint_interval = doc.value("checkpoint_interval", c.checkpoint_interval);
  try {
    if (doc.contains("layout")) {
      const auto& l = doc["layout"];
      c.layout = l.is_string() ? load_layout_file(resolve(base_dir, l.get<std::string>()))
                               : LatentLayout::from_json(l);
    }
    if (doc.contains("dataset")) {
      auto d = doc["dataset"];
      if (d.contains("path")) d["path"] = resolve(base_dir, d["path"].get<std::string>()).string();
      c.dataset = DatasetSpec::from_json(d);
    }
    if (doc.contains("inputs")) {
      const auto& in = doc["inputs"];
      c.inputs.base_vae = resolve(base_dir, in.value("base_vae", ""));
      c.inputs.base_dit = resolve(base_dir, in.value("base_dit", ""));
      c.inputs.davae = resolve(base_dir, in.value("davae", ""));
    }
    if (doc.contains("vae")) {
      const auto& v = doc["vae"];
      c.vae.optim = parse_optim(v, c.vae.optim);
      if (v.contains("widths")) c.vae.arch.widths = v["widths"].get<std::vector<int64_t>>();
      c.vae.perceptual_seed = v.value("perceptual_seed", c.vae.perceptual_seed);
      c.vae.discriminator_width = v.value("discriminator_width", c.vae.discriminator_width);
      if (v.contains("loss_weights")) c.vae.weights = VaeLossWeights::from_json(v["loss_weights"], c.vae.weights);
    }
    if (doc.contains("dit")) {
      const auto& d = doc["dit"];
      c.dit.optim = parse_optim(d, c.dit.optim);
      c.dit.hidden = d.value("hidden", c.dit.hidden);
      c.dit.depth = d.value("depth", c.dit.depth);
      c.dit.heads = d.value("heads", c.dit.heads);
      c.dit.mlp_ratio = d.value("mlp_ratio", c.dit.mlp_ratio);
      c.dit.n_warm = d.value("n_warm", c.dit.n_warm);
      c.dit.ema_decay = d.value("ema_decay", c.dit.ema_decay);
      c.dit.label_dropout = d.value("label_dropout", c.dit.label_dropout);
      c.dit.scheduler = d.value("scheduler", c.dit.scheduler);
      if (d.contains("adapter_init")) {
        c.dit.adapter_init = d["adapter_init"] == "random" ? AdapterInit::kRandom : AdapterInit::kZero;
      }
      c.dit.equivalence_pairs = d.value("equivalence_pairs", c.dit.equivalence_pairs);
    }
  } catch (const LayoutError& e) {
    throw ConfigError(std::string("invalid layout: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_train_config(doc, fs::absolute(path).parent_path());
}

}  // namespace dvae
