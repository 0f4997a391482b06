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

#include "dvae/checkpoint.h"

#include <openssl/evp.h>

#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include "dvae/error.h"

namespace fs = std::filesystem;

namespace dvae {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("failed to initialise SHA-256");
    }
  }
  void update(const void* data, size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
      os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    }
    return os.str();
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

torch::Tensor as_float_contiguous(const torch::Tensor& t) {
  return t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string sha256_file(const fs::path& file) { return sha256_hex(read_file(file)); }

std::string parameter_hash(const torch::nn::Module& module) {
  Sha256 h;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    auto t = as_float_contiguous(item.value());
    h.update(item.key());
    for (auto s : t.sizes()) {
      const int64_t v = s;
      h.update(&v, sizeof(v));
    }
    h.update(t.data_ptr<float>(), static_cast<size_t>(t.numel()) * sizeof(float));
  }
  return h.hex();
}

void Checkpoint::add(const std::string& name, const torch::Tensor& value) {
  if (has(name)) throw CheckpointError("duplicate checkpoint array '" + name + "'");
  arrays.emplace_back(name, as_float_contiguous(value).clone());
}

void Checkpoint::add_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    add(prefix + item.key(), item.value());
  }
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& [n, _] : arrays) {
    if (n == name) return true;
  }
  return false;
}

const torch::Tensor& Checkpoint::get(const std::string& name) const {
  for (const auto& [n, t] : arrays) {
    if (n == name) return t;
  }
  throw CheckpointError("checkpoint of kind '" + kind + "' has no array '" + name + "'");
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& [n, _] : arrays) {
    if (n.rfind(prefix, 0) == 0) return true;
  }
  return false;
}

void Checkpoint::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    const auto& src = get(prefix + item.key());
    if (!src.sizes().equals(item.value().sizes())) {
      std::ostringstream os;
      os << "array '" << prefix << item.key() << "' has shape " << src.sizes()
         << ", model expects " << item.value().sizes();
      throw CheckpointError(os.str());
    }
    item.value().copy_(src);
  }
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  if (fs::exists(dir)) {
    throw CheckpointError("refusing to overwrite existing checkpoint " + dir.string());
  }
  std::string blob;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.arrays) {
    const size_t nbytes = static_cast<size_t>(t.numel()) * sizeof(float);
    entries.push_back({{"name", name},
                       {"dtype", "float32"},
                       {"shape", t.sizes().vec()},
                       {"offset", blob.size()},
                       {"nbytes", nbytes}});
    blob.append(reinterpret_cast<const char*>(t.data_ptr<float>()), nbytes);
  }
  nlohmann::json manifest = {{"format", Checkpoint::kFormat},
                             {"version", Checkpoint::kVersion},
                             {"kind", ckpt.kind},
                             {"byte_order", "little"},
                             {"blob", "params.bin"},
                             {"blob_sha256", sha256_hex(blob)},
                             {"arrays", entries},
                             {"meta", ckpt.meta}};
  if (ckpt.layout) manifest["layout"] = ckpt.layout->to_json();
  if (!ckpt.frozen_encoder_sha256.empty()) {
    manifest["frozen_encoder_sha256"] = ckpt.frozen_encoder_sha256;
  }

  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream out(tmp / "params.bin", std::ios::binary);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw CheckpointError("failed writing " + (tmp / "params.bin").string());
  }
  {
    std::ofstream out(tmp / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw CheckpointError("failed writing " + (tmp / "manifest.json").string());
  }
  fs::rename(tmp, dir);
}

namespace {

nlohmann::json read_manifest(const fs::path& dir) {
  const auto path = dir / "manifest.json";
  if (!fs::exists(path)) {
    throw CheckpointError("no checkpoint manifest at " + path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint manifest " + path.string() + ": " + e.what());
  }
  if (manifest.value("format", "") != Checkpoint::kFormat ||
      manifest.value("version", 0) != Checkpoint::kVersion) {
    throw CheckpointError(path.string() + " is not a version-1 detailvae checkpoint");
  }
  return manifest;
}

}  // namespace

std::string checkpoint_blob_hash(const fs::path& dir) {
  return read_manifest(dir).at("blob_sha256").get<std::string>();
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const auto manifest = read_manifest(dir);
  const std::string blob = read_file(dir / manifest.value("blob", "params.bin"));
  const std::string expected = manifest.at("blob_sha256").get<std::string>();
  const std::string actual = sha256_hex(blob);
  if (expected != actual) {
    throw CheckpointError("checkpoint " + dir.string() +
                          " is corrupt: manifest blob_sha256=" + expected +
                          " but params.bin hashes to " + actual);
  }
  Checkpoint ckpt;
  try {
    ckpt.kind = manifest.at("kind").get<std::string>();
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    if (manifest.contains("layout")) ckpt.layout = LatentLayout::from_json(manifest["layout"]);
    ckpt.frozen_encoder_sha256 = manifest.value("frozen_encoder_sha256", "");
    for (const auto& e : manifest.at("arrays")) {
      if (e.at("dtype").get<std::string>() != "float32") {
        throw CheckpointError("unsupported dtype in " + e.at("name").get<std::string>());
      }
      const auto shape = e.at("shape").get<std::vector<int64_t>>();
      const auto offset = e.at("offset").get<size_t>();
      const auto nbytes = e.at("nbytes").get<size_t>();
      auto t = torch::empty(shape, torch::kFloat32);
      if (offset + nbytes > blob.size() ||
          nbytes != static_cast<size_t>(t.numel()) * sizeof(float)) {
        throw CheckpointError("array " + e.at("name").get<std::string>() +
                              " exceeds the blob or disagrees with its shape");
      }
      std::memcpy(t.data_ptr<float>(), blob.data() + offset, nbytes);
      ckpt.arrays.emplace_back(e.at("name").get<std::string>(), t);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint manifest in " + dir.string() + ": " + e.what());
  }
  return ckpt;
}

}  // namespace dvae
