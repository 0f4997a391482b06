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

#include "dvae/module_util.h"

#include <cmath>
#include <sstream>

#include "dvae/error.h"

namespace dvae {

void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src) {
  auto src_params = src.named_parameters(/*recurse=*/true);
  auto dst_params = dst.named_parameters(/*recurse=*/true);
  if (src_params.size() != dst_params.size()) {
    throw ShapeError("parameter count mismatch: destination has " +
                     std::to_string(dst_params.size()) + ", source has " +
                     std::to_string(src_params.size()));
  }
  torch::NoGradGuard no_grad;
  for (auto& item : dst_params) {
    const auto* found = src_params.find(item.key());
    if (found == nullptr) {
      throw ShapeError("source module has no parameter named '" + item.key() + "'");
    }
    if (!found->sizes().equals(item.value().sizes())) {
      std::ostringstream os;
      os << "parameter '" << item.key() << "' has shape " << item.value().sizes()
         << " in destination but " << found->sizes() << " in source";
      throw ShapeError(os.str());
    }
    item.value().copy_(*found);
  }
}

void set_requires_grad(torch::nn::Module& module, bool value) {
  for (auto& p : module.parameters(/*recurse=*/true)) {
    p.set_requires_grad(value);
  }
}

std::vector<torch::Tensor> parameter_list(const torch::nn::Module& module) {
  return module.parameters(/*recurse=*/true);
}

double gradient_norm(const std::vector<torch::Tensor>& params) {
  double sum = 0.0;
  for (const auto& p : params) {
    if (p.grad().defined()) {
      sum += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
    }
  }
  return std::sqrt(sum);
}

}  // namespace dvae
