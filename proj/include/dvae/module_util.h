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

#include <string>
#include <vector>

#include <torch/torch.h>

namespace dvae {

// Copies every parameter of `src` into the same-named parameter of `dst`.
// Names and shapes must match exactly.
void copy_parameters(torch::nn::Module& dst, const torch::nn::Module& src);

void set_requires_grad(torch::nn::Module& module, bool value);

std::vector<torch::Tensor> parameter_list(const torch::nn::Module& module);

// Global L2 norm of the gradients currently stored on `params`.
double gradient_norm(const std::vector<torch::Tensor>& params);

}  // namespace dvae
