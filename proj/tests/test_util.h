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

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include <torch/torch.h>

namespace dvae::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dvae-test-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Largest relative error between the autograd gradient of f at x and central
// finite differences. x must be float64; f must return a scalar.
inline double max_gradient_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                     torch::Tensor x, double eps = 1e-5) {
  x = x.detach().clone().set_requires_grad(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach();
  auto flat = x.detach().clone().reshape({-1});
  auto grad_flat = analytic.reshape({-1});
  double worst = 0.0;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += eps;
    minus[i] -= eps;
    torch::NoGradGuard ng;
    const double fp = f(plus.view(x.sizes())).item<double>();
    const double fm = f(minus.view(x.sizes())).item<double>();
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = grad_flat[i].item<double>();
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace dvae::testing
