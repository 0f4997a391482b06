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

#include <cstdint>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

namespace dvae {

// Independent per-purpose random streams. A draw is identified by
// (seed, stream, index) so that resuming at step n reproduces the exact
// sequence an uninterrupted run would have used.
enum class Stream : uint64_t {
  kInit = 1,
  kDataOrder = 2,
  kNoise = 3,
  kTimestep = 4,
  kLabelDrop = 5,
  kPosterior = 6,
  kDetailPosterior = 7,
  kEval = 8,
  kDataset = 9,
  kDiscriminator = 10,
};

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t derive_seed(uint64_t seed, Stream stream, uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(stream))) + index);
}

inline torch::Generator make_generator(uint64_t seed) {
  return at::make_generator<at::CPUGeneratorImpl>(seed);
}

}  // namespace dvae
