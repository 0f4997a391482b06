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

#include <stdexcept>
#include <string>

namespace dvae {

// Base class for every error raised by the library. The CLI maps ConfigError
// to exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LayoutError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// A loss term became NaN or Inf. `term()` names the offending term.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::string term, const std::string& what)
      : Error(what), term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

// Training stopped early; `last_good()` is the newest checkpoint left on disk
// (empty when none was written yet).
class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, std::string last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const std::string& last_good() const { return last_good_; }

 private:
  std::string last_good_;
};

}  // namespace dvae
