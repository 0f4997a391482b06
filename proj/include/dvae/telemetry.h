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
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace dvae {

/// One logged training step. Unused loss columns stay NaN and are written
/// as empty cells. Branch DiT losses are recorded before weighting by w.
struct TelemetryRecord {
  static constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();

  int64_t step = 0;
  std::string phase;
  double w = kUnset;
  double lr = kUnset;
  double loss_total = kUnset;
  double loss_l1 = kUnset;
  double loss_lpips = kUnset;
  double loss_adv = kUnset;
  double loss_kl = kUnset;
  double loss_align = kUnset;
  double loss_disc = kUnset;
  double dit_base_unweighted = kUnset;
  double dit_detail_unweighted = kUnset;
  bool ema_active = false;
};

extern const char* const kTelemetryHeader;

std::string format_record(const TelemetryRecord& r);
TelemetryRecord parse_record(const std::string& line);

/// Append-only CSV. The wall-clock column lives in a sidecar file next to
/// it so the main log stays byte-identical across reruns.
class TelemetryWriter {
 public:
  TelemetryWriter(const std::filesystem::path& csv, const std::filesystem::path& timing_csv);

  void write(const TelemetryRecord& r, double wallclock_seconds);
  void flush();

 private:
  std::ofstream csv_;
  std::ofstream timing_;
};

std::vector<TelemetryRecord> read_telemetry(const std::filesystem::path& csv);

/// Column accessor by header name; throws for unknown names.
double telemetry_value(const TelemetryRecord& r, const std::string& column);

/// Trailing mean with the given window (shorter at the start).
std::vector<double> trailing_mean(const std::vector<double>& values, int64_t window);

}  // namespace dvae
