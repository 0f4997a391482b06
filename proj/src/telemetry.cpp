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

#include "dvae/telemetry.h"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dvae/error.h"

namespace fs = std::filesystem;

namespace dvae {

const char* const kTelemetryHeader =
    "step,phase,w,lr,loss_total,loss_l1,loss_lpips,loss_adv,loss_kl,loss_align,loss_disc,"
    "dit_base_unweighted,dit_detail_unweighted,ema_active";

namespace {

std::string cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_cell(const std::string& s) {
  if (s.empty()) return TelemetryRecord::kUnset;
  return std::stod(s);
}

}  // namespace

std::string format_record(const TelemetryRecord& r) {
  std::ostringstream os;
  os << r.step << ',' << r.phase << ',' << cell(r.w) << ',' << cell(r.lr) << ','
     << cell(r.loss_total) << ',' << cell(r.loss_l1) << ',' << cell(r.loss_lpips) << ','
     << cell(r.loss_adv) << ',' << cell(r.loss_kl) << ',' << cell(r.loss_align) << ','
     << cell(r.loss_disc) << ',' << cell(r.dit_base_unweighted) << ','
     << cell(r.dit_detail_unweighted) << ',' << (r.ema_active ? 1 : 0);
  return os.str();
}

TelemetryRecord parse_record(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  if (cells.size() != 14) {
    throw Error("telemetry row has " + std::to_string(cells.size()) + " cells, expected 14");
  }
  TelemetryRecord r;
  r.step = std::stoll(cells[0]);
  r.phase = cells[1];
  double* fields[] = {&r.w,        &r.lr,       &r.loss_total, &r.loss_l1,
                      &r.loss_lpips, &r.loss_adv, &r.loss_kl,    &r.loss_align,
                      &r.loss_disc, &r.dit_base_unweighted, &r.dit_detail_unweighted};
  for (size_t i = 0; i < 11; ++i) *fields[i] = parse_cell(cells[i + 2]);
  r.ema_active = cells[13] == "1";
  return r;
}

TelemetryWriter::TelemetryWriter(const fs::path& csv, const fs::path& timing_csv) {
  const bool fresh = !fs::exists(csv) || fs::file_size(csv) == 0;
  csv_.open(csv, std::ios::app);
  timing_.open(timing_csv, std::ios::app);
  if (!csv_ || !timing_) throw Error("cannot open telemetry file " + csv.string());
  if (fresh) {
    csv_ << kTelemetryHeader << '\n';
    timing_ << "step,phase,wallclock_s\n";
  }
}

void TelemetryWriter::write(const TelemetryRecord& r, double wallclock_seconds) {
  csv_ << format_record(r) << '\n';
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", wallclock_seconds);
  timing_ << r.step << ',' << r.phase << ',' << buf << '\n';
}

void TelemetryWriter::flush() {
  csv_.flush();
  timing_.flush();
}

std::vector<TelemetryRecord> read_telemetry(const fs::path& csv) {
  std::ifstream in(csv);
  if (!in) throw Error("cannot read telemetry " + csv.string());
  std::string line;
  if (!std::getline(in, line) || line != kTelemetryHeader) {
    throw Error("telemetry " + csv.string() + " has an unexpected header");
  }
  std::vector<TelemetryRecord> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_record(line));
  }
  return out;
}

double telemetry_value(const TelemetryRecord& r, const std::string& c) {
  if (c == "step") return static_cast<double>(r.step);
  if (c == "w") return r.w;
  if (c == "lr") return r.lr;
  if (c == "loss_total") return r.loss_total;
  if (c == "loss_l1") return r.loss_l1;
  if (c == "loss_lpips") return r.loss_lpips;
  if (c == "loss_adv") return r.loss_adv;
  if (c == "loss_kl") return r.loss_kl;
  if (c == "loss_align") return r.loss_align;
  if (c == "loss_disc") return r.loss_disc;
  if (c == "dit_base_unweighted") return r.dit_base_unweighted;
  if (c == "dit_detail_unweighted") return r.dit_detail_unweighted;
  if (c == "ema_active") return r.ema_active ? 1.0 : 0.0;
  throw Error("unknown telemetry column '" + c + "'");
}

std::vector<double> trailing_mean(const std::vector<double>& values, int64_t window) {
  if (window <= 0) throw Error("smoothing window must be positive");
  std::vector<double> out(values.size());
  double sum = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= static_cast<size_t>(window)) sum -= values[i - window];
    out[i] = sum / static_cast<double>(std::min<size_t>(i + 1, window));
  }
  return out;
}

}  // namespace dvae
