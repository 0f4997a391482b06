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
#include <string>
#include <vector>

#include <torch/torch.h>

namespace dvae {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, uint8_t fill = 255)
      : width(w), height(h), pixels(static_cast<size_t>(w) * h * 3, fill) {}

  void set(int x, int y, uint8_t r, uint8_t g, uint8_t b);
};

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

// (3, h, w) tensor in [-1, 1] <-> 8-bit image.
torch::Tensor image_to_tensor(const RgbImage& image);
RgbImage tensor_to_image(const torch::Tensor& chw);

// Grid of (n, 3, h, w) images, `columns` per row, 2px white gutters.
RgbImage tile_images(const torch::Tensor& batch, int64_t columns);

struct Color {
  uint8_t r, g, b;
};

struct Series {
  std::string name;
  Color color;
  std::vector<double> x;
  std::vector<double> y;
};

struct PlotOptions {
  int width = 640;
  int height = 400;
  bool log_y = false;
};

/// Line chart over the union of the series' ranges, drawn with a frame and
/// light grid. Headless; only writes the PNG.
void plot_lines(const std::filesystem::path& path, const std::vector<Series>& series,
                const PlotOptions& options = {});

/// Scatter plot; points are colored by integer label.
void plot_scatter(const std::filesystem::path& path, const std::vector<double>& x,
                  const std::vector<double>& y, const std::vector<int64_t>& labels,
                  const PlotOptions& options = {});

Color palette_color(int64_t index);

}  // namespace dvae
