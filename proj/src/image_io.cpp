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

#include "dvae/image_io.h"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "dvae/error.h"

namespace fs = std::filesystem;

namespace dvae {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

void RgbImage::set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = &pixels[(static_cast<size_t>(y) * width + x) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

RgbImage read_png(const fs::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw Error("cannot open image " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("failed to decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  const auto color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
    png_set_gray_to_rgb(png);
  }
  png_read_update_info(png, info);
  RgbImage img(static_cast<int>(png_get_image_width(png, info)),
               static_cast<int>(png_get_image_height(png, info)));
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = &img.pixels[static_cast<size_t>(y) * img.width * 3];
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const fs::path& path, const RgbImage& image) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw Error("cannot write image " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw Error("libpng initialisation failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("failed to encode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(&image.pixels[static_cast<size_t>(y) * image.width * 3]));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

torch::Tensor image_to_tensor(const RgbImage& image) {
  auto t = torch::from_blob(const_cast<uint8_t*>(image.pixels.data()),
                            {image.height, image.width, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(torch::kFloat32);
  return t / 127.5 - 1.0;
}

RgbImage tensor_to_image(const torch::Tensor& chw) {
  auto t = ((chw.detach().to(torch::kFloat32).clamp(-1.0, 1.0) + 1.0) * 127.5)
               .round()
               .to(torch::kUInt8)
               .permute({1, 2, 0})
               .contiguous();
  RgbImage img(static_cast<int>(chw.size(2)), static_cast<int>(chw.size(1)));
  std::copy_n(t.data_ptr<uint8_t>(), img.pixels.size(), img.pixels.begin());
  return img;
}

RgbImage tile_images(const torch::Tensor& batch, int64_t columns) {
  const int64_t n = batch.size(0), h = batch.size(2), w = batch.size(3);
  const int64_t cols = std::max<int64_t>(1, std::min(columns, n));
  const int64_t rows = (n + cols - 1) / cols;
  const int gap = 2;
  RgbImage out(static_cast<int>(cols * (w + gap) + gap), static_cast<int>(rows * (h + gap) + gap));
  for (int64_t i = 0; i < n; ++i) {
    auto tile = tensor_to_image(batch[i]);
    const int ox = static_cast<int>(gap + (i % cols) * (w + gap));
    const int oy = static_cast<int>(gap + (i / cols) * (h + gap));
    for (int y = 0; y < tile.height; ++y) {
      for (int x = 0; x < tile.width; ++x) {
        const auto* p = &tile.pixels[(static_cast<size_t>(y) * tile.width + x) * 3];
        out.set(ox + x, oy + y, p[0], p[1], p[2]);
      }
    }
  }
  return out;
}

Color palette_color(int64_t index) {
  static const Color kPalette[] = {{31, 119, 180}, {44, 160, 44},  {214, 39, 40},  {255, 127, 14},
                                   {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127},
                                   {188, 189, 34},  {23, 190, 207}};
  return kPalette[static_cast<size_t>(index) % (sizeof(kPalette) / sizeof(kPalette[0]))];
}

namespace {

constexpr int kMargin = 40;

struct Frame {
  double x0, x1, y0, y1;
  int width, height;
  bool log_y;

  double ty(double y) const { return log_y ? std::log10(std::max(y, 1e-30)) : y; }
  int px(double x) const {
    return kMargin + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (width - 2 * kMargin)));
  }
  int py(double y) const {
    return height - kMargin -
           static_cast<int>(std::lround((ty(y) - y0) / (y1 - y0) * (height - 2 * kMargin)));
  }
};

void draw_line(RgbImage& img, int x0, int y0, int x1, int y1, Color c) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    img.set(x0, y0, c.r, c.g, c.b);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_frame(RgbImage& img) {
  const Color grid{225, 225, 225}, axis{60, 60, 60};
  const int w = img.width, h = img.height;
  for (int k = 1; k < 5; ++k) {
    const int gx = kMargin + k * (w - 2 * kMargin) / 5;
    const int gy = kMargin + k * (h - 2 * kMargin) / 5;
    draw_line(img, gx, kMargin, gx, h - kMargin, grid);
    draw_line(img, kMargin, gy, w - kMargin, gy, grid);
  }
  draw_line(img, kMargin, kMargin, w - kMargin, kMargin, axis);
  draw_line(img, kMargin, h - kMargin, w - kMargin, h - kMargin, axis);
  draw_line(img, kMargin, kMargin, kMargin, h - kMargin, axis);
  draw_line(img, w - kMargin, kMargin, w - kMargin, h - kMargin, axis);
}

Frame fit_frame(const std::vector<const std::vector<double>*>& xs,
                const std::vector<const std::vector<double>*>& ys, const PlotOptions& o) {
  Frame f{std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(),
          std::numeric_limits<double>::max(), std::numeric_limits<double>::lowest(),
          o.width, o.height, o.log_y};
  for (const auto* v : xs) {
    for (double x : *v) {
      if (!std::isfinite(x)) continue;
      f.x0 = std::min(f.x0, x);
      f.x1 = std::max(f.x1, x);
    }
  }
  for (const auto* v : ys) {
    for (double y : *v) {
      if (!std::isfinite(y)) continue;
      f.y0 = std::min(f.y0, f.ty(y));
      f.y1 = std::max(f.y1, f.ty(y));
    }
  }
  if (!(f.x1 > f.x0)) {
    f.x0 -= 1.0;
    f.x1 += 1.0;
  }
  if (!(f.y1 > f.y0)) {
    f.y0 -= 1.0;
    f.y1 += 1.0;
  }
  return f;
}

}  // namespace

void plot_lines(const fs::path& path, const std::vector<Series>& series, const PlotOptions& o) {
  std::vector<const std::vector<double>*> xs, ys;
  for (const auto& s : series) {
    xs.push_back(&s.x);
    ys.push_back(&s.y);
  }
  const auto f = fit_frame(xs, ys, o);
  RgbImage img(o.width, o.height);
  draw_frame(img);
  for (const auto& s : series) {
    for (size_t i = 1; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.y[i - 1]) || !std::isfinite(s.y[i])) continue;
      draw_line(img, f.px(s.x[i - 1]), f.py(s.y[i - 1]), f.px(s.x[i]), f.py(s.y[i]), s.color);
    }
  }
  // Legend swatches, top-left, in series order.
  for (size_t k = 0; k < series.size(); ++k) {
    const int y = kMargin + 8 + static_cast<int>(k) * 10;
    for (int dy = 0; dy < 6; ++dy) {
      draw_line(img, kMargin + 8, y + dy, kMargin + 24, y + dy, series[k].color);
    }
  }
  write_png(path, img);
}

void plot_scatter(const fs::path& path, const std::vector<double>& x, const std::vector<double>& y,
                  const std::vector<int64_t>& labels, const PlotOptions& o) {
  const auto f = fit_frame({&x}, {&y}, o);
  RgbImage img(o.width, o.height);
  draw_frame(img);
  for (size_t i = 0; i < std::min(x.size(), y.size()); ++i) {
    const Color c = palette_color(i < labels.size() ? labels[i] : 0);
    const int cx = f.px(x[i]), cy = f.py(y[i]);
    for (int dy = -2; dy <= 2; ++dy) {
      for (int dx = -2; dx <= 2; ++dx) {
        if (dx * dx + dy * dy <= 5) img.set(cx + dx, cy + dy, c.r, c.g, c.b);
      }
    }
  }
  write_png(path, img);
}

}  // namespace dvae
