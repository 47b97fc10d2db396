#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclesafe/eval/stats.hpp"

namespace cyclesafe::eval {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB raster.
struct Canvas {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  Canvas(int w, int h, Rgb bg = {255, 255, 255}) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(bg.begin(), bg.end(), pixels.begin() + static_cast<long>(i));
  }

  void set(int x, int y, Rgb c) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    std::copy(c.begin(), c.end(), pixels.begin() + (static_cast<long>(y) * width + x) * 3);
  }

  void fill(int x0, int y0, int w, int h, Rgb c) {
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x) set(x, y, c);
  }

  /// Draws decimal digits with a 3x5 bitmap font, `scale` pixels per font cell.
  void digits(int x, int y, const std::string& text, int scale, Rgb c) {
    static constexpr std::array<std::uint16_t, 10> glyphs{0x7B6F, 0x2C97, 0x73E7, 0x73CF, 0x5BC9,
                                                          0x79CF, 0x79EF, 0x7249, 0x7BEF, 0x7BCF};
    for (char ch : text) {
      if (ch >= '0' && ch <= '9') {
        const std::uint16_t g = glyphs[static_cast<std::size_t>(ch - '0')];
        for (int row = 0; row < 5; ++row)
          for (int col = 0; col < 3; ++col)
            if (g >> (14 - (row * 3 + col)) & 1) fill(x + col * scale, y + row * scale, scale, scale, c);
      }
      x += 4 * scale;
    }
  }
};

inline void write_png(const std::string& path, const Canvas& c) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(c.width);
  image.height = static_cast<png_uint_32>(c.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, c.pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write " + path + ": " + image.message);
}

/// Distinct colours for class indices.
inline Rgb palette(int i) {
  static const std::vector<Rgb> p{{31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40},  {148, 103, 189},
                                  {140, 86, 75},  {227, 119, 194}, {127, 127, 127}, {188, 189, 34}, {23, 190, 207}};
  return p[static_cast<std::size_t>(((i % 10) + 10) % 10)];
}

/// Count matrix as shaded cells (white to dark blue) with the count printed in each cell.
inline Canvas render_heatmap(const Heatmap& h, int cell = 48) {
  const int rows = static_cast<int>(h.rows.size()), cols = static_cast<int>(h.cols.size());
  Canvas c(cols * cell + 2, rows * cell + 2, {40, 40, 40});
  int peak = 1;
  for (const auto& r : h.counts)
    for (int v : r) peak = std::max(peak, v);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const int v = h.counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      const double t = static_cast<double>(v) / peak;
      const Rgb shade{static_cast<std::uint8_t>(255 - t * 222), static_cast<std::uint8_t>(255 - t * 190),
                      static_cast<std::uint8_t>(255 - t * 100)};
      c.fill(1 + j * cell + 1, 1 + i * cell + 1, cell - 2, cell - 2, shade);
      const std::string text = std::to_string(v);
      const int scale = std::max(1, cell / 16);
      const Rgb ink = t > 0.55 ? Rgb{255, 255, 255} : Rgb{20, 20, 20};
      c.digits(1 + j * cell + (cell - static_cast<int>(text.size()) * 4 * scale) / 2, 1 + i * cell + (cell - 5 * scale) / 2,
               text, scale, ink);
    }
  return c;
}

/// Bars for a histogram, one per bin, scaled to the tallest bin.
inline Canvas render_histogram(const Histogram& h, int bar = 24, int plot_height = 160) {
  const int n = static_cast<int>(h.counts.size());
  Canvas c(std::max(1, n) * bar + 8, plot_height + 8);
  int peak = 1;
  for (int v : h.counts) peak = std::max(peak, v);
  for (int i = 0; i < n; ++i) {
    const int height = static_cast<int>(std::lround(static_cast<double>(h.counts[static_cast<std::size_t>(i)]) / peak * plot_height));
    c.fill(4 + i * bar + 2, 4 + plot_height - height, bar - 4, height, palette(0));
  }
  c.fill(0, plot_height + 4, c.width, 1, {0, 0, 0});
  return c;
}

/// 2-D scatter of points coloured by integer label.
inline Canvas render_scatter(const std::vector<std::array<double, 2>>& points, const std::vector<int>& labels,
                             int size = 640) {
  Canvas c(size, size);
  if (points.empty()) return c;
  double x0 = points[0][0], x1 = x0, y0 = points[0][1], y1 = y0;
  for (const auto& p : points) {
    x0 = std::min(x0, p[0]), x1 = std::max(x1, p[0]);
    y0 = std::min(y0, p[1]), y1 = std::max(y1, p[1]);
  }
  const double span = std::max({x1 - x0, y1 - y0, 1e-12});
  const int margin = 16;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int px = margin + static_cast<int>((points[i][0] - x0) / span * (size - 2 * margin));
    const int py = size - margin - static_cast<int>((points[i][1] - y0) / span * (size - 2 * margin));
    c.fill(px - 2, py - 2, 5, 5, palette(labels[i]));
  }
  return c;
}

}  // namespace cyclesafe::eval
