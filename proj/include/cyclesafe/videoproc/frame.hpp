#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace cyclesafe::videoproc {

inline constexpr int kCanonicalWidth = 1280;
inline constexpr int kCanonicalHeight = 720;
inline constexpr double kCanonicalFps = 30.0;

/// One interleaved 8-bit RGB image, row-major (H x W x 3).
struct Frame {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;

  Frame() = default;
  Frame(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), rgb(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * 3, fill) {}

  std::uint8_t* px(int y, int x) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* px(int y, int x) const { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  bool operator==(const Frame&) const = default;
};

struct Video {
  double fps = kCanonicalFps;
  std::vector<Frame> frames;

  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  double duration() const { return static_cast<double>(frames.size()) / fps; }
  bool operator==(const Video&) const = default;
};

struct Rect {
  int y = 0, x = 0, height = 0, width = 0;
  bool operator==(const Rect&) const = default;
};

inline std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Half-pixel-centred bilinear sampling coordinates for resizing `src` samples onto `dst`.
struct AxisMap {
  std::vector<int> i0, i1;
  std::vector<double> w1;
};

inline AxisMap bilinear_axis(int src, int dst, double offset = 0.0, double extent = -1.0) {
  if (extent < 0) extent = src;
  AxisMap m;
  m.i0.resize(static_cast<std::size_t>(dst));
  m.i1.resize(static_cast<std::size_t>(dst));
  m.w1.resize(static_cast<std::size_t>(dst));
  const double scale = extent / dst;
  for (int d = 0; d < dst; ++d) {
    double s = offset + (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int a = static_cast<int>(std::floor(s));
    m.i0[static_cast<std::size_t>(d)] = a;
    m.i1[static_cast<std::size_t>(d)] = std::min(a + 1, src - 1);
    m.w1[static_cast<std::size_t>(d)] = s - a;
  }
  return m;
}

/// Bilinear resize of the `roi` region of `src` to out_h x out_w.
inline Frame resize_bilinear(const Frame& src, Rect roi, int out_h, int out_w) {
  if (roi.height == src.height && roi.width == src.width && out_h == roi.height && out_w == roi.width &&
      roi.x == 0 && roi.y == 0)
    return src;
  const AxisMap my = bilinear_axis(src.height, out_h, roi.y, roi.height);
  const AxisMap mx = bilinear_axis(src.width, out_w, roi.x, roi.width);
  Frame out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const auto yy = static_cast<std::size_t>(y);
    const double wy = my.w1[yy];
    for (int x = 0; x < out_w; ++x) {
      const auto xx = static_cast<std::size_t>(x);
      const double wx = mx.w1[xx];
      const std::uint8_t* a = src.px(my.i0[yy], mx.i0[xx]);
      const std::uint8_t* b = src.px(my.i0[yy], mx.i1[xx]);
      const std::uint8_t* c = src.px(my.i1[yy], mx.i0[xx]);
      const std::uint8_t* d = src.px(my.i1[yy], mx.i1[xx]);
      std::uint8_t* o = out.px(y, x);
      for (int ch = 0; ch < 3; ++ch) {
        const double top = a[ch] + wx * (b[ch] - a[ch]);
        const double bottom = c[ch] + wx * (d[ch] - c[ch]);
        o[ch] = to_u8(top + wy * (bottom - top));
      }
    }
  }
  return out;
}

/// Largest centred 16:9 region of an H x W frame. The dimension that is too long is cut to
/// the nearest integer size, splitting the margin as evenly as possible.
inline Rect aspect_crop_rect(int h, int w) {
  if (h < 1 || w < 1) throw std::invalid_argument("aspect_crop_rect: empty frame");
  Rect r{0, 0, h, w};
  if (static_cast<long>(w) * 9 > static_cast<long>(h) * 16) {
    r.width = std::max(1, static_cast<int>(std::lround(h * 16.0 / 9.0)));
    r.x = (w - r.width) / 2;
  } else if (static_cast<long>(w) * 9 < static_cast<long>(h) * 16) {
    r.height = std::max(1, static_cast<int>(std::lround(w * 9.0 / 16.0)));
    r.y = (h - r.height) / 2;
  }
  return r;
}

/// Centre-crops to 16:9 and bilinearly rescales to the canonical 720 x 1280.
inline Frame aspect_crop_and_scale(const Frame& f) {
  return resize_bilinear(f, aspect_crop_rect(f.height, f.width), kCanonicalHeight, kCanonicalWidth);
}

}  // namespace cyclesafe::videoproc
