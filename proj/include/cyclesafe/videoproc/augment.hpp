#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "cyclesafe/core/rng.hpp"
#include "cyclesafe/core/tensor.hpp"
#include "cyclesafe/videoproc/frame.hpp"
#include "cyclesafe/videoproc/zscore.hpp"

namespace cyclesafe::videoproc {

inline constexpr int kCropSize = 700;
inline constexpr int kModelInput = 224;
inline constexpr double kFlipProbability = 0.25;

/// Spatial augmentation applied identically to every frame of a window.
struct ViewParams {
  int crop_x = 0;
  int crop_y = 0;
  int crop_size = kCropSize;
  bool flip = false;
  bool operator==(const ViewParams&) const = default;
};

inline void to_json(nlohmann::json& j, const ViewParams& p) {
  j = {{"crop_x", p.crop_x}, {"crop_y", p.crop_y}, {"crop_size", p.crop_size}, {"flip", p.flip}};
}

inline ViewParams center_view(int height, int width, int crop = kCropSize) {
  crop = std::min({crop, height, width});
  return {(width - crop) / 2, (height - crop) / 2, crop, false};
}

/// Draws crop offsets (x, then y) and then the flip decision.
inline ViewParams draw_view(Rng& rng, int height, int width, bool allow_flip, int crop = kCropSize) {
  crop = std::min({crop, height, width});
  ViewParams p;
  p.crop_size = crop;
  p.crop_x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(width - crop + 1)));
  p.crop_y = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(height - crop + 1)));
  const double draw = uniform01(rng);
  p.flip = allow_flip && draw < kFlipProbability;
  return p;
}

/// Reverses the width axis of an N x H x W x 3 tensor.
template <class T>
Tensor<T> hflip(const Tensor<T>& x) {
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < n * h; ++i)
    for (std::int64_t c = 0; c < w; ++c)
      for (int k = 0; k < 3; ++k) out[(i * w + c) * 3 + k] = x[(i * w + (w - 1 - c)) * 3 + k];
  return out;
}

/// Crops, resizes (bilinear) and optionally flips each frame; returns raw pixel values as
/// N x out x out x 3 floats.
inline Tensor<float> render_view(const std::vector<Frame>& frames, const ViewParams& p, int out = kModelInput) {
  if (frames.empty()) return Tensor<float>({0, out, out, 3});
  const int h = frames.front().height, w = frames.front().width;
  const AxisMap my = bilinear_axis(h, out, p.crop_y, p.crop_size);
  const AxisMap mx = bilinear_axis(w, out, p.crop_x, p.crop_size);
  Tensor<float> t({static_cast<std::int64_t>(frames.size()), out, out, 3});
  float* o = t.data();
  for (const auto& f : frames)
    for (int y = 0; y < out; ++y) {
      const auto yy = static_cast<std::size_t>(y);
      for (int x = 0; x < out; ++x) {
        const auto xx = static_cast<std::size_t>(x);
        const std::uint8_t* a = f.px(my.i0[yy], mx.i0[xx]);
        const std::uint8_t* b = f.px(my.i0[yy], mx.i1[xx]);
        const std::uint8_t* c = f.px(my.i1[yy], mx.i0[xx]);
        const std::uint8_t* d = f.px(my.i1[yy], mx.i1[xx]);
        for (int ch = 0; ch < 3; ++ch) {
          const double top = a[ch] + mx.w1[xx] * (b[ch] - a[ch]);
          const double bottom = c[ch] + mx.w1[xx] * (d[ch] - c[ch]);
          *o++ = static_cast<float>(top + my.w1[yy] * (bottom - top));
        }
      }
    }
  return p.flip ? hflip(t) : t;
}

struct AugmentResult {
  Tensor<float> pixels;
  ViewParams view;
};

/// Training augmentation: random 700x700 crop, horizontal flip with probability 0.25 when
/// `allow_flip`, bilinear resize to 224.
inline AugmentResult augment_train(const std::vector<Frame>& window, Rng& rng, bool allow_flip, int out = kModelInput) {
  const ViewParams p = draw_view(rng, window.front().height, window.front().width, allow_flip);
  return {render_view(window, p, out), p};
}

inline AugmentResult augment_eval(const std::vector<Frame>& window, int out = kModelInput) {
  const ViewParams p = center_view(window.front().height, window.front().width);
  return {render_view(window, p, out), p};
}

/// Applies (x - mean) / max(std, eps) per channel in place.
inline void normalize_pixels(Tensor<float>& x, const ZScoreStats& s) {
  float* d = x.data();
  const std::array<float, 3> m{static_cast<float>(s.mean[0]), static_cast<float>(s.mean[1]), static_cast<float>(s.mean[2])};
  const std::array<float, 3> inv{static_cast<float>(1.0 / s.denom(0)), static_cast<float>(1.0 / s.denom(1)),
                                 static_cast<float>(1.0 / s.denom(2))};
  for (std::int64_t i = 0; i < x.numel(); i += 3)
    for (int c = 0; c < 3; ++c) d[i + c] = (d[i + c] - m[static_cast<std::size_t>(c)]) * inv[static_cast<std::size_t>(c)];
}

// ---------------------------------------------------------------------------
// Photometric jitter on raw pixel values in [0, 255].

struct JitterRanges {
  double brightness = 0.0;  // additive offset, fraction of full scale
  double contrast = 0.0;    // multiplicative spread around mid-grey
  double saturation = 0.0;  // blend factor towards/away from luma
  double hue = 0.0;         // rotation, in turns
};

struct JitterParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double saturation = 1.0;
  double hue = 0.0;

  bool identity() const { return brightness == 0.0 && contrast == 1.0 && saturation == 1.0 && hue == 0.0; }
};

inline JitterParams draw_jitter(Rng& rng, const JitterRanges& r) {
  JitterParams p;
  p.brightness = uniform(rng, -r.brightness, r.brightness);
  p.contrast = uniform(rng, 1.0 - r.contrast, 1.0 + r.contrast);
  p.saturation = uniform(rng, 1.0 - r.saturation, 1.0 + r.saturation);
  p.hue = uniform(rng, -r.hue, r.hue);
  return p;
}

namespace detail {
// NTSC YIQ transform and its inverse.
inline constexpr double kRgbToYiq[3][3] = {
    {0.299, 0.587, 0.114}, {0.595716, -0.274453, -0.321263}, {0.211456, -0.522591, 0.311135}};

inline std::array<std::array<double, 3>, 3> yiq_inverse() {
  const auto& a = kRgbToYiq;
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  std::array<std::array<double, 3>, 3> inv{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inv[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
    }
  return inv;
}
}  // namespace detail

/// RGB -> YIQ, rotate the chroma plane by `turns`, YIQ -> RGB.
inline std::array<double, 3> rotate_hue(const std::array<double, 3>& rgb, double turns) {
  static const auto inv = detail::yiq_inverse();
  const auto& m = detail::kRgbToYiq;
  double yiq[3];
  for (int i = 0; i < 3; ++i) yiq[i] = m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2];
  const double th = 2.0 * std::numbers::pi * turns, c = std::cos(th), s = std::sin(th);
  const double i2 = c * yiq[1] - s * yiq[2], q2 = s * yiq[1] + c * yiq[2];
  yiq[1] = i2;
  yiq[2] = q2;
  std::array<double, 3> out{};
  for (std::size_t i = 0; i < 3; ++i) out[i] = inv[i][0] * yiq[0] + inv[i][1] * yiq[1] + inv[i][2] * yiq[2];
  return out;
}

/// Applies brightness, contrast, saturation and hue in that order to every pixel of `x`
/// (... x 3 raw values), clamping to [0, 255] after each step.
inline void photometric_jitter(Tensor<float>& x, const JitterParams& p) {
  if (p.identity()) return;
  auto clamp = [](double v) { return std::clamp(v, 0.0, 255.0); };
  float* d = x.data();
  for (std::int64_t i = 0; i < x.numel(); i += 3) {
    std::array<double, 3> v{d[i], d[i + 1], d[i + 2]};
    if (p.brightness != 0.0)
      for (auto& c : v) c = clamp(c + 255.0 * p.brightness);
    if (p.contrast != 1.0)
      for (auto& c : v) c = clamp((c - 127.5) * p.contrast + 127.5);
    if (p.saturation != 1.0) {
      const double luma = 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
      for (auto& c : v) c = clamp(luma + p.saturation * (c - luma));
    }
    if (p.hue != 0.0) {
      v = rotate_hue(v, p.hue);
      for (auto& c : v) c = clamp(c);
    }
    for (int c = 0; c < 3; ++c) d[i + c] = static_cast<float>(v[static_cast<std::size_t>(c)]);
  }
}

}  // namespace cyclesafe::videoproc
