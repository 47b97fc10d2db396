#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/core/tensor.hpp"
#include "cyclesafe/videoproc/frame.hpp"

namespace cyclesafe::videoproc {

inline constexpr double kZScoreEps = 1e-6;

struct ZScoreStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> std{1, 1, 1};

  double denom(int c) const { return std::max(std[static_cast<std::size_t>(c)], kZScoreEps); }
  bool operator==(const ZScoreStats&) const = default;
};

inline void to_json(nlohmann::json& j, const ZScoreStats& s) { j = {{"mean", s.mean}, {"std", s.std}}; }
inline void from_json(const nlohmann::json& j, ZScoreStats& s) {
  j.at("mean").get_to(s.mean);
  j.at("std").get_to(s.std);
}

/// Streaming per-channel moments over every pixel of every frame.
class ChannelMoments {
 public:
  void add(const Frame& f) {
    std::array<std::uint64_t, 3> s{0, 0, 0}, q{0, 0, 0};
    for (std::size_t i = 0; i < f.rgb.size(); i += 3)
      for (std::size_t c = 0; c < 3; ++c) {
        const std::uint64_t v = f.rgb[i + c];
        s[c] += v;
        q[c] += v * v;
      }
    for (std::size_t c = 0; c < 3; ++c) {
      sum_[c] += s[c];
      sumsq_[c] += q[c];
    }
    count_ += f.rgb.size() / 3;
  }

  ZScoreStats stats() const {
    ZScoreStats z;
    if (count_ == 0) return z;
    const double n = static_cast<double>(count_);
    for (std::size_t c = 0; c < 3; ++c) {
      const double m = static_cast<double>(sum_[c]) / n;
      z.mean[c] = m;
      const double var = (static_cast<double>(sumsq_[c]) - static_cast<double>(sum_[c]) * m) / n;
      z.std[c] = std::sqrt(std::max(var, 0.0));
    }
    return z;
  }

 private:
  std::array<std::uint64_t, 3> sum_{0, 0, 0}, sumsq_{0, 0, 0};
  std::uint64_t count_ = 0;
};

inline ZScoreStats compute_zscore_stats(const Video& v) {
  ChannelMoments m;
  for (const auto& f : v.frames) m.add(f);
  return m.stats();
}

/// A canonical 1280x720, 30 fps clip. Frames keep their pre-normalization 8-bit values;
/// `normalized()` applies the per-channel z-score.
struct CanonicalClip {
  std::string video_id;
  Video video;
  ZScoreStats zscore_stats;

  int frame_count() const { return static_cast<int>(video.frames.size()); }
  double duration() const { return video.duration(); }

  /// T x H x W x 3 normalized values.
  template <class T = float>
  Tensor<T> normalized() const {
    const int h = video.height(), w = video.width();
    Tensor<T> out({frame_count(), h, w, 3});
    T* o = out.data();
    for (const auto& f : video.frames)
      for (std::size_t i = 0; i < f.rgb.size(); ++i) {
        const int c = static_cast<int>(i % 3);
        *o++ = static_cast<T>((f.rgb[i] - zscore_stats.mean[static_cast<std::size_t>(c)]) / zscore_stats.denom(c));
      }
    return out;
  }
};

inline CanonicalClip zscore_normalize(const std::string& video_id, Video v) {
  CanonicalClip clip;
  clip.video_id = video_id;
  clip.zscore_stats = compute_zscore_stats(v);
  clip.video = std::move(v);
  return clip;
}

/// Inverse of the normalization: value * max(std, eps) + mean, per channel (last axis).
template <class T>
Tensor<T> zscore_denormalize(const Tensor<T>& x, const ZScoreStats& s) {
  Tensor<T> out = x.clone();
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    const int c = static_cast<int>(i % 3);
    out[i] = static_cast<T>(out[i] * s.denom(c) + s.mean[static_cast<std::size_t>(c)]);
  }
  return out;
}

}  // namespace cyclesafe::videoproc
