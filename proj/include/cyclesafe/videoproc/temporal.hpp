#pragma once

#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclesafe/videoproc/frame.hpp"

namespace cyclesafe::videoproc {

inline constexpr double kMinSourceFps = 20.0;
inline constexpr int kWindowLength = 30;
inline constexpr int kWindowStride = 15;

/// Half-open source frame range [first, last) whose timestamps i/fps lie in [start, end).
struct FrameRange {
  int first = 0;
  int last = 0;
  int size() const { return last - first; }
};

inline FrameRange crop_range(int n_frames, double fps, double start_time, double end_time) {
  if (!(start_time >= 0.0) || !(end_time > start_time))
    throw std::invalid_argument("temporal_crop: need 0 <= start_time < end_time");
  const double duration = n_frames / fps;
  if (end_time > duration + 1e-9) throw std::invalid_argument("temporal_crop: end_time beyond source duration");
  const double tol = 1e-9;
  FrameRange r;
  r.first = static_cast<int>(std::ceil(start_time * fps - tol));
  r.last = std::min(n_frames, static_cast<int>(std::ceil(end_time * fps - tol)));
  if (r.size() <= 0) throw std::invalid_argument("temporal_crop: empty result");
  return r;
}

inline Video temporal_crop(const Video& v, double start_time, double end_time) {
  const FrameRange r = crop_range(static_cast<int>(v.frames.size()), v.fps, start_time, end_time);
  Video out;
  out.fps = v.fps;
  out.frames.assign(v.frames.begin() + r.first, v.frames.begin() + r.last);
  return out;
}

/// Source frames and blend weight for one output frame: out = (1 - w1) * src[i0] + w1 * src[i1].
struct ResampleTap {
  int i0 = 0;
  int i1 = 0;
  double w1 = 0.0;
};

/// Maps every 30 fps output frame onto the source timeline. Downsampling picks the nearest
/// source frame; upsampling blends the two bracketing frames linearly.
inline std::vector<ResampleTap> resample_plan(int n_src, double src_fps, double dst_fps = kCanonicalFps) {
  if (src_fps < kMinSourceFps)
    throw std::invalid_argument("resample_fps: " + std::to_string(src_fps) + " fps is below quality floor");
  const int n_out = static_cast<int>(std::lround(n_src / src_fps * dst_fps));
  std::vector<ResampleTap> plan(static_cast<std::size_t>(n_out));
  for (int j = 0; j < n_out; ++j) {
    ResampleTap& t = plan[static_cast<std::size_t>(j)];
    if (src_fps == dst_fps) {
      t.i0 = t.i1 = std::min(j, n_src - 1);
      continue;
    }
    const double pos = j * src_fps / dst_fps;
    if (src_fps > dst_fps) {
      t.i0 = t.i1 = std::min(static_cast<int>(std::lround(pos)), n_src - 1);
    } else {
      t.i0 = std::min(static_cast<int>(std::floor(pos)), n_src - 1);
      t.i1 = std::min(t.i0 + 1, n_src - 1);
      t.w1 = t.i1 == t.i0 ? 0.0 : pos - t.i0;
    }
  }
  return plan;
}

inline Frame blend(const Frame& a, const Frame& b, double w1) {
  if (w1 == 0.0) return a;
  Frame out(a.height, a.width);
  for (std::size_t i = 0; i < a.rgb.size(); ++i) out.rgb[i] = to_u8(a.rgb[i] + w1 * (b.rgb[i] - a.rgb[i]));
  return out;
}

inline Video resample_fps(const Video& v, double src_fps) {
  const auto plan = resample_plan(static_cast<int>(v.frames.size()), src_fps);
  Video out;
  out.fps = kCanonicalFps;
  out.frames.reserve(plan.size());
  for (const auto& t : plan)
    out.frames.push_back(blend(v.frames[static_cast<std::size_t>(t.i0)], v.frames[static_cast<std::size_t>(t.i1)], t.w1));
  return out;
}

struct SegmentWindow {
  std::string video_id;
  int start_frame = 0;
  int length = kWindowLength;

  double start_time() const { return start_frame / kCanonicalFps; }
  double end_time() const { return (start_frame + length) / kCanonicalFps; }
  bool operator==(const SegmentWindow&) const = default;
};

/// Windows of 30 frames every 15 frames that fit inside a T-frame clip.
inline std::vector<SegmentWindow> segment(const std::string& video_id, int n_frames) {
  std::vector<SegmentWindow> out;
  if (n_frames < kWindowLength) {
    std::cerr << "warning: " << video_id << " has " << n_frames << " frames, fewer than one window\n";
    return out;
  }
  for (int s = 0; s + kWindowLength <= n_frames; s += kWindowStride) out.push_back({video_id, s, kWindowLength});
  return out;
}

}  // namespace cyclesafe::videoproc
