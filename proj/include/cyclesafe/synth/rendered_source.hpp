#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "cyclesafe/synth/scenario.hpp"
#include "cyclesafe/train/source.hpp"
#include "cyclesafe/videoproc/zscore.hpp"

namespace cyclesafe::synth {

/// Draws windows straight from scenario geometry at model resolution, skipping the
/// 1280 x 720 canonical store. Canonical pixel (cx, cy) maps to scene point
/// ((cx + 0.5) / 720, (cy + 0.5) / 720); frames are point-sampled at clip time frame / 30.
class RenderedSource : public train::SegmentSource {
 public:
  explicit RenderedSource(const std::vector<Scenario>& scenarios, int stats_stride = 4) : stride_(stats_stride) {
    for (const auto& s : scenarios) scenarios_.emplace(s.video_id, s);
  }

  const Scenario& scenario(const std::string& id) const {
    auto it = scenarios_.find(id);
    if (it == scenarios_.end()) throw std::out_of_range("rendered source: unknown video " + id);
    return it->second;
  }

  int frame_count(const std::string& id) const {
    return static_cast<int>(std::lround(scenario(id).duration * videoproc::kCanonicalFps));
  }

  std::map<std::string, int> frame_counts() const {
    std::map<std::string, int> out;
    for (const auto& [id, s] : scenarios_) out[id] = frame_count(id);
    return out;
  }

  Tensor<float> raw_window(const tasks::LabeledSegment& seg, const videoproc::ViewParams& view, int out) override {
    const Scenario& s = scenario(seg.video_id);
    const double unit = 1.0 / videoproc::kCanonicalHeight;
    const double step = static_cast<double>(view.crop_size) / out;
    std::vector<double> xs(static_cast<std::size_t>(out)), ys(static_cast<std::size_t>(out));
    for (int i = 0; i < out; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      xs[ii] = (view.crop_x + (i + 0.5) * step) * unit;
      ys[ii] = (view.crop_y + (i + 0.5) * step) * unit;
    }
    Tensor<float> t({videoproc::kWindowLength, out, out, 3});
    float* o = t.data();
    for (int k = 0; k < videoproc::kWindowLength; ++k) {
      const double time = (seg.start_frame + k) / videoproc::kCanonicalFps;
      for (int y = 0; y < out; ++y)
        for (int x = 0; x < out; ++x) {
          const auto c = s.color(xs[static_cast<std::size_t>(x)], ys[static_cast<std::size_t>(y)], time);
          *o++ = c[0];
          *o++ = c[1];
          *o++ = c[2];
        }
    }
    return view.flip ? videoproc::hflip(t) : t;
  }

  /// Per-clip channel moments over a strided grid of canonical pixels and every canonical frame.
  videoproc::ZScoreStats stats(const std::string& id) override {
    std::lock_guard lock(mu_);
    auto it = stats_.find(id);
    if (it != stats_.end()) return it->second;
    const Scenario& s = scenario(id);
    const int h = videoproc::kCanonicalHeight / stride_, w = videoproc::kCanonicalWidth / stride_;
    videoproc::ChannelMoments m;
    videoproc::Frame f(h, w);
    const double unit = static_cast<double>(stride_) / videoproc::kCanonicalHeight;
    for (int k = 0; k < frame_count(id); ++k) {
      const double time = k / videoproc::kCanonicalFps;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const auto c = s.color((x + 0.5) * unit, (y + 0.5) * unit, time);
          std::copy(c.begin(), c.end(), f.px(y, x));
        }
      m.add(f);
    }
    return stats_.emplace(id, m.stats()).first->second;
  }

  bool contains(const std::string& id) override { return scenarios_.count(id) > 0; }

 private:
  int stride_;
  std::map<std::string, Scenario> scenarios_;
  std::mutex mu_;
  std::map<std::string, videoproc::ZScoreStats> stats_;
};

}  // namespace cyclesafe::synth
