#pragma once

#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "cyclesafe/core/rng.hpp"
#include "cyclesafe/core/tensor.hpp"
#include "cyclesafe/tasks/dataset.hpp"
#include "cyclesafe/videoproc/augment.hpp"
#include "cyclesafe/videoproc/canonical.hpp"

namespace cyclesafe::train {

/// Supplier of 30-frame windows in canonical coordinates (720 x 1280, 30 fps).
class SegmentSource {
 public:
  virtual ~SegmentSource() = default;

  /// Raw pixel values [30, out, out, 3] for the window seen through `view`.
  virtual Tensor<float> raw_window(const tasks::LabeledSegment& seg, const videoproc::ViewParams& view, int out) = 0;
  virtual videoproc::ZScoreStats stats(const std::string& video_id) = 0;
  virtual bool contains(const std::string& video_id) = 0;
};

/// Windows read from a canonical store.
class StoreSource : public SegmentSource {
 public:
  explicit StoreSource(videoproc::CanonicalStore store) : store_(std::move(store)) {}

  Tensor<float> raw_window(const tasks::LabeledSegment& seg, const videoproc::ViewParams& view, int out) override {
    const auto frames = store_.read_frames(seg.video_id, seg.start_frame, videoproc::kWindowLength);
    return videoproc::render_view(frames, view, out);
  }

  videoproc::ZScoreStats stats(const std::string& id) override {
    std::lock_guard lock(mu_);
    auto it = stats_.find(id);
    if (it == stats_.end()) it = stats_.emplace(id, store_.metadata(id).zscore_stats).first;
    return it->second;
  }

  bool contains(const std::string& id) override { return store_.contains(id); }

 private:
  videoproc::CanonicalStore store_;
  std::mutex mu_;
  std::map<std::string, videoproc::ZScoreStats> stats_;
};

struct LoaderOptions {
  int input_size = videoproc::kModelInput;
  videoproc::JitterRanges jitter{0.1, 0.1, 0.1, 0.02};
};

/// One normalized model input window. Training draws a random view from `rng`; evaluation uses
/// the centre crop. Entries with a jitter seed receive photometric jitter.
inline Tensor<float> load_window(SegmentSource& src, const tasks::LabeledSegment& seg, bool training, bool allow_flip,
                                 Rng& rng, const LoaderOptions& opt = {}) {
  using namespace videoproc;
  const ViewParams view = training ? draw_view(rng, kCanonicalHeight, kCanonicalWidth, allow_flip)
                                   : center_view(kCanonicalHeight, kCanonicalWidth);
  Tensor<float> x = src.raw_window(seg, view, opt.input_size);
  if (seg.jitter_seed != 0) {
    Rng jr(seg.jitter_seed);
    photometric_jitter(x, draw_jitter(jr, opt.jitter));
  }
  normalize_pixels(x, src.stats(seg.video_id));
  return x;
}

/// Stacks windows into [B, 30, S, S, 3].
inline Tensor<float> load_batch(SegmentSource& src, const std::vector<tasks::LabeledSegment>& segs, bool training,
                                bool allow_flip, Rng& rng, const LoaderOptions& opt = {}) {
  const std::int64_t S = opt.input_size, per = videoproc::kWindowLength * S * S * 3;
  Tensor<float> batch({static_cast<std::int64_t>(segs.size()), videoproc::kWindowLength, S, S, 3});
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const Tensor<float> w = load_window(src, segs[i], training, allow_flip, rng, opt);
    std::copy_n(w.data(), per, batch.data() + static_cast<std::int64_t>(i) * per);
  }
  return batch;
}

}  // namespace cyclesafe::train
