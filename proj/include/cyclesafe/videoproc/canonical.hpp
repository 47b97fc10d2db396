#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/ingest/manifest.hpp"
#include "cyclesafe/videoproc/container.hpp"
#include "cyclesafe/videoproc/frame.hpp"
#include "cyclesafe/videoproc/temporal.hpp"
#include "cyclesafe/videoproc/zscore.hpp"

namespace cyclesafe::videoproc {

namespace fs = std::filesystem;

/// Sidecar document stored next to each canonical clip.
struct ClipMetadata {
  std::string video_id;
  double duration = 0.0;
  int frame_count = 0;
  double fps = kCanonicalFps;
  int width = kCanonicalWidth;
  int height = kCanonicalHeight;
  ZScoreStats zscore_stats;
  std::string zscore_scope = "per_clip";
  nlohmann::json provenance = nlohmann::json::array();
};

inline void to_json(nlohmann::json& j, const ClipMetadata& m) {
  j = {{"video_id", m.video_id},         {"duration", m.duration}, {"frame_count", m.frame_count},
       {"fps", m.fps},                   {"width", m.width},       {"height", m.height},
       {"zscore_stats", m.zscore_stats}, {"zscore_scope", m.zscore_scope}, {"provenance", m.provenance}};
}

inline void from_json(const nlohmann::json& j, ClipMetadata& m) {
  j.at("video_id").get_to(m.video_id);
  j.at("duration").get_to(m.duration);
  j.at("frame_count").get_to(m.frame_count);
  j.at("fps").get_to(m.fps);
  j.at("width").get_to(m.width);
  j.at("height").get_to(m.height);
  j.at("zscore_stats").get_to(m.zscore_stats);
  j.at("zscore_scope").get_to(m.zscore_scope);
  m.provenance = j.at("provenance");
}

/// Random-access view of a source video's frames.
struct FrameSource {
  int count = 0;
  double fps = 0.0;
  int height = 0, width = 0;
  std::function<Frame(int)> read;
};

inline FrameSource source_from_video(const Video& v) {
  return {static_cast<int>(v.frames.size()), v.fps, v.height(), v.width(),
          [&v](int i) { return v.frames[static_cast<std::size_t>(i)]; }};
}

/// Runs temporal crop, aspect crop + rescale and frame-rate resampling, handing each canonical
/// frame to `sink` in order. Returns the provenance record of the steps.
template <class Sink>
nlohmann::json canonical_frames(const FrameSource& src, double start_time, double end_time, Sink&& sink) {
  const FrameRange range = crop_range(src.count, src.fps, start_time, end_time);
  const auto plan = resample_plan(range.size(), src.fps);
  const Rect roi = aspect_crop_rect(src.height, src.width);
  std::map<int, Frame> cache;
  auto scaled = [&](int i) -> const Frame& {
    auto it = cache.find(i);
    if (it != cache.end()) return it->second;
    while (!cache.empty() && cache.begin()->first < i - 1) cache.erase(cache.begin());
    return cache.emplace(i, resize_bilinear(src.read(range.first + i), roi, kCanonicalHeight, kCanonicalWidth))
        .first->second;
  };
  for (const auto& tap : plan) {
    const Frame& a = scaled(tap.i0);
    sink(tap.w1 == 0.0 ? a : blend(a, scaled(tap.i1), tap.w1));
  }
  nlohmann::json prov = nlohmann::json::array();
  prov.push_back({{"step", "temporal_crop"},
                  {"start_time", start_time},
                  {"end_time", end_time},
                  {"source_fps", src.fps},
                  {"source_frames", {range.first, range.last}}});
  prov.push_back({{"step", "aspect_crop_and_scale"},
                  {"source_size", {src.height, src.width}},
                  {"crop", {{"y", roi.y}, {"x", roi.x}, {"height", roi.height}, {"width", roi.width}}},
                  {"output_size", {kCanonicalHeight, kCanonicalWidth}},
                  {"interpolation", "bilinear"}});
  prov.push_back({{"step", "resample_fps"},
                  {"source_fps", src.fps},
                  {"target_fps", kCanonicalFps},
                  {"method", src.fps > kCanonicalFps ? "nearest" : src.fps < kCanonicalFps ? "linear_blend" : "identity"},
                  {"output_frames", plan.size()}});
  return prov;
}

/// In-memory canonicalization of one clip.
inline CanonicalClip canonicalize(const std::string& video_id, const Video& raw, double start_time, double end_time) {
  Video out;
  out.fps = kCanonicalFps;
  canonical_frames(source_from_video(raw), start_time, end_time, [&](const Frame& f) { out.frames.push_back(f); });
  return zscore_normalize(video_id, std::move(out));
}

/// Directory of canonical clips: <id>.csvid frames plus <id>.json metadata.
class CanonicalStore {
 public:
  explicit CanonicalStore(fs::path dir) : dir_(std::move(dir)) {}

  const fs::path& dir() const { return dir_; }
  fs::path video_path(const std::string& id) const { return dir_ / (id + kVideoExtension); }
  fs::path metadata_path(const std::string& id) const { return dir_ / (id + ".json"); }
  bool contains(const std::string& id) const { return fs::exists(metadata_path(id)) && fs::exists(video_path(id)); }

  ClipMetadata metadata(const std::string& id) const {
    std::ifstream in(metadata_path(id));
    if (!in) throw std::runtime_error("canonical store: no metadata for " + id);
    return nlohmann::json::parse(in).get<ClipMetadata>();
  }

  void write_metadata(const ClipMetadata& m) const {
    std::ofstream os(metadata_path(m.video_id));
    os << nlohmann::json(m).dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write metadata for " + m.video_id);
  }

  /// Pre-normalization frames [start, start + count).
  std::vector<Frame> read_frames(const std::string& id, int start, int count) const {
    VideoReader r(video_path(id).string());
    if (start < 0 || start + count > r.frame_count())
      throw std::out_of_range("canonical store: frames " + std::to_string(start) + "+" + std::to_string(count) +
                              " outside " + id);
    std::vector<Frame> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) out.push_back(r.read(start + i));
    return out;
  }

  CanonicalClip load(const std::string& id) const {
    const ClipMetadata m = metadata(id);
    CanonicalClip c;
    c.video_id = id;
    c.zscore_stats = m.zscore_stats;
    c.video.fps = m.fps;
    c.video.frames = read_frames(id, 0, m.frame_count);
    return c;
  }

 private:
  fs::path dir_;
};

/// Finds the raw file for a video: <id>.csvid first, then any file whose stem is the id.
inline std::optional<fs::path> find_raw_video(const fs::path& raw_dir, const std::string& id) {
  const fs::path native = raw_dir / (id + kVideoExtension);
  if (fs::exists(native)) return native;
  if (!fs::is_directory(raw_dir)) return std::nullopt;
  std::vector<fs::path> matches;
  for (const auto& e : fs::directory_iterator(raw_dir))
    if (e.is_regular_file() && e.path().stem() == id) matches.push_back(e.path());
  std::sort(matches.begin(), matches.end());
  if (matches.empty()) return std::nullopt;
  return matches.front();
}

/// Canonicalizes one manifest entry into the store, streaming frame by frame.
inline ClipMetadata preprocess_video(const ingest::VideoManifestEntry& entry, const fs::path& raw_path,
                                     const CanonicalStore& store, bool export_inspection_mp4 = false) {
  FrameSource src;
  std::optional<VideoReader> reader;
  Video decoded;
  if (is_native_video(raw_path.string())) {
    reader.emplace(raw_path.string());
    src = {reader->frame_count(), reader->fps(), reader->height(), reader->width(),
           [&reader](int i) { return reader->read(i); }};
  } else {
    decoded = decode_with_transcoder(raw_path.string());
    src = source_from_video(decoded);
  }
  fs::create_directories(store.dir());
  const fs::path tmp = store.video_path(entry.video_id).string() + ".partial";
  ChannelMoments moments;
  ClipMetadata m;
  m.video_id = entry.video_id;
  try {
    VideoWriter writer(tmp.string(), kCanonicalHeight, kCanonicalWidth, kCanonicalFps);
    m.provenance = canonical_frames(src, entry.start_time, entry.end_time, [&](const Frame& f) {
      moments.add(f);
      writer.write(f);
    });
    writer.close();
    m.frame_count = writer.frames_written();
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
  m.duration = m.frame_count / kCanonicalFps;
  m.zscore_stats = moments.stats();
  m.provenance.push_back({{"step", "zscore_normalize"},
                          {"scope", "per_clip"},
                          {"eps", kZScoreEps},
                          {"applied", "on_load"}});
  m.provenance.insert(m.provenance.begin(), {{"step", "source"},
                                             {"file", raw_path.filename().string()},
                                             {"source_url", entry.source_url},
                                             {"source_platform", entry.source_platform}});
  fs::rename(tmp, store.video_path(entry.video_id));
  store.write_metadata(m);
  if (export_inspection_mp4)
    export_mp4(store.video_path(entry.video_id).string(), (store.dir() / (entry.video_id + ".mp4")).string());
  return m;
}

}  // namespace cyclesafe::videoproc
