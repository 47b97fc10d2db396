#pragma once

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/videoproc/frame.hpp"

namespace cyclesafe::videoproc {

/// Native raw-video container: an 8-byte magic, a length-prefixed JSON header
/// ({"width", "height", "fps"}), then one length-prefixed zlib stream per RGB frame.
inline constexpr char kVideoMagic[8] = {'C', 'S', 'V', 'I', 'D', '0', '1', '\n'};
inline constexpr const char* kVideoExtension = ".csvid";

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("video container: truncated");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace detail

class VideoWriter {
 public:
  VideoWriter(const std::string& path, int height, int width, double fps, int level = 6)
      : os_(path, std::ios::binary), height_(height), width_(width), level_(level) {
    if (!os_) throw std::runtime_error("cannot write " + path);
    os_.write(kVideoMagic, 8);
    const std::string header = nlohmann::json{{"width", width}, {"height", height}, {"fps", fps}}.dump();
    detail::put_u32(os_, static_cast<std::uint32_t>(header.size()));
    os_.write(header.data(), static_cast<std::streamsize>(header.size()));
  }

  void write(const Frame& f) {
    if (f.height != height_ || f.width != width_) throw std::invalid_argument("VideoWriter: frame size mismatch");
    uLongf len = compressBound(static_cast<uLong>(f.rgb.size()));
    buffer_.resize(len);
    if (compress2(buffer_.data(), &len, f.rgb.data(), static_cast<uLong>(f.rgb.size()), level_) != Z_OK)
      throw std::runtime_error("VideoWriter: compression failed");
    detail::put_u32(os_, static_cast<std::uint32_t>(len));
    os_.write(reinterpret_cast<const char*>(buffer_.data()), static_cast<std::streamsize>(len));
    ++count_;
  }

  int frames_written() const { return count_; }

  void close() {
    os_.flush();
    if (!os_) throw std::runtime_error("VideoWriter: write failed");
    os_.close();
  }

 private:
  std::ofstream os_;
  int height_, width_, level_;
  int count_ = 0;
  std::vector<Bytef> buffer_;
};

/// Random-access reader; the frame index is built by walking the length prefixes.
class VideoReader {
 public:
  explicit VideoReader(const std::string& path) : is_(path, std::ios::binary), path_(path) {
    if (!is_) throw std::runtime_error("cannot open " + path);
    char magic[8];
    if (!is_.read(magic, 8) || !std::equal(magic, magic + 8, kVideoMagic))
      throw std::runtime_error(path + ": not a native video container");
    const std::uint32_t hlen = detail::get_u32(is_);
    std::string header(hlen, '\0');
    if (!is_.read(header.data(), hlen)) throw std::runtime_error(path + ": truncated header");
    const auto j = nlohmann::json::parse(header);
    width_ = j.at("width").get<int>();
    height_ = j.at("height").get<int>();
    fps_ = j.at("fps").get<double>();
    for (;;) {
      unsigned char b[4];
      if (!is_.read(reinterpret_cast<char*>(b), 4)) break;
      const std::uint32_t len = static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
                                static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
      offsets_.push_back({static_cast<std::uint64_t>(is_.tellg()), len});
      is_.seekg(len, std::ios::cur);
    }
    is_.clear();
  }

  int height() const { return height_; }
  int width() const { return width_; }
  double fps() const { return fps_; }
  int frame_count() const { return static_cast<int>(offsets_.size()); }

  Frame read(int index) {
    if (index < 0 || index >= frame_count()) throw std::out_of_range(path_ + ": frame index out of range");
    const auto [offset, len] = offsets_[static_cast<std::size_t>(index)];
    buffer_.resize(len);
    is_.seekg(static_cast<std::streamoff>(offset));
    if (!is_.read(reinterpret_cast<char*>(buffer_.data()), len)) throw std::runtime_error(path_ + ": truncated frame");
    Frame f(height_, width_);
    uLongf out_len = static_cast<uLongf>(f.rgb.size());
    if (uncompress(f.rgb.data(), &out_len, buffer_.data(), len) != Z_OK || out_len != f.rgb.size())
      throw std::runtime_error(path_ + ": corrupt frame " + std::to_string(index));
    return f;
  }

 private:
  struct Entry {
    std::uint64_t offset;
    std::uint32_t length;
  };
  std::ifstream is_;
  std::string path_;
  int width_ = 0, height_ = 0;
  double fps_ = 0;
  std::vector<Entry> offsets_;
  std::vector<Bytef> buffer_;
};

inline void write_video(const std::string& path, const Video& v) {
  if (v.frames.empty()) throw std::invalid_argument("write_video: no frames");
  VideoWriter w(path, v.height(), v.width(), v.fps);
  for (const auto& f : v.frames) w.write(f);
  w.close();
}

inline bool is_native_video(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[8];
  return is.read(magic, 8) && std::equal(magic, magic + 8, kVideoMagic);
}

// ---------------------------------------------------------------------------
// External transcoder (ffmpeg-compatible CLI) for non-native inputs and mp4 export.

inline constexpr const char* kTranscoderEnv = "CYCLESAFE_TRANSCODER";
inline constexpr const char* kProbeEnv = "CYCLESAFE_PROBE";

inline std::string transcoder_binary() {
  const char* env = std::getenv(kTranscoderEnv);
  return env && *env ? env : "ffmpeg";
}

inline std::string probe_binary() {
  const char* env = std::getenv(kProbeEnv);
  return env && *env ? env : "ffprobe";
}

inline std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

inline bool transcoder_available() {
  return std::system((shell_quote(transcoder_binary()) + " -version >/dev/null 2>&1").c_str()) == 0;
}

/// Decodes any container the transcoder understands into RGB frames.
inline Video decode_with_transcoder(const std::string& path) {
  if (!transcoder_available())
    throw std::runtime_error("transcoder '" + transcoder_binary() + "' not found (set " + kTranscoderEnv +
                             "); needed to decode " + path);
  const std::string probe = shell_quote(probe_binary()) +
                            " -v error -select_streams v:0 -show_entries stream=width,height,r_frame_rate -of csv=p=0 " +
                            shell_quote(path);
  FILE* p = popen(probe.c_str(), "r");
  if (!p) throw std::runtime_error("cannot run " + probe_binary());
  int w = 0, h = 0, num = 0, den = 1;
  const int got = std::fscanf(p, "%d,%d,%d/%d", &w, &h, &num, &den);
  pclose(p);
  if (got < 3 || w <= 0 || h <= 0 || num <= 0 || den <= 0) throw std::runtime_error("cannot probe " + path);
  Video v;
  v.fps = static_cast<double>(num) / den;
  const std::string cmd = shell_quote(transcoder_binary()) + " -v error -i " + shell_quote(path) +
                          " -f rawvideo -pix_fmt rgb24 -";
  FILE* d = popen(cmd.c_str(), "r");
  if (!d) throw std::runtime_error("cannot run " + transcoder_binary());
  for (;;) {
    Frame f(h, w);
    if (std::fread(f.rgb.data(), 1, f.rgb.size(), d) != f.rgb.size()) break;
    v.frames.push_back(std::move(f));
  }
  if (pclose(d) != 0 || v.frames.empty()) throw std::runtime_error("transcoder failed on " + path);
  return v;
}

/// Encodes frames from a native container to H.264 mp4 for inspection.
inline void export_mp4(const std::string& native_path, const std::string& mp4_path) {
  VideoReader r(native_path);
  const std::string cmd = shell_quote(transcoder_binary()) + " -v error -y -f rawvideo -pix_fmt rgb24 -s " +
                          std::to_string(r.width()) + "x" + std::to_string(r.height()) + " -r " +
                          std::to_string(r.fps()) + " -i - -pix_fmt yuv420p " + shell_quote(mp4_path);
  FILE* e = popen(cmd.c_str(), "w");
  if (!e) throw std::runtime_error("cannot run " + transcoder_binary());
  for (int i = 0; i < r.frame_count(); ++i) {
    const Frame f = r.read(i);
    std::fwrite(f.rgb.data(), 1, f.rgb.size(), e);
  }
  if (pclose(e) != 0) throw std::runtime_error("mp4 export failed for " + native_path);
}

/// Loads a whole video, natively or through the transcoder.
inline Video load_video(const std::string& path) {
  if (!is_native_video(path)) return decode_with_transcoder(path);
  VideoReader r(path);
  Video v;
  v.fps = r.fps();
  for (int i = 0; i < r.frame_count(); ++i) v.frames.push_back(r.read(i));
  return v;
}

}  // namespace cyclesafe::videoproc
