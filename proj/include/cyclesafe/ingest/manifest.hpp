#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cyclesafe/core/csv.hpp"

namespace cyclesafe::ingest {

inline constexpr double kMinClipSeconds = 1.5;
inline constexpr double kMaxClipSeconds = 21.0;

struct VideoManifestEntry {
  std::string video_id;
  std::string source_url;
  double start_time = 0.0;
  double end_time = 0.0;
  std::string source_platform;

  double duration() const { return end_time - start_time; }
  bool operator==(const VideoManifestEntry&) const = default;
};

inline const std::vector<std::string>& known_platforms() {
  static const std::vector<std::string> p{"youtube", "reddit",  "vimeo", "facebook", "instagram",
                                          "tiktok",  "twitter", "local", "synthetic", "other"};
  return p;
}

inline double parse_seconds(const std::string& s, const std::string& what) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) throw ValidationError(what + ": not a number '" + s + "'");
  return v;
}

inline const char* kManifestHeader = "video_id,source_url,start_time,end_time,source_platform";

/// Reads and validates a manifest; errors name the 1-based data row.
inline std::vector<VideoManifestEntry> parse_manifest(const CsvTable& table) {
  const std::vector<std::string> expected{"video_id", "source_url", "start_time", "end_time", "source_platform"};
  if (table.header != expected) throw ValidationError(std::string("manifest header must be: ") + kManifestHeader);
  std::vector<VideoManifestEntry> out;
  std::set<std::string> ids;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = "manifest row " + std::to_string(r + 1) + ": ";
    if (row.size() != expected.size()) throw ValidationError(where + "expected 5 fields");
    VideoManifestEntry e;
    e.video_id = row[0];
    e.source_url = row[1];
    e.source_platform = row[4];
    try {
      e.start_time = parse_seconds(row[2], "start_time");
      e.end_time = parse_seconds(row[3], "end_time");
    } catch (const ValidationError& ex) {
      throw ValidationError(where + ex.what());
    }
    if (e.video_id.empty()) throw ValidationError(where + "empty video_id");
    if (e.start_time < 0) throw ValidationError(where + "negative start_time");
    if (e.duration() < 0) throw ValidationError(where + "negative duration");
    if (e.duration() < kMinClipSeconds || e.duration() > kMaxClipSeconds)
      throw ValidationError(where + "duration outside [1.5, 21.0]");
    const auto& plats = known_platforms();
    if (std::find(plats.begin(), plats.end(), e.source_platform) == plats.end())
      throw ValidationError(where + "unknown source_platform '" + e.source_platform + "'");
    if (!ids.insert(e.video_id).second) throw ValidationError(where + "duplicate video_id '" + e.video_id + "'");
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<VideoManifestEntry> parse_manifest(const std::string& path) {
  return parse_manifest(read_csv(path));
}

inline std::string format_seconds(double s) {
  std::ostringstream os;
  os.precision(17);
  os << s;
  return os.str();
}

inline void write_manifest(const std::string& path, const std::vector<VideoManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << kManifestHeader << '\n';
  for (const auto& e : entries)
    write_csv_row(os, {e.video_id, e.source_url, format_seconds(e.start_time), format_seconds(e.end_time),
                       e.source_platform});
}

}  // namespace cyclesafe::ingest
