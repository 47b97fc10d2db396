#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cyclesafe/ingest/manifest.hpp"
#include "cyclesafe/ingest/types.hpp"

namespace cyclesafe::ingest {

namespace detail {

inline std::string fmt(double v) { return format_seconds(v); }

inline std::string bbox_to_string(const BBox& b) {
  return fmt(b.x) + " " + fmt(b.y) + " " + fmt(b.w) + " " + fmt(b.h);
}

inline BBox bbox_from_string(const std::string& s) {
  std::istringstream is(s);
  BBox b;
  std::string x, y, w, h, extra;
  if (!(is >> x >> y >> w >> h) || (is >> extra)) throw ValidationError("bbox: expected 'x y w h', got '" + s + "'");
  b.x = parse_seconds(x, "bbox.x");
  b.y = parse_seconds(y, "bbox.y");
  b.w = parse_seconds(w, "bbox.w");
  b.h = parse_seconds(h, "bbox.h");
  return b;
}

inline std::vector<std::string> fields_to_strings(const AnnotationFields& a) {
  return {kRightOfWay.name(a.right_of_way),
          a.time_to_collision ? fmt(*a.time_to_collision) : std::string(),
          a.object_type,
          kFault.name(a.fault),
          kSeverity.name(a.severity),
          fmt(a.risk_raw),
          kAge.name(a.age),
          kCyclistType.name(a.cyclist_type),
          bbox_to_string(a.bbox),
          kCyclistDirection.name(a.cyclist_direction),
          kObjectDirection.name(a.object_direction),
          a.camera_position,
          kEgoInvolved.name(a.ego_involved)};
}

/// Parses the 13 annotation columns starting at `first`.
inline void fields_from_strings(const std::vector<std::string>& row, std::size_t first, AnnotationFields& a) {
  const auto at = [&](std::size_t i) -> const std::string& { return row[first + i]; };
  a.right_of_way = kRightOfWay.parse(at(0));
  if (!at(1).empty() && at(1) != "-1") a.time_to_collision = parse_seconds(at(1), "time_to_collision");
  a.object_type = at(2);
  a.fault = kFault.parse(at(3));
  a.severity = kSeverity.parse(at(4));
  a.risk_raw = parse_seconds(at(5), "risk");
  a.age = kAge.parse(at(6));
  a.cyclist_type = kCyclistType.parse(at(7));
  a.bbox = bbox_from_string(at(8));
  a.cyclist_direction = kCyclistDirection.parse(at(9));
  a.object_direction = kObjectDirection.parse(at(10));
  a.camera_position = at(11);
  a.ego_involved = kEgoInvolved.parse(at(12));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Raw per-labeller files: labeller_id,video_id,<13 fields>

inline std::vector<std::string> raw_label_header() {
  std::vector<std::string> h{"labeller_id", "video_id"};
  for (auto c : kAnnotationColumns) h.emplace_back(c);
  return h;
}

inline std::vector<RawLabelRecord> parse_raw_labels(const CsvTable& t) {
  if (t.header != raw_label_header()) throw ValidationError("raw label header mismatch");
  std::vector<RawLabelRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    if (row.size() != t.header.size())
      throw ValidationError("raw labels row " + std::to_string(r + 1) + ": expected 15 fields");
    RawLabelRecord rec;
    rec.labeller_id = row[0];
    rec.video_id = row[1];
    try {
      detail::fields_from_strings(row, 2, rec);
    } catch (const ValidationError& e) {
      throw ValidationError("raw labels row " + std::to_string(r + 1) + ": " + e.what());
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<RawLabelRecord> read_raw_labels(const std::string& path) { return parse_raw_labels(read_csv(path)); }

inline void write_raw_labels(const std::string& path, const std::vector<RawLabelRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_csv_row(os, raw_label_header());
  for (const auto& r : records) {
    std::vector<std::string> row{r.labeller_id, r.video_id};
    for (auto& f : detail::fields_to_strings(r)) row.push_back(std::move(f));
    write_csv_row(os, row);
  }
}

// ---------------------------------------------------------------------------
// Aggregated files: video_id,<13 fields>,has_collision

inline std::vector<std::string> annotation_header() {
  std::vector<std::string> h{"video_id"};
  for (auto c : kAnnotationColumns) h.emplace_back(c);
  h.emplace_back("has_collision");
  return h;
}

inline std::vector<AnnotationRecord> parse_annotations(const CsvTable& t) {
  if (t.header != annotation_header()) throw ValidationError("annotation header mismatch");
  std::vector<AnnotationRecord> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    const std::string where = "annotations row " + std::to_string(r + 1) + ": ";
    if (row.size() != t.header.size()) throw ValidationError(where + "expected 15 fields");
    AnnotationRecord rec;
    rec.video_id = row[0];
    try {
      detail::fields_from_strings(row, 1, rec);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
    if ((row[14] == "1") != rec.has_collision() || (row[14] != "0" && row[14] != "1"))
      throw ValidationError(where + "has_collision disagrees with time_to_collision");
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<AnnotationRecord> read_annotations(const std::string& path) {
  return parse_annotations(read_csv(path));
}

inline void write_annotations(const std::string& path, const std::vector<AnnotationRecord>& records) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  write_csv_row(os, annotation_header());
  for (const auto& r : records) {
    std::vector<std::string> row{r.video_id};
    for (auto& f : detail::fields_to_strings(r)) row.push_back(std::move(f));
    row.push_back(r.has_collision() ? "1" : "0");
    write_csv_row(os, row);
  }
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {
inline void check_code(std::vector<std::string>& v, const Scale& s, Code c) {
  if (c == kUnknown) {
    if (!s.allows_unknown) v.push_back(std::string(s.field) + " may not be unknown");
  } else if (c < 0 || c >= s.size()) {
    v.push_back(std::string(s.field) + " code " + std::to_string(c) + " out of range");
  }
}
inline std::string num(double x) {
  std::ostringstream os;
  os << x;
  return os.str();
}
}  // namespace detail

/// Lists every violated field invariant; empty means valid. `clip_duration` (seconds) bounds
/// time_to_collision when given.
inline std::vector<std::string> validate_annotation(const AnnotationFields& r, const Vocabulary& vocab,
                                                    std::optional<double> clip_duration = std::nullopt) {
  using detail::num;
  std::vector<std::string> v;
  const BBox& b = r.bbox;
  if (b.x < 0) v.push_back("bbox x is negative");
  if (b.y < 0) v.push_back("bbox y is negative");
  if (b.w <= 0) v.push_back("bbox width must be positive");
  if (b.h <= 0) v.push_back("bbox height must be positive");
  if (b.x + b.w > kFrameWidth)
    v.push_back("bbox exceeds frame width: " + num(b.x) + "+" + num(b.w) + " > " + num(kFrameWidth));
  if (b.y + b.h > kFrameHeight)
    v.push_back("bbox exceeds frame height: " + num(b.y) + "+" + num(b.h) + " > " + num(kFrameHeight));
  if (!(r.risk_raw >= 0.0 && r.risk_raw <= 1.0)) v.push_back("risk outside [0, 1]");
  if (r.time_to_collision) {
    const double t = *r.time_to_collision;
    if (t < 0) v.push_back("time_to_collision is negative");
    if (clip_duration && t > *clip_duration) v.push_back("time_to_collision beyond clip duration");
  }
  if (vocab.object_code(r.object_type) == kUnknown) v.push_back("unknown object_type");
  if (vocab.camera_code(r.camera_position) == kUnknown) v.push_back("unknown camera_position");
  detail::check_code(v, kRightOfWay, r.right_of_way);
  detail::check_code(v, kFault, r.fault);
  detail::check_code(v, kSeverity, r.severity);
  detail::check_code(v, kAge, r.age);
  detail::check_code(v, kCyclistType, r.cyclist_type);
  detail::check_code(v, kCyclistDirection, r.cyclist_direction);
  detail::check_code(v, kObjectDirection, r.object_direction);
  detail::check_code(v, kEgoInvolved, r.ego_involved);
  return v;
}

}  // namespace cyclesafe::ingest
