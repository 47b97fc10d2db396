#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cyclesafe/core/csv.hpp"

namespace cyclesafe::ingest {

/// Ordinal code used for every categorical annotation; -1 means unknown / abstained.
using Code = int;
inline constexpr Code kUnknown = -1;

inline constexpr double kFrameWidth = 1280.0;
inline constexpr double kFrameHeight = 720.0;

/// Fixed categorical scales, listed in ordinal order.
struct Scale {
  std::string_view field;
  std::vector<std::string_view> names;
  bool allows_unknown;

  int size() const { return static_cast<int>(names.size()); }

  Code parse(const std::string& s) const {
    if (s == "-1") {
      if (!allows_unknown) throw ValidationError(std::string(field) + ": unknown (-1) not allowed");
      return kUnknown;
    }
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == s) return static_cast<Code>(i);
    throw ValidationError(std::string(field) + ": invalid value '" + s + "'");
  }

  std::string name(Code c) const {
    if (c == kUnknown) return "-1";
    if (c < 0 || c >= size()) throw std::out_of_range(std::string(field) + ": code out of range");
    return std::string(names[static_cast<std::size_t>(c)]);
  }
};

inline const Scale kRightOfWay{"right_of_way", {"no", "yes"}, true};
inline const Scale kFault{"fault", {"no", "yes"}, true};
inline const Scale kSeverity{"severity", {"safe", "minor", "moderate", "high", "very_high"}, false};
inline const Scale kRisk{"risk", {"low", "moderate", "high", "very_high"}, false};
inline const Scale kAge{"age", {"young", "adult", "old"}, true};
inline const Scale kCyclistType{"cyclist_type", {"competitive", "recreational"}, true};
inline const Scale kCyclistDirection{"cyclist_direction", {"forward", "backward", "left", "right", "stationary"}, false};
inline const Scale kObjectDirection{"object_direction", {"forward", "backward", "left", "right", "stationary"}, false};
inline const Scale kEgoInvolved{"ego_involved", {"no", "yes"}, false};

/// Risk-class boundaries over the raw [0, 1] score. Bins are right-open except the last.
struct RiskBins {
  std::array<double, 3> edges{0.25, 0.5, 0.75};
};

inline Code quantize_risk(double risk_raw, const RiskBins& bins = {}) {
  if (!(risk_raw >= 0.0 && risk_raw <= 1.0))
    throw ValidationError("risk value " + std::to_string(risk_raw) + " outside [0, 1]");
  Code c = 0;
  for (double e : bins.edges)
    if (risk_raw >= e) ++c;
  return c;
}

enum class Direction { forward = 0, backward = 1, left = 2, right = 3, stationary = 4 };

/// Editable label vocabularies for the open-ended categorical fields.
struct Vocabulary {
  std::vector<std::string> object_types;
  std::vector<std::string> camera_positions;

  Code object_code(const std::string& s) const { return index_of(object_types, s); }
  Code camera_code(const std::string& s) const { return index_of(camera_positions, s); }

  static Vocabulary defaults() {
    return {{"car", "bus", "train", "cyclist", "pedestrian", "pothole", "animal", "truck", "van", "motorcycle",
             "e_scooter", "tram", "traffic_sign", "road_barrier", "vehicle_door", "debris", "other"},
            {"front_dashcam", "back_dashcam", "front_helmet_camera", "back_helmet_camera", "handlebar_camera",
             "other"}};
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open vocabulary " + path);
    const auto j = nlohmann::json::parse(in);
    Vocabulary v;
    j.at("object_types").get_to(v.object_types);
    j.at("camera_positions").get_to(v.camera_positions);
    if (v.object_types.empty() || v.camera_positions.empty()) throw ValidationError("vocabulary lists must be non-empty");
    return v;
  }

 private:
  static Code index_of(const std::vector<std::string>& list, const std::string& s) {
    for (std::size_t i = 0; i < list.size(); ++i)
      if (list[i] == s) return static_cast<Code>(i);
    return kUnknown;
  }
};

struct BBox {
  double x = 0, y = 0, w = 0, h = 0;
  bool operator==(const BBox&) const = default;
};

/// Annotation fields shared by raw (per-labeller) and aggregated records.
struct AnnotationFields {
  std::string video_id;
  Code right_of_way = kUnknown;
  std::optional<double> time_to_collision;  // seconds from clip start
  std::string object_type;
  Code fault = kUnknown;
  Code severity = 0;
  double risk_raw = 0.0;
  Code age = kUnknown;
  Code cyclist_type = kUnknown;
  BBox bbox;
  Code cyclist_direction = 0;
  Code object_direction = 0;
  std::string camera_position;
  Code ego_involved = 0;

  bool operator==(const AnnotationFields&) const = default;
};

struct RawLabelRecord : AnnotationFields {
  std::string labeller_id;
};

struct AnnotationRecord : AnnotationFields {
  bool has_collision() const { return time_to_collision.has_value(); }
};

/// The thirteen annotation column names, in file order.
inline const std::array<std::string_view, 13> kAnnotationColumns{
    "right_of_way", "time_to_collision", "object_type", "fault",     "severity",
    "risk",         "age",               "cyclist_type", "bbox",     "cyclist_direction",
    "object_direction", "camera_position", "ego_involved"};

}  // namespace cyclesafe::ingest
