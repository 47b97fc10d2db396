#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cyclesafe/core/rng.hpp"
#include "cyclesafe/ingest/manifest.hpp"
#include "cyclesafe/ingest/types.hpp"
#include "cyclesafe/videoproc/frame.hpp"

namespace cyclesafe::synth {

/// Scene units: the frame height is 1, the width 16/9; x grows rightwards and y downwards.
inline constexpr double kSceneWidth = 16.0 / 9.0;

enum class ScenarioKind { moving_object_direction, two_body_collision, near_miss, stationary };

NLOHMANN_JSON_SERIALIZE_ENUM(ScenarioKind, {{ScenarioKind::moving_object_direction, "moving_object_direction"},
                                            {ScenarioKind::two_body_collision, "two_body_collision"},
                                            {ScenarioKind::near_miss, "near_miss"},
                                            {ScenarioKind::stationary, "stationary"}})

/// A disc moving at constant velocity until `stop_time`, then resting.
struct Body {
  double x0 = 0, y0 = 0;  // position at clip time 0
  double vx = 0, vy = 0;  // scene units per second
  double radius = 0.08;
  std::array<std::uint8_t, 3> color{255, 255, 255};
  std::optional<double> stop_time;

  std::array<double, 2> position(double t) const {
    const double s = stop_time ? std::min(t, *stop_time) : t;
    return {x0 + vx * s, y0 + vy * s};
  }
  bool operator==(const Body&) const = default;
};

inline void to_json(nlohmann::json& j, const Body& b) {
  j = {{"x0", b.x0}, {"y0", b.y0}, {"vx", b.vx}, {"vy", b.vy}, {"radius", b.radius}, {"color", b.color}};
  j["stop_time"] = b.stop_time ? nlohmann::json(*b.stop_time) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, Body& b) {
  j.at("x0").get_to(b.x0);
  j.at("y0").get_to(b.y0);
  j.at("vx").get_to(b.vx);
  j.at("vy").get_to(b.vy);
  j.at("radius").get_to(b.radius);
  j.at("color").get_to(b.color);
  if (!j.at("stop_time").is_null()) b.stop_time = j.at("stop_time").get<double>();
}

/// Direction class of a velocity: the sign of the dominant component, or stationary.
inline ingest::Direction direction_of(double vx, double vy) {
  if (vx == 0.0 && vy == 0.0) return ingest::Direction::stationary;
  if (std::abs(vx) > std::abs(vy)) return vx > 0 ? ingest::Direction::right : ingest::Direction::left;
  return vy < 0 ? ingest::Direction::forward : ingest::Direction::backward;
}

/// Unit velocity for a direction class (forward = up the screen).
inline std::array<double, 2> unit_velocity(ingest::Direction d) {
  switch (d) {
    case ingest::Direction::forward: return {0, -1};
    case ingest::Direction::backward: return {0, 1};
    case ingest::Direction::left: return {-1, 0};
    case ingest::Direction::right: return {1, 0};
    default: return {0, 0};
  }
}

struct Scenario {
  std::string video_id;
  ScenarioKind kind = ScenarioKind::moving_object_direction;
  double duration = 3.0;   // clip seconds
  double lead_in = 0.5;    // extra raw seconds before and after the clip
  int render_width = 854;
  int render_height = 480;
  double render_fps = 24.0;
  Body cyclist;
  Body object;
  std::optional<double> collision_time;  // clip seconds
  std::uint64_t texture_seed = 0;

  /// 8-bit RGB colour of scene point (x, y) at clip time t.
  std::array<std::uint8_t, 3> color(double x, double y, double t) const {
    for (const Body* b : {&object, &cyclist}) {
      const auto p = b->position(t);
      const double dx = x - p[0], dy = y - p[1];
      if (dx * dx + dy * dy <= b->radius * b->radius) return b->color;
    }
    const int cell = (static_cast<int>(std::floor(x * 10.0)) + static_cast<int>(std::floor(y * 10.0)) +
                      static_cast<int>(texture_seed % 2)) & 1;
    const double gx = std::clamp(x / kSceneWidth, 0.0, 1.0), gy = std::clamp(y, 0.0, 1.0);
    return {static_cast<std::uint8_t>(70 + 30 * cell), static_cast<std::uint8_t>(30 + std::lround(170 * gx)),
            static_cast<std::uint8_t>(40 + std::lround(160 * gy))};
  }

  /// Point-sampled frame of `height` rows at clip time t, pixel rows mapped to scene height 1.
  videoproc::Frame render(int height, int width, double t) const {
    videoproc::Frame f(height, width);
    const double unit = 1.0 / height;
    for (int py = 0; py < height; ++py)
      for (int px = 0; px < width; ++px) {
        const auto c = color((px + 0.5) * unit, (py + 0.5) * unit, t);
        std::copy(c.begin(), c.end(), f.px(py, px));
      }
    return f;
  }

  int raw_frame_count() const { return static_cast<int>(std::lround((duration + 2 * lead_in) * render_fps)); }
  double raw_time(int frame) const { return frame / render_fps - lead_in; }
  bool operator==(const Scenario&) const = default;
};

inline void to_json(nlohmann::json& j, const Scenario& s) {
  j = {{"video_id", s.video_id},         {"kind", s.kind},
       {"duration", s.duration},         {"lead_in", s.lead_in},
       {"render_width", s.render_width}, {"render_height", s.render_height},
       {"render_fps", s.render_fps},     {"cyclist", s.cyclist},
       {"object", s.object},             {"texture_seed", s.texture_seed}};
  j["collision_time"] = s.collision_time ? nlohmann::json(*s.collision_time) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, Scenario& s) {
  j.at("video_id").get_to(s.video_id);
  j.at("kind").get_to(s.kind);
  j.at("duration").get_to(s.duration);
  j.at("lead_in").get_to(s.lead_in);
  j.at("render_width").get_to(s.render_width);
  j.at("render_height").get_to(s.render_height);
  j.at("render_fps").get_to(s.render_fps);
  j.at("cyclist").get_to(s.cyclist);
  j.at("object").get_to(s.object);
  j.at("texture_seed").get_to(s.texture_seed);
  if (!j.at("collision_time").is_null()) s.collision_time = j.at("collision_time").get<double>();
}

/// Earliest time >= 0 at which the two discs touch, solving |dp + dv t| = ra + rb while both
/// move freely; nullopt if they never do.
inline std::optional<double> first_contact(const Body& a, const Body& b) {
  const double px = b.x0 - a.x0, py = b.y0 - a.y0, wx = b.vx - a.vx, wy = b.vy - a.vy;
  const double r = a.radius + b.radius;
  const double qa = wx * wx + wy * wy, qb = 2 * (px * wx + py * wy), qc = px * px + py * py - r * r;
  if (qc <= 0) return 0.0;
  if (qa == 0) return std::nullopt;
  const double disc = qb * qb - 4 * qa * qc;
  if (disc < 0) return std::nullopt;
  const double t = (-qb - std::sqrt(disc)) / (2 * qa);
  if (t < 0) return std::nullopt;
  return t;
}

struct ScenarioParams {
  double min_duration = 3.0;
  double max_duration = 5.0;
  double min_speed = 0.12;  // scene units per second
  double max_speed = 0.2;
  double cyclist_radius = 0.09;
  double object_radius = 0.07;
};

inline const std::array<std::uint8_t, 3> kCyclistColor{255, 255, 255};
inline const std::array<std::uint8_t, 3> kObjectColor{250, 40, 40};

/// Draws motion parameters. Paths stay inside a centred 700/720 crop. `contact_time` fixes the closest-approach time of collision and
/// near-miss scenarios (otherwise drawn, rounded to whole canonical frames).
inline Scenario make_scenario(const std::string& id, ScenarioKind kind, ingest::Direction cyclist_dir,
                              ingest::Direction object_dir, Rng& rng, const ScenarioParams& p = {},
                              std::optional<double> contact_time = std::nullopt) {
  Scenario s;
  s.video_id = id;
  s.kind = kind;
  s.duration = std::round(uniform(rng, p.min_duration, p.max_duration) * 2.0) / 2.0;
  s.texture_seed = rng();
  s.cyclist.radius = p.cyclist_radius;
  s.cyclist.color = kCyclistColor;
  s.object.radius = p.object_radius;
  s.object.color = kObjectColor;
  const double cx = kSceneWidth / 2, cy = 0.5;
  if (kind == ScenarioKind::stationary) cyclist_dir = ingest::Direction::stationary;

  auto place_moving = [&](Body& b, ingest::Direction d, double centre_x, double centre_y) {
    const double speed = d == ingest::Direction::stationary ? 0.0 : uniform(rng, p.min_speed, p.max_speed);
    const auto u = unit_velocity(d);
    b.vx = u[0] * speed;
    b.vy = u[1] * speed;
    const double mid = s.duration / 2;
    b.x0 = centre_x + uniform(rng, -0.05, 0.05) - b.vx * mid;
    b.y0 = centre_y + uniform(rng, -0.05, 0.05) - b.vy * mid;
  };

  if (kind == ScenarioKind::moving_object_direction || kind == ScenarioKind::stationary) {
    place_moving(s.cyclist, cyclist_dir, cx, cy);
    place_moving(s.object, object_dir, cx + (rng() % 2 ? 0.45 : -0.45), cy + uniform(rng, -0.25, 0.25));
    return s;
  }

  // Approach along the relative velocity: contact at tc, or a pass at 1.5x the contact
  // distance for a near miss. Each body covers 0.15 to 0.3 scene units before tc.
  if (cyclist_dir == ingest::Direction::stationary && object_dir == ingest::Direction::stationary)
    object_dir = ingest::Direction::left;
  const double drawn = std::round(uniform(rng, 1.5, s.duration - 0.3) * 30.0) / 30.0;
  const double tc = contact_time.value_or(drawn);
  if (tc <= 0 || tc > s.duration) throw std::invalid_argument("contact time outside the clip");
  const auto uc = unit_velocity(cyclist_dir), uo = unit_velocity(object_dir);
  double sc = uniform(rng, 0.15, 0.3) / tc, so = uniform(rng, 0.15, 0.3) / tc;
  double wx = uc[0] * sc - uo[0] * so, wy = uc[1] * sc - uo[1] * so;
  if (std::hypot(wx, wy) < 1e-9) {
    so = 0.0;
    wx = uc[0] * sc;
    wy = uc[1] * sc;
  }
  const double wn = std::hypot(wx, wy), nx = wx / wn, ny = wy / wn;
  const double r = s.cyclist.radius + s.object.radius;
  const double contact_x = cx + uniform(rng, -0.05, 0.05), contact_y = cy + uniform(rng, -0.05, 0.05);
  double ox = contact_x + nx * s.object.radius, oy = contact_y + ny * s.object.radius;
  double qx = contact_x - nx * s.cyclist.radius, qy = contact_y - ny * s.cyclist.radius;
  if (kind == ScenarioKind::near_miss) {
    ox += -ny * 1.5 * r;
    oy += nx * 1.5 * r;
  }
  s.cyclist.vx = uc[0] * sc;
  s.cyclist.vy = uc[1] * sc;
  s.object.vx = uo[0] * so;
  s.object.vy = uo[1] * so;
  s.cyclist.x0 = qx - s.cyclist.vx * tc;
  s.cyclist.y0 = qy - s.cyclist.vy * tc;
  s.object.x0 = ox - s.object.vx * tc;
  s.object.y0 = oy - s.object.vy * tc;
  if (kind == ScenarioKind::two_body_collision) {
    s.collision_time = tc;
    s.cyclist.stop_time = tc;
    s.object.stop_time = tc;
  }
  return s;
}

/// Cyclist bounding box in canonical 1280x720 pixels at clip time 0, clipped to the frame.
inline ingest::BBox first_frame_bbox(const Scenario& s) {
  const double px = videoproc::kCanonicalHeight;
  const auto p = s.cyclist.position(0.0);
  const double x0 = std::clamp((p[0] - s.cyclist.radius) * px, 0.0, 1279.0);
  const double y0 = std::clamp((p[1] - s.cyclist.radius) * px, 0.0, 719.0);
  const double x1 = std::clamp((p[0] + s.cyclist.radius) * px, x0 + 1, 1280.0);
  const double y1 = std::clamp((p[1] + s.cyclist.radius) * px, y0 + 1, 720.0);
  return {std::round(x0), std::round(y0), std::round(x1) - std::round(x0), std::round(y1) - std::round(y0)};
}

/// Ground-truth annotation: motion-derived fields come from the scenario; the remaining fields
/// are drawn from `rng`, with unknown (-1) entries where the scale allows them.
inline ingest::AnnotationRecord ground_truth(const Scenario& s, Rng& rng, const ingest::Vocabulary& vocab) {
  using ingest::kUnknown;
  ingest::AnnotationRecord a;
  a.video_id = s.video_id;
  a.cyclist_direction = static_cast<ingest::Code>(direction_of(s.cyclist.vx, s.cyclist.vy));
  a.object_direction = static_cast<ingest::Code>(direction_of(s.object.vx, s.object.vy));
  a.time_to_collision = s.collision_time;
  const bool interaction = s.kind == ScenarioKind::two_body_collision || s.kind == ScenarioKind::near_miss;
  auto maybe_unknown = [&](int n, double p_unknown) {
    return uniform01(rng) < p_unknown ? kUnknown : static_cast<ingest::Code>(uniform_index(rng, static_cast<std::uint64_t>(n)));
  };
  a.severity = s.kind == ScenarioKind::two_body_collision ? 1 + static_cast<ingest::Code>(uniform_index(rng, 4)) : 0;
  a.right_of_way = interaction ? maybe_unknown(2, 0.15) : kUnknown;
  a.fault = interaction ? maybe_unknown(2, 0.15) : kUnknown;
  a.risk_raw = std::round(uniform01(rng) * 1000.0) / 1000.0;
  a.age = maybe_unknown(3, 0.1);
  a.cyclist_type = maybe_unknown(2, 0.2);
  a.object_type = vocab.object_types[uniform_index(rng, std::min<std::uint64_t>(7, vocab.object_types.size()))];
  a.camera_position = vocab.camera_positions[uniform_index(rng, vocab.camera_positions.size())];
  a.ego_involved = interaction ? static_cast<ingest::Code>(uniform_index(rng, 2)) : 0;
  a.bbox = first_frame_bbox(s);
  return a;
}

inline ingest::VideoManifestEntry manifest_entry(const Scenario& s) {
  return {s.video_id, "synthetic://" + s.video_id, s.lead_in, s.lead_in + s.duration, "synthetic"};
}

struct GeneratedVideo {
  videoproc::Video raw;
  ingest::AnnotationRecord truth;
  ingest::VideoManifestEntry entry;
};

/// Renders each raw frame (clip lead-in included) and hands it to `sink`.
template <class Sink>
void render_raw(const Scenario& s, Sink&& sink) {
  for (int i = 0; i < s.raw_frame_count(); ++i) sink(s.render(s.render_height, s.render_width, s.raw_time(i)));
}

inline GeneratedVideo generate_scenario(const Scenario& s, std::uint64_t seed,
                                        const ingest::Vocabulary& vocab = ingest::Vocabulary::defaults()) {
  GeneratedVideo g;
  g.raw.fps = s.render_fps;
  render_raw(s, [&](videoproc::Frame f) { g.raw.frames.push_back(std::move(f)); });
  Rng rng(derive_seed(seed, 0xA11));
  g.truth = ground_truth(s, rng, vocab);
  g.entry = manifest_entry(s);
  return g;
}

}  // namespace cyclesafe::synth
