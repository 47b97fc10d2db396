#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "cyclesafe/ingest/types.hpp"
#include "cyclesafe/videoproc/temporal.hpp"

namespace cyclesafe::tasks {

enum class TargetKind { classification, regression };
enum class Pool { all, collision };

struct TaskSpec {
  int id = 0;
  std::string name;          // command-line name
  std::string title;
  TargetKind target_kind = TargetKind::classification;
  std::vector<std::string> classes;
  Pool pool = Pool::all;
  std::vector<std::string> metrics;
  double horizon = 0.0;      // anticipation look-ahead in seconds (task 3 only)
  bool allow_flip = true;

  bool is_regression() const { return target_kind == TargetKind::regression; }
  int output_size() const { return is_regression() ? 1 : static_cast<int>(classes.size()); }
};

namespace detail {
inline std::vector<std::string> names(const ingest::Scale& s) { return {s.names.begin(), s.names.end()}; }
}  // namespace detail

/// The nine tasks, indexed by id - 1.
inline const std::vector<TaskSpec>& task_specs() {
  using ingest::kAge, ingest::kCyclistDirection, ingest::kObjectDirection, ingest::kRisk, ingest::kSeverity;
  const std::vector<std::string> cls{"accuracy", "macro_f1"};
  static const std::vector<TaskSpec> specs{
      {1, "risk", "cyclist behaviour risk index", TargetKind::classification, detail::names(kRisk), Pool::all, cls},
      {2, "row", "right-of-way", TargetKind::classification, {"no", "yes"}, Pool::collision, cls},
      {3, "anticipation", "collision anticipation", TargetKind::classification, {"negative", "positive"},
       Pool::collision, cls, 1.0},
      {4, "ttc", "time-to-collision", TargetKind::regression, {}, Pool::collision, {"mse"}},
      {5, "severity", "severity", TargetKind::classification, detail::names(kSeverity), Pool::collision, cls},
      {6, "fault", "fault", TargetKind::classification, {"no", "yes"}, Pool::collision, cls},
      {7, "age", "cyclist age", TargetKind::classification, detail::names(kAge), Pool::all, cls},
      {8, "direction", "cyclist direction", TargetKind::classification, detail::names(kCyclistDirection), Pool::all,
       cls, 0.0, false},
      {9, "object-direction", "object direction", TargetKind::classification, detail::names(kObjectDirection),
       Pool::collision, cls, 0.0, false},
  };
  return specs;
}

inline const TaskSpec& task_by_id(int id) {
  if (id < 1 || id > 9) throw std::out_of_range("task id must be 1..9, got " + std::to_string(id));
  return task_specs()[static_cast<std::size_t>(id - 1)];
}

/// Accepts a command-line name ("ttc") or a numeric id ("4").
inline const TaskSpec& task_by_name(const std::string& name) {
  for (const auto& t : task_specs())
    if (t.name == name || std::to_string(t.id) == name) return t;
  throw std::invalid_argument("unknown task '" + name + "'");
}

/// Membership in the collision / near-miss pool: a collision time, a non-safe severity, or any
/// interaction-only field (right-of-way, fault) that was answered.
inline bool in_collision_pool(const ingest::AnnotationRecord& a) {
  return a.has_collision() || (a.severity != ingest::kUnknown && a.severity > 0) || a.right_of_way != ingest::kUnknown ||
         a.fault != ingest::kUnknown;
}

inline bool eligible(const TaskSpec& t, const ingest::AnnotationRecord& a) {
  return t.pool == Pool::all || in_collision_pool(a);
}

/// A derived label: either SKIP with a reason, a class index, or a regression target.
struct DerivedLabel {
  bool skip = false;
  std::string reason;
  int cls = -1;
  double value = 0.0;

  static DerivedLabel skipped(std::string why) { return {true, std::move(why), -1, 0.0}; }
  static DerivedLabel of_class(int c) { return {false, {}, c, static_cast<double>(c)}; }
  static DerivedLabel of_value(double v) { return {false, {}, -1, v}; }
};

inline DerivedLabel derive_segment_label(const TaskSpec& task, const ingest::AnnotationRecord& a,
                                         const videoproc::SegmentWindow& w) {
  using ingest::kUnknown;
  auto categorical = [](ingest::Code c, const char* field) {
    return c == kUnknown ? DerivedLabel::skipped(std::string(field) + " unknown") : DerivedLabel::of_class(c);
  };
  const double end = w.end_time();
  switch (task.id) {
    case 1:
      return DerivedLabel::of_class(ingest::quantize_risk(a.risk_raw));
    case 2:
      return categorical(a.right_of_way, "right_of_way");
    case 3: {
      if (!a.has_collision()) return DerivedLabel::of_class(0);
      const double tc = *a.time_to_collision;
      if (end >= tc) return DerivedLabel::skipped("collision already visible");
      return DerivedLabel::of_class(tc <= end + task.horizon ? 1 : 0);
    }
    case 4: {
      if (!a.has_collision()) return DerivedLabel::skipped("no collision");
      const double ttc = *a.time_to_collision - end;
      if (ttc <= 0) return DerivedLabel::skipped("collision already visible");
      return DerivedLabel::of_value(ttc);
    }
    case 5:
      return categorical(a.severity, "severity");
    case 6:
      return categorical(a.fault, "fault");
    case 7:
      return categorical(a.age, "age");
    case 8:
      return categorical(a.cyclist_direction, "cyclist_direction");
    case 9:
      return categorical(a.object_direction, "object_direction");
    default:
      throw std::out_of_range("unknown task id");
  }
}

}  // namespace cyclesafe::tasks
