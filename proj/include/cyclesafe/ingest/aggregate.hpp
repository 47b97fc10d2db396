#pragma once

#include <algorithm>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cyclesafe/ingest/types.hpp"

namespace cyclesafe::ingest {

/// Median of ordinal votes with unknown (-1) entries dropped. The result is unknown when at
/// least half the votes are unknown, or when an even-sized remainder has differing central values.
inline Code median_vote(std::span<const Code> votes) {
  std::vector<Code> known;
  for (Code c : votes)
    if (c != kUnknown) known.push_back(c);
  const std::size_t unknown = votes.size() - known.size();
  if (known.empty() || 2 * unknown >= votes.size()) return kUnknown;
  std::sort(known.begin(), known.end());
  const std::size_t n = known.size();
  if (n % 2 == 1) return known[n / 2];
  return known[n / 2 - 1] == known[n / 2] ? known[n / 2] : kUnknown;
}

/// Incremental mean; exact when every sample is identical.
struct RunningMean {
  double value = 0.0;
  int count = 0;
  void add(double x) { value += (x - value) / ++count; }
};

/// Combines the three raters' records for one video: categorical fields take the median
/// ordinal index, continuous fields the mean. time_to_collision is present when a majority of
/// raters marked a collision, and averages the marked values.
inline AnnotationRecord aggregate_labels(std::span<const RawLabelRecord> records, const Vocabulary& vocab) {
  if (records.size() != 3)
    throw ValidationError("aggregate_labels: expected exactly 3 records, got " + std::to_string(records.size()));
  const std::string& id = records[0].video_id;
  for (const auto& r : records)
    if (r.video_id != id) throw ValidationError("aggregate_labels: records belong to different videos");

  auto median_of = [&](auto field) {
    std::vector<Code> v;
    for (const auto& r : records) v.push_back(field(r));
    return median_vote(v);
  };
  auto vocab_median = [&](auto field, const std::vector<std::string>& list, Code (Vocabulary::*lookup)(const std::string&) const) {
    std::vector<Code> v;
    for (const auto& r : records) v.push_back((vocab.*lookup)(field(r)));
    const Code c = median_vote(v);
    if (c == kUnknown) throw ValidationError("aggregate_labels: no majority vocabulary value for " + id);
    return list[static_cast<std::size_t>(c)];
  };

  AnnotationRecord out;
  out.video_id = id;
  out.right_of_way = median_of([](const RawLabelRecord& r) { return r.right_of_way; });
  out.fault = median_of([](const RawLabelRecord& r) { return r.fault; });
  out.severity = median_of([](const RawLabelRecord& r) { return r.severity; });
  out.age = median_of([](const RawLabelRecord& r) { return r.age; });
  out.cyclist_type = median_of([](const RawLabelRecord& r) { return r.cyclist_type; });
  out.cyclist_direction = median_of([](const RawLabelRecord& r) { return r.cyclist_direction; });
  out.object_direction = median_of([](const RawLabelRecord& r) { return r.object_direction; });
  out.ego_involved = median_of([](const RawLabelRecord& r) { return r.ego_involved; });
  out.object_type = vocab_median([](const RawLabelRecord& r) -> const std::string& { return r.object_type; },
                                 vocab.object_types, &Vocabulary::object_code);
  out.camera_position = vocab_median([](const RawLabelRecord& r) -> const std::string& { return r.camera_position; },
                                     vocab.camera_positions, &Vocabulary::camera_code);

  RunningMean risk, bx, by, bw, bh, ttc;
  for (const auto& r : records) {
    risk.add(r.risk_raw);
    bx.add(r.bbox.x);
    by.add(r.bbox.y);
    bw.add(r.bbox.w);
    bh.add(r.bbox.h);
    if (r.time_to_collision) ttc.add(*r.time_to_collision);
  }
  out.risk_raw = risk.value;
  out.bbox = {bx.value, by.value, bw.value, bh.value};
  if (ttc.count >= 2) out.time_to_collision = ttc.value;
  return out;
}

/// Groups raw records by video and aggregates each group, in first-appearance order.
inline std::vector<AnnotationRecord> aggregate_all(const std::vector<RawLabelRecord>& records,
                                                   const Vocabulary& vocab) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<RawLabelRecord>> groups;
  for (const auto& r : records) {
    auto [it, inserted] = groups.try_emplace(r.video_id);
    if (inserted) order.push_back(r.video_id);
    it->second.push_back(r);
  }
  std::vector<AnnotationRecord> out;
  for (const auto& id : order) out.push_back(aggregate_labels(groups[id], vocab));
  return out;
}

}  // namespace cyclesafe::ingest
