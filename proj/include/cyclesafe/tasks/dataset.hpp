#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/core/rng.hpp"
#include "cyclesafe/ingest/types.hpp"
#include "cyclesafe/tasks/split.hpp"
#include "cyclesafe/tasks/task.hpp"
#include "cyclesafe/videoproc/temporal.hpp"

namespace cyclesafe::tasks {

/// One training/evaluation example. `label` is the class index (classification) or seconds
/// (regression). A non-zero `jitter_seed` requests photometric jitter for this entry.
struct LabeledSegment {
  std::string video_id;
  int start_frame = 0;
  double label = 0.0;
  std::uint64_t jitter_seed = 0;

  int cls() const { return static_cast<int>(label); }
  videoproc::SegmentWindow window() const { return {video_id, start_frame, videoproc::kWindowLength}; }
  bool operator==(const LabeledSegment&) const = default;
};

inline void to_json(nlohmann::json& j, const LabeledSegment& s) {
  j = {{"video_id", s.video_id}, {"start_frame", s.start_frame}, {"label", s.label}, {"jitter_seed", s.jitter_seed}};
}
inline void from_json(const nlohmann::json& j, LabeledSegment& s) {
  j.at("video_id").get_to(s.video_id);
  j.at("start_frame").get_to(s.start_frame);
  j.at("label").get_to(s.label);
  s.jitter_seed = j.value("jitter_seed", std::uint64_t{0});
}

struct TaskDataset {
  int task_id = 0;
  std::uint64_t split_seed = 0;
  std::vector<LabeledSegment> train;
  std::vector<LabeledSegment> test;
  std::map<std::string, int> skipped;  // reason -> count
  std::vector<std::string> warnings;

  const TaskSpec& task() const { return task_by_id(task_id); }
  bool operator==(const TaskDataset&) const = default;
};

/// Class histogram (classification) or 1-second bin histogram (regression).
inline std::vector<int> class_counts(const TaskSpec& t, const std::vector<LabeledSegment>& segs) {
  std::vector<int> counts(t.is_regression() ? 0 : t.classes.size());
  for (const auto& s : segs) {
    const auto b = static_cast<std::size_t>(t.is_regression() ? std::floor(s.label) : s.label);
    if (b >= counts.size()) counts.resize(b + 1);
    ++counts[b];
  }
  return counts;
}

inline void to_json(nlohmann::json& j, const TaskDataset& d) {
  const TaskSpec& t = d.task();
  j = {{"task_id", d.task_id},
       {"task", t.name},
       {"target_kind", t.is_regression() ? "regression" : "classification"},
       {"classes", t.classes},
       {"split_seed", d.split_seed},
       {"counts", {{"train", class_counts(t, d.train)}, {"test", class_counts(t, d.test)}}},
       {"skipped", d.skipped},
       {"warnings", d.warnings},
       {"train", d.train},
       {"test", d.test}};
}
inline void from_json(const nlohmann::json& j, TaskDataset& d) {
  j.at("task_id").get_to(d.task_id);
  d.split_seed = j.value("split_seed", std::uint64_t{0});
  j.at("train").get_to(d.train);
  j.at("test").get_to(d.test);
  if (j.contains("skipped")) j.at("skipped").get_to(d.skipped);
  if (j.contains("warnings")) j.at("warnings").get_to(d.warnings);
}

/// Labels every window of every eligible video in the split. `frame_counts` maps video_id to
/// its canonical frame count; eligible videos without an entry are reported as warnings.
inline TaskDataset build_task_dataset(const TaskSpec& task, const SplitManifest& split,
                                      const std::vector<ingest::AnnotationRecord>& annotations,
                                      const std::map<std::string, int>& frame_counts) {
  TaskDataset d;
  d.task_id = task.id;
  d.split_seed = split.seed;
  std::map<std::string, const ingest::AnnotationRecord*> by_id;
  for (const auto& a : annotations) by_id[a.video_id] = &a;

  auto label_videos = [&](const std::vector<std::string>& ids, std::vector<LabeledSegment>& out) {
    for (const auto& id : ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) {
        d.warnings.push_back("no annotation for " + id);
        continue;
      }
      if (!eligible(task, *it->second)) continue;
      auto fc = frame_counts.find(id);
      if (fc == frame_counts.end()) {
        d.warnings.push_back("no canonical clip for " + id);
        continue;
      }
      for (const auto& w : videoproc::segment(id, fc->second)) {
        const DerivedLabel l = derive_segment_label(task, *it->second, w);
        if (l.skip) {
          ++d.skipped[l.reason];
          continue;
        }
        out.push_back({id, w.start_frame, l.value, 0});
      }
    }
  };
  label_videos(split.train_video_ids, d.train);
  label_videos(split.test_video_ids, d.test);
  if (!task.is_regression()) {
    const auto tr = class_counts(task, d.train), te = class_counts(task, d.test);
    for (std::size_t c = 0; c < task.classes.size(); ++c) {
      if (tr[c] == 0) d.warnings.push_back("empty class '" + task.classes[c] + "' in train");
      if (te[c] == 0) d.warnings.push_back("empty class '" + task.classes[c] + "' in test");
    }
  }
  return d;
}

/// Upsamples every 1-second TTC bin to the largest bin by duplication. Duplicates cycle through
/// the bin's segments in order and each carries a fresh non-zero jitter seed.
inline std::vector<LabeledSegment> balance_ttc(const std::vector<LabeledSegment>& train, Rng& rng) {
  std::map<long, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < train.size(); ++i) bins[static_cast<long>(std::floor(train[i].label))].push_back(i);
  std::size_t target = 0;
  for (const auto& [b, members] : bins) target = std::max(target, members.size());
  std::vector<LabeledSegment> out = train;
  for (const auto& [b, members] : bins)
    for (std::size_t k = members.size(); k < target; ++k) {
      LabeledSegment dup = train[members[(k - members.size()) % members.size()]];
      do {
        dup.jitter_seed = rng();
      } while (dup.jitter_seed == 0);
      out.push_back(std::move(dup));
    }
  return out;
}

inline void write_dataset(const std::string& path, const TaskDataset& d) {
  std::ofstream os(path);
  os << nlohmann::json(d).dump(1) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path);
}

inline TaskDataset read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset " + path);
  return nlohmann::json::parse(in).get<TaskDataset>();
}

}  // namespace cyclesafe::tasks
