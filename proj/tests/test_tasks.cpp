#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <set>

#include "cyclesafe/tasks/dataset.hpp"

using namespace cyclesafe;
using namespace cyclesafe::tasks;
using ingest::AnnotationRecord;

namespace {

AnnotationRecord annotation(const std::string& id, std::optional<double> tc) {
  AnnotationRecord a;
  a.video_id = id;
  a.time_to_collision = tc;
  a.object_type = "car";
  a.camera_position = "front_dashcam";
  a.severity = tc ? 2 : 0;
  a.right_of_way = tc ? 1 : ingest::kUnknown;
  a.fault = tc ? 0 : ingest::kUnknown;
  a.age = 1;
  a.risk_raw = 0.6;
  a.bbox = {1, 1, 10, 10};
  return a;
}

// Window whose end time is `end` seconds.
videoproc::SegmentWindow window_ending(double end) {
  return {"v", static_cast<int>(std::lround(end * 30)) - 30, 30};
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back("vid" + std::to_string(i));
  return v;
}

}  // namespace

TEST(TaskSpecs, PoolsAndKinds) {
  for (int id : {1, 7, 8}) EXPECT_EQ(task_by_id(id).pool, Pool::all);
  for (int id : {2, 3, 4, 5, 6, 9}) EXPECT_EQ(task_by_id(id).pool, Pool::collision);
  for (const auto& t : task_specs()) EXPECT_EQ(t.is_regression(), t.id == 4);
  EXPECT_EQ(task_by_name("severity").output_size(), 5);
  EXPECT_EQ(task_by_name("ttc").output_size(), 1);
  EXPECT_EQ(task_by_name("age").classes, (std::vector<std::string>{"young", "adult", "old"}));
  EXPECT_EQ(task_by_name("3").name, "anticipation");
  EXPECT_FALSE(task_by_id(8).allow_flip);
  EXPECT_FALSE(task_by_id(9).allow_flip);
  EXPECT_THROW(task_by_name("nope"), std::invalid_argument);
}

TEST(DeriveLabel, TtcAndAnticipationFixtures) {
  auto a = annotation("v", 4.2);
  auto w = window_ending(3.0);
  EXPECT_DOUBLE_EQ(w.start_time(), 2.0);
  auto ttc = derive_segment_label(task_by_id(4), a, w);
  ASSERT_FALSE(ttc.skip);
  EXPECT_NEAR(ttc.value, 1.2, 1e-12);
  EXPECT_EQ(derive_segment_label(task_by_id(3), a, w).cls, 0);
  a.time_to_collision = 3.8;
  EXPECT_EQ(derive_segment_label(task_by_id(3), a, w).cls, 1);
}

TEST(DeriveLabel, UnknownFieldsSkip) {
  auto a = annotation("v", 4.2);
  a.fault = ingest::kUnknown;
  a.right_of_way = ingest::kUnknown;
  a.age = ingest::kUnknown;
  auto w = window_ending(1.0);
  EXPECT_TRUE(derive_segment_label(task_by_id(6), a, w).skip);
  EXPECT_TRUE(derive_segment_label(task_by_id(2), a, w).skip);
  EXPECT_TRUE(derive_segment_label(task_by_id(7), a, w).skip);
  EXPECT_FALSE(derive_segment_label(task_by_id(5), a, w).skip);
}

TEST(DeriveLabel, CollisionVisibleIsSkipped) {
  auto a = annotation("v", 2.5);
  EXPECT_TRUE(derive_segment_label(task_by_id(3), a, window_ending(2.5)).skip);
  EXPECT_TRUE(derive_segment_label(task_by_id(4), a, window_ending(3.0)).skip);
  EXPECT_TRUE(derive_segment_label(task_by_id(4), annotation("v", std::nullopt), window_ending(1.0)).skip);
  EXPECT_EQ(derive_segment_label(task_by_id(3), annotation("v", std::nullopt), window_ending(1.0)).cls, 0);
}

TEST(DeriveLabelProperty, AnticipationPartitionsWindows) {
  for (int tcf = 31; tcf < 400; tcf += 7) {
    const double tc = tcf / 30.0;
    auto a = annotation("v", tc);
    for (const auto& w : videoproc::segment("v", 420)) {
      const auto l = derive_segment_label(task_by_id(3), a, w);
      const double end = w.end_time();
      const bool pos = end < tc && tc <= end + 1.0;
      const bool neg = tc > end + 1.0;
      const bool skip = end >= tc;
      EXPECT_EQ(pos + neg + skip, 1);
      EXPECT_EQ(l.skip, skip);
      if (!l.skip) {
        EXPECT_EQ(l.cls, pos ? 1 : 0);
      }
      const auto t = derive_segment_label(task_by_id(4), a, w);
      if (!t.skip) {
        EXPECT_GT(t.value, 0.0);
        EXPECT_LE(std::abs(t.value - (tc - end)), 1.0 / 30.0);
      }
    }
  }
}

TEST(Risk, BoundarySweep) {
  for (int i = 0; i <= 1000; ++i) {
    const double r = i / 1000.0;
    const int expect = r < 0.25 ? 0 : r < 0.5 ? 1 : r < 0.75 ? 2 : 3;
    EXPECT_EQ(ingest::quantize_risk(r), expect) << r;
  }
  EXPECT_EQ(ingest::quantize_risk(0.5), 2);
}

TEST(Split, ThreeThousandVideos) {
  auto s = make_split(ids(3000), 0.7, 7);
  EXPECT_EQ(s.train_video_ids.size(), 2100u);
  EXPECT_EQ(s.test_video_ids.size(), 900u);
  auto c = make_split(ids(1000), 0.7, 7);
  EXPECT_EQ(c.train_video_ids.size(), 700u);
  EXPECT_EQ(c.test_video_ids.size(), 300u);
}

TEST(Split, SameSeedSameHashDifferentSeedDiffers) {
  auto a = make_split(ids(50), 0.7, 11), b = make_split(ids(50), 0.7, 11), c = make_split(ids(50), 0.7, 12);
  EXPECT_EQ(a, b);
  EXPECT_EQ(split_hash(a), split_hash(b));
  EXPECT_NE(split_hash(a), split_hash(c));
  auto shuffled = ids(50);
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_EQ(make_split(shuffled, 0.7, 11), a);
}

TEST(SplitProperty, DisjointAndCovering) {
  for (int n = 2; n < 60; n += 3) {
    auto s = make_split(ids(n), 0.7, static_cast<std::uint64_t>(n));
    std::set<std::string> tr(s.train_video_ids.begin(), s.train_video_ids.end());
    for (const auto& t : s.test_video_ids) EXPECT_FALSE(tr.count(t));
    EXPECT_EQ(static_cast<int>(tr.size() + s.test_video_ids.size()), n);
    EXPECT_EQ(static_cast<long>(tr.size()), std::lround(0.7 * n));
  }
}

TEST(Split, PooledSplitKeepsRatioPerPool) {
  std::vector<AnnotationRecord> ann;
  for (int i = 0; i < 3000; ++i) ann.push_back(annotation("v" + std::to_string(i), i < 1000 ? std::optional(3.0) : std::nullopt));
  auto s = make_pooled_split(ann, 0.7, 3);
  EXPECT_EQ(s.train_video_ids.size(), 2100u);
  int collision_train = 0;
  for (int i = 0; i < 1000; ++i) collision_train += s.is_train("v" + std::to_string(i));
  EXPECT_EQ(collision_train, 700);
}

TEST(Dataset, MatchesBruteForceEnumeration) {
  std::vector<AnnotationRecord> ann;
  std::map<std::string, int> frames;
  for (int i = 0; i < 10; ++i) {
    const std::string id = "v" + std::to_string(i);
    ann.push_back(annotation(id, i % 2 == 0 ? std::optional(1.2 + 0.4 * i) : std::nullopt));
    frames[id] = 60 + 15 * i;
  }
  std::vector<std::string> vids;
  for (int i = 0; i < 10; ++i) vids.push_back("v" + std::to_string(i));
  auto split = make_split(vids, 0.7, 5);
  const TaskSpec& t3 = task_by_id(3);
  auto d = build_task_dataset(t3, split, ann, frames);
  // Oracle: enumerate starts directly and apply the task-3 rule inline.
  auto count = [&](const std::vector<std::string>& vids) {
    std::array<int, 3> c{0, 0, 0};
    for (const auto& id : vids) {
      const auto& a = ann[static_cast<std::size_t>(std::stoi(id.substr(1)))];
      if (!tasks::in_collision_pool(a)) continue;
      for (int s = 0; s + 30 <= frames[id]; s += 15) {
        const double end = (s + 30) / 30.0;
        if (!a.time_to_collision) {
          ++c[0];
        } else if (end >= *a.time_to_collision) {
          ++c[2];
        } else {
          ++c[*a.time_to_collision <= end + 1.0 ? 1 : 0];
        }
      }
    }
    return c;
  };
  auto tr = count(split.train_video_ids), te = count(split.test_video_ids);
  auto ctr = class_counts(t3, d.train), cte = class_counts(t3, d.test);
  EXPECT_EQ(ctr[0], tr[0]);
  EXPECT_EQ(ctr[1], tr[1]);
  EXPECT_EQ(cte[0], te[0]);
  EXPECT_EQ(cte[1], te[1]);
  EXPECT_EQ(d.skipped["collision already visible"], tr[2] + te[2]);
  for (const auto& s : d.train) EXPECT_TRUE(split.is_train(s.video_id));
  for (const auto& s : d.test) EXPECT_TRUE(split.is_test(s.video_id));
  EXPECT_EQ(build_task_dataset(t3, split, ann, frames), d);
}

TEST(Dataset, JsonRoundTrip) {
  std::vector<AnnotationRecord> ann{annotation("a", 3.0), annotation("b", std::nullopt)};
  std::map<std::string, int> frames{{"a", 90}, {"b", 90}};
  auto split = make_split({"a", "b"}, 0.5, 1);
  auto d = build_task_dataset(task_by_id(5), split, ann, frames);
  nlohmann::json j = d;
  EXPECT_EQ(j.get<TaskDataset>(), d);
  EXPECT_EQ(j["counts"]["train"].size(), 5u);
}

TEST(BalanceTtc, UpsamplesToLargestBin) {
  std::vector<LabeledSegment> train;
  for (int i = 0; i < 100; ++i) train.push_back({"a", i, 0.5, 0});
  for (int i = 0; i < 40; ++i) train.push_back({"b", i, 1.5, 0});
  for (int i = 0; i < 10; ++i) train.push_back({"c", i, 2.5, 0});
  Rng rng(3);
  auto out = balance_ttc(train, rng);
  EXPECT_EQ(out.size(), 300u);
  std::set<std::uint64_t> seeds;
  int dups = 0;
  for (const auto& s : out)
    if (s.jitter_seed != 0) {
      ++dups;
      seeds.insert(s.jitter_seed);
    }
  EXPECT_EQ(dups, 150);
  EXPECT_EQ(seeds.size(), 150u);
  TaskSpec t = task_by_id(4);
  EXPECT_EQ(class_counts(t, out), (std::vector<int>{100, 100, 100}));
}

TEST(BalanceTtc, BalancedInputUnchanged) {
  std::vector<LabeledSegment> train{{"a", 0, 0.2, 0}, {"b", 0, 1.2, 0}};
  Rng rng(1);
  EXPECT_EQ(balance_ttc(train, rng), train);
}
