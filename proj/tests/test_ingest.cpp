#include <gtest/gtest.h>
#include <unistd.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "cyclesafe/ingest/aggregate.hpp"
#include "cyclesafe/ingest/agreement.hpp"
#include "cyclesafe/ingest/labels.hpp"
#include "cyclesafe/ingest/latin_square.hpp"
#include "cyclesafe/ingest/manifest.hpp"

using namespace cyclesafe;
using namespace cyclesafe::ingest;

namespace {

CsvTable table(const std::string& text) {
  std::istringstream in(text);
  return parse_csv(in);
}

RawLabelRecord valid_record(const std::string& rater = "r1") {
  RawLabelRecord r;
  r.labeller_id = rater;
  r.video_id = "v1";
  r.right_of_way = 1;
  r.time_to_collision = 2.5;
  r.object_type = "car";
  r.fault = 0;
  r.severity = 1;
  r.risk_raw = 0.3;
  r.age = 1;
  r.cyclist_type = 1;
  r.bbox = {100, 100, 200, 50};
  r.cyclist_direction = 0;
  r.object_direction = 2;
  r.camera_position = "front_helmet_camera";
  r.ego_involved = 1;
  return r;
}

std::filesystem::path temp_dir() {
  auto p = std::filesystem::temp_directory_path() / ("cyclesafe_ingest_" + std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Manifest, AcceptsValidRow) {
  auto m = parse_manifest(table(
      "video_id,source_url,start_time,end_time,source_platform\nv1,https://x/y,0.0,5.2,youtube\n"));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_DOUBLE_EQ(m[0].duration(), 5.2);
}

TEST(Manifest, RejectsNegativeDuration) {
  try {
    parse_manifest(table("video_id,source_url,start_time,end_time,source_platform\nv1,u,10.0,9.0,youtube\n"));
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("negative duration"), std::string::npos);
  }
}

TEST(Manifest, DurationBoundsAreInclusive) {
  const std::string h = "video_id,source_url,start_time,end_time,source_platform\n";
  EXPECT_NO_THROW(parse_manifest(table(h + "a,u,0,1.5,youtube\nb,u,0,21.0,reddit\n")));
  EXPECT_THROW(parse_manifest(table(h + "a,u,0,1.4,youtube\n")), ValidationError);
  EXPECT_THROW(parse_manifest(table(h + "a,u,0,21.1,youtube\n")), ValidationError);
}

TEST(Manifest, RejectsDuplicatesAndUnknownPlatform) {
  const std::string h = "video_id,source_url,start_time,end_time,source_platform\n";
  EXPECT_THROW(parse_manifest(table(h + "a,u,0,2,youtube\na,u,0,3,youtube\n")), ValidationError);
  EXPECT_THROW(parse_manifest(table(h + "a,u,0,2,myspace\n")), ValidationError);
  EXPECT_THROW(parse_manifest(table("id,url\n")), ValidationError);
}

TEST(Manifest, RoundTrip) {
  const auto dir = temp_dir();
  std::vector<VideoManifestEntry> entries{{"a", "https://q/1,2", 0.1, 3.7, "local"}, {"b", "u", 1, 20, "synthetic"}};
  write_manifest((dir / "m.csv").string(), entries);
  EXPECT_EQ(parse_manifest((dir / "m.csv").string()), entries);
}

TEST(Validate, AllValidRecordHasNoViolations) {
  EXPECT_TRUE(validate_annotation(valid_record(), Vocabulary::defaults()).empty());
}

TEST(Validate, BboxBeyondFrameWidth) {
  auto r = valid_record();
  r.bbox = {1200, 100, 200, 50};
  auto v = validate_annotation(r, Vocabulary::defaults());
  ASSERT_EQ(v.size(), 1u);
  EXPECT_EQ(v[0], "bbox exceeds frame width: 1200+200 > 1280");
}

TEST(Validate, UnknownObjectType) {
  auto r = valid_record();
  r.object_type = "skateboard";
  const auto vocab = Vocabulary::defaults();
  ASSERT_EQ(vocab.object_types.size(), 17u);
  EXPECT_EQ(validate_annotation(r, vocab), std::vector<std::string>{"unknown object_type"});
}

TEST(Validate, RangesAndUnknownPolicy) {
  auto r = valid_record();
  r.risk_raw = 1.2;
  r.severity = kUnknown;
  r.time_to_collision = 9.0;
  auto v = validate_annotation(r, Vocabulary::defaults(), 5.0);
  EXPECT_EQ(v.size(), 3u);
}

TEST(Vocabulary, ConfigFileMatchesDefaults) {
  auto v = Vocabulary::load(std::string(CYCLESAFE_SOURCE_DIR) + "/config/vocabulary.json");
  auto d = Vocabulary::defaults();
  EXPECT_EQ(v.object_types, d.object_types);
  EXPECT_EQ(v.camera_positions, d.camera_positions);
}

TEST(Risk, QuantizeEdges) {
  EXPECT_EQ(quantize_risk(0.0), 0);
  EXPECT_EQ(quantize_risk(0.2499), 0);
  EXPECT_EQ(quantize_risk(0.25), 1);
  EXPECT_EQ(quantize_risk(0.5), 2);
  EXPECT_EQ(quantize_risk(0.75), 3);
  EXPECT_EQ(quantize_risk(1.0), 3);
  EXPECT_THROW(quantize_risk(1.01), ValidationError);
}

TEST(Labels, RawRoundTrip) {
  const auto dir = temp_dir();
  auto a = valid_record("r1");
  auto b = valid_record("r2");
  b.time_to_collision.reset();
  b.fault = kUnknown;
  b.object_type = "road_barrier";
  write_raw_labels((dir / "raw.csv").string(), {a, b});
  auto back = read_raw_labels((dir / "raw.csv").string());
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(static_cast<AnnotationFields>(back[0]), static_cast<AnnotationFields>(a));
  EXPECT_EQ(static_cast<AnnotationFields>(back[1]), static_cast<AnnotationFields>(b));
  EXPECT_EQ(back[1].labeller_id, "r2");
}

TEST(Labels, AggregatedRoundTripAndCollisionFlag) {
  const auto dir = temp_dir();
  AnnotationRecord a;
  static_cast<AnnotationFields&>(a) = valid_record();
  write_annotations((dir / "agg.csv").string(), {a});
  auto back = read_annotations((dir / "agg.csv").string());
  ASSERT_EQ(back.size(), 1u);
  EXPECT_TRUE(back[0].has_collision());
  EXPECT_EQ(static_cast<AnnotationFields>(back[0]), static_cast<AnnotationFields>(a));
}

TEST(Aggregate, SeverityMedian) {
  std::vector<RawLabelRecord> r{valid_record("a"), valid_record("b"), valid_record("c")};
  r[0].severity = 1;
  r[1].severity = 2;
  r[2].severity = 2;
  EXPECT_EQ(aggregate_labels(r, Vocabulary::defaults()).severity, 2);
}

TEST(Aggregate, RiskMean) {
  std::vector<RawLabelRecord> r{valid_record("a"), valid_record("b"), valid_record("c")};
  r[0].risk_raw = 0.4;
  r[1].risk_raw = 0.5;
  r[2].risk_raw = 0.9;
  EXPECT_NEAR(aggregate_labels(r, Vocabulary::defaults()).risk_raw, 0.6, 1e-12);
}

TEST(Aggregate, TieAfterDroppingUnknownIsUnknown) {
  std::vector<RawLabelRecord> r{valid_record("a"), valid_record("b"), valid_record("c")};
  r[0].fault = 1;
  r[1].fault = kUnknown;
  r[2].fault = 0;
  EXPECT_EQ(aggregate_labels(r, Vocabulary::defaults()).fault, kUnknown);
}

// Brute-force oracle: enumerate every 3-vote multiset over {-1, 0, 1, 2} and compare against a
// direct statement of the rule.
TEST(Aggregate, MedianVoteMatchesRuleOverAllMultisets) {
  for (int a = -1; a <= 2; ++a)
    for (int b = -1; b <= 2; ++b)
      for (int c = -1; c <= 2; ++c) {
        std::vector<Code> v{a, b, c};
        int unknown = static_cast<int>(std::count(v.begin(), v.end(), -1));
        std::vector<Code> k;
        for (int x : v)
          if (x != -1) k.push_back(x);
        std::sort(k.begin(), k.end());
        Code expect;
        if (unknown >= 2) expect = -1;
        else if (k.size() == 3) expect = k[1];
        else expect = k[0] == k[1] ? k[0] : -1;
        EXPECT_EQ(median_vote(v), expect) << a << b << c;
      }
}

TEST(Aggregate, TimeToCollisionMajority) {
  std::vector<RawLabelRecord> r{valid_record("a"), valid_record("b"), valid_record("c")};
  r[0].time_to_collision = 2.0;
  r[1].time_to_collision = 3.0;
  r[2].time_to_collision.reset();
  auto out = aggregate_labels(r, Vocabulary::defaults());
  ASSERT_TRUE(out.has_collision());
  EXPECT_DOUBLE_EQ(*out.time_to_collision, 2.5);
  r[1].time_to_collision.reset();
  EXPECT_FALSE(aggregate_labels(r, Vocabulary::defaults()).has_collision());
}

TEST(Aggregate, WrongCountIsError) {
  std::vector<RawLabelRecord> r{valid_record("a"), valid_record("b")};
  EXPECT_THROW(aggregate_labels(r, Vocabulary::defaults()), ValidationError);
  r.push_back(valid_record("c"));
  r.push_back(valid_record("d"));
  EXPECT_THROW(aggregate_labels(r, Vocabulary::defaults()), ValidationError);
}

TEST(AggregateProperty, IdempotentOnIdenticalRecords) {
  std::mt19937_64 rng(7);
  const auto vocab = Vocabulary::defaults();
  for (int trial = 0; trial < 200; ++trial) {
    auto r = valid_record();
    r.severity = static_cast<Code>(rng() % 5);
    r.age = static_cast<Code>(rng() % 4) - 1;
    r.fault = static_cast<Code>(rng() % 3) - 1;
    r.risk_raw = static_cast<double>(rng() % 1000) / 999.0;
    r.object_type = vocab.object_types[rng() % vocab.object_types.size()];
    r.bbox = {static_cast<double>(rng() % 600), static_cast<double>(rng() % 300), 10.5, 7.25};
    std::vector<RawLabelRecord> three{r, r, r};
    auto out = aggregate_labels(three, vocab);
    EXPECT_EQ(static_cast<AnnotationFields>(out), static_cast<AnnotationFields>(r));
  }
}

TEST(AggregateProperty, PermutationInvariant) {
  std::mt19937_64 rng(11);
  const auto vocab = Vocabulary::defaults();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RawLabelRecord> r;
    for (int i = 0; i < 3; ++i) {
      auto x = valid_record("r" + std::to_string(i));
      x.severity = static_cast<Code>(rng() % 5);
      x.fault = static_cast<Code>(rng() % 3) - 1;
      x.risk_raw = static_cast<double>(rng() % 100) / 99.0;
      x.object_type = vocab.object_types[rng() % 5];
      if (rng() % 2) x.time_to_collision.reset();
      else x.time_to_collision = static_cast<double>(rng() % 50) / 10.0;
      r.push_back(x);
    }
    const auto ref = aggregate_labels(r, vocab);
    std::vector<int> idx{0, 1, 2};
    while (std::next_permutation(idx.begin(), idx.end())) {
      std::vector<RawLabelRecord> p{r[idx[0]], r[idx[1]], r[idx[2]]};
      auto out = aggregate_labels(p, vocab);
      EXPECT_EQ(out.severity, ref.severity);
      EXPECT_EQ(out.fault, ref.fault);
      EXPECT_EQ(out.object_type, ref.object_type);
      EXPECT_NEAR(out.risk_raw, ref.risk_raw, 1e-12);
      EXPECT_EQ(out.has_collision(), ref.has_collision());
      if (out.has_collision()) {
        EXPECT_NEAR(*out.time_to_collision, *ref.time_to_collision, 1e-12);
      }
    }
  }
}

TEST(Kappa, PerfectAgreement) {
  std::vector<std::vector<Code>> items{{0, 0, 0}, {2, 2, 2}, {1, 1, 1}};
  EXPECT_DOUBLE_EQ(randolph_kappa(items, 3, 4), 1.0);
}

TEST(Kappa, HandCountedExample) {
  // Item 1: 3 agreeing pairs (ordered: 6). Item 2 split 2/1: 1 agreeing pair (ordered: 2).
  // P_o = (6 + 2) / (2 * 3 * 2) = 2/3.
  std::vector<std::vector<Code>> items{{1, 1, 1}, {0, 0, 3}};
  const double po = 2.0 / 3.0;
  EXPECT_NEAR(randolph_kappa(items, 3, 4), (po - 0.25) / 0.75, 1e-12);
  EXPECT_NEAR(randolph_kappa(items, 3, 4), 5.0 / 9.0, 1e-12);
}

TEST(Kappa, Errors) {
  EXPECT_THROW(randolph_kappa({{0}}, 1, 3), std::invalid_argument);
  EXPECT_THROW(randolph_kappa({{0, 0}}, 2, 1), std::invalid_argument);
}

TEST(Kappa, AbstainingItemsAreDropped) {
  int used = 0;
  EXPECT_DOUBLE_EQ(randolph_kappa({{0, 0, 0}, {0, kUnknown, 1}}, 3, 2, &used), 1.0);
  EXPECT_EQ(used, 1);
}

// Oracle: mean over items of the fraction of ordered rater pairs that agree, by direct pair loop.
TEST(KappaProperty, MatchesPairLoopAndCategoryRelabelling) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 4);
    const int k = 2 + static_cast<int>(rng() % 5);
    const int N = 1 + static_cast<int>(rng() % 20);
    std::vector<std::vector<Code>> items(N, std::vector<Code>(n));
    for (auto& it : items)
      for (auto& c : it) c = static_cast<Code>(rng() % k);
    double agree = 0;
    for (const auto& it : items) {
      int pairs = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          if (i != j && it[i] == it[j]) ++pairs;
      agree += static_cast<double>(pairs) / (n * (n - 1));
    }
    const double po = agree / N;
    const double expect = (po - 1.0 / k) / (1.0 - 1.0 / k);
    const double kappa = randolph_kappa(items, n, k);
    EXPECT_NEAR(kappa, expect, 1e-12);
    EXPECT_GE(kappa, -1.0 / (k - 1) - 1e-12);
    EXPECT_LE(kappa, 1.0 + 1e-12);

    std::vector<Code> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    auto relabelled = items;
    for (auto& it : relabelled)
      for (auto& c : it) c = perm[c];
    EXPECT_NEAR(randolph_kappa(relabelled, n, k), kappa, 1e-12);
  }
}

TEST(KappaProperty, OneOnlyWhenAllAgree) {
  EXPECT_LT(randolph_kappa({{0, 0, 0}, {0, 0, 1}}, 3, 2), 1.0);
}

TEST(Agreement, FieldAgreementOverLabellerFiles) {
  std::vector<std::vector<RawLabelRecord>> files(3);
  for (int rater = 0; rater < 3; ++rater)
    for (int v = 0; v < 4; ++v) {
      auto r = valid_record("r" + std::to_string(rater));
      r.video_id = "v" + std::to_string(v);
      r.severity = v % 5;
      if (v == 3 && rater == 2) r.severity = 0;
      files[rater].push_back(r);
    }
  auto res = field_agreement(files, Vocabulary::defaults());
  auto sev = std::find_if(res.begin(), res.end(), [](auto& a) { return a.field_name == "severity"; });
  ASSERT_NE(sev, res.end());
  EXPECT_EQ(sev->n_items, 4);
  const double po = (3.0 * 6.0 + 2.0) / (4.0 * 6.0);
  EXPECT_NEAR(sev->kappa, (po - 0.2) / 0.8, 1e-12);
}

TEST(LatinSquare, ThreeLabellers) {
  auto a = latin_square_assignment(3, {"A", "B", "C"});
  std::vector<std::vector<std::string>> expect{{"A", "B", "C"}, {"B", "C", "A"}, {"C", "A", "B"}};
  EXPECT_EQ(a, expect);
}

TEST(LatinSquare, TwoLabellers) {
  std::vector<std::vector<std::string>> expect{{"A", "B"}, {"B", "A"}};
  EXPECT_EQ(latin_square_assignment(2, {"A", "B"}), expect);
}

TEST(LatinSquare, IndivisibleIsError) {
  try {
    latin_square_assignment(3, {"A", "B", "C", "D"});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_STREQ(e.what(), "batch count not a multiple of labeller count");
  }
}

TEST(LatinSquareProperty, RowsAndColumnsArePermutations) {
  for (int n = 2; n <= 7; ++n)
    for (int squares = 1; squares <= 3; ++squares) {
      std::vector<std::string> batches;
      for (int i = 0; i < n * squares; ++i) batches.push_back("b" + std::to_string(i));
      auto a = latin_square_assignment(n, batches);
      for (int s = 0; s < squares; ++s) {
        std::set<std::string> square(batches.begin() + s * n, batches.begin() + (s + 1) * n);
        for (int i = 0; i < n; ++i) {
          std::set<std::string> row(a[i].begin() + s * n, a[i].begin() + (s + 1) * n);
          EXPECT_EQ(row, square);
        }
        for (int r = 0; r < n; ++r) {
          std::set<std::string> col;
          for (int i = 0; i < n; ++i) col.insert(a[i][s * n + r]);
          EXPECT_EQ(col, square);
        }
      }
    }
}
