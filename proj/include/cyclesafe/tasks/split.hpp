#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/core/rng.hpp"
#include "cyclesafe/ingest/types.hpp"
#include "cyclesafe/tasks/task.hpp"

namespace cyclesafe::tasks {

struct SplitManifest {
  std::uint64_t seed = 0;
  double ratio = 0.7;
  std::vector<std::string> train_video_ids;
  std::vector<std::string> test_video_ids;

  bool is_train(const std::string& id) const {
    return std::binary_search(train_video_ids.begin(), train_video_ids.end(), id);
  }
  bool is_test(const std::string& id) const {
    return std::binary_search(test_video_ids.begin(), test_video_ids.end(), id);
  }
  bool operator==(const SplitManifest&) const = default;
};

inline void to_json(nlohmann::json& j, const SplitManifest& s) {
  j = {{"seed", s.seed}, {"ratio", s.ratio}, {"train_video_ids", s.train_video_ids}, {"test_video_ids", s.test_video_ids}};
}
inline void from_json(const nlohmann::json& j, SplitManifest& s) {
  j.at("seed").get_to(s.seed);
  j.at("ratio").get_to(s.ratio);
  j.at("train_video_ids").get_to(s.train_video_ids);
  j.at("test_video_ids").get_to(s.test_video_ids);
}

/// 64-bit FNV-1a over the canonical JSON serialization.
inline std::uint64_t split_hash(const SplitManifest& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : nlohmann::json(s).dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {
inline void split_into(std::vector<std::string> ids, double ratio, Rng& rng, SplitManifest& out) {
  std::sort(ids.begin(), ids.end());
  shuffle(ids, rng);
  const auto n_train = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(ids.size())));
  out.train_video_ids.insert(out.train_video_ids.end(), ids.begin(), ids.begin() + static_cast<long>(n_train));
  out.test_video_ids.insert(out.test_video_ids.end(), ids.begin() + static_cast<long>(n_train), ids.end());
}
inline void finish(SplitManifest& s) {
  std::sort(s.train_video_ids.begin(), s.train_video_ids.end());
  std::sort(s.test_video_ids.begin(), s.test_video_ids.end());
}
}  // namespace detail

/// Video-level random split with round(ratio * n) training videos.
inline SplitManifest make_split(const std::vector<std::string>& video_ids, double ratio, std::uint64_t seed) {
  if (video_ids.size() < 2) throw std::invalid_argument("make_split: need at least 2 videos");
  if (!(ratio > 0.0 && ratio < 1.0)) throw std::invalid_argument("make_split: ratio must lie in (0, 1)");
  if (std::set<std::string>(video_ids.begin(), video_ids.end()).size() != video_ids.size())
    throw std::invalid_argument("make_split: duplicate video ids");
  SplitManifest s{seed, ratio, {}, {}};
  Rng rng(derive_seed(seed, 0));
  detail::split_into(video_ids, ratio, rng, s);
  detail::finish(s);
  return s;
}

/// Splits the collision pool and the remaining videos separately so every task's eligible pool
/// keeps the ratio.
inline SplitManifest make_pooled_split(const std::vector<ingest::AnnotationRecord>& annotations, double ratio,
                                       std::uint64_t seed) {
  std::vector<std::string> collision, rest;
  for (const auto& a : annotations) (in_collision_pool(a) ? collision : rest).push_back(a.video_id);
  if (collision.size() + rest.size() < 2) throw std::invalid_argument("make_split: need at least 2 videos");
  SplitManifest s{seed, ratio, {}, {}};
  Rng rng_c(derive_seed(seed, 1)), rng_r(derive_seed(seed, 2));
  detail::split_into(collision, ratio, rng_c, s);
  detail::split_into(rest, ratio, rng_r, s);
  detail::finish(s);
  return s;
}

inline void write_split(const std::string& path, const SplitManifest& s) {
  std::ofstream os(path);
  nlohmann::json j = s;
  j["hash"] = split_hash(s);
  os << j.dump(2) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path);
}

inline SplitManifest read_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open split " + path);
  auto s = nlohmann::json::parse(in).get<SplitManifest>();
  detail::finish(s);
  return s;
}

}  // namespace cyclesafe::tasks
