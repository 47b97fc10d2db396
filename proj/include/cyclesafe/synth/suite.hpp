#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/ingest/labels.hpp"
#include "cyclesafe/ingest/manifest.hpp"
#include "cyclesafe/synth/scenario.hpp"
#include "cyclesafe/videoproc/container.hpp"

namespace cyclesafe::synth {

namespace fs = std::filesystem;

/// Fractions of each scenario kind in a suite.
struct Mix {
  double direction = 0.4;
  double collision = 0.3;
  double near_miss = 0.1;
  double stationary = 0.2;
};

/// Parses "direction:0.4,collision:0.3,near_miss:0.1,stationary:0.2"; omitted kinds get 0.
inline Mix parse_mix(const std::string& spec) {
  Mix m{0, 0, 0, 0};
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("mix entry '" + item + "' lacks ':'");
    const std::string key = item.substr(0, colon);
    const double v = ingest::parse_seconds(item.substr(colon + 1), "mix weight");
    if (v < 0) throw std::invalid_argument("mix weight must be non-negative");
    if (key == "direction") m.direction = v;
    else if (key == "collision") m.collision = v;
    else if (key == "near_miss") m.near_miss = v;
    else if (key == "stationary") m.stationary = v;
    else throw std::invalid_argument("unknown mix kind '" + key + "'");
  }
  if (m.direction + m.collision + m.near_miss + m.stationary <= 0) throw std::invalid_argument("mix weights sum to 0");
  return m;
}

/// Largest-remainder apportionment of n videos over the four kinds.
inline std::array<int, 4> mix_counts(const Mix& m, int n) {
  const std::array<double, 4> w{m.direction, m.collision, m.near_miss, m.stationary};
  const double total = w[0] + w[1] + w[2] + w[3];
  std::array<int, 4> c{};
  std::array<double, 4> rem{};
  int used = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double exact = n * w[k] / total;
    c[k] = static_cast<int>(std::floor(exact));
    rem[k] = exact - c[k];
    used += c[k];
  }
  while (used < n) {
    const auto k = static_cast<std::size_t>(std::max_element(rem.begin(), rem.end()) - rem.begin());
    ++c[k];
    rem[k] = -1;
    ++used;
  }
  return c;
}

struct SuiteOptions {
  int n_videos = 40;
  Mix mix;
  std::uint64_t seed = 0;
  ScenarioParams params;
  int render_width = 854;
  int render_height = 480;
  double render_fps = 24.0;
  bool moving_objects = true;  // objects in direction scenarios move as well
  std::string id_prefix = "syn";
};

/// Scenario list for a suite: kinds apportioned by the mix, directions assigned round-robin
/// within each kind, then the order shuffled.
inline std::vector<Scenario> make_suite_scenarios(const SuiteOptions& o) {
  if (o.n_videos < 2) throw std::invalid_argument("synth: need at least 2 videos");
  using ingest::Direction;
  const auto counts = mix_counts(o.mix, o.n_videos);
  const std::array<ScenarioKind, 4> kinds{ScenarioKind::moving_object_direction, ScenarioKind::two_body_collision,
                                          ScenarioKind::near_miss, ScenarioKind::stationary};
  struct Plan {
    ScenarioKind kind;
    Direction cyclist, object;
  };
  std::vector<Plan> plans;
  for (std::size_t k = 0; k < 4; ++k)
    for (int i = 0; i < counts[k]; ++i) {
      Plan p{kinds[k], Direction::stationary, Direction::stationary};
      if (kinds[k] == ScenarioKind::moving_object_direction) {
        p.cyclist = static_cast<Direction>(i % 4);
        if (o.moving_objects) p.object = static_cast<Direction>((i / 4 + i) % 5);
      } else if (kinds[k] == ScenarioKind::two_body_collision || kinds[k] == ScenarioKind::near_miss) {
        p.cyclist = static_cast<Direction>(i % 5);
        p.object = static_cast<Direction>((i + 1 + i / 5) % 5);
      } else if (o.moving_objects) {
        p.object = static_cast<Direction>(i % 5);
      }
      plans.push_back(p);
    }
  Rng order(derive_seed(o.seed, 1));
  shuffle(plans, order);
  std::vector<Scenario> out;
  const int width = static_cast<int>(std::to_string(o.n_videos - 1).size());
  for (std::size_t i = 0; i < plans.size(); ++i) {
    std::string num = std::to_string(i);
    num.insert(0, static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0');
    Rng rng(derive_seed(o.seed, 1000 + i));
    Scenario s = make_scenario(o.id_prefix + num, plans[i].kind, plans[i].cyclist, plans[i].object, rng, o.params);
    s.render_width = o.render_width;
    s.render_height = o.render_height;
    s.render_fps = o.render_fps;
    out.push_back(s);
  }
  return out;
}

/// Three raters: the first two report the ground truth; the third disagrees on some categorical
/// fields. Risk is reported as r - d, r + d, r so the mean stays r.
inline std::vector<std::vector<ingest::RawLabelRecord>> simulate_raters(const std::vector<ingest::AnnotationRecord>& truth,
                                                                        std::uint64_t seed) {
  std::vector<std::vector<ingest::RawLabelRecord>> files(3);
  Rng rng(derive_seed(seed, 2));
  for (const auto& t : truth) {
    const double d = std::min({0.02, t.risk_raw, 1.0 - t.risk_raw});
    for (int r = 0; r < 3; ++r) {
      ingest::RawLabelRecord rec;
      static_cast<ingest::AnnotationFields&>(rec) = t;
      rec.labeller_id = "rater_" + std::to_string(r + 1);
      rec.risk_raw = r == 0 ? t.risk_raw - d : r == 1 ? t.risk_raw + d : t.risk_raw;
      if (r == 2) {
        auto perturb = [&](ingest::Code& c, const ingest::Scale& s) {
          if (uniform01(rng) < 0.3)
            c = s.allows_unknown && uniform01(rng) < 0.3 ? ingest::kUnknown
                                                          : static_cast<ingest::Code>(uniform_index(rng, static_cast<std::uint64_t>(s.size())));
        };
        perturb(rec.severity, ingest::kSeverity);
        perturb(rec.age, ingest::kAge);
        perturb(rec.fault, ingest::kFault);
        perturb(rec.cyclist_direction, ingest::kCyclistDirection);
        perturb(rec.cyclist_type, ingest::kCyclistType);
      }
      files[static_cast<std::size_t>(r)].push_back(std::move(rec));
    }
  }
  return files;
}

struct SuitePaths {
  fs::path root;
  fs::path manifest() const { return root / "manifest.csv"; }
  fs::path raw_dir() const { return root / "raw"; }
  fs::path annotations() const { return root / "annotations.csv"; }
  fs::path scenarios() const { return root / "scenarios.json"; }
  fs::path rater(int i) const { return root / "labels" / ("rater_" + std::to_string(i) + ".csv"); }
};

struct Suite {
  std::vector<Scenario> scenarios;
  std::vector<ingest::VideoManifestEntry> manifest;
  std::vector<ingest::AnnotationRecord> annotations;
  std::vector<std::vector<ingest::RawLabelRecord>> raters;
};

/// Builds the suite in memory without rendering video.
inline Suite make_suite(const SuiteOptions& o, const ingest::Vocabulary& vocab = ingest::Vocabulary::defaults()) {
  Suite s;
  s.scenarios = make_suite_scenarios(o);
  for (std::size_t i = 0; i < s.scenarios.size(); ++i) {
    Rng rng(derive_seed(o.seed, 5000 + i));
    s.annotations.push_back(ground_truth(s.scenarios[i], rng, vocab));
    s.manifest.push_back(manifest_entry(s.scenarios[i]));
  }
  s.raters = simulate_raters(s.annotations, o.seed);
  return s;
}

inline void write_scenarios(const fs::path& path, const std::vector<Scenario>& scenarios) {
  std::ofstream os(path);
  os << nlohmann::json(scenarios).dump(1) << '\n';
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

inline std::vector<Scenario> read_scenarios(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return nlohmann::json::parse(in).get<std::vector<Scenario>>();
}

/// Writes manifest, annotations, per-rater labels, scenario parameters and (optionally) the
/// raw videos under `root`.
inline Suite generate_suite(const SuiteOptions& o, const fs::path& root, bool render_videos = true,
                            const ingest::Vocabulary& vocab = ingest::Vocabulary::defaults()) {
  Suite s = make_suite(o, vocab);
  const SuitePaths p{root};
  fs::create_directories(root / "labels");
  ingest::write_manifest(p.manifest().string(), s.manifest);
  ingest::write_annotations(p.annotations().string(), s.annotations);
  for (int r = 0; r < 3; ++r) ingest::write_raw_labels(p.rater(r + 1).string(), s.raters[static_cast<std::size_t>(r)]);
  write_scenarios(p.scenarios(), s.scenarios);
  if (render_videos) {
    fs::create_directories(p.raw_dir());
    for (const auto& sc : s.scenarios) {
      videoproc::VideoWriter w((p.raw_dir() / (sc.video_id + videoproc::kVideoExtension)).string(), sc.render_height,
                               sc.render_width, sc.render_fps);
      render_raw(sc, [&](const videoproc::Frame& f) { w.write(f); });
      w.close();
    }
  }
  return s;
}

}  // namespace cyclesafe::synth
