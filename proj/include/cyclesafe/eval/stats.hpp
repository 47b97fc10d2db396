#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/ingest/manifest.hpp"
#include "cyclesafe/ingest/types.hpp"

namespace cyclesafe::eval {

struct Histogram {
  std::string name;
  std::vector<std::string> bins;
  std::vector<std::int64_t> counts;
  std::int64_t contributing = 0;  // videos counted; equals the sum of counts
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Histogram, name, bins, counts, contributing)

/// counts[row][col].
struct Heatmap {
  std::string name;
  std::string row_field, col_field;
  std::vector<std::string> rows, cols;
  std::vector<std::vector<std::int64_t>> counts;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Heatmap, name, row_field, col_field, rows, cols, counts)

struct StatsReport {
  std::int64_t n_videos = 0;
  std::vector<Histogram> histograms;
  std::vector<Heatmap> heatmaps;
  nlohmann::json ratios;

  const Histogram& histogram(const std::string& name) const {
    for (const auto& h : histograms)
      if (h.name == name) return h;
    throw std::out_of_range("no histogram " + name);
  }
  const Heatmap& heatmap(const std::string& name) const {
    for (const auto& h : heatmaps)
      if (h.name == name) return h;
    throw std::out_of_range("no heatmap " + name);
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(StatsReport, n_videos, histograms, heatmaps, ratios)

namespace detail {

/// Scale names plus a trailing "unknown" bin when the scale admits -1.
inline std::vector<std::string> labels_of(const ingest::Scale& s) {
  std::vector<std::string> out(s.names.begin(), s.names.end());
  if (s.allows_unknown) out.emplace_back("unknown");
  return out;
}

inline std::size_t bin_of(const ingest::Scale& s, ingest::Code c) {
  return c == ingest::kUnknown ? s.names.size() : static_cast<std::size_t>(c);
}

inline Histogram categorical(const std::string& name, const ingest::Scale& s, const std::vector<ingest::Code>& codes) {
  Histogram h{name, labels_of(s), {}, 0};
  h.counts.assign(h.bins.size(), 0);
  for (auto c : codes) {
    ++h.counts[bin_of(s, c)];
    ++h.contributing;
  }
  return h;
}

/// One-second bins [k, k+1) up to the largest value.
inline Histogram seconds(const std::string& name, const std::vector<double>& values) {
  Histogram h{name, {}, {}, 0};
  for (double v : values) {
    const auto b = static_cast<std::size_t>(std::max(0.0, std::floor(v)));
    if (b >= h.counts.size()) h.counts.resize(b + 1, 0);
    ++h.counts[b];
    ++h.contributing;
  }
  for (std::size_t b = 0; b < h.counts.size(); ++b) h.bins.push_back(std::to_string(b) + "-" + std::to_string(b + 1) + "s");
  return h;
}

inline Heatmap cross(const std::string& name, const std::string& rf, const ingest::Scale& rs, const std::string& cf,
                     const ingest::Scale& cs, const std::vector<std::pair<ingest::Code, ingest::Code>>& pairs) {
  Heatmap m{name, rf, cf, labels_of(rs), labels_of(cs), {}};
  m.counts.assign(m.rows.size(), std::vector<std::int64_t>(m.cols.size(), 0));
  for (auto [r, c] : pairs) ++m.counts[bin_of(rs, r)][bin_of(cs, c)];
  return m;
}

}  // namespace detail

/// Histograms and cross-tabulations over aggregated annotations. Clip durations come from the
/// manifest when one is given.
inline StatsReport dataset_stats(const std::vector<ingest::AnnotationRecord>& annotations,
                                 const ingest::Vocabulary& vocab = ingest::Vocabulary::defaults(),
                                 const std::vector<ingest::VideoManifestEntry>* manifest = nullptr) {
  using namespace ingest;
  StatsReport r;
  r.n_videos = static_cast<std::int64_t>(annotations.size());
  std::vector<double> ttc, durations;
  std::vector<Code> risk, age, fault, ego, cdir, odir, severity, row;
  Histogram objects{"object_type", vocab.object_types, std::vector<std::int64_t>(vocab.object_types.size() + 1, 0), 0};
  objects.bins.emplace_back("unlisted");
  std::vector<std::pair<Code, Code>> dir_pairs, fault_age, risk_fault, risk_sev;
  for (const auto& a : annotations) {
    if (a.time_to_collision) ttc.push_back(*a.time_to_collision);
    const Code o = vocab.object_code(a.object_type);
    ++objects.counts[o == kUnknown ? vocab.object_types.size() : static_cast<std::size_t>(o)];
    ++objects.contributing;
    const Code rk = quantize_risk(a.risk_raw);
    risk.push_back(rk);
    age.push_back(a.age);
    fault.push_back(a.fault);
    ego.push_back(a.ego_involved);
    cdir.push_back(a.cyclist_direction);
    odir.push_back(a.object_direction);
    severity.push_back(a.severity);
    row.push_back(a.right_of_way);
    dir_pairs.emplace_back(a.cyclist_direction, a.object_direction);
    fault_age.emplace_back(a.fault, a.age);
    risk_fault.emplace_back(rk, a.fault);
    risk_sev.emplace_back(rk, a.severity);
  }
  if (manifest)
    for (const auto& e : *manifest) durations.push_back(e.duration());

  r.histograms.push_back(detail::seconds("time_to_collision", ttc));
  if (manifest) r.histograms.push_back(detail::seconds("duration", durations));
  r.histograms.push_back(objects);
  r.histograms.push_back(detail::categorical("risk", kRisk, risk));
  r.histograms.push_back(detail::categorical("age", kAge, age));
  r.histograms.push_back(detail::categorical("fault", kFault, fault));
  r.histograms.push_back(detail::categorical("ego_involved", kEgoInvolved, ego));
  r.histograms.push_back(detail::categorical("cyclist_direction", kCyclistDirection, cdir));
  r.histograms.push_back(detail::categorical("object_direction", kObjectDirection, odir));
  r.histograms.push_back(detail::categorical("severity", kSeverity, severity));
  r.histograms.push_back(detail::categorical("right_of_way", kRightOfWay, row));

  r.heatmaps.push_back(detail::cross("direction", "cyclist_direction", kCyclistDirection, "object_direction",
                                     kObjectDirection, dir_pairs));
  r.heatmaps.push_back(detail::cross("fault_by_age", "fault", kFault, "age", kAge, fault_age));
  r.heatmaps.push_back(detail::cross("risk_by_fault", "risk", kRisk, "fault", kFault, risk_fault));
  r.heatmaps.push_back(detail::cross("risk_by_severity", "risk", kRisk, "severity", kSeverity, risk_sev));

  // P(fault = yes | age) over videos with both fields known, and ratios against adults.
  const auto& fa = r.heatmaps[1].counts;
  nlohmann::json rate = nlohmann::json::object();
  std::vector<std::optional<double>> rates;
  for (std::size_t g = 0; g < kAge.names.size(); ++g) {
    const auto yes = fa[1][g], known = fa[0][g] + fa[1][g];
    rates.push_back(known ? std::optional<double>(static_cast<double>(yes) / static_cast<double>(known)) : std::nullopt);
    rate[std::string(kAge.names[g])] = rates.back() ? nlohmann::json(*rates.back()) : nlohmann::json(nullptr);
  }
  nlohmann::json vs_adult = nlohmann::json::object();
  for (std::size_t g = 0; g < kAge.names.size(); ++g) {
    const bool ok = rates[g] && rates[1] && *rates[1] > 0;
    vs_adult[std::string(kAge.names[g])] = ok ? nlohmann::json(*rates[g] / *rates[1]) : nlohmann::json(nullptr);
  }
  r.ratios = {{"fault_rate_by_age", rate}, {"fault_rate_vs_adult", vs_adult}};
  return r;
}

}  // namespace cyclesafe::eval
