#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "cyclesafe/ingest/types.hpp"

namespace cyclesafe::ingest {

struct AgreementResult {
  std::string field_name;
  double kappa = 0.0;
  int n_items = 0;
  int n_raters = 0;
  int n_categories = 0;
};

/// Free-marginal multirater kappa. `items[i]` holds the n ratings for item i as 0-based category
/// codes; items containing an unknown (-1) rating are skipped.
inline double randolph_kappa(const std::vector<std::vector<Code>>& items, int n, int k, int* used = nullptr) {
  if (n < 2) throw std::invalid_argument("randolph_kappa: need at least 2 raters");
  if (k < 2) throw std::invalid_argument("randolph_kappa: need at least 2 categories");
  double agree = 0;
  int count = 0;
  std::vector<int> counts(static_cast<std::size_t>(k));
  for (const auto& item : items) {
    if (static_cast<int>(item.size()) != n) throw std::invalid_argument("randolph_kappa: item has wrong rating count");
    bool abstained = false;
    std::fill(counts.begin(), counts.end(), 0);
    for (Code c : item) {
      if (c == kUnknown) {
        abstained = true;
        break;
      }
      if (c < 0 || c >= k) throw std::invalid_argument("randolph_kappa: rating outside category range");
      ++counts[static_cast<std::size_t>(c)];
    }
    if (abstained) continue;
    for (int nc : counts) agree += static_cast<double>(nc) * (nc - 1);
    ++count;
  }
  if (used) *used = count;
  if (count == 0) throw std::invalid_argument("randolph_kappa: no fully rated items");
  const double po = agree / (static_cast<double>(count) * n * (n - 1));
  const double pe = 1.0 / k;
  return (po - pe) / (1.0 - pe);
}

/// Kappa for every categorical field across per-labeller record sets. Each inner vector is one
/// labeller's records; items are matched by video_id and only videos rated by all labellers count.
inline std::vector<AgreementResult> field_agreement(const std::vector<std::vector<RawLabelRecord>>& per_labeller,
                                                    const Vocabulary& vocab) {
  const int n = static_cast<int>(per_labeller.size());
  std::map<std::string, std::vector<const RawLabelRecord*>> by_video;
  for (const auto& file : per_labeller)
    for (const auto& r : file) by_video[r.video_id].push_back(&r);

  struct Field {
    std::string name;
    int k;
    Code (*get)(const RawLabelRecord&, const Vocabulary&);
  };
  const std::vector<Field> fields{
      {"right_of_way", kRightOfWay.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.right_of_way; }},
      {"object_type", static_cast<int>(vocab.object_types.size()),
       [](const RawLabelRecord& r, const Vocabulary& v) { return v.object_code(r.object_type); }},
      {"fault", kFault.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.fault; }},
      {"severity", kSeverity.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.severity; }},
      {"risk", kRisk.size(), [](const RawLabelRecord& r, const Vocabulary&) { return quantize_risk(r.risk_raw); }},
      {"age", kAge.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.age; }},
      {"cyclist_type", kCyclistType.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.cyclist_type; }},
      {"cyclist_direction", kCyclistDirection.size(),
       [](const RawLabelRecord& r, const Vocabulary&) { return r.cyclist_direction; }},
      {"object_direction", kObjectDirection.size(),
       [](const RawLabelRecord& r, const Vocabulary&) { return r.object_direction; }},
      {"camera_position", static_cast<int>(vocab.camera_positions.size()),
       [](const RawLabelRecord& r, const Vocabulary& v) { return v.camera_code(r.camera_position); }},
      {"ego_involved", kEgoInvolved.size(), [](const RawLabelRecord& r, const Vocabulary&) { return r.ego_involved; }},
  };

  std::vector<AgreementResult> out;
  for (const auto& f : fields) {
    std::vector<std::vector<Code>> items;
    for (const auto& [id, recs] : by_video) {
      if (static_cast<int>(recs.size()) != n) continue;
      std::vector<Code> ratings;
      for (const auto* r : recs) ratings.push_back(f.get(*r, vocab));
      items.push_back(std::move(ratings));
    }
    AgreementResult a{f.name, 0.0, 0, n, f.k};
    try {
      a.kappa = randolph_kappa(items, n, f.k, &a.n_items);
    } catch (const std::invalid_argument&) {
      a.kappa = std::numeric_limits<double>::quiet_NaN();
    }
    out.push_back(a);
  }
  return out;
}

}  // namespace cyclesafe::ingest
