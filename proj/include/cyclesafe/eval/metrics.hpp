#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cyclesafe::eval {

/// counts[label][prediction].
struct ConfusionMatrix {
  std::vector<std::vector<std::int64_t>> counts;

  explicit ConfusionMatrix(int n_classes = 0)
      : counts(static_cast<std::size_t>(n_classes), std::vector<std::int64_t>(static_cast<std::size_t>(n_classes), 0)) {}

  int n_classes() const { return static_cast<int>(counts.size()); }

  void add(int label, int prediction) {
    if (label < 0 || label >= n_classes() || prediction < 0 || prediction >= n_classes())
      throw std::out_of_range("confusion matrix: class index out of range");
    ++counts[static_cast<std::size_t>(label)][static_cast<std::size_t>(prediction)];
  }

  /// Shards merge by summation.
  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.n_classes() != n_classes()) throw std::invalid_argument("confusion matrix: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i)
      for (std::size_t j = 0; j < counts.size(); ++j) counts[i][j] += o.counts[i][j];
    return *this;
  }

  std::int64_t total() const {
    std::int64_t n = 0;
    for (const auto& row : counts)
      for (auto c : row) n += c;
    return n;
  }
  std::int64_t tp(int c) const { return counts[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]; }
  std::int64_t predicted(int c) const {
    std::int64_t n = 0;
    for (const auto& row : counts) n += row[static_cast<std::size_t>(c)];
    return n;
  }
  std::int64_t actual(int c) const {
    std::int64_t n = 0;
    for (auto v : counts[static_cast<std::size_t>(c)]) n += v;
    return n;
  }
};

inline ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("metrics: length mismatch");
  if (labels.empty()) throw std::invalid_argument("metrics: empty input");
  ConfusionMatrix m(n_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) m.add(labels[i], predictions[i]);
  return m;
}

struct ClassMetrics {
  std::string name;
  double precision = 0, recall = 0, f1 = 0;
  std::int64_t support = 0;
  bool present = false;  // in the labels or the predictions
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ClassMetrics, name, precision, recall, f1, support, present)

inline std::vector<ClassMetrics> per_class(const ConfusionMatrix& m, const std::vector<std::string>& names = {}) {
  std::vector<ClassMetrics> out;
  for (int c = 0; c < m.n_classes(); ++c) {
    ClassMetrics k;
    k.name = c < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(c)] : std::to_string(c);
    const auto tp = m.tp(c), pred = m.predicted(c), act = m.actual(c);
    k.support = act;
    k.present = pred > 0 || act > 0;
    k.precision = pred ? static_cast<double>(tp) / pred : 0.0;
    k.recall = act ? static_cast<double>(tp) / act : 0.0;
    k.f1 = pred + act ? 2.0 * tp / static_cast<double>(pred + act) : 0.0;
    out.push_back(std::move(k));
  }
  return out;
}

inline double accuracy(const ConfusionMatrix& m) {
  std::int64_t hit = 0;
  for (int c = 0; c < m.n_classes(); ++c) hit += m.tp(c);
  return static_cast<double>(hit) / static_cast<double>(m.total());
}

/// Unweighted mean F1 over classes that occur in the labels or the predictions.
inline double macro_f1(const ConfusionMatrix& m) {
  double sum = 0;
  int n = 0;
  for (const auto& k : per_class(m))
    if (k.present) {
      sum += k.f1;
      ++n;
    }
  return n ? sum / n : 0.0;
}

inline double accuracy(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  return accuracy(confusion(predictions, labels, n_classes));
}
inline double macro_f1(std::span<const int> predictions, std::span<const int> labels, int n_classes) {
  return macro_f1(confusion(predictions, labels, n_classes));
}

inline double mse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw std::invalid_argument("metrics: length mismatch");
  if (targets.empty()) throw std::invalid_argument("metrics: empty input");
  double s = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) s += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
  return s / static_cast<double>(targets.size());
}

/// Population variance: the MSE of always predicting the mean.
inline double variance(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("metrics: empty input");
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size());
}

struct MetricReport {
  int task_id = 0;
  std::string split;
  std::int64_t n_segments = 0;
  std::optional<double> accuracy, macro_f1, mse;
  std::string f1_averaging = "macro";
  std::vector<ClassMetrics> per_class;
  std::vector<std::vector<std::int64_t>> confusion;

  /// The value a scheduler or checkpoint selector monitors, oriented so larger is better.
  double monitor() const { return mse ? -*mse : *accuracy; }
};

inline void to_json(nlohmann::json& j, const MetricReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  j = {{"task_id", r.task_id},       {"split", r.split},         {"n_segments", r.n_segments},
       {"accuracy", opt(r.accuracy)}, {"macro_f1", opt(r.macro_f1)}, {"mse", opt(r.mse)},
       {"f1_averaging", r.f1_averaging}, {"per_class", r.per_class}, {"confusion", r.confusion}};
}
inline void from_json(const nlohmann::json& j, MetricReport& r) {
  auto opt = [&](const char* k) {
    return j.at(k).is_null() ? std::optional<double>() : std::optional<double>(j.at(k).get<double>());
  };
  j.at("task_id").get_to(r.task_id);
  j.at("split").get_to(r.split);
  j.at("n_segments").get_to(r.n_segments);
  r.accuracy = opt("accuracy");
  r.macro_f1 = opt("macro_f1");
  r.mse = opt("mse");
  j.at("f1_averaging").get_to(r.f1_averaging);
  j.at("per_class").get_to(r.per_class);
  j.at("confusion").get_to(r.confusion);
}

inline MetricReport classification_report(int task_id, const std::string& split, std::span<const int> predictions,
                                          std::span<const int> labels, const std::vector<std::string>& classes) {
  const ConfusionMatrix m = confusion(predictions, labels, static_cast<int>(classes.size()));
  MetricReport r;
  r.task_id = task_id;
  r.split = split;
  r.n_segments = m.total();
  r.accuracy = accuracy(m);
  r.macro_f1 = macro_f1(m);
  r.per_class = per_class(m, classes);
  r.confusion = m.counts;
  return r;
}

inline MetricReport regression_report(int task_id, const std::string& split, std::span<const double> predictions,
                                      std::span<const double> targets) {
  MetricReport r;
  r.task_id = task_id;
  r.split = split;
  r.n_segments = static_cast<std::int64_t>(targets.size());
  r.mse = mse(predictions, targets);
  return r;
}

}  // namespace cyclesafe::eval
