#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <numeric>
#include <set>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/eval/metrics.hpp"
#include "cyclesafe/model/vidnext.hpp"
#include "cyclesafe/tasks/dataset.hpp"
#include "cyclesafe/train/optimizer.hpp"
#include "cyclesafe/train/scheduler.hpp"
#include "cyclesafe/train/source.hpp"

namespace cyclesafe::train {

namespace fs = std::filesystem;

struct TrainConfig {
  int batch_size = 32;
  AdamWConfig optimizer;
  PlateauConfig plateau;
  int epochs = 50;
  std::uint64_t seed = 0;
  double val_fraction = 0.1;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::string device = "cpu";
  std::optional<double> stop_at;  // end early once the validation monitor reaches this value
  bool freeze_backbone = false;   // update task heads only

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (batch_size < 1) fail("batch_size must be positive");
    if (epochs < 0) fail("epochs must be non-negative");
    if (optimizer.lr < 0 || optimizer.weight_decay < 0 || optimizer.eps <= 0) fail("optimizer values must be non-negative");
    if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1)
      fail("betas must lie in [0, 1)");
    if (plateau.factor <= 0 || plateau.factor >= 1 || plateau.patience < 1) fail("invalid plateau settings");
    if (val_fraction < 0 || val_fraction >= 1) fail("val_fraction must lie in [0, 1)");
    if (grad_clip < 0) fail("grad_clip must be non-negative");
    if (device != "cpu") fail("only the cpu device is available");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"optimizer", c.optimizer}, {"plateau", c.plateau},
       {"epochs", c.epochs},         {"seed", c.seed},           {"val_fraction", c.val_fraction},
       {"grad_clip", c.grad_clip},   {"device", c.device},       {"freeze_backbone", c.freeze_backbone}};
  j["stop_at"] = c.stop_at ? nlohmann::json(*c.stop_at) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  if (j.contains("optimizer")) j.at("optimizer").get_to(c.optimizer);
  if (j.contains("plateau")) j.at("plateau").get_to(c.plateau);
  c.epochs = j.value("epochs", d.epochs);
  c.seed = j.value("seed", d.seed);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.grad_clip = j.value("grad_clip", d.grad_clip);
  c.device = j.value("device", d.device);
  c.freeze_backbone = j.value("freeze_backbone", d.freeze_backbone);
  if (j.contains("stop_at") && !j.at("stop_at").is_null()) c.stop_at = j.at("stop_at").get<double>();
}

/// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean cross-entropy over class labels, or mean squared error in seconds^2 for regression.
template <class T>
Var<T> loss_for_task(const tasks::TaskSpec& task, const Var<T>& output, std::span<const double> labels) {
  if (task.is_regression()) {
    std::vector<T> y(labels.begin(), labels.end());
    return ops::mse_loss(output, std::span<const T>(y));
  }
  if (output.shape().size() != 2 || output.dim(1) != task.output_size())
    throw ShapeError("loss: output " + shape_str(output.shape()) + " does not match task '" + task.name + "'");
  std::vector<int> y;
  for (double l : labels) {
    if (l != std::floor(l) || l < 0 || l >= task.output_size())
      throw std::out_of_range("loss: label " + std::to_string(l) + " outside the classes of '" + task.name + "'");
    y.push_back(static_cast<int>(l));
  }
  return ops::cross_entropy(output, std::span<const int>(y));
}

/// Holds out `fraction` of the training videos (at least one when there are two or more).
inline std::pair<std::vector<tasks::LabeledSegment>, std::vector<tasks::LabeledSegment>> validation_split(
    const std::vector<tasks::LabeledSegment>& train, double fraction, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& s : train)
    if (std::find(ids.begin(), ids.end(), s.video_id) == ids.end()) ids.push_back(s.video_id);
  std::sort(ids.begin(), ids.end());
  std::size_t n_val = 0;
  if (fraction > 0 && ids.size() >= 2)
    n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(ids.size()))));
  Rng rng(derive_seed(seed, 0x7A1));
  shuffle(ids, rng);
  const std::set<std::string> held(ids.begin(), ids.begin() + static_cast<long>(n_val));
  std::pair<std::vector<tasks::LabeledSegment>, std::vector<tasks::LabeledSegment>> out;
  for (const auto& s : train) (held.count(s.video_id) ? out.second : out.first).push_back(s);
  return out;
}

/// Model outputs for a list of segments, gathered without augmentation.
struct Predictions {
  std::vector<int> classes;
  std::vector<double> values;
  std::vector<double> labels;
};

template <class T>
Tensor<T> model_input(const Tensor<float>& batch) {
  if constexpr (std::is_same_v<T, float>) return batch;
  else return batch.template cast<T>();
}

template <class T>
Predictions predict(const model::VidNeXt<T>& m, const tasks::TaskSpec& task, SegmentSource& src,
                    const std::vector<tasks::LabeledSegment>& segs, int batch_size) {
  NoGradGuard no_grad;
  Predictions p;
  Rng unused(0);
  LoaderOptions opt;
  opt.input_size = static_cast<int>(m.config().encoder.input_size);
  for (std::size_t b = 0; b < segs.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::vector<tasks::LabeledSegment> chunk(segs.begin() + static_cast<long>(b),
                                                    segs.begin() + static_cast<long>(std::min(segs.size(), b + static_cast<std::size_t>(batch_size))));
    const Var<T> out = m.forward(Var<T>(model_input<T>(load_batch(src, chunk, false, false, unused, opt))), task.id);
    const Tensor<T>& v = out.value();
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      p.labels.push_back(chunk[i].label);
      if (task.is_regression()) {
        p.values.push_back(static_cast<double>(v[static_cast<std::int64_t>(i)]));
      } else {
        const std::int64_t C = v.dim(1);
        const T* row = v.data() + static_cast<std::int64_t>(i) * C;
        p.classes.push_back(static_cast<int>(std::max_element(row, row + C) - row));
      }
    }
  }
  return p;
}

inline eval::MetricReport report_for(const tasks::TaskSpec& task, const std::string& split, const Predictions& p) {
  if (task.is_regression()) return eval::regression_report(task.id, split, p.values, p.labels);
  std::vector<int> labels;
  for (double l : p.labels) labels.push_back(static_cast<int>(l));
  return eval::classification_report(task.id, split, p.classes, labels, task.classes);
}

template <class T>
eval::MetricReport evaluate_segments(const model::VidNeXt<T>& m, const tasks::TaskSpec& task, SegmentSource& src,
                                     const std::vector<tasks::LabeledSegment>& segs, const std::string& split,
                                     int batch_size) {
  if (segs.empty()) throw std::invalid_argument("evaluate: no segments in split '" + split + "'");
  return report_for(task, split, predict(m, task, src, segs, batch_size));
}

// ---------------------------------------------------------------------------
// Checkpoint directory: model.json, params.cspa (latest), best.cspa, optimizer.cspa,
// state.json, log.jsonl.

struct CheckpointPaths {
  fs::path dir;
  fs::path model() const { return dir / "model.json"; }
  fs::path params() const { return dir / "params.cspa"; }
  fs::path best() const { return dir / "best.cspa"; }
  fs::path optimizer() const { return dir / "optimizer.cspa"; }
  fs::path state() const { return dir / "state.json"; }
  fs::path log() const { return dir / "log.jsonl"; }
};

inline std::uint64_t fingerprint(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  const fs::path tmp = path.string() + ".partial";
  {
    std::ofstream os(tmp);
    os << j.dump(2) << '\n';
    if (!os) throw std::runtime_error("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

/// Rebuilds a model from a checkpoint directory with its best (or latest) parameters.
template <class T>
model::VidNeXt<T> load_checkpoint(const fs::path& dir, bool best = true) {
  const CheckpointPaths p{dir};
  model::VidNeXt<T> m(read_json(p.model()).get<model::VidNeXtConfig>(), 0, false);
  model::load_parameters(m.parameters(), (best && fs::exists(p.best()) ? p.best() : p.params()).string());
  return m;
}

template <class T>
void save_model(const model::VidNeXt<T>& m, const fs::path& dir, const std::string& file = "params.cspa") {
  fs::create_directories(dir);
  write_json(dir / "model.json", m.config());
  model::save_parameters(m.parameters(), (dir / file).string());
}

/// One task's share of a training run.
struct TaskData {
  int task_id = 0;
  std::vector<tasks::LabeledSegment> train;
  std::vector<tasks::LabeledSegment> val;
};

struct TrainResult {
  int epochs_completed = 0;
  int best_epoch = 0;
  double best_monitor = 0;
  std::vector<double> train_loss;  // summed over tasks, per epoch
  std::vector<eval::MetricReport> last_validation;
  std::int64_t steps = 0;
};

/// Per-step callback: (epoch, batch, loss, lr).
using StepHook = std::function<void(int, int, double, double)>;

namespace detail {

/// Marks non-head parameters constant for the lifetime of the guard.
template <class T>
class FreezeGuard {
 public:
  FreezeGuard(model::VidNeXt<T>& m, const std::vector<int>& task_ids, bool active) {
    if (!active) return;
    std::set<std::string> backbone;
    for (std::size_t i = 0; i < task_ids.size(); ++i) {
      const auto names = m.backbone_parameter_names(task_ids[i]);
      std::set<std::string> cur(names.begin(), names.end());
      if (i == 0) backbone = cur;
      else {
        std::set<std::string> both;
        std::set_intersection(backbone.begin(), backbone.end(), cur.begin(), cur.end(), std::inserter(both, both.end()));
        backbone = both;
      }
    }
    for (const auto& name : backbone) {
      auto& node = m.parameters().at(name).node();
      node->requires_grad = false;
      frozen_.push_back(node);
    }
  }
  ~FreezeGuard() {
    for (auto& n : frozen_) n->requires_grad = true;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::shared_ptr<Node<T>>> frozen_;
};

template <class T>
void clip_gradients(model::ParameterSet<T>& ps, double max_norm) {
  double sq = 0;
  for (const auto& e : ps.entries())
    if (e.var.has_grad())
      for (T g : e.var.grad().values()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const T s = static_cast<T>(max_norm / (norm + 1e-12));
  for (auto& e : ps.entries())
    if (e.var.has_grad()) {
      Var<T> v = e.var;
      for (T& g : v.mutable_grad().values()) g *= s;
    }
}

}  // namespace detail

/// Trains on one or more tasks. Each epoch shuffles every task's training list with a seed
/// derived from (seed, epoch); a step takes the next batch of every task that still has one
/// and minimizes the unweighted sum of their losses. The validation monitor is the sum over
/// tasks of accuracy (classification) or negative MSE (regression). Every epoch rewrites the
/// checkpoint; the best-monitor parameters are kept in best.cspa. With `resume`, training picks
/// up after the last completed epoch stored in `dir`.
template <class T>
TrainResult fit(model::VidNeXt<T>& m, const std::vector<TaskData>& data, SegmentSource& src, const TrainConfig& cfg,
                const fs::path& dir, bool resume = false, const StepHook& hook = {}) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("train: no task data");
  std::vector<int> task_ids;
  for (const auto& d : data) {
    m.config().head_for(d.task_id);
    if (d.train.empty()) throw std::invalid_argument("train: empty training set for task " + std::to_string(d.task_id));
    task_ids.push_back(d.task_id);
  }
  if (m.config().seq_len != videoproc::kWindowLength)
    throw std::invalid_argument("train: model sequence length must equal the window length");

  const CheckpointPaths paths{dir};
  fs::create_directories(dir);
  nlohmann::json data_doc = nlohmann::json::array();
  for (const auto& d : data) data_doc.push_back({{"task_id", d.task_id}, {"train", d.train}, {"val", d.val}});
  nlohmann::json cfg_doc = cfg;
  cfg_doc.erase("epochs");
  cfg_doc.erase("stop_at");
  const nlohmann::json fp = {{"model", fingerprint(nlohmann::json(m.config()).dump())},
                             {"data", fingerprint(data_doc.dump())},
                             {"train", fingerprint(cfg_doc.dump())}};

  AdamW<T> opt(m.parameters(), cfg.optimizer);
  PlateauScheduler sched(cfg.optimizer.lr, cfg.plateau);
  TrainResult result;
  result.best_monitor = -std::numeric_limits<double>::infinity();
  int start_epoch = 1;

  if (resume && fs::exists(paths.state())) {
    const auto st = read_json(paths.state());
    if (st.at("fingerprint") != fp) throw ValidationError("resume: checkpoint was produced with a different model, data or config");
    model::load_parameters(m.parameters(), paths.params().string());
    opt.load(paths.optimizer().string(), st.at("steps").get<std::int64_t>());
    st.at("scheduler").get_to(sched);
    opt.set_lr(sched.lr());
    result.epochs_completed = st.at("epoch").get<int>();
    result.best_epoch = st.at("best_epoch").get<int>();
    result.best_monitor = st.at("best_monitor").is_null() ? -std::numeric_limits<double>::infinity()
                                                          : st.at("best_monitor").get<double>();
    result.train_loss = st.at("train_loss").get<std::vector<double>>();
    result.steps = opt.steps();
    start_epoch = result.epochs_completed + 1;
  } else {
    std::ofstream(paths.log(), std::ios::trunc);
  }
  save_model(m, dir, "params.cspa");
  if (!resume || !fs::exists(paths.best())) model::save_parameters(m.parameters(), paths.best().string());

  detail::FreezeGuard<T> freeze(m, task_ids, cfg.freeze_backbone);
  LoaderOptions loader;
  loader.input_size = static_cast<int>(m.config().encoder.input_size);
  std::ofstream log(paths.log(), std::ios::app);

  for (int epoch = start_epoch; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<std::vector<std::size_t>> order(data.size());
    std::size_t n_steps = 0;
    for (std::size_t t = 0; t < data.size(); ++t) {
      order[t].resize(data[t].train.size());
      std::iota(order[t].begin(), order[t].end(), std::size_t{0});
      shuffle(order[t], rng);
      n_steps = std::max(n_steps, (order[t].size() + cfg.batch_size - 1) / static_cast<std::size_t>(cfg.batch_size));
    }
    std::vector<double> loss_sum(data.size(), 0.0);
    std::vector<std::size_t> seen(data.size(), 0);
    const double lr = opt.lr();
    for (std::size_t step = 0; step < n_steps; ++step) {
      Var<T> total;
      double step_loss = 0;
      for (std::size_t t = 0; t < data.size(); ++t) {
        const std::size_t first = step * static_cast<std::size_t>(cfg.batch_size);
        if (first >= order[t].size()) continue;
        const std::size_t last = std::min(order[t].size(), first + static_cast<std::size_t>(cfg.batch_size));
        std::vector<tasks::LabeledSegment> batch;
        std::vector<double> labels;
        for (std::size_t i = first; i < last; ++i) {
          batch.push_back(data[t].train[order[t][i]]);
          labels.push_back(batch.back().label);
        }
        const auto& task = tasks::task_by_id(data[t].task_id);
        const Var<T> x(model_input<T>(load_batch(src, batch, true, task.allow_flip, rng, loader)));
        const Var<T> loss = loss_for_task(task, m.forward(x, task.id), labels);
        const double v = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(v)) {
          std::ostringstream os;
          os << "non-finite loss in epoch " << epoch << ", batch " << step << " (task " << task.name << ", lr " << lr
             << ")";
          throw TrainingError(os.str());
        }
        loss_sum[t] += v * static_cast<double>(batch.size());
        seen[t] += batch.size();
        step_loss += v;
        total = total.defined() ? ops::add(total, loss) : loss;
      }
      backward(total);
      if (cfg.grad_clip > 0) detail::clip_gradients(m.parameters(), cfg.grad_clip);
      opt.step();
      m.parameters().zero_grad();
      if (hook) hook(epoch, static_cast<int>(step), step_loss, lr);
    }

    double epoch_loss = 0, monitor = 0;
    bool have_val = false;
    result.last_validation.clear();
    for (std::size_t t = 0; t < data.size(); ++t) {
      const auto& task = tasks::task_by_id(data[t].task_id);
      const double mean_loss = loss_sum[t] / static_cast<double>(seen[t]);
      epoch_loss += mean_loss;
      log << nlohmann::json{{"epoch", epoch}, {"split", "train"}, {"task", task.name}, {"loss", mean_loss}, {"lr", lr}}
                 .dump()
          << '\n';
      if (!data[t].val.empty()) {
        const Predictions p = predict(m, task, src, data[t].val, cfg.batch_size);
        auto rep = report_for(task, "val", p);
        nlohmann::json metrics = {{"accuracy", rep.accuracy ? nlohmann::json(*rep.accuracy) : nlohmann::json(nullptr)},
                                  {"macro_f1", rep.macro_f1 ? nlohmann::json(*rep.macro_f1) : nlohmann::json(nullptr)},
                                  {"mse", rep.mse ? nlohmann::json(*rep.mse) : nlohmann::json(nullptr)}};
        log << nlohmann::json{{"epoch", epoch}, {"split", "val"}, {"task", task.name}, {"metrics", metrics}, {"lr", lr}}
                   .dump()
            << '\n';
        monitor += rep.monitor();
        have_val = true;
        result.last_validation.push_back(std::move(rep));
      }
    }
    log.flush();
    if (!have_val) monitor = -epoch_loss;
    result.train_loss.push_back(epoch_loss);
    result.epochs_completed = epoch;
    result.steps = opt.steps();
    if (monitor > result.best_monitor) {
      result.best_monitor = monitor;
      result.best_epoch = epoch;
      model::save_parameters(m.parameters(), paths.best().string());
    }
    opt.set_lr(sched.step(monitor));

    model::save_parameters(m.parameters(), paths.params().string());
    opt.save(paths.optimizer().string());
    nlohmann::json st = {{"epoch", epoch},
                         {"steps", opt.steps()},
                         {"scheduler", sched},
                         {"best_epoch", result.best_epoch},
                         {"best_monitor", result.best_monitor},
                         {"train_loss", result.train_loss},
                         {"fingerprint", fp},
                         {"seed", cfg.seed},
                         {"tasks", task_ids},
                         {"train_config", cfg}};
    write_json(paths.state(), st);
    if (cfg.stop_at && monitor >= *cfg.stop_at) break;
  }
  return result;
}

/// Single-task training with a validation slice held out from the training split.
template <class T>
TrainResult train_task(model::VidNeXt<T>& m, const tasks::TaskDataset& ds, SegmentSource& src, const TrainConfig& cfg,
                       const fs::path& dir, bool resume = false, const StepHook& hook = {}) {
  TaskData d;
  d.task_id = ds.task_id;
  std::tie(d.train, d.val) = validation_split(ds.train, cfg.val_fraction, cfg.seed);
  return fit(m, {d}, src, cfg, dir, resume, hook);
}

/// Joint training over several tasks sharing one backbone; every dataset needs a head.
template <class T>
TrainResult multi_task_train(model::VidNeXt<T>& m, const std::vector<tasks::TaskDataset>& datasets, SegmentSource& src,
                             const TrainConfig& cfg, const fs::path& dir, bool resume = false,
                             const StepHook& hook = {}) {
  std::vector<TaskData> data;
  for (const auto& ds : datasets) {
    bool has_head = false;
    for (const auto& h : m.config().task_heads) has_head = has_head || h.task_id == ds.task_id;
    if (!has_head) throw std::invalid_argument("multi-task: model has no head for task " + std::to_string(ds.task_id));
    TaskData d;
    d.task_id = ds.task_id;
    std::tie(d.train, d.val) = validation_split(ds.train, cfg.val_fraction, cfg.seed);
    data.push_back(std::move(d));
  }
  return fit(m, data, src, cfg, dir, resume, hook);
}

}  // namespace cyclesafe::train
