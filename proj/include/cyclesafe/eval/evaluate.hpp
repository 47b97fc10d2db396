#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cyclesafe/eval/metrics.hpp"
#include "cyclesafe/train/trainer.hpp"

namespace cyclesafe::eval {

namespace fs = std::filesystem;

inline const std::vector<tasks::LabeledSegment>& split_segments(const tasks::TaskDataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "test") return ds.test;
  throw std::invalid_argument("unknown split '" + split + "' (expected train or test)");
}

/// Fails with the list of video ids the source cannot supply.
inline void require_segments(train::SegmentSource& src, const std::vector<tasks::LabeledSegment>& segs) {
  std::set<std::string> missing;
  for (const auto& s : segs)
    if (!src.contains(s.video_id)) missing.insert(s.video_id);
  if (missing.empty()) return;
  std::string list;
  for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
  throw ValidationError("missing canonical clips: " + list);
}

/// Centre-crop, augmentation-free evaluation of one split.
template <class T>
MetricReport evaluate(const model::VidNeXt<T>& m, const tasks::TaskDataset& ds, train::SegmentSource& src,
                      const std::string& split = "test", int batch_size = 8) {
  const auto& segs = split_segments(ds, split);
  require_segments(src, segs);
  return train::evaluate_segments(m, ds.task(), src, segs, split, batch_size);
}

template <class T>
MetricReport evaluate(const fs::path& checkpoint, const tasks::TaskDataset& ds, train::SegmentSource& src,
                      const std::string& split = "test", int batch_size = 8) {
  const auto m = train::load_checkpoint<T>(checkpoint);
  return evaluate(m, ds, src, split, batch_size);
}

enum class TransferMode { full, linear, finetune };

inline TransferMode parse_transfer_mode(const std::string& s) {
  if (s == "full") return TransferMode::full;
  if (s == "linear") return TransferMode::linear;
  if (s == "finetune") return TransferMode::finetune;
  throw std::invalid_argument("unknown mode '" + s + "' (expected full, linear or finetune)");
}

/// A source-trained model re-headed for the target task. Every parameter whose name and shape
/// match the checkpoint is imported; a new head starts from the seeded initializer.
template <class T>
model::VidNeXt<T> transfer_model(const fs::path& checkpoint, const tasks::TaskSpec& target, std::uint64_t seed) {
  const train::CheckpointPaths p{checkpoint};
  auto cfg = train::read_json(p.model()).get<model::VidNeXtConfig>();
  cfg.task_heads = {{target.id, target.output_size()}};
  model::VidNeXt<T> m(cfg, seed, false);
  std::map<std::string, Tensor<T>> values;
  const fs::path params = fs::exists(p.best()) ? p.best() : p.params();
  for (auto& [name, t] : model::read_archive<T>(params.string())) values.emplace(name, std::move(t));
  m.parameters().import_matching(values);
  return m;
}

struct TransferResult {
  MetricReport report;
  train::TrainResult training;
};

/// full: evaluate the transferred model as is. linear: train the head only. finetune: train
/// every parameter. Training runs write under `work_dir`; the best parameters are evaluated.
template <class T>
TransferResult transfer_eval(model::VidNeXt<T>& m, const tasks::TaskDataset& target, TransferMode mode,
                             train::SegmentSource& src, train::TrainConfig cfg, const fs::path& work_dir) {
  TransferResult r;
  if (mode != TransferMode::full) {
    require_segments(src, target.train);
    cfg.freeze_backbone = mode == TransferMode::linear;
    r.training = train::train_task(m, target, src, cfg, work_dir);
    model::load_parameters(m.parameters(), train::CheckpointPaths{work_dir}.best().string());
  }
  r.report = evaluate(m, target, src, "test", cfg.batch_size);
  return r;
}

// ---------------------------------------------------------------------------
// Embeddings

struct Embeddings {
  std::vector<std::string> ids;  // "<video_id>@<start_frame>"
  std::vector<double> labels;
  std::vector<std::vector<double>> rows;
};

/// Picks n segments (train then test order, shuffled by `seed`) and records their y vectors.
template <class T>
Embeddings export_embeddings(const model::VidNeXt<T>& m, const tasks::TaskDataset& ds, train::SegmentSource& src,
                             std::size_t n, std::uint64_t seed, int batch_size = 8) {
  std::vector<tasks::LabeledSegment> all = ds.train;
  all.insert(all.end(), ds.test.begin(), ds.test.end());
  if (n > all.size())
    throw std::invalid_argument("embed: requested " + std::to_string(n) + " samples from " + std::to_string(all.size()));
  Rng rng(derive_seed(seed, 0xE3B));
  shuffle(all, rng);
  all.resize(n);
  require_segments(src, all);
  NoGradGuard no_grad;
  Embeddings e;
  train::LoaderOptions opt;
  opt.input_size = static_cast<int>(m.config().encoder.input_size);
  Rng unused(0);
  for (std::size_t b = 0; b < all.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::vector<tasks::LabeledSegment> chunk(
        all.begin() + static_cast<long>(b),
        all.begin() + static_cast<long>(std::min(all.size(), b + static_cast<std::size_t>(batch_size))));
    const Var<T> y = m.embed(Var<T>(train::model_input<T>(train::load_batch(src, chunk, false, false, unused, opt))));
    const std::int64_t d = y.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      e.ids.push_back(chunk[i].video_id + "@" + std::to_string(chunk[i].start_frame));
      e.labels.push_back(chunk[i].label);
      const T* row = y.value().data() + static_cast<std::int64_t>(i) * d;
      e.rows.emplace_back(row, row + d);
    }
  }
  return e;
}

inline void write_embeddings(const fs::path& path, const Embeddings& e) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  std::vector<std::string> header{"id", "label"};
  const std::size_t d = e.rows.empty() ? 0 : e.rows.front().size();
  for (std::size_t k = 0; k < d; ++k) header.push_back("e" + std::to_string(k));
  write_csv_row(os, header);
  for (std::size_t i = 0; i < e.ids.size(); ++i) {
    std::vector<std::string> row{e.ids[i], ingest::format_seconds(e.labels[i])};
    for (double v : e.rows[i]) row.push_back(ingest::format_seconds(v));
    write_csv_row(os, row);
  }
}

inline Embeddings read_embeddings(const fs::path& path) {
  const CsvTable t = read_csv(path.string());
  if (t.header.size() < 3 || t.header[0] != "id" || t.header[1] != "label")
    throw ValidationError("embeddings file needs id,label,e0,... columns");
  Embeddings e;
  for (const auto& row : t.rows) {
    if (row.size() != t.header.size()) throw ValidationError("embeddings: ragged row");
    e.ids.push_back(row[0]);
    e.labels.push_back(ingest::parse_seconds(row[1], "label"));
    auto& r = e.rows.emplace_back();
    for (std::size_t k = 2; k < row.size(); ++k) r.push_back(ingest::parse_seconds(row[k], "embedding"));
  }
  return e;
}

/// Mean silhouette coefficient under Euclidean distance; points in singleton clusters score 0.
inline double silhouette(const std::vector<std::vector<double>>& x, const std::vector<int>& labels) {
  const std::size_t n = x.size();
  if (n != labels.size() || n < 2) throw std::invalid_argument("silhouette: need at least two labelled points");
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t k = 0; k < x[i].size(); ++k) s += (x[i][k] - x[j][k]) * (x[i][k] - x[j][k]);
    return std::sqrt(s);
  };
  std::map<int, std::size_t> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw std::invalid_argument("silhouette: need at least two clusters");
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, double> sum;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) sum[labels[j]] += dist(i, j);
    if (sizes[labels[i]] < 2) continue;
    const double a = sum[labels[i]] / static_cast<double>(sizes[labels[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sum)
      if (l != labels[i]) b = std::min(b, s / static_cast<double>(sizes[l]));
    if (std::max(a, b) > 0) total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace cyclesafe::eval
