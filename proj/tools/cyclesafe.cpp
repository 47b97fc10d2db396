// cyclesafe: command-line front end for the dataset, training and evaluation pipeline.

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "cyclesafe/eval/evaluate.hpp"
#include "cyclesafe/eval/plot.hpp"
#include "cyclesafe/eval/stats.hpp"
#include "cyclesafe/eval/tsne.hpp"
#include "cyclesafe/ingest/aggregate.hpp"
#include "cyclesafe/ingest/agreement.hpp"
#include "cyclesafe/ingest/labels.hpp"
#include "cyclesafe/ingest/latin_square.hpp"
#include "cyclesafe/synth/suite.hpp"
#include "cyclesafe/tasks/dataset.hpp"
#include "cyclesafe/train/trainer.hpp"

using namespace cyclesafe;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kInternal = 2 };

/// Artifact layout under one run root, plus run.json recording each command's
/// configuration hash and seed.
struct RunDirectory {
  fs::path root;

  fs::path canonical() const { return root / "canonical"; }
  fs::path splits() const { return root / "splits"; }
  fs::path tasks() const { return root / "tasks"; }
  fs::path checkpoints() const { return root / "checkpoints"; }
  fs::path reports() const { return root / "reports"; }
  fs::path manifest() const { return root / "run.json"; }

  void create() const {
    for (const auto& d : {canonical(), splits(), tasks(), checkpoints(), reports()}) fs::create_directories(d);
  }

  fs::path task_file(const tasks::TaskSpec& t) const { return tasks() / (t.name + ".json"); }

  void record(const std::string& step, const json& config, std::uint64_t seed) const {
    create();
    json run = fs::exists(manifest()) ? train::read_json(manifest()) : json{{"steps", json::object()}};
    run["steps"][step] = {{"config", config},
                          {"config_hash", train::fingerprint(config.dump())},
                          {"seed", seed}};
    train::write_json(manifest(), run);
  }
};

struct Globals {
  std::string run = "run";
  std::uint64_t seed = 0;
  std::string vocab;

  RunDirectory dir() const { return {run}; }
  ingest::Vocabulary vocabulary() const {
    return vocab.empty() ? ingest::Vocabulary::defaults() : ingest::Vocabulary::load(vocab);
  }
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::map<std::string, int> canonical_frame_counts(const fs::path& dir) {
  std::map<std::string, int> counts;
  if (!fs::is_directory(dir)) throw ValidationError("no canonical clips under " + dir.string() + " (run preprocess)");
  const videoproc::CanonicalStore store(dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && store.contains(e.path().stem().string()))
      counts[e.path().stem().string()] = store.metadata(e.path().stem().string()).frame_count;
  return counts;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  int n = 40;
  std::string mix = "direction:0.4,collision:0.3,near_miss:0.1,stationary:0.2";
  std::string out;
  int width = 854, height = 480;
  double fps = 24.0, min_duration = 3.0, max_duration = 6.0;
  bool no_video = false;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  synth::SuiteOptions o;
  o.n_videos = a.n;
  o.mix = synth::parse_mix(a.mix);
  o.seed = g.seed;
  o.render_width = a.width;
  o.render_height = a.height;
  o.render_fps = a.fps;
  o.params.min_duration = a.min_duration;
  o.params.max_duration = a.max_duration;
  const fs::path out = a.out.empty() ? g.dir().root / "synth" : fs::path(a.out);
  const auto suite = synth::generate_suite(o, out, !a.no_video, g.vocabulary());
  int collisions = 0;
  for (const auto& r : suite.annotations) collisions += r.has_collision();
  std::cout << "wrote " << suite.scenarios.size() << " synthetic videos to " << out.string() << " (" << collisions
            << " with collisions)\n";
  g.dir().record("synth", {{"n", a.n}, {"mix", a.mix}, {"width", a.width}, {"height", a.height}, {"fps", a.fps},
                           {"min_duration", a.min_duration}, {"max_duration", a.max_duration}, {"out", out.string()}},
                 g.seed);
  return kOk;
}

// ---------------------------------------------------------------------------
// preprocess

struct PreprocessArgs {
  std::string manifest, raw_dir;
  int workers = 1;
  bool force = false, mp4 = false;
};

int cmd_preprocess(const Globals& g, const PreprocessArgs& a) {
  const auto entries = ingest::parse_manifest(a.manifest);
  const RunDirectory run = g.dir();
  run.create();
  const videoproc::CanonicalStore store(run.canonical());
  std::vector<std::string> missing;
  for (const auto& e : entries)
    if (!videoproc::find_raw_video(a.raw_dir, e.video_id)) missing.push_back(e.video_id);
  if (!missing.empty()) {
    std::string list;
    for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("no raw video for: " + list);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<int> done{0}, skipped{0};
  std::mutex err_mu;
  std::vector<std::string> errors;
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      const auto& e = entries[i];
      if (!a.force && store.contains(e.video_id)) {
        ++skipped;
        continue;
      }
      try {
        videoproc::preprocess_video(e, *videoproc::find_raw_video(a.raw_dir, e.video_id), store, a.mp4);
        ++done;
      } catch (const std::exception& ex) {
        std::lock_guard lock(err_mu);
        errors.push_back(e.video_id + ": " + ex.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < std::max(1, a.workers); ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (!errors.empty()) {
    std::sort(errors.begin(), errors.end());
    for (const auto& e : errors) std::cerr << "preprocess: " << e << '\n';
    throw ValidationError(std::to_string(errors.size()) + " video(s) failed to preprocess");
  }
  std::cout << "canonicalized " << done << " clip(s), " << skipped << " already present, into "
            << run.canonical().string() << '\n';
  run.record("preprocess", {{"manifest", a.manifest}, {"raw_dir", a.raw_dir}}, g.seed);
  return kOk;
}

// ---------------------------------------------------------------------------
// validate / aggregate / agreement / assign

int cmd_validate(const Globals& g, const std::string& annotations, const std::string& manifest) {
  const auto vocab = g.vocabulary();
  const auto records = ingest::read_annotations(annotations);
  std::map<std::string, double> durations;
  if (!manifest.empty())
    for (const auto& e : ingest::parse_manifest(manifest)) durations[e.video_id] = e.duration();
  int bad = 0;
  for (const auto& r : records) {
    std::optional<double> duration;
    if (auto it = durations.find(r.video_id); it != durations.end()) duration = it->second;
    for (const auto& v : ingest::validate_annotation(r, vocab, duration)) {
      std::cout << r.video_id << ": " << v << '\n';
      ++bad;
    }
  }
  if (bad > 0) {
    std::cerr << bad << " violation(s) in " << annotations << '\n';
    return kValidation;
  }
  std::cout << records.size() << " annotation(s) valid\n";
  return kOk;
}

int cmd_aggregate(const Globals& g, const std::vector<std::string>& files, const std::string& out) {
  if (files.size() != 3) throw ValidationError("aggregate expects exactly 3 raw label files");
  std::vector<ingest::RawLabelRecord> all;
  for (const auto& f : files) {
    auto recs = ingest::read_raw_labels(f);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  const auto agg = ingest::aggregate_all(all, g.vocabulary());
  ingest::write_annotations(out, agg);
  std::cout << "aggregated " << agg.size() << " video(s) into " << out << '\n';
  return kOk;
}

int cmd_agreement(const Globals& g, const std::vector<std::string>& files, const std::string& fields) {
  if (files.size() < 2) throw ValidationError("agreement needs at least 2 raw label files");
  std::vector<std::vector<ingest::RawLabelRecord>> per_labeller;
  for (const auto& f : files) per_labeller.push_back(ingest::read_raw_labels(f));
  const auto results = ingest::field_agreement(per_labeller, g.vocabulary());
  std::vector<std::string> wanted = split_list(fields);
  for (const auto& w : wanted)
    if (std::none_of(results.begin(), results.end(), [&](const auto& r) { return r.field_name == w; }))
      throw ValidationError("unknown agreement field '" + w + "'");
  for (const auto& r : results) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), r.field_name) == wanted.end()) continue;
    std::cout << r.field_name << ' ' << (std::isnan(r.kappa) ? std::string("nan") : fixed(r.kappa)) << " (" << r.n_items
              << " items, " << r.n_raters << " raters, " << r.n_categories << " categories)\n";
  }
  return kOk;
}

int cmd_assign(int labellers, const std::string& batches_file, const std::string& out) {
  std::ifstream in(batches_file);
  if (!in) throw ValidationError("cannot open " + batches_file);
  std::vector<std::string> batches;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) batches.push_back(line);
  }
  const auto rows = ingest::latin_square_assignment(labellers, batches);
  std::ofstream os;
  if (!out.empty()) {
    os.open(out);
    if (!os) throw std::runtime_error("cannot write " + out);
    os << "labeller,position,batch\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::cout << "labeller_" << i + 1 << ':';
    for (std::size_t k = 0; k < rows[i].size(); ++k) {
      std::cout << ' ' << rows[i][k];
      if (os.is_open()) os << "labeller_" << i + 1 << ',' << k << ',' << rows[i][k] << '\n';
    }
    std::cout << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// split / build-task

int cmd_split(const Globals& g, const std::string& videos, double ratio, const std::string& out_arg) {
  const CsvTable table = read_csv(videos);
  tasks::SplitManifest s;
  if (table.header == ingest::annotation_header()) {
    s = tasks::make_pooled_split(ingest::parse_annotations(table), ratio, g.seed);
  } else {
    const auto id_col = std::find(table.header.begin(), table.header.end(), "video_id");
    if (id_col == table.header.end()) throw ValidationError(videos + ": no video_id column");
    std::vector<std::string> ids;
    for (const auto& row : table.rows) ids.push_back(row.at(static_cast<std::size_t>(id_col - table.header.begin())));
    s = tasks::make_split(ids, ratio, g.seed);
  }
  const RunDirectory run = g.dir();
  run.create();
  const fs::path out = out_arg.empty() ? run.splits() / "split.json" : fs::path(out_arg);
  tasks::write_split(out.string(), s);
  std::cout << "split " << s.train_video_ids.size() + s.test_video_ids.size() << " videos: " << s.train_video_ids.size()
            << " train / " << s.test_video_ids.size() << " test, hash " << std::hex << std::setw(16)
            << std::setfill('0') << tasks::split_hash(s) << std::dec << " -> " << out.string() << '\n';
  run.record("split", {{"videos", videos}, {"ratio", ratio}, {"out", out.string()}}, g.seed);
  return kOk;
}

int cmd_build_task(const Globals& g, const std::string& task_arg, const std::string& split_arg,
                   const std::string& annotations) {
  const RunDirectory run = g.dir();
  const fs::path split_path = split_arg.empty() ? run.splits() / "split.json" : fs::path(split_arg);
  const auto split = tasks::read_split(split_path.string());
  const auto records = ingest::read_annotations(annotations);
  const auto counts = canonical_frame_counts(run.canonical());
  std::vector<const tasks::TaskSpec*> selected;
  if (task_arg == "all")
    for (const auto& t : tasks::task_specs()) selected.push_back(&t);
  else
    selected.push_back(&tasks::task_by_name(task_arg));
  run.create();
  for (const auto* t : selected) {
    const auto ds = tasks::build_task_dataset(*t, split, records, counts);
    tasks::write_dataset(run.task_file(*t).string(), ds);
    std::cout << t->name << ": " << ds.train.size() << " train / " << ds.test.size() << " test segments";
    for (const auto& [reason, n] : ds.skipped) std::cout << ", " << n << " skipped (" << reason << ")";
    std::cout << '\n';
    for (const auto& w : ds.warnings) std::cerr << "warning: " << t->name << ": " << w << '\n';
  }
  run.record("build-task:" + task_arg, {{"split", split_path.string()}, {"annotations", annotations}}, g.seed);
  return kOk;
}

// ---------------------------------------------------------------------------
// train / eval / embed

struct TrainArgs {
  std::string task, model = "vidnext", preset = "tiny", config, name;
  bool multi_task = false, resume = false, no_balance = false;
  std::optional<int> epochs, batch_size, input_size;
  std::optional<double> lr, weight_decay, val_fraction, stop_at;
};

/// Defaults, overlaid by the --config file ({"train": {...}, "model": {...}}), overlaid by flags.
train::TrainConfig train_config(const Globals& g, const TrainArgs& a, json* model_overrides = nullptr) {
  train::TrainConfig cfg;
  if (!a.config.empty()) {
    const json file = train::read_json(a.config);
    if (file.contains("train")) cfg = file.at("train").get<train::TrainConfig>();
    if (model_overrides && file.contains("model")) *model_overrides = file.at("model");
  }
  cfg.seed = g.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.lr) cfg.optimizer.lr = *a.lr;
  if (a.weight_decay) cfg.optimizer.weight_decay = *a.weight_decay;
  if (a.val_fraction) cfg.val_fraction = *a.val_fraction;
  if (a.stop_at) cfg.stop_at = *a.stop_at;
  cfg.validate();
  return cfg;
}

tasks::TaskDataset load_task(const RunDirectory& run, const tasks::TaskSpec& t) {
  const fs::path p = run.task_file(t);
  if (!fs::exists(p)) throw ValidationError("no dataset for task " + t.name + " (run build-task --task " + t.name + ")");
  return tasks::read_dataset(p.string());
}

train::TaskData task_data(const tasks::TaskDataset& ds, const train::TrainConfig& cfg, bool balance) {
  train::TaskData d;
  d.task_id = ds.task_id;
  std::tie(d.train, d.val) = train::validation_split(ds.train, cfg.val_fraction, cfg.seed);
  if (balance && ds.task().is_regression()) {
    Rng rng(derive_seed(cfg.seed, 0xBA1));
    d.train = tasks::balance_ttc(d.train, rng);
  }
  if (d.train.empty()) throw ValidationError("task " + ds.task().name + " has no training segments");
  return d;
}

void print_report(const eval::MetricReport& r) {
  std::cout << tasks::task_by_id(r.task_id).name << " [" << r.split << ", " << r.n_segments << " segments]";
  if (r.accuracy) std::cout << " accuracy " << fixed(*r.accuracy);
  if (r.macro_f1) std::cout << " macro_f1 " << fixed(*r.macro_f1);
  if (r.mse) std::cout << " mse " << fixed(*r.mse);
  std::cout << '\n';
}

train::StepHook progress_hook() {
  return [](int epoch, int batch, double loss, double lr) {
    if (batch % 20 == 0)
      std::cerr << "epoch " << epoch << " batch " << batch << " loss " << fixed(loss) << " lr " << lr << '\n';
  };
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const RunDirectory run = g.dir();
  json model_overrides;
  const auto cfg = train_config(g, a, &model_overrides);
  std::vector<tasks::TaskDataset> datasets;
  std::vector<model::HeadConfig> heads;
  if (a.multi_task) {
    std::vector<std::string> missing;
    for (const auto& t : tasks::task_specs()) {
      if (!fs::exists(run.task_file(t))) {
        missing.push_back(t.name);
        continue;
      }
      datasets.push_back(load_task(run, t));
      heads.push_back({t.id, t.output_size()});
    }
    if (!missing.empty()) {
      std::string list;
      for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
      throw ValidationError("multi-task training needs all nine task datasets; missing: " + list);
    }
  } else {
    if (a.task.empty()) throw ValidationError("--task is required unless --multi-task is given");
    const auto& t = tasks::task_by_name(a.task);
    datasets.push_back(load_task(run, t));
    heads.push_back({t.id, t.output_size()});
  }

  auto mcfg = model::make_preset(a.preset, model::parse_variant(a.model), heads);
  if (!model_overrides.is_null()) {
    json merged = mcfg;
    merged.merge_patch(model_overrides);
    mcfg = merged.get<model::VidNeXtConfig>();
    mcfg.task_heads = heads;
  }
  if (a.input_size) mcfg.encoder.input_size = *a.input_size;

  const std::string name = a.name.empty() ? a.model + "_" + (a.multi_task ? std::string("multi") : a.task) : a.name;
  const fs::path ckpt = run.checkpoints() / name;
  model::VidNeXt<float> m(mcfg, derive_seed(g.seed, 0x30D), true);
  std::cout << "model " << a.model << "/" << a.preset << ": " << m.parameters().scalar_count() << " parameters\n";

  std::vector<train::TaskData> data;
  for (const auto& ds : datasets) data.push_back(task_data(ds, cfg, !a.no_balance));
  train::StoreSource src{videoproc::CanonicalStore(run.canonical())};
  for (const auto& d : data) {
    eval::require_segments(src, d.train);
    eval::require_segments(src, d.val);
  }
  const auto result = train::fit(m, data, src, cfg, ckpt, a.resume, progress_hook());
  std::cout << "trained " << result.epochs_completed << " epoch(s); best epoch " << result.best_epoch << ", monitor "
            << fixed(result.best_monitor) << "; checkpoint " << ckpt.string() << '\n';
  for (const auto& r : result.last_validation) print_report(r);
  run.record("train:" + name,
             {{"model", mcfg}, {"train", cfg}, {"tasks", a.multi_task ? "all" : a.task}, {"balance", !a.no_balance}},
             g.seed);
  return kOk;
}

struct EvalArgs {
  std::string checkpoint, task, mode = "full", split = "test", out;
  TrainArgs train;
};

int cmd_eval(const Globals& g, const EvalArgs& a) {
  const RunDirectory run = g.dir();
  const auto& task = tasks::task_by_name(a.task);
  const auto ds = load_task(run, task);
  const auto mode = eval::parse_transfer_mode(a.mode);
  train::StoreSource src{videoproc::CanonicalStore(run.canonical())};
  const fs::path ckpt(a.checkpoint);
  const std::string stem = ckpt.filename().empty() ? ckpt.parent_path().filename().string() : ckpt.filename().string();
  eval::MetricReport report;
  json config = {{"checkpoint", a.checkpoint}, {"mode", a.mode}, {"split", a.split}};
  if (mode == eval::TransferMode::full) {
    const auto m = train::load_checkpoint<float>(ckpt);
    bool has_head = false;
    for (const auto& h : m.config().task_heads) has_head = has_head || h.task_id == task.id;
    if (!has_head)
      throw ValidationError("checkpoint has no head for task " + task.name + "; use --mode linear or finetune");
    if (m.config().head_for(task.id).output_size != task.output_size())
      throw ValidationError("checkpoint head for task " + task.name + " has the wrong output size");
    report = eval::evaluate(m, ds, src, a.split);
  } else {
    const auto cfg = train_config(g, a.train);
    auto m = eval::transfer_model<float>(ckpt, task, derive_seed(g.seed, 0x7F));
    const fs::path work = run.checkpoints() / (stem + "-" + a.mode + "-" + task.name);
    report = eval::transfer_eval(m, ds, mode, src, cfg, work).report;
    config["train"] = cfg;
  }
  run.create();
  const fs::path out = a.out.empty() ? run.reports() / ("eval_" + stem + "_" + task.name + "_" + a.mode + ".json")
                                     : fs::path(a.out);
  train::write_json(out, report);
  print_report(report);
  std::cout << "report -> " << out.string() << '\n';
  run.record("eval:" + stem + ":" + task.name + ":" + a.mode, config, g.seed);
  return kOk;
}

int cmd_embed(const Globals& g, const std::string& checkpoint, std::size_t n, const std::string& task_arg,
              const std::string& out_arg) {
  const RunDirectory run = g.dir();
  const auto m = train::load_checkpoint<float>(checkpoint);
  const auto& task = task_arg.empty() ? tasks::task_by_id(m.config().task_heads.front().task_id)
                                      : tasks::task_by_name(task_arg);
  const auto ds = load_task(run, task);
  train::StoreSource src{videoproc::CanonicalStore(run.canonical())};
  const auto e = eval::export_embeddings(m, ds, src, n, g.seed);
  run.create();
  const fs::path out = out_arg.empty() ? run.reports() / ("embeddings_" + task.name + ".csv") : fs::path(out_arg);
  eval::write_embeddings(out, e);
  std::cout << "exported " << e.rows.size() << " x " << (e.rows.empty() ? 0 : e.rows[0].size()) << " embeddings -> "
            << out.string() << '\n';
  run.record("embed:" + task.name, {{"checkpoint", checkpoint}, {"n", n}}, g.seed);
  return kOk;
}

// ---------------------------------------------------------------------------
// stats / report

int cmd_stats(const Globals& g, const std::string& annotations, const std::string& manifest) {
  const auto records = ingest::read_annotations(annotations);
  std::vector<ingest::VideoManifestEntry> entries;
  if (!manifest.empty()) entries = ingest::parse_manifest(manifest);
  const auto report = eval::dataset_stats(records, g.vocabulary(), manifest.empty() ? nullptr : &entries);
  const RunDirectory run = g.dir();
  run.create();
  const fs::path out = run.reports() / "stats.json";
  train::write_json(out, report);
  std::cout << report.n_videos << " videos\n";
  for (const auto& h : report.histograms) {
    std::cout << h.name << ':';
    for (std::size_t i = 0; i < h.bins.size(); ++i) std::cout << ' ' << h.bins[i] << '=' << h.counts[i];
    std::cout << '\n';
  }
  for (const auto& [name, v] : report.ratios.items()) std::cout << name << ": " << v.dump() << '\n';
  std::cout << "stats -> " << out.string() << '\n';
  run.record("stats", {{"annotations", annotations}, {"manifest", manifest}}, g.seed);
  return kOk;
}

int cmd_report(const Globals& g) {
  const RunDirectory run = g.dir();
  if (!fs::is_directory(run.reports())) throw ValidationError("no reports under " + run.root.string());
  std::vector<fs::path> written;
  const fs::path stats_path = run.reports() / "stats.json";
  if (fs::exists(stats_path)) {
    const auto stats = train::read_json(stats_path).get<eval::StatsReport>();
    for (const auto& h : stats.heatmaps) {
      written.push_back(run.reports() / ("heatmap_" + h.name + ".png"));
      eval::write_png(written.back().string(), eval::render_heatmap(h));
    }
    for (const auto& h : stats.histograms) {
      written.push_back(run.reports() / ("hist_" + h.name + ".png"));
      eval::write_png(written.back().string(), eval::render_histogram(h));
    }
  }
  std::vector<fs::path> inputs;
  for (const auto& e : fs::directory_iterator(run.reports())) inputs.push_back(e.path());
  std::sort(inputs.begin(), inputs.end());
  json summary = json::array();
  for (const auto& p : inputs) {
    const std::string stem = p.stem().string();
    if (p.extension() == ".csv" && stem.rfind("embeddings", 0) == 0) {
      const auto e = eval::read_embeddings(p);
      if (e.rows.size() < 4) continue;
      eval::TsneOptions o;
      o.seed = g.seed;
      const auto t = eval::tsne(e.rows, o);
      std::vector<std::array<double, 2>> points;
      std::vector<int> labels;
      std::ofstream os(run.reports() / ("tsne_" + stem + ".csv"));
      os << "id,label,x,y\n";
      for (std::size_t i = 0; i < e.rows.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        points.push_back({t.y(r, 0), t.y(r, 1)});
        labels.push_back(static_cast<int>(std::floor(e.labels[i])));
        os << e.ids[i] << ',' << e.labels[i] << ',' << t.y(r, 0) << ',' << t.y(r, 1) << '\n';
      }
      written.push_back(run.reports() / ("tsne_" + stem + ".png"));
      eval::write_png(written.back().string(), eval::render_scatter(points, labels));
      std::cout << "t-SNE of " << e.rows.size() << " embeddings: KL " << fixed(t.kl) << ", silhouette "
                << fixed(eval::silhouette(e.rows, labels)) << '\n';
    } else if (p.extension() == ".json" && stem.rfind("eval_", 0) == 0) {
      json r = train::read_json(p);
      r["file"] = p.filename().string();
      summary.push_back(r);
    }
  }
  if (!summary.empty()) {
    written.push_back(run.reports() / "summary.json");
    train::write_json(written.back(), summary);
  }
  for (const auto& p : written) std::cout << "wrote " << p.string() << '\n';
  if (written.empty()) std::cout << "nothing to render under " << run.reports().string() << '\n';
  return kOk;
}

void add_train_flags(CLI::App* c, TrainArgs& t) {
  c->add_option("--epochs", t.epochs, "Training epochs (default 50)");
  c->add_option("--batch-size", t.batch_size, "Minibatch size (default 32)");
  c->add_option("--lr", t.lr, "Initial AdamW learning rate (default 2e-6)");
  c->add_option("--weight-decay", t.weight_decay, "AdamW decoupled weight decay (default 0.01)");
  c->add_option("--val-fraction", t.val_fraction, "Share of training videos held out for validation (default 0.1)");
  c->add_option("--stop-at", t.stop_at, "Stop once the validation monitor reaches this value");
  c->add_option("--config", t.config, "JSON file with \"train\" and \"model\" sections; flags take precedence");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cyclesafe: cyclist-crash video dataset tools, VidNeXt training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--run", g.run, "Run directory holding canonical/, splits/, tasks/, checkpoints/, reports/")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--vocab", g.vocab, "Vocabulary JSON (object types, camera positions); built-in list if omitted");

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic video suite with ground-truth labels");
  synth->add_option("--n", synth_args.n, "Number of videos")->capture_default_str();
  synth->add_option("--mix", synth_args.mix, "Scenario mix, kind:weight pairs")->capture_default_str();
  synth->add_option("--out", synth_args.out, "Output directory (default <run>/synth)");
  synth->add_option("--width", synth_args.width, "Rendered width")->capture_default_str();
  synth->add_option("--height", synth_args.height, "Rendered height")->capture_default_str();
  synth->add_option("--fps", synth_args.fps, "Rendered frame rate")->capture_default_str();
  synth->add_option("--min-duration", synth_args.min_duration, "Shortest clip in seconds")->capture_default_str();
  synth->add_option("--max-duration", synth_args.max_duration, "Longest clip in seconds")->capture_default_str();
  synth->add_flag("--no-video", synth_args.no_video, "Write labels and manifest only");

  PreprocessArgs pre_args;
  auto* pre = app.add_subcommand("preprocess", "Canonicalize raw clips to 1280x720 at 30 fps");
  pre->add_option("--manifest", pre_args.manifest, "Video manifest CSV")->required()->check(CLI::ExistingFile);
  pre->add_option("--raw-dir", pre_args.raw_dir, "Directory of raw videos")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--out", g.run, "Run directory receiving canonical/ (same as --run)");
  pre->add_option("--workers", pre_args.workers, "Parallel preprocessing workers")->capture_default_str();
  pre->add_flag("--force", pre_args.force, "Rebuild clips that already exist");
  pre->add_flag("--mp4", pre_args.mp4, "Also export an inspection MP4 per clip (needs the transcoder)");

  std::string annotations, manifest;
  auto* validate = app.add_subcommand("validate", "Check an aggregated annotation file");
  validate->add_option("--annotations", annotations, "Annotation CSV")->required()->check(CLI::ExistingFile);
  validate->add_option("--manifest", manifest, "Manifest CSV bounding time_to_collision by clip duration");

  std::vector<std::string> raw_labels;
  std::string out;
  auto* aggregate = app.add_subcommand("aggregate", "Merge three raters' labels into one annotation file");
  aggregate->add_option("--raw-labels", raw_labels, "Three per-rater label CSVs")->required()->expected(3);
  aggregate->add_option("--out", out, "Output annotation CSV")->required();

  std::string fields;
  auto* agreement = app.add_subcommand("agreement", "Free-marginal multirater kappa per field");
  agreement->add_option("--raw-labels", raw_labels, "Per-rater label CSVs")->required()->expected(2, 64);
  agreement->add_option("--fields", fields, "Comma-separated fields (default: all)");

  int labellers = 3;
  std::string batches;
  auto* assign = app.add_subcommand("assign", "Latin-square labelling schedule");
  assign->add_option("--labellers", labellers, "Number of labellers")->capture_default_str();
  assign->add_option("--batches", batches, "Text file with one batch id per line")->required()->check(CLI::ExistingFile);
  assign->add_option("--out", out, "Optional CSV output");

  std::string videos;
  double ratio = 0.7;
  auto* split = app.add_subcommand("split", "Video-level train/test split");
  split->add_option("--videos", videos, "Annotation, manifest or video_id CSV")->required()->check(CLI::ExistingFile);
  split->add_option("--ratio", ratio, "Training share")->capture_default_str();
  split->add_option("--out", out, "Split JSON (default <run>/splits/split.json)");

  std::string task_name, split_file;
  auto* build = app.add_subcommand("build-task", "Label segment windows for one task (or all)");
  build->add_option("--task", task_name, "risk, row, anticipation, ttc, severity, fault, age, direction, object-direction or all")
      ->required();
  build->add_option("--split", split_file, "Split JSON (default <run>/splits/split.json)");
  build->add_option("--annotations", annotations, "Aggregated annotation CSV")->required()->check(CLI::ExistingFile);

  TrainArgs train_args;
  auto* trn = app.add_subcommand("train", "Train a model on a task dataset");
  trn->add_option("--task", train_args.task, "Task name or id");
  trn->add_option("--model", train_args.model, "vidnext, convnext-vt or resnet-nst")->capture_default_str();
  trn->add_option("--preset", train_args.preset, "tiny or base")->capture_default_str();
  trn->add_flag("--multi-task", train_args.multi_task, "Attach all nine heads and train jointly");
  trn->add_option("--input-size", train_args.input_size, "Override the frame size fed to the encoder");
  trn->add_option("--name", train_args.name, "Checkpoint directory name under <run>/checkpoints");
  trn->add_flag("--resume", train_args.resume, "Continue from the checkpoint's last epoch");
  trn->add_flag("--no-balance", train_args.no_balance, "Skip time-to-collision bin upsampling");
  add_train_flags(trn, train_args);

  EvalArgs eval_args;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint, optionally after linear or finetune transfer");
  ev->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--task", eval_args.task, "Target task")->required();
  ev->add_option("--mode", eval_args.mode, "full, linear or finetune")->capture_default_str();
  ev->add_option("--split", eval_args.split, "train or test")->capture_default_str();
  ev->add_option("--out", eval_args.out, "Report JSON (default under <run>/reports)");
  add_train_flags(ev, eval_args.train);

  std::string checkpoint;
  std::size_t n_embed = 1000;
  auto* embed = app.add_subcommand("embed", "Export video embeddings for projection plots");
  embed->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  embed->add_option("--n", n_embed, "Number of random samples")->capture_default_str();
  embed->add_option("--task", task_name, "Dataset to sample (default: the checkpoint's first head)");
  embed->add_option("--out", out, "Embedding CSV (default under <run>/reports)");

  auto* stats = app.add_subcommand("stats", "Dataset histograms, heatmaps and ratios");
  stats->add_option("--annotations", annotations, "Annotation CSV")->required()->check(CLI::ExistingFile);
  stats->add_option("--manifest", manifest, "Manifest CSV for the duration histogram");

  auto* report = app.add_subcommand("report", "Render PNG plots and a metric summary for a run");
  report->add_option("--run", g.run, "Run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*synth) return cmd_synth(g, synth_args);
    if (*pre) return cmd_preprocess(g, pre_args);
    if (*validate) return cmd_validate(g, annotations, manifest);
    if (*aggregate) return cmd_aggregate(g, raw_labels, out);
    if (*agreement) return cmd_agreement(g, raw_labels, fields);
    if (*assign) return cmd_assign(labellers, batches, out);
    if (*split) return cmd_split(g, videos, ratio, out);
    if (*build) return cmd_build_task(g, task_name, split_file, annotations);
    if (*trn) return cmd_train(g, train_args);
    if (*ev) return cmd_eval(g, eval_args);
    if (*embed) return cmd_embed(g, checkpoint, n_embed, task_name, out);
    if (*stats) return cmd_stats(g, annotations, manifest);
    if (*report) return cmd_report(g);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
