#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "cyclesafe/synth/rendered_source.hpp"
#include "cyclesafe/synth/suite.hpp"
#include "cyclesafe/train/trainer.hpp"

using namespace cyclesafe;
using namespace cyclesafe::train;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cyclesafe_train_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

model::VidNeXtConfig small_config(std::vector<model::HeadConfig> heads = {{8, 5}}) {
  auto c = model::make_preset("tiny", model::Variant::vidnext, std::move(heads));
  c.encoder.input_size = 32;
  c.encoder.dims = {4, 8};
  c.embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.projector_hidden = 8;
  c.head_hidden = 8;
  return c;
}

struct Fixture {
  synth::Suite suite;
  synth::RenderedSource source;
  tasks::SplitManifest split;

  explicit Fixture(int n = 8, std::uint64_t seed = 1)
      : suite(make(n, seed)), source(suite.scenarios, 16), split(tasks::make_pooled_split(suite.annotations, 0.75, seed)) {}

  static synth::Suite make(int n, std::uint64_t seed) {
    synth::SuiteOptions o;
    o.n_videos = n;
    o.seed = seed;
    o.params.min_duration = o.params.max_duration = 3.0;
    return synth::make_suite(o);
  }

  tasks::TaskDataset dataset(const std::string& task) {
    return tasks::build_task_dataset(tasks::task_by_name(task), split, suite.annotations, source.frame_counts());
  }
};

TrainConfig quick_config() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 1;
  c.optimizer.lr = 1e-3;
  c.seed = 5;
  return c;
}

// Plain per-element AdamW, written independently of the library implementation.
struct ReferenceAdamW {
  double lr, b1, b2, eps, wd;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& p, const std::vector<double>& g) {
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] = p[i] - lr * wd * p[i];
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(b1, t));
      const double vhat = v[i] / (1 - std::pow(b2, t));
      p[i] = p[i] - lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
};

}  // namespace

TEST(AdamW, MatchesReferenceOnToyProblem) {
  model::ParameterSet<double> ps;
  ps.add("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  AdamWConfig cfg{0.01, 0.9, 0.999, 1e-8, 0.05};
  AdamW<double> opt(ps, cfg);
  ReferenceAdamW ref{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, {0, 0, 0}, {0, 0, 0}};
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::array<double, 3> a{1.5, -0.7, 2.0}, b{0.3, 1.0, -1.0};
  auto grad = [&](const std::vector<double>& x) {
    std::vector<double> g(3);
    for (int i = 0; i < 3; ++i) g[i] = 2 * a[i] * (a[i] * x[i] - b[i]) + std::sin(x[(i + 1) % 3]);
    return g;
  };
  for (int s = 0; s < 100; ++s) {
    const std::vector<double> cur(ps.at("w").value().data(), ps.at("w").value().data() + 3);
    const auto g = grad(cur);
    std::copy(g.begin(), g.end(), ps.at("w").mutable_grad().data());
    opt.step();
    ps.zero_grad();
    ref.step(p, grad(p));
    for (int i = 0; i < 3; ++i) ASSERT_NEAR(ps.at("w").value()[i], p[i], 1e-10) << "step " << s;
  }
}

TEST(AdamW, ZeroGradientShrinksByDecoupledDecayExactly) {
  model::ParameterSet<double> ps;
  ps.add("w", Tensor<double>({4}, std::vector<double>{1.0, -3.0, 0.25, 7.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamW<double> opt(ps, cfg);
  std::vector<double> expect{1.0, -3.0, 0.25, 7.0};
  for (int s = 0; s < 10; ++s) {
    ps.at("w").mutable_grad().fill(0.0);
    opt.step();
    for (int i = 0; i < 4; ++i) {
      expect[static_cast<std::size_t>(i)] *= (1.0 - cfg.lr * cfg.weight_decay);
      EXPECT_EQ(ps.at("w").value()[i], expect[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(AdamW, ParametersWithoutGradientsAreUntouched) {
  model::ParameterSet<double> ps;
  ps.add("a", Tensor<double>({2}, 1.0));
  ps.add("b", Tensor<double>({2}, 1.0));
  AdamW<double> opt(ps, {0.1, 0.9, 0.999, 1e-8, 0.5});
  ps.at("a").mutable_grad().fill(1.0);
  opt.step();
  EXPECT_NE(ps.at("a").value()[0], 1.0);
  EXPECT_EQ(ps.at("b").value()[0], 1.0);
}

TEST(Plateau, ImprovingHistoryKeepsRate) {
  EXPECT_EQ(plateau_schedule({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8}, 1e-3), 1e-3);
}

TEST(Plateau, FlatHistoryOfPatiencePlusOneHalvesOnce) {
  PlateauConfig c;
  EXPECT_EQ(plateau_schedule(std::vector<double>(static_cast<std::size_t>(c.patience + 1), 0.5), 1e-3, c), 5e-4);
  EXPECT_EQ(plateau_schedule(std::vector<double>(static_cast<std::size_t>(c.patience), 0.5), 1e-3, c), 1e-3);
  // Gains below the relative threshold do not count as improvement.
  EXPECT_EQ(plateau_schedule({0.5, 0.50001, 0.50002, 0.50003, 0.50004, 0.50005}, 1e-3, c), 5e-4);
}

TEST(Plateau, RateAtFloorIsUnchanged) {
  PlateauConfig c;
  const std::vector<double> flat(30, 1.0);
  EXPECT_EQ(plateau_schedule(flat, c.min_lr, c), c.min_lr);
  EXPECT_EQ(plateau_schedule(flat, 0.0, c), 0.0);
  EXPECT_EQ(plateau_schedule(flat, 3e-8, c), 1e-8);
}

TEST(Plateau, StateRoundTripsThroughJson) {
  PlateauScheduler s(1e-3);
  for (double m : {0.3, 0.2, 0.2}) s.step(m);
  const PlateauScheduler r = nlohmann::json(s).get<PlateauScheduler>();
  EXPECT_EQ(r.lr(), s.lr());
  EXPECT_EQ(r.best(), s.best());
  EXPECT_EQ(r.bad_epochs(), s.bad_epochs());
}

TEST(Loss, UniformLogitsGiveLogC) {
  const auto& task = tasks::task_by_name("severity");
  const Var<double> logits(Tensor<double>({3, 5}, 0.7));
  const std::vector<double> labels{0, 3, 4};
  EXPECT_NEAR(loss_for_task(task, logits, labels).value()[0], std::log(5.0), 1e-12);
}

TEST(Loss, RegressionIsMeanSquaredSeconds) {
  const auto& task = tasks::task_by_name("ttc");
  const Var<double> pred(Tensor<double>({2}, std::vector<double>{1.0, 2.0}));
  const std::vector<double> y{0.0, 2.0};
  EXPECT_DOUBLE_EQ(loss_for_task(task, pred, y).value()[0], 0.5);
}

TEST(Loss, LargeCorrectMarginTendsToZero) {
  const auto& task = tasks::task_by_name("fault");
  const Var<double> logits(Tensor<double>({2, 2}, std::vector<double>{60.0, -60.0, -60.0, 60.0}));
  const std::vector<double> labels{0, 1};
  EXPECT_LT(loss_for_task(task, logits, labels).value()[0], 1e-40);
}

TEST(Loss, LabelOutsideClassRangeThrows) {
  const auto& task = tasks::task_by_name("fault");
  const Var<double> logits(Tensor<double>({1, 2}, 0.0));
  EXPECT_THROW(loss_for_task(task, logits, std::vector<double>{2.0}), std::out_of_range);
  EXPECT_THROW(loss_for_task(task, logits, std::vector<double>{-1.0}), std::out_of_range);
}

TEST(ValidationSplit, HoldsOutWholeVideos) {
  std::vector<tasks::LabeledSegment> segs;
  for (int v = 0; v < 20; ++v)
    for (int k = 0; k < 3; ++k) segs.push_back({"v" + std::to_string(v), 15 * k, 0.0, 0});
  const auto [tr, va] = validation_split(segs, 0.1, 3);
  EXPECT_EQ(va.size(), 6u);
  EXPECT_EQ(tr.size() + va.size(), segs.size());
  for (const auto& a : va)
    for (const auto& b : tr) EXPECT_NE(a.video_id, b.video_id);
  EXPECT_TRUE(validation_split(segs, 0.0, 3).second.empty());
}

TEST(Training, ZeroLearningRateLeavesParametersBitIdentical) {
  Fixture f;
  const auto ds = f.dataset("direction");
  model::VidNeXt<float> m(small_config(), 3);
  const auto before = m.parameters().snapshot();
  TrainConfig c = quick_config();
  c.optimizer.lr = 0.0;
  const auto dir = temp_dir("lr0");
  train_task(m, ds, f.source, c, dir);
  for (const auto& e : m.parameters().entries()) EXPECT_TRUE(bit_equal(before.at(e.name), e.var.value())) << e.name;
  fs::remove_all(dir);
}

TEST(Training, SameSeedGivesIdenticalLossCurves) {
  Fixture f;
  const auto ds = f.dataset("direction");
  TrainConfig c = quick_config();
  c.epochs = 2;
  std::vector<std::vector<double>> curves;
  for (int run = 0; run < 2; ++run) {
    model::VidNeXt<float> m(small_config(), 3);
    const auto dir = temp_dir("det" + std::to_string(run));
    curves.push_back(train_task(m, ds, f.source, c, dir).train_loss);
    fs::remove_all(dir);
  }
  EXPECT_EQ(curves[0], curves[1]);
  EXPECT_EQ(curves[0].size(), 2u);
}

TEST(Training, ResumeReproducesTheUninterruptedRun) {
  Fixture f;
  const auto ds = f.dataset("direction");
  TrainConfig c = quick_config();
  c.epochs = 3;
  model::VidNeXt<float> full(small_config(), 3);
  const auto dir_full = temp_dir("full");
  const auto ref = train_task(full, ds, f.source, c, dir_full);

  const auto dir = temp_dir("resume");
  {
    model::VidNeXt<float> m(small_config(), 3);
    TrainConfig first = c;
    first.epochs = 2;
    train_task(m, ds, f.source, first, dir);
  }
  model::VidNeXt<float> resumed(small_config(), 99);
  const auto r = train_task(resumed, ds, f.source, c, dir, true);
  ASSERT_EQ(r.train_loss.size(), 3u);
  EXPECT_EQ(r.train_loss, ref.train_loss);
  for (const auto& e : full.parameters().entries())
    EXPECT_TRUE(bit_equal(e.var.value(), resumed.parameters().at(e.name).value())) << e.name;

  std::ifstream log(CheckpointPaths{dir}.log());
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j.contains("epoch") && j.contains("split") && j.contains("lr"));
    ++lines;
  }
  EXPECT_EQ(lines, 6);
  fs::remove_all(dir);
  fs::remove_all(dir_full);
}

TEST(Training, ResumeRejectsADifferentDataset) {
  Fixture f;
  auto ds = f.dataset("direction");
  const auto dir = temp_dir("mismatch");
  model::VidNeXt<float> m(small_config(), 3);
  train_task(m, ds, f.source, quick_config(), dir);
  ds.train.pop_back();
  EXPECT_THROW(train_task(m, ds, f.source, quick_config(), dir, true), ValidationError);
  fs::remove_all(dir);
}

TEST(Training, NonFiniteLossAbortsWithBatchAndRate) {
  Fixture f;
  const auto ds = f.dataset("direction");
  model::VidNeXt<float> m(small_config(), 3);
  for (auto& e : m.parameters().entries())
    if (e.name.rfind("heads.8", 0) == 0) {
      Var<float> v = e.var;
      v.mutable_value().fill(std::numeric_limits<float>::quiet_NaN());
    }
  const auto dir = temp_dir("nan");
  try {
    train_task(m, ds, f.source, quick_config(), dir);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    EXPECT_NE(msg.find("lr 0.001"), std::string::npos) << msg;
  }
  fs::remove_all(dir);
}

TEST(Training, FrozenBackboneOnlyMovesTheHead) {
  Fixture f;
  const auto ds = f.dataset("direction");
  model::VidNeXt<float> m(small_config(), 3);
  const auto before = m.parameters().snapshot();
  TrainConfig c = quick_config();
  c.freeze_backbone = true;
  const auto dir = temp_dir("frozen");
  train_task(m, ds, f.source, c, dir);
  bool head_moved = false;
  for (const auto& e : m.parameters().entries()) {
    const bool head = e.name.rfind("heads.8.", 0) == 0;
    if (head) head_moved = head_moved || !bit_equal(before.at(e.name), e.var.value());
    else EXPECT_TRUE(bit_equal(before.at(e.name), e.var.value())) << e.name;
  }
  EXPECT_TRUE(head_moved);
  for (const auto& e : m.parameters().entries()) EXPECT_TRUE(e.var.requires_grad());
  fs::remove_all(dir);
}

TEST(Training, CheckpointRoundTripIsBitExact) {
  Fixture f;
  const auto ds = f.dataset("direction");
  model::VidNeXt<float> m(small_config(), 3);
  const auto dir = temp_dir("ckpt");
  TrainConfig c = quick_config();
  c.epochs = 2;
  train_task(m, ds, f.source, c, dir);
  const auto latest = load_checkpoint<float>(dir, false);
  for (const auto& e : m.parameters().entries())
    EXPECT_TRUE(bit_equal(e.var.value(), latest.parameters().at(e.name).value())) << e.name;
  const auto p1 = predict(m, ds.task(), f.source, ds.test, 4), p2 = predict(latest, ds.task(), f.source, ds.test, 4);
  EXPECT_EQ(p1.classes, p2.classes);
  const auto st = read_json(CheckpointPaths{dir}.state());
  EXPECT_EQ(st.at("epoch"), 2);
  EXPECT_TRUE(st.contains("fingerprint"));
  fs::remove_all(dir);
}

namespace {
// Counts window requests per video.
class CountingSource : public SegmentSource {
 public:
  explicit CountingSource(SegmentSource& inner) : inner_(inner) {}
  Tensor<float> raw_window(const tasks::LabeledSegment& s, const videoproc::ViewParams& v, int out) override {
    ++calls[s.video_id];
    return inner_.raw_window(s, v, out);
  }
  videoproc::ZScoreStats stats(const std::string& id) override { return inner_.stats(id); }
  bool contains(const std::string& id) override { return inner_.contains(id); }
  std::map<std::string, int> calls;

 private:
  SegmentSource& inner_;
};
}  // namespace

TEST(MultiTask, MissingHeadIsAnError) {
  Fixture f;
  model::VidNeXt<float> m(small_config(), 3);
  const auto dir = temp_dir("mt_missing");
  EXPECT_THROW(multi_task_train(m, {f.dataset("direction"), f.dataset("age")}, f.source, quick_config(), dir),
               std::invalid_argument);
  fs::remove_all(dir);
}

TEST(MultiTask, SingleDatasetReducesToTrainTask) {
  Fixture f;
  const auto ds = f.dataset("direction");
  TrainConfig c = quick_config();
  c.epochs = 2;
  model::VidNeXt<float> a(small_config(), 3), b(small_config(), 3);
  const auto da = temp_dir("single_a"), db = temp_dir("single_b");
  const auto ra = train_task(a, ds, f.source, c, da);
  const auto rb = multi_task_train(b, {ds}, f.source, c, db);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST(MultiTask, EqualSizedTasksAreSampledEqually) {
  Fixture f(12, 4);
  auto direction = f.dataset("direction");
  // Second task over a disjoint copy of the same segments, relabelled as ages.
  tasks::TaskDataset age;
  age.task_id = 7;
  std::vector<synth::Scenario> shadow;
  for (const auto& s : direction.train) {
    age.train.push_back({"copy_" + s.video_id, s.start_frame, static_cast<double>(s.start_frame / 15 % 3), 0});
  }
  for (auto sc : f.suite.scenarios) {
    sc.video_id = "copy_" + sc.video_id;
    shadow.push_back(sc);
  }
  for (const auto& sc : f.suite.scenarios) shadow.push_back(sc);
  synth::RenderedSource both(shadow, 16);
  CountingSource counting(both);
  model::VidNeXt<float> m(small_config({{8, 5}, {7, 3}}), 3);
  TrainConfig c = quick_config();
  c.val_fraction = 0.0;
  const auto dir = temp_dir("mt_equal");
  std::vector<double> step_losses;
  multi_task_train(m, {direction, age}, counting, c, dir, false,
                   [&](int, int, double loss, double) { step_losses.push_back(loss); });
  int original = 0, copies = 0;
  for (const auto& [id, n] : counting.calls) (id.rfind("copy_", 0) == 0 ? copies : original) += n;
  EXPECT_EQ(original, copies);
  EXPECT_EQ(original, static_cast<int>(direction.train.size()));
  EXPECT_EQ(step_losses.size(), (direction.train.size() + 3) / 4);
  fs::remove_all(dir);
}
