#include <gtest/gtest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "model_oracles.hpp"

using namespace cyclesafe;
using namespace cyclesafe::model;
using oracle::max_abs_diff;
using oracle::random_tensor;

namespace {

VidNeXtConfig small_config(Variant v = Variant::vidnext, std::vector<HeadConfig> heads = {{5, 5}, {4, 1}}) {
  auto c = make_preset("tiny", v, std::move(heads));
  c.encoder.input_size = 32;
  c.encoder.dims = {4, 8};
  c.embed_dim = 8;
  c.heads = 2;
  c.ffn_dim = 16;
  c.projector_hidden = 8;
  c.head_hidden = 8;
  return c;
}

Tensor<double> ones(Shape s) { return Tensor<double>(std::move(s), 1.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Attention

TEST(Attention, UnitTauZeroDeltaMatchesScaledDotProduct) {
  Rng rng(11);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t B = 1 + trial % 3, L = 1 + trial % 7, heads = 1 + trial % 2, d = 4 * heads;
    const auto q = random_tensor({B, L, d}, rng), k = random_tensor({B, L, d}, rng), v = random_tensor({B, L, d}, rng);
    const auto expected = oracle::sdpa(q, k, v, heads);
    worst = std::max(worst, max_abs_diff(destationary_attention(q, k, v, ones({B}), Tensor<double>({B, L}), heads), expected));
    worst = std::max(worst, max_abs_diff(destationary_attention(q, k, v, Tensor<double>(), Tensor<double>(), heads), expected));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Attention, BruteForceOracleSmallCase) {
  Rng rng(3);
  const auto q = random_tensor({1, 3, 4}, rng), k = random_tensor({1, 3, 4}, rng), v = random_tensor({1, 3, 4}, rng);
  const double tau = 1.7;
  const std::vector<double> delta{0.3, -0.8, 1.1};
  const auto got = destationary_attention(q, k, v, Tensor<double>({1}, {tau}), Tensor<double>({1, 3}, delta), 1);
  EXPECT_LT(max_abs_diff(got, oracle::brute_attention(q, k, v, tau, delta)), 1e-9);
}

TEST(Attention, RowsAreStochastic) {
  Rng rng(5);
  const auto q = random_tensor({2, 6, 8}, rng, 3.0), k = random_tensor({2, 6, 8}, rng, 3.0), v = random_tensor({2, 6, 8}, rng);
  const auto p = attention_probabilities(q, k, v, Tensor<double>({2}, {0.4, 2.5}), random_tensor({2, 6}, rng), 2);
  for (std::int64_t row = 0; row < p.numel() / 6; ++row) {
    double s = 0;
    for (int j = 0; j < 6; ++j) {
      EXPECT_GE(p[row * 6 + j], 0.0);
      s += p[row * 6 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Attention, SingleTokenReturnsValueRow) {
  Rng rng(8);
  const auto q = random_tensor({2, 1, 4}, rng), k = random_tensor({2, 1, 4}, rng), v = random_tensor({2, 1, 4}, rng);
  const auto out = destationary_attention(q, k, v, Tensor<double>({2}, {3.0, 0.1}), random_tensor({2, 1}, rng), 2);
  EXPECT_TRUE(bit_equal(out, v));
}

TEST(Attention, NonFiniteScoreIsAnError) {
  Rng rng(9);
  const auto q = random_tensor({1, 2, 4}, rng), k = random_tensor({1, 2, 4}, rng);
  Tensor<double> delta({1, 2}, {0.0, std::nan("")});
  EXPECT_THROW(destationary_attention(q, k, k, Tensor<double>(), delta, 1), std::domain_error);
}

TEST(Attention, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  Var<double> q(random_tensor({2, 3, 4}, rng), true), k(random_tensor({2, 3, 4}, rng), true),
      v(random_tensor({2, 3, 4}, rng), true), tau(Tensor<double>({2}, {0.6, 1.8}), true),
      delta(random_tensor({2, 3}, rng), true);
  const auto w = random_tensor({2, 3, 4}, rng);
  auto loss = [&] { return ops::sum(ops::mul(ops::attention(q, k, v, tau, delta, 2), ops::constant(w))); };
  backward(loss());
  NoGradGuard guard;
  for (Var<double>* x : {&q, &k, &v, &tau, &delta}) {
    Tensor<double>& t = x->mutable_value();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double orig = t[i], h = 1e-5;
      t[i] = orig + h;
      const double up = loss().value()[0];
      t[i] = orig - h;
      const double down = loss().value()[0];
      t[i] = orig;
      EXPECT_NEAR(x->grad()[i], (up - down) / (2 * h), 1e-7);
    }
  }
}

// ---------------------------------------------------------------------------
// Stationarization

TEST(Stationarize, SymmetricSeries) {
  const auto s = stationarize(Var<double>(Tensor<double>({1, 3, 1}, {1.0, 2.0, 3.0})), 1e-5);
  EXPECT_DOUBLE_EQ(s.mu.value()[0], 2.0);
  EXPECT_NEAR(s.sigma.value()[0], std::sqrt(2.0 / 3.0), 1e-15);
  EXPECT_NEAR(s.normalized.value()[0], -1.224744871391589, 1e-12);
  EXPECT_EQ(s.normalized.value()[1], 0.0);
  EXPECT_NEAR(s.normalized.value()[2], 1.224744871391589, 1e-12);
}

TEST(Stationarize, MomentsOfNormalizedSeries) {
  Rng rng(4);
  auto x = random_tensor({4, 30, 16}, rng);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] * (1 + i % 16) + 5.0 * (i % 3);
  const auto xp = stationarize(Var<double>(x), 1e-5).normalized.value();
  for (std::int64_t b = 0; b < 4; ++b)
    for (std::int64_t f = 0; f < 16; ++f) {
      double mean = 0, sq = 0;
      for (std::int64_t t = 0; t < 30; ++t) mean += xp[(b * 30 + t) * 16 + f] / 30;
      for (std::int64_t t = 0; t < 30; ++t) sq += std::pow(xp[(b * 30 + t) * 16 + f] - mean, 2) / 30;
      EXPECT_LT(std::abs(mean), 1e-5);
      EXPECT_LT(std::abs(std::sqrt(sq) - 1), 1e-5);
    }
}

TEST(Stationarize, FloatMomentsWithinTolerance) {
  Rng rng(6);
  const auto x = random_tensor({3, 30, 8}, rng, 4.0).cast<float>();
  const auto xp = stationarize(Var<float>(x), 1e-5f).normalized.value().cast<double>();
  for (std::int64_t b = 0; b < 3; ++b)
    for (std::int64_t f = 0; f < 8; ++f) {
      double mean = 0, sq = 0;
      for (std::int64_t t = 0; t < 30; ++t) mean += xp[(b * 30 + t) * 8 + f] / 30;
      for (std::int64_t t = 0; t < 30; ++t) sq += std::pow(xp[(b * 30 + t) * 8 + f] - mean, 2) / 30;
      EXPECT_LT(std::abs(mean), 1e-5);
      EXPECT_LT(std::abs(std::sqrt(sq) - 1), 1e-5);
    }
}

TEST(Stationarize, AffineInputInvariance) {
  Rng rng(12);
  const auto x = random_tensor({2, 10, 5}, rng);
  Tensor<double> y(x.shape());
  const std::vector<double> a{0.5, 2.0, 7.0, 1.0, 0.01}, b{-3.0, 4.0, 0.0, 100.0, 1.5};
  for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = a[i % 5] * x[i] + b[i % 5];
  EXPECT_LT(max_abs_diff(stationarize(Var<double>(x), 1e-5).normalized.value(),
                         stationarize(Var<double>(y), 1e-5).normalized.value()),
            1e-5);
}

TEST(Stationarize, ConstantSeriesIsGuarded) {
  const auto s = stationarize(Var<double>(Tensor<double>({1, 4, 2}, 3.5)), 1e-5);
  for (double v : s.normalized.value().values()) EXPECT_EQ(v, 0.0);
  const auto y = denormalize(Var<double>(Tensor<double>({1, 1, 2})), s.mu, s.sigma).value();
  EXPECT_EQ(y[0], 3.5);
  EXPECT_EQ(y[1], 3.5);
}

TEST(Stationarize, DenormalizeInvertsNormalization) {
  Rng rng(13);
  auto x = random_tensor({3, 30, 6}, rng, 2.0);
  for (std::int64_t i = 0; i < x.numel(); ++i) x[i] += 10.0 * (i % 6);
  const auto s = stationarize(Var<double>(x), 1e-5);
  EXPECT_LT(max_abs_diff(denormalize(s.normalized, s.mu, s.sigma).value(), x), 1e-5);
  EXPECT_TRUE(bit_equal(denormalize(Var<double>(Tensor<double>({3, 1, 6})), s.mu, s.sigma).value(), s.mu.value()));
}

// ---------------------------------------------------------------------------
// Projector and temporal model

TEST(Projector, ZeroInitialOutputsGiveIdentityFactors) {
  ParameterSet<double> ps;
  Rng rng(1);
  TauDeltaProjector<double> proj(ps, "projector", 6, 8, 4, rng);
  const Var<double> x(random_tensor({3, 6, 8}, rng));
  const auto s = stationarize(x, 1e-5);
  const auto f = proj(x, s.mu, s.sigma);
  for (double t : f.tau.value().values()) EXPECT_EQ(t, 1.0);
  for (double d : f.delta.value().values()) EXPECT_EQ(d, 0.0);
  EXPECT_EQ(ps.scalar_count(), TauDeltaProjector<double>::parameter_count(6, 8, 4));
}

TEST(Projector, TauPositiveAndIdenticalRowsForIdenticalSamples) {
  ParameterSet<double> ps;
  Rng rng(2);
  TauDeltaProjector<double> proj(ps, "projector", 5, 4, 6, rng);
  for (auto& e : ps.entries())
    for (auto& v : Var<double>(e.var).mutable_value().values()) v = std::normal_distribution<double>(0.0, 3.0)(rng);
  const auto one = random_tensor({1, 5, 4}, rng);
  Tensor<double> x({2, 5, 4});
  std::copy_n(one.data(), 20, x.data());
  std::copy_n(one.data(), 20, x.data() + 20);
  const auto s = stationarize(Var<double>(x), 1e-5);
  const auto f = proj(Var<double>(x), s.mu, s.sigma);
  EXPECT_GT(f.tau.value()[0], 0.0);
  EXPECT_EQ(f.tau.value()[0], f.tau.value()[1]);
  for (int t = 0; t < 5; ++t) EXPECT_EQ(f.delta.value()[t], f.delta.value()[5 + t]);
}

TEST(Temporal, VanillaEqualsPinnedFactors) {
  Rng rng(30);
  const Var<double> x(random_tensor({3, 30, 8}, rng));
  ParameterSet<double> ps;
  Rng init(31);
  NstEncoderDecoder<double> net(ps, 30, 8, 2, 16, 2, 1, init);
  const auto vanilla = net(x, Var<double>(), Var<double>()).value();
  const auto pinned = net(x, Var<double>(ones({3})), Var<double>(Tensor<double>({3, 30}))).value();
  EXPECT_EQ(vanilla.shape(), (Shape{3, 1, 8}));
  EXPECT_LT(max_abs_diff(vanilla, pinned), 1e-6);
}

TEST(Temporal, VanillaModelMatchesFreshNonStationaryModel) {
  auto ns_cfg = small_config(Variant::vidnext);
  auto v_cfg = small_config(Variant::convnext_vt);
  VidNeXt<double> ns(ns_cfg, 4), vanilla(v_cfg, 9);
  EXPECT_EQ(vanilla.parameters().import_matching(ns.parameters().snapshot()), vanilla.parameters().size());
  Rng rng(40);
  const Var<double> frames(random_tensor({2, 30, 32, 32, 3}, rng));
  EXPECT_LT(max_abs_diff(ns.forward(frames, 5).value(), vanilla.forward(frames, 5).value()), 1e-6);
}

TEST(Temporal, BatchPermutationPermutesOutputs) {
  ParameterSet<double> ps;
  Rng rng(50);
  NstEncoderDecoder<double> net(ps, 6, 8, 2, 16, 2, 1, rng);
  const auto x = random_tensor({3, 6, 8}, rng);
  Tensor<double> swapped(x.shape());
  for (int b = 0; b < 3; ++b) std::copy_n(x.data() + (2 - b) * 48, 48, swapped.data() + b * 48);
  const auto tau = Tensor<double>({3}, {0.5, 1.0, 2.0}), tau_sw = Tensor<double>({3}, {2.0, 1.0, 0.5});
  const auto y = net(Var<double>(x), Var<double>(tau), Var<double>()).value();
  const auto ys = net(Var<double>(swapped), Var<double>(tau_sw), Var<double>()).value();
  for (int b = 0; b < 3; ++b)
    for (int e = 0; e < 8; ++e) EXPECT_NEAR(y[b * 8 + e], ys[(2 - b) * 8 + e], 1e-12);
}

// ---------------------------------------------------------------------------
// Full model

TEST(Model, GradientCheckAllVariants) {
  for (auto enc : {EncoderKind::convnext_style, EncoderKind::resnet_style})
    for (auto temporal : {TemporalKind::non_stationary, TemporalKind::vanilla}) {
      const auto r = oracle::check_gradients(enc, temporal, 17);
      EXPECT_LE(r.max_rel_error, 1e-4) << nlohmann::json(enc) << "/" << nlohmann::json(temporal) << " worst "
                                       << r.worst;
      EXPECT_GT(r.checked, 1000);
    }
}

TEST(Model, OutputShapesPerHead) {
  VidNeXt<float> m(small_config(), 1);
  Rng rng(2);
  const Var<float> frames(random_tensor({2, 30, 32, 32, 3}, rng).cast<float>());
  EXPECT_EQ(m.forward(frames, 5).shape(), (Shape{2, 5}));
  EXPECT_EQ(m.forward(frames, 4).shape(), (Shape{2}));
  EXPECT_EQ(m.embed(frames).shape(), (Shape{2, 8}));
  EXPECT_EQ(m.encode_frames(frames).shape(), (Shape{2, 30, 8}));
}

TEST(Model, TinyPresetEncodesFullFrames) {
  VidNeXt<float> m(make_preset("tiny", Variant::vidnext, {{8, 5}}), 3);
  Rng rng(3);
  const Var<float> frames(random_tensor({2, 30, 224, 224, 3}, rng).cast<float>());
  NoGradGuard guard;
  EXPECT_EQ(m.encode_frames(frames).shape(), (Shape{2, 30, 128}));
}

TEST(Model, MissingHeadAndBadShapesAreErrors) {
  VidNeXt<float> m(small_config(), 1);
  const Var<float> frames(Tensor<float>({1, 30, 32, 32, 3}));
  EXPECT_THROW(m.forward(frames, 7), std::invalid_argument);
  EXPECT_THROW(m.forward(Var<float>(Tensor<float>({1, 29, 32, 32, 3})), 5), ShapeError);
  EXPECT_THROW(m.forward(Var<float>(Tensor<float>({1, 30, 16, 16, 3})), 5), ShapeError);
  auto c = small_config();
  c.seq_len = 4;
  EXPECT_THROW(VidNeXt<float>(c, 0), std::invalid_argument);
  EXPECT_NO_THROW(VidNeXt<float>(c, 0, false));
}

TEST(Model, EncoderSharesWeightsAcrossTimeAndBatch) {
  VidNeXt<double> m(small_config(Variant::resnet_nst), 6);
  Rng rng(7);
  auto x = random_tensor({2, 30, 32, 32, 3}, rng);
  const std::int64_t frame = 32 * 32 * 3;
  std::copy_n(x.data() + 3 * frame, frame, x.data() + 17 * frame);
  std::copy_n(x.data() + 3 * frame, frame, x.data() + 41 * frame);
  const auto e = m.encode_frames(Var<double>(x)).value();
  for (int f = 0; f < 8; ++f) {
    EXPECT_EQ(e[3 * 8 + f], e[17 * 8 + f]);
    EXPECT_EQ(e[3 * 8 + f], e[41 * 8 + f]);
  }
}

TEST(Model, BatchPermutationPermutesLogits) {
  VidNeXt<double> m(small_config(), 8);
  Rng rng(9);
  const auto x = random_tensor({3, 30, 32, 32, 3}, rng);
  const std::int64_t clip = 30 * 32 * 32 * 3;
  Tensor<double> rev(x.shape());
  for (int b = 0; b < 3; ++b) std::copy_n(x.data() + b * clip, clip, rev.data() + (2 - b) * clip);
  const auto y = m.forward(Var<double>(x), 5).value(), yr = m.forward(Var<double>(rev), 5).value();
  for (int b = 0; b < 3; ++b)
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(y[b * 5 + c], yr[(2 - b) * 5 + c], 1e-10);
}

TEST(Model, SameSeedIsBitIdentical) {
  VidNeXt<float> a(small_config(), 42), b(small_config(), 42), c(small_config(), 43);
  Rng rng(1);
  const Var<float> frames(random_tensor({2, 30, 32, 32, 3}, rng).cast<float>());
  EXPECT_TRUE(bit_equal(a.forward(frames, 5).value(), b.forward(frames, 5).value()));
  EXPECT_TRUE(bit_equal(a.forward(frames, 5).value(), a.forward(frames, 5).value()));
  EXPECT_FALSE(bit_equal(a.forward(frames, 5).value(), c.forward(frames, 5).value()));
}

TEST(Model, ParameterCountsMatchFormula) {
  for (auto v : {Variant::vidnext, Variant::convnext_vt, Variant::resnet_nst}) {
    const auto tiny = make_preset("tiny", v, {{8, 5}, {4, 1}});
    EXPECT_EQ(VidNeXt<float>(tiny, 0).parameters().scalar_count(), VidNeXt<float>::expected_parameter_count(tiny));
    const auto small = small_config(v);
    EXPECT_EQ(VidNeXt<float>(small, 0).parameters().scalar_count(), VidNeXt<float>::expected_parameter_count(small));
  }
  // Reference ConvNeXt-B: 88,591,464 weights, minus the 1000-way classifier and the per-block layer scales.
  const auto base = make_preset("base", Variant::convnext_vt, {{8, 5}});
  EXPECT_EQ(encoder_parameter_count(base.encoder, base.embed_dim), 88591464 - (1024 * 1000 + 1000) - 18048);
  const auto resnet = make_preset("base", Variant::resnet_nst, {{8, 5}});
  VidNeXt<float> built(resnet, 0);
  EXPECT_EQ(built.parameters().scalar_count(), VidNeXt<float>::expected_parameter_count(resnet));
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  const auto dir = std::filesystem::temp_directory_path() / ("cyclesafe_model_ckpt_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  const auto path = (dir / "params.cspa").string();
  VidNeXt<float> a(small_config(), 5), b(small_config(), 6);
  save_parameters(a.parameters(), path);
  load_parameters(b.parameters(), path);
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_TRUE(bit_equal(a.parameters().entries()[i].var.value(), b.parameters().entries()[i].var.value()));
  VidNeXt<float> other(small_config(Variant::vidnext, {{5, 3}}), 0);
  EXPECT_THROW(load_parameters(other.parameters(), path), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Model, BackboneNamesExcludeOnlyTheTaskHead) {
  VidNeXt<float> m(small_config(), 0);
  const auto names = m.backbone_parameter_names(5);
  for (const auto& n : names) EXPECT_NE(n.rfind("heads.5.", 0), 0u);
  EXPECT_EQ(names.size(), m.parameters().size() - 4);
}
