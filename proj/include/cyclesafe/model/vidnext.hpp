#pragma once

#include <map>
#include <string>
#include <vector>

#include "cyclesafe/model/config.hpp"
#include "cyclesafe/model/encoder.hpp"
#include "cyclesafe/model/stationary.hpp"
#include "cyclesafe/model/transformer.hpp"

namespace cyclesafe::model {

/// Intermediate values of one forward pass.
template <class T>
struct ForwardTrace {
  Var<T> embeddings;  // x: [B,T,d]
  StationarizerState<T> stats;
  DeStationaryFactors<T> factors;
  Var<T> y_prime;  // [B,1,d]
  Var<T> y;        // [B,d] after de-normalization
  Var<T> output;   // [B,C] logits or [B] regression values
};

/// Frame encoder + series stationarization + de-stationary encoder-decoder + task heads.
/// Frames enter as [B, T, S, S, 3] (channels-last, normalized).
template <class T>
class VidNeXt {
 public:
  explicit VidNeXt(VidNeXtConfig cfg, std::uint64_t seed = 0, bool strict = true) : cfg_(std::move(cfg)) {
    cfg_.validate(strict);
    Rng rng(seed);
    encoder_ = FrameEncoder<T>(params_, cfg_.encoder, cfg_.embed_dim, rng);
    if (cfg_.temporal == TemporalKind::non_stationary)
      projector_ = TauDeltaProjector<T>(params_, "projector", cfg_.seq_len, cfg_.embed_dim, cfg_.projector_hidden, rng);
    temporal_ = NstEncoderDecoder<T>(params_, cfg_.seq_len, cfg_.embed_dim, cfg_.heads, cfg_.ffn_dim, cfg_.enc_layers,
                                     cfg_.dec_layers, rng);
    for (const auto& h : cfg_.task_heads)
      heads_.emplace(h.task_id,
                     Mlp<T>(params_, head_prefix(h.task_id), cfg_.embed_dim, cfg_.head_hidden, h.output_size, rng));
  }

  VidNeXt(const VidNeXt&) = delete;
  VidNeXt& operator=(const VidNeXt&) = delete;
  VidNeXt(VidNeXt&&) = default;
  VidNeXt& operator=(VidNeXt&&) = default;

  const VidNeXtConfig& config() const { return cfg_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }

  static std::string head_prefix(int task_id) { return "heads." + std::to_string(task_id); }

  bool is_regression(int task_id) const { return cfg_.head_for(task_id).output_size == 1; }

  /// [B,T,S,S,3] -> [B,T,d]; every frame goes through the same encoder weights.
  Var<T> encode_frames(const Var<T>& frames) const {
    const Shape& s = frames.shape();
    if (s.size() != 5 || s[1] != cfg_.seq_len)
      throw ShapeError("encode_frames: expected [B," + std::to_string(cfg_.seq_len) + ",S,S,3], got " + shape_str(s));
    Var<T> flat = ops::reshape(frames, {s[0] * s[1], s[2], s[3], s[4]});
    return ops::reshape(encoder_(flat), {s[0], s[1], cfg_.embed_dim});
  }

  /// Full pass keeping every intermediate. task_id < 0 skips the head.
  ForwardTrace<T> trace(const Var<T>& frames, int task_id) const {
    ForwardTrace<T> tr;
    tr.embeddings = encode_frames(frames);
    tr.stats = stationarize(tr.embeddings, static_cast<T>(cfg_.stationary_eps));
    if (cfg_.temporal == TemporalKind::non_stationary)
      tr.factors = projector_(tr.embeddings, tr.stats.mu, tr.stats.sigma);
    tr.y_prime = temporal_(tr.stats.normalized, tr.factors.tau, tr.factors.delta);
    const std::int64_t B = frames.dim(0);
    tr.y = ops::reshape(denormalize(tr.y_prime, tr.stats.mu, tr.stats.sigma), {B, cfg_.embed_dim});
    if (task_id >= 0) tr.output = apply_head(tr.y, task_id);
    return tr;
  }

  Var<T> forward(const Var<T>& frames, int task_id) const {
    cfg_.head_for(task_id);
    return trace(frames, task_id).output;
  }

  /// Video embeddings y (post de-normalization, pre-head).
  Var<T> embed(const Var<T>& frames) const { return trace(frames, -1).y; }

  Var<T> apply_head(const Var<T>& y, int task_id) const {
    auto it = heads_.find(task_id);
    if (it == heads_.end()) throw std::invalid_argument("model has no head for task " + std::to_string(task_id));
    Var<T> out = it->second(y);
    if (is_regression(task_id)) out = ops::reshape(out, {y.dim(0)});
    return out;
  }

  /// Names of every parameter outside the given task's head.
  std::vector<std::string> backbone_parameter_names(int task_id) const {
    const std::string prefix = head_prefix(task_id) + ".";
    std::vector<std::string> names;
    for (const auto& e : params_.entries())
      if (e.name.rfind(prefix, 0) != 0) names.push_back(e.name);
    return names;
  }

  /// Closed-form trainable-scalar count for a configuration.
  static std::int64_t expected_parameter_count(const VidNeXtConfig& c) {
    std::int64_t n = encoder_parameter_count(c.encoder, c.embed_dim);
    if (c.temporal == TemporalKind::non_stationary)
      n += TauDeltaProjector<T>::parameter_count(c.seq_len, c.embed_dim, c.projector_hidden);
    n += NstEncoderDecoder<T>::parameter_count(c.embed_dim, c.ffn_dim, c.enc_layers, c.dec_layers);
    for (const auto& h : c.task_heads)
      n += c.embed_dim * c.head_hidden + c.head_hidden + c.head_hidden * h.output_size + h.output_size;
    return n;
  }

 private:
  VidNeXtConfig cfg_;
  ParameterSet<T> params_;
  FrameEncoder<T> encoder_;
  TauDeltaProjector<T> projector_;
  NstEncoderDecoder<T> temporal_;
  std::map<int, Mlp<T>> heads_;
};

}  // namespace cyclesafe::model
