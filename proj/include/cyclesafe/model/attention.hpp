#pragma once

#include <string>

#include "cyclesafe/model/layers.hpp"

namespace cyclesafe::model {

/// Learned re-scaling factors for de-stationary attention. tau: [B] (positive); delta: [B, T].
template <class T>
struct DeStationaryFactors {
  Var<T> tau;
  Var<T> delta;
};

/// De-stationary attention on plain tensors (no graph). q: [B,Lq,d]; k, v: [B,Lk,d];
/// tau: [B]; delta: [B,Lk]. With tau = 1 and delta = 0 this is scaled dot-product attention.
template <class T>
Tensor<T> destationary_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& tau,
                                 const Tensor<T>& delta, std::int64_t heads) {
  NoGradGuard guard;
  const Var<T> t = tau.empty() ? Var<T>() : Var<T>(tau);
  const Var<T> dl = delta.empty() ? Var<T>() : Var<T>(delta);
  return ops::attention(Var<T>(q), Var<T>(k), Var<T>(v), t, dl, heads).value();
}

/// Row-stochastic attention probabilities [B, H, Lq, Lk] for inspection and tests.
template <class T>
Tensor<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& tau,
                                  const Tensor<T>& delta, std::int64_t heads) {
  const ops::AttentionShape a{q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads};
  Tensor<T> out(q.shape());
  Tensor<T> probs({a.batch, heads, a.len_q, a.len_k});
  ops::attention_forward(a, q.data(), k.data(), v.data(), tau.empty() ? nullptr : tau.data(),
                         delta.empty() ? nullptr : delta.data(), out.data(), static_cast<T*>(nullptr), probs.data());
  return probs;
}

/// Projector producing (tau, delta) from the raw series and its removed moments.
/// Each branch pools the raw series over time with learned weights, concatenates the
/// moment (sigma for tau, mu for delta) and applies a two-layer GELU MLP. The final layers
/// start at zero, so an untrained projector yields tau = 1 and delta = 0.
template <class T>
class TauDeltaProjector {
 public:
  TauDeltaProjector() = default;
  TauDeltaProjector(ParameterSet<T>& ps, const std::string& name, std::int64_t seq_len, std::int64_t width,
                    std::int64_t hidden, Rng& rng)
      : seq_len_(seq_len) {
    tau_pool_ = ps.add(name + ".tau_pool", Tensor<T>({1, seq_len, 1}, T(1) / static_cast<T>(seq_len)));
    delta_pool_ = ps.add(name + ".delta_pool", Tensor<T>({1, seq_len, 1}, T(1) / static_cast<T>(seq_len)));
    tau_mlp_ = Mlp<T>(ps, name + ".tau", 2 * width, hidden, 1, rng, Init::zeros);
    delta_mlp_ = Mlp<T>(ps, name + ".delta", 2 * width, hidden, seq_len, rng, Init::zeros);
  }

  /// x: [B,T,d] raw embeddings; mu, sigma: [B,1,d].
  DeStationaryFactors<T> operator()(const Var<T>& x, const Var<T>& mu, const Var<T>& sigma) const {
    const std::int64_t B = x.dim(0), d = x.dim(2);
    if (x.dim(1) != seq_len_) throw ShapeError("projector: series length mismatch");
    Var<T> pooled_tau = ops::reshape(ops::sum_axis(ops::mul(x, tau_pool_), 1), {B, d});
    Var<T> pooled_delta = ops::reshape(ops::sum_axis(ops::mul(x, delta_pool_), 1), {B, d});
    DeStationaryFactors<T> f;
    Var<T> log_tau = tau_mlp_(ops::concat_last(pooled_tau, ops::reshape(sigma, {B, d})));
    f.tau = ops::reshape(ops::exp(log_tau), {B});
    f.delta = delta_mlp_(ops::concat_last(pooled_delta, ops::reshape(mu, {B, d})));
    return f;
  }

  static std::int64_t parameter_count(std::int64_t seq_len, std::int64_t width, std::int64_t hidden) {
    const std::int64_t fc1 = 2 * width * hidden + hidden;
    return 2 * seq_len + (fc1 + hidden + 1) + (fc1 + hidden * seq_len + seq_len);
  }

 private:
  std::int64_t seq_len_ = 0;
  Var<T> tau_pool_, delta_pool_;
  Mlp<T> tau_mlp_, delta_mlp_;
};

/// Multi-head attention block with input/output projections.
template <class T>
struct AttentionLayer {
  Linear<T> wq, wk, wv, wo;
  std::int64_t heads = 1;

  AttentionLayer() = default;
  AttentionLayer(ParameterSet<T>& ps, const std::string& name, std::int64_t width, std::int64_t heads_, Rng& rng)
      : wq(ps, name + ".query", width, width, Init::xavier, rng),
        wk(ps, name + ".key", width, width, Init::xavier, rng),
        wv(ps, name + ".value", width, width, Init::xavier, rng),
        wo(ps, name + ".out", width, width, Init::xavier, rng),
        heads(heads_) {}

  /// tau/delta may be undefined (treated as 1 and 0).
  Var<T> operator()(const Var<T>& queries, const Var<T>& keys, const Var<T>& tau, const Var<T>& delta) const {
    return wo(ops::attention(wq(queries), wk(keys), wv(keys), tau, delta, heads));
  }

  static std::int64_t parameter_count(std::int64_t width) { return 4 * (width * width + width); }
};

}  // namespace cyclesafe::model
