#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "cyclesafe/model/attention.hpp"

namespace cyclesafe::model {

/// Fixed sinusoidal position table [1, T, d].
template <class T>
Tensor<T> sinusoidal_positions(std::int64_t len, std::int64_t width) {
  Tensor<T> pe({1, len, width});
  for (std::int64_t t = 0; t < len; ++t)
    for (std::int64_t i = 0; i < width; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      pe[t * width + i] = static_cast<T>(i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
    }
  return pe;
}

/// Post-norm encoder block: attention -> add&norm -> feed-forward -> add&norm.
template <class T>
struct EncoderLayer {
  AttentionLayer<T> attn;
  LayerNorm<T> norm1, norm2;
  Mlp<T> ffn;

  EncoderLayer() = default;
  EncoderLayer(ParameterSet<T>& ps, const std::string& name, std::int64_t width, std::int64_t heads,
               std::int64_t ffn_dim, Rng& rng)
      : attn(ps, name + ".attn", width, heads, rng),
        norm1(ps, name + ".norm1", width),
        norm2(ps, name + ".norm2", width),
        ffn(ps, name + ".ffn", width, ffn_dim, width, rng) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& tau, const Var<T>& delta) const {
    Var<T> h = norm1(ops::add(x, attn(x, x, tau, delta)));
    return norm2(ops::add(h, ffn(h)));
  }
};

/// Decoder block: self-attention over the query tokens (tau only; delta is indexed by encoder
/// time steps), cross-attention to the encoder output (tau and delta), then feed-forward.
template <class T>
struct DecoderLayer {
  AttentionLayer<T> self_attn, cross_attn;
  LayerNorm<T> norm1, norm2, norm3;
  Mlp<T> ffn;

  DecoderLayer() = default;
  DecoderLayer(ParameterSet<T>& ps, const std::string& name, std::int64_t width, std::int64_t heads,
               std::int64_t ffn_dim, Rng& rng)
      : self_attn(ps, name + ".self_attn", width, heads, rng),
        cross_attn(ps, name + ".cross_attn", width, heads, rng),
        norm1(ps, name + ".norm1", width),
        norm2(ps, name + ".norm2", width),
        norm3(ps, name + ".norm3", width),
        ffn(ps, name + ".ffn", width, ffn_dim, width, rng) {}

  Var<T> operator()(const Var<T>& x, const Var<T>& memory, const Var<T>& tau, const Var<T>& delta) const {
    Var<T> h = norm1(ops::add(x, self_attn(x, x, tau, Var<T>())));
    h = norm2(ops::add(h, cross_attn(h, memory, tau, delta)));
    return norm3(ops::add(h, ffn(h)));
  }
};

/// Encoder-decoder over the stationarized series. Input [B,T,d]; output y' [B,1,d].
template <class T>
class NstEncoderDecoder {
 public:
  NstEncoderDecoder() = default;
  NstEncoderDecoder(ParameterSet<T>& ps, std::int64_t seq_len, std::int64_t width, std::int64_t heads,
                    std::int64_t ffn_dim, std::int64_t enc_layers, std::int64_t dec_layers, Rng& rng)
      : positions_(sinusoidal_positions<T>(seq_len, width)) {
    embed_ = Linear<T>(ps, "temporal.embed", width, width, Init::xavier, rng);
    for (std::int64_t i = 0; i < enc_layers; ++i)
      enc_.emplace_back(ps, "temporal.encoder." + std::to_string(i), width, heads, ffn_dim, rng);
    enc_norm_ = LayerNorm<T>(ps, "temporal.encoder_norm", width);
    query_ = ps.add("temporal.query", init_trunc_normal<T>({1, 1, width}, 0.02, rng));
    for (std::int64_t i = 0; i < dec_layers; ++i)
      dec_.emplace_back(ps, "temporal.decoder." + std::to_string(i), width, heads, ffn_dim, rng);
    dec_norm_ = LayerNorm<T>(ps, "temporal.decoder_norm", width);
    out_ = Linear<T>(ps, "temporal.out", width, width, Init::xavier, rng);
  }

  Var<T> operator()(const Var<T>& x_prime, const Var<T>& tau, const Var<T>& delta) const {
    const std::int64_t B = x_prime.dim(0), d = x_prime.dim(2);
    if (x_prime.dim(1) != positions_.dim(1)) throw ShapeError("temporal: sequence length mismatch");
    Var<T> h = ops::add(embed_(x_prime), ops::constant(positions_));
    for (const auto& layer : enc_) h = layer(h, tau, delta);
    Var<T> memory = enc_norm_(h);
    Var<T> q = ops::add(ops::constant(Tensor<T>({B, 1, d})), query_);
    for (const auto& layer : dec_) q = layer(q, memory, tau, delta);
    return out_(dec_norm_(q));
  }

  static std::int64_t parameter_count(std::int64_t width, std::int64_t ffn_dim, std::int64_t enc_layers,
                                      std::int64_t dec_layers) {
    const std::int64_t lin = width * width + width, ln = 2 * width;
    const std::int64_t ffn = width * ffn_dim + ffn_dim + ffn_dim * width + width;
    const std::int64_t enc = AttentionLayer<T>::parameter_count(width) + 2 * ln + ffn;
    const std::int64_t dec = 2 * AttentionLayer<T>::parameter_count(width) + 3 * ln + ffn;
    return lin + enc_layers * enc + ln + width + dec_layers * dec + ln + lin;
  }

 private:
  Tensor<T> positions_;
  Linear<T> embed_;
  std::vector<EncoderLayer<T>> enc_;
  LayerNorm<T> enc_norm_;
  Var<T> query_;
  std::vector<DecoderLayer<T>> dec_;
  LayerNorm<T> dec_norm_;
  Linear<T> out_;
};

}  // namespace cyclesafe::model
