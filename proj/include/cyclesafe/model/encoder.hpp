#pragma once

#include <string>
#include <vector>

#include "cyclesafe/model/config.hpp"
#include "cyclesafe/model/layers.hpp"

namespace cyclesafe::model {

/// ConvNeXt block: depthwise 7x7 -> LN -> pointwise expansion + GELU -> pointwise projection, residual.
template <class T>
struct ConvNeXtBlock {
  DepthwiseConv2d<T> dwconv;
  LayerNorm<T> norm;
  Linear<T> pw1, pw2;

  ConvNeXtBlock() = default;
  ConvNeXtBlock(ParameterSet<T>& ps, const std::string& name, std::int64_t dim, std::int64_t ratio, Rng& rng)
      : dwconv(ps, name + ".dwconv", dim, 7, rng),
        norm(ps, name + ".norm", dim, T(1e-6)),
        pw1(ps, name + ".pwconv1", dim, ratio * dim, Init::trunc_normal_02, rng),
        pw2(ps, name + ".pwconv2", ratio * dim, dim, Init::trunc_normal_02, rng) {}

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = pw2(ops::gelu(pw1(norm(dwconv(x)))));
    return ops::add(x, y);
  }
};

/// Basic residual block with per-position channel normalization.
template <class T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, shortcut;
  LayerNorm<T> norm1, norm2, shortcut_norm;
  bool project = false;

  ResidualBlock() = default;
  ResidualBlock(ParameterSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout,
                std::int64_t stride, Rng& rng)
      : conv1(ps, name + ".conv1", cin, cout, 3, stride, 1, Init::kaiming, rng, false),
        conv2(ps, name + ".conv2", cout, cout, 3, 1, 1, Init::kaiming, rng, false),
        norm1(ps, name + ".norm1", cout),
        norm2(ps, name + ".norm2", cout),
        project(stride != 1 || cin != cout) {
    if (project) {
      shortcut = Conv2d<T>(ps, name + ".downsample", cin, cout, 1, stride, 0, Init::kaiming, rng, false);
      shortcut_norm = LayerNorm<T>(ps, name + ".downsample_norm", cout);
    }
  }

  Var<T> operator()(const Var<T>& x) const {
    Var<T> y = norm2(conv2(ops::relu(norm1(conv1(x)))));
    Var<T> s = project ? shortcut_norm(shortcut(x)) : x;
    return ops::relu(ops::add(y, s));
  }
};

/// Per-frame backbone mapping [N, S, S, 3] images to [N, embed_dim] vectors.
template <class T>
class FrameEncoder {
 public:
  FrameEncoder() = default;
  FrameEncoder(ParameterSet<T>& ps, const EncoderConfig& cfg, std::int64_t embed_dim, Rng& rng) : cfg_(cfg) {
    const bool resnet = cfg.kind == EncoderKind::resnet_style;
    stem_ = Conv2d<T>(ps, "encoder.stem", 3, cfg.dims[0], cfg.stem_kernel, cfg.stem_stride, cfg.stem_padding(),
                      resnet ? Init::kaiming : Init::trunc_normal_02, rng, !resnet);
    stem_norm_ = LayerNorm<T>(ps, "encoder.stem_norm", cfg.dims[0], resnet ? T(1e-5) : T(1e-6));
    for (std::size_t s = 0; s < cfg.dims.size(); ++s) {
      const std::string stage = "encoder.stages." + std::to_string(s);
      if (resnet) {
        for (std::int64_t b = 0; b < cfg.depths[s]; ++b) {
          const std::int64_t cin = b == 0 ? (s == 0 ? cfg.dims[0] : cfg.dims[s - 1]) : cfg.dims[s];
          const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
          res_blocks_.emplace_back(ps, stage + "." + std::to_string(b), cin, cfg.dims[s], stride, rng);
        }
      } else {
        if (s > 0) {
          down_norms_.emplace_back(ps, stage + ".downsample_norm", cfg.dims[s - 1], T(1e-6));
          downs_.emplace_back(ps, stage + ".downsample", cfg.dims[s - 1], cfg.dims[s], 2, 2, 0,
                              Init::trunc_normal_02, rng);
        }
        auto& blocks = cnx_stages_.emplace_back();
        for (std::int64_t b = 0; b < cfg.depths[s]; ++b)
          blocks.emplace_back(ps, stage + "." + std::to_string(b), cfg.dims[s], cfg.mlp_ratio, rng);
      }
    }
    if (!resnet) head_norm_ = LayerNorm<T>(ps, "encoder.head_norm", cfg.dims.back(), T(1e-6));
    if (cfg.output_width() != embed_dim)
      proj_ = Linear<T>(ps, "encoder.proj", cfg.output_width(), embed_dim, Init::xavier, rng);
  }

  Var<T> operator()(const Var<T>& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg_.input_size || s[2] != cfg_.input_size || s[3] != 3)
      throw ShapeError("encoder: expected [N," + std::to_string(cfg_.input_size) + "," +
                       std::to_string(cfg_.input_size) + ",3], got " + shape_str(s));
    Var<T> x = stem_norm_(stem_(images));
    if (cfg_.kind == EncoderKind::resnet_style) {
      x = ops::relu(x);
      for (const auto& b : res_blocks_) x = b(x);
      x = ops::global_avg_pool(x);
    } else {
      for (std::size_t s = 0; s < cnx_stages_.size(); ++s) {
        if (s > 0) x = downs_[s - 1](down_norms_[s - 1](x));
        for (const auto& b : cnx_stages_[s]) x = b(x);
      }
      x = head_norm_(ops::global_avg_pool(x));
    }
    if (proj_.weight.defined()) x = proj_(x);
    return x;
  }

 private:
  EncoderConfig cfg_;
  Conv2d<T> stem_;
  LayerNorm<T> stem_norm_, head_norm_;
  std::vector<LayerNorm<T>> down_norms_;
  std::vector<Conv2d<T>> downs_;
  std::vector<std::vector<ConvNeXtBlock<T>>> cnx_stages_;
  std::vector<ResidualBlock<T>> res_blocks_;
  Linear<T> proj_;
};

/// Closed-form trainable-scalar count of the frame encoder.
inline std::int64_t encoder_parameter_count(const EncoderConfig& cfg, std::int64_t embed_dim) {
  const auto& d = cfg.dims;
  std::int64_t n = 0;
  if (cfg.kind == EncoderKind::convnext_style) {
    n += cfg.stem_kernel * cfg.stem_kernel * 3 * d[0] + d[0];  // stem conv + bias
    n += 2 * d[0];                                             // stem LN
    for (std::size_t s = 0; s < d.size(); ++s) {
      if (s > 0) n += 2 * d[s - 1] + 4 * d[s - 1] * d[s] + d[s];
      const std::int64_t c = d[s], h = cfg.mlp_ratio * d[s];
      const std::int64_t block = 49 * c + c + 2 * c + (c * h + h) + (h * c + c);
      n += cfg.depths[s] * block;
    }
    n += 2 * d.back();
  } else {
    n += cfg.stem_kernel * cfg.stem_kernel * 3 * d[0] + 2 * d[0];
    for (std::size_t s = 0; s < d.size(); ++s)
      for (std::int64_t b = 0; b < cfg.depths[s]; ++b) {
        const std::int64_t cin = b == 0 ? (s == 0 ? d[0] : d[s - 1]) : d[s];
        const std::int64_t cout = d[s];
        n += 9 * cin * cout + 9 * cout * cout + 4 * cout;
        if ((b == 0 && s > 0) || cin != cout) n += cin * cout + 2 * cout;
      }
  }
  if (cfg.output_width() != embed_dim) n += cfg.output_width() * embed_dim + embed_dim;
  return n;
}

}  // namespace cyclesafe::model
