#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace cyclesafe::model {

enum class EncoderKind { convnext_style, resnet_style };
enum class TemporalKind { non_stationary, vanilla };

NLOHMANN_JSON_SERIALIZE_ENUM(EncoderKind, {{EncoderKind::convnext_style, "convnext_style"},
                                           {EncoderKind::resnet_style, "resnet_style"}})
NLOHMANN_JSON_SERIALIZE_ENUM(TemporalKind, {{TemporalKind::non_stationary, "non_stationary"},
                                            {TemporalKind::vanilla, "vanilla"}})

/// Frame backbone geometry. The stem is a single strided convolution; every later stage
/// starts with a stride-2 downsampling layer.
struct EncoderConfig {
  EncoderKind kind = EncoderKind::convnext_style;
  std::int64_t input_size = 224;
  std::int64_t stem_kernel = 16;
  std::int64_t stem_stride = 16;
  std::vector<std::int64_t> dims{16, 32};
  std::vector<std::int64_t> depths{1, 1};
  std::int64_t mlp_ratio = 4;  // ConvNeXt inverted-bottleneck expansion

  std::int64_t output_width() const { return dims.back(); }
  std::int64_t stem_padding() const { return kind == EncoderKind::resnet_style && stem_kernel > stem_stride ? (stem_kernel - 1) / 2 : 0; }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EncoderConfig, kind, input_size, stem_kernel, stem_stride, dims, depths, mlp_ratio)

/// One classification or regression head attached to the shared video embedding.
struct HeadConfig {
  int task_id = 0;
  std::int64_t output_size = 1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(HeadConfig, task_id, output_size)

struct VidNeXtConfig {
  std::string preset = "tiny";
  EncoderConfig encoder;
  std::int64_t embed_dim = 128;
  std::int64_t seq_len = 30;
  std::int64_t pred_len = 1;
  TemporalKind temporal = TemporalKind::non_stationary;
  std::int64_t enc_layers = 2;
  std::int64_t dec_layers = 1;
  std::int64_t heads = 4;
  std::int64_t ffn_dim = 256;
  std::int64_t projector_hidden = 64;
  std::int64_t head_hidden = 64;
  double stationary_eps = 1e-5;
  std::vector<HeadConfig> task_heads{{8, 5}};
  bool mixed_precision = false;  // reserved; kernels run at the template scalar width

  /// Throws std::invalid_argument on a violated invariant. `strict` also pins seq_len = 30,
  /// the length every production path uses; tests relax it for small gradient checks.
  void validate(bool strict = true) const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("VidNeXtConfig: " + m); };
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) fail("embed_dim must be divisible by heads");
    if (pred_len != 1) fail("pred_len must be 1");
    if (strict && seq_len != 30) fail("seq_len must be 30");
    if (seq_len < 1) fail("seq_len must be positive");
    if (encoder.dims.empty() || encoder.dims.size() != encoder.depths.size()) fail("encoder dims/depths mismatch");
    if (encoder.input_size < encoder.stem_kernel) fail("input smaller than stem kernel");
    if (task_heads.empty()) fail("at least one task head is required");
    for (const auto& h : task_heads)
      if (h.output_size < 1) fail("head output size must be positive");
    if (mixed_precision) fail("mixed precision is not supported");
  }

  const HeadConfig& head_for(int task_id) const {
    for (const auto& h : task_heads)
      if (h.task_id == task_id) return h;
    throw std::invalid_argument("model has no head for task " + std::to_string(task_id));
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(VidNeXtConfig, preset, encoder, embed_dim, seq_len, pred_len, temporal, enc_layers,
                                   dec_layers, heads, ffn_dim, projector_hidden, head_hidden, stationary_eps,
                                   task_heads, mixed_precision)

/// Named model variants: the full model and the two ablations.
enum class Variant { vidnext, convnext_vt, resnet_nst };

inline Variant parse_variant(const std::string& s) {
  if (s == "vidnext") return Variant::vidnext;
  if (s == "convnext-vt") return Variant::convnext_vt;
  if (s == "resnet-nst") return Variant::resnet_nst;
  throw std::invalid_argument("unknown model variant: " + s);
}

/// Desk-scale "tiny" or ConvNeXt-base-shaped "base" configuration for a variant.
inline VidNeXtConfig make_preset(const std::string& preset, Variant variant, std::vector<HeadConfig> heads) {
  VidNeXtConfig c;
  c.preset = preset;
  c.task_heads = std::move(heads);
  const bool resnet = variant == Variant::resnet_nst;
  c.temporal = variant == Variant::convnext_vt ? TemporalKind::vanilla : TemporalKind::non_stationary;
  c.encoder.kind = resnet ? EncoderKind::resnet_style : EncoderKind::convnext_style;
  if (preset == "tiny") {
    c.embed_dim = 128;
    c.ffn_dim = 256;
    c.encoder.input_size = 224;
    c.encoder.stem_kernel = 16;
    c.encoder.stem_stride = 16;
    c.encoder.dims = {16, 32};
    c.encoder.depths = {1, 1};
  } else if (preset == "base") {
    c.embed_dim = 1024;
    c.ffn_dim = 2048;
    c.heads = 8;
    c.encoder.input_size = 224;
    if (resnet) {
      // ResNet-18 stage layout.
      c.encoder.stem_kernel = 7;
      c.encoder.stem_stride = 4;
      c.encoder.dims = {64, 128, 256, 512};
      c.encoder.depths = {2, 2, 2, 2};
    } else {
      c.encoder.stem_kernel = 4;
      c.encoder.stem_stride = 4;
      c.encoder.dims = {128, 256, 512, 1024};
      c.encoder.depths = {3, 3, 27, 3};
    }
  } else {
    throw std::invalid_argument("unknown preset: " + preset);
  }
  return c;
}

}  // namespace cyclesafe::model
