#pragma once

// Independent reference computations shared by the model tests and the acceptance runner.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "cyclesafe/model/vidnext.hpp"

namespace oracle {

using namespace cyclesafe;

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

/// Textbook multi-head scaled dot-product attention, one Eigen matrix product per (batch, head).
inline Tensor<double> sdpa(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                           std::int64_t heads) {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const std::int64_t B = q.dim(0), Lq = q.dim(1), Lk = k.dim(1), d = q.dim(2), dh = d / heads;
  Tensor<double> out(q.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t h = 0; h < heads; ++h) {
      Mat Q(Lq, dh), K(Lk, dh), V(Lk, dh);
      for (std::int64_t i = 0; i < Lq; ++i)
        for (std::int64_t e = 0; e < dh; ++e) Q(i, e) = q[(b * Lq + i) * d + h * dh + e];
      for (std::int64_t j = 0; j < Lk; ++j)
        for (std::int64_t e = 0; e < dh; ++e) {
          K(j, e) = k[(b * Lk + j) * d + h * dh + e];
          V(j, e) = v[(b * Lk + j) * d + h * dh + e];
        }
      Mat S = Q * K.transpose() / std::sqrt(static_cast<double>(dh));
      for (std::int64_t i = 0; i < Lq; ++i) {
        S.row(i).array() -= S.row(i).maxCoeff();
        S.row(i) = S.row(i).array().exp().matrix();
        S.row(i) /= S.row(i).sum();
      }
      const Mat O = S * V;
      for (std::int64_t i = 0; i < Lq; ++i)
        for (std::int64_t e = 0; e < dh; ++e) out[(b * Lq + i) * d + h * dh + e] = O(i, e);
    }
  return out;
}

/// Single-head softmax((tau q k^T + delta) / sqrt(d)) v, written out element by element.
inline Tensor<double> brute_attention(const Tensor<double>& q, const Tensor<double>& k, const Tensor<double>& v,
                                      double tau, const std::vector<double>& delta) {
  const std::int64_t L = q.dim(1), d = q.dim(2);
  Tensor<double> out(q.shape());
  for (std::int64_t i = 0; i < L; ++i) {
    std::vector<double> w(static_cast<std::size_t>(L));
    double z = 0;
    for (std::int64_t j = 0; j < L; ++j) {
      double dot = 0;
      for (std::int64_t e = 0; e < d; ++e) dot += q[i * d + e] * k[j * d + e];
      w[j] = std::exp((tau * dot + delta[j]) / std::sqrt(static_cast<double>(d)));
      z += w[j];
    }
    for (std::int64_t e = 0; e < d; ++e) {
      double acc = 0;
      for (std::int64_t j = 0; j < L; ++j) acc += w[j] / z * v[j * d + e];
      out[i * d + e] = acc;
    }
  }
  return out;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double m = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Full-model configuration for finite-difference checks: d = 8, T = 4, 8x8 frames.
inline model::VidNeXtConfig gradcheck_config(model::EncoderKind enc, model::TemporalKind temporal) {
  model::VidNeXtConfig c;
  c.encoder.kind = enc;
  c.encoder.input_size = 8;
  c.encoder.stem_kernel = 4;
  c.encoder.stem_stride = 4;
  c.encoder.dims = {4, 8};
  c.encoder.depths = {1, 1};
  c.embed_dim = 8;
  c.seq_len = 4;
  c.temporal = temporal;
  c.heads = 2;
  c.ffn_dim = 16;
  c.projector_hidden = 8;
  c.head_hidden = 8;
  c.task_heads = {{0, 3}, {1, 1}};
  return c;
}

struct GradientCheck {
  double max_rel_error = 0;
  std::string worst;
  std::int64_t checked = 0;
  std::int64_t refined = 0;  // entries whose stencil had to shrink past a ReLU kink
};

/// Compares backpropagated gradients of every parameter against five-point central differences
/// of a cross-entropy plus squared-error loss. Relative error is |a - n| / max(|a|, |n|, floor).
/// When the estimates at h and h/2 disagree, h shrinks tenfold until two stencil sizes agree.
inline GradientCheck check_gradients(model::EncoderKind enc, model::TemporalKind temporal, std::uint64_t seed,
                                     double h = 1e-4, double floor = 1e-6) {
  model::VidNeXt<double> m(gradcheck_config(enc, temporal), seed, false);
  Rng rng(derive_seed(seed, 77));
  // Projector outputs start at zero; random weights move tau and delta off the identity.
  for (auto& e : m.parameters().entries())
    if (e.name.rfind("projector.", 0) == 0 && e.name.find(".fc2.") != std::string::npos)
      for (auto& v : Var<double>(e.var).mutable_value().values()) v = std::normal_distribution<double>(0.0, 0.3)(rng);
  const Var<double> frames(random_tensor({2, 4, 8, 8, 3}, rng));
  const std::vector<int> labels{2, 0};
  const std::vector<double> targets{0.7, -1.1};

  auto loss = [&] {
    const auto tr = m.trace(frames, -1);
    return ops::add(ops::cross_entropy(m.apply_head(tr.y, 0), std::span<const int>(labels)),
                    ops::mse_loss(m.apply_head(tr.y, 1), std::span<const double>(targets)));
  };

  m.parameters().zero_grad();
  backward(loss());
  GradientCheck out;
  for (const auto& e : m.parameters().entries()) {
    const Tensor<double> analytic = e.var.has_grad() ? e.var.grad() : Tensor<double>(e.var.shape());
    Var<double> param = e.var;
    Tensor<double>& w = param.mutable_value();
    NoGradGuard guard;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
      const double orig = w[i];
      auto at = [&](double x) {
        w[i] = orig + x;
        return loss().value()[0];
      };
      auto five_point = [&](double s) { return (at(-2 * s) - 8 * at(-s) + 8 * at(s) - at(2 * s)) / (12 * s); };
      const auto consistent = [&](double a, double b) { return std::abs(a - b) <= std::max(1e-5 * std::abs(a), 1e-10); };
      double numeric = five_point(h);
      if (!consistent(five_point(h / 2), numeric))
        for (double step = h / 10; step >= h / 1000; step /= 10) {
          const double candidate = five_point(step);
          if (consistent(five_point(step / 2), candidate)) {
            numeric = candidate;
            ++out.refined;
            break;
          }
        }
      w[i] = orig;
      const double err = std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = e.name + "[" + std::to_string(i) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace oracle
