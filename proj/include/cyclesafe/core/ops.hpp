#pragma once

// Differentiable tensor operations over Var<T>. Heavy products go through Eigen;
// convolutions use channels-last (NHWC) layout throughout.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>

#include "cyclesafe/core/autograd.hpp"

namespace cyclesafe::ops {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// Broadcasting element-wise binary ops

namespace detail {

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a, stride_b;
  bool same = false;
};

inline std::vector<std::int64_t> contiguous_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
  BroadcastPlan p;
  if (a == b) {
    p.out = a;
    p.same = true;
    return p;
  }
  if (a.size() != b.size()) throw ShapeError("broadcast: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
  p.out.resize(a.size());
  auto sa = contiguous_strides(a), sb = contiguous_strides(b);
  p.stride_a.resize(a.size());
  p.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
      throw ShapeError("broadcast: incompatible " + shape_str(a) + " vs " + shape_str(b));
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::int64_t n = shape_numel(p.out);
  if (p.same) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = p.out.size();
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    f(o, ia, ib);
    for (int d = static_cast<int>(r) - 1; d >= 0; --d) {
      if (++idx[d] < p.out[d]) {
        ia += p.stride_a[d];
        ib += p.stride_b[d];
        break;
      }
      ia -= p.stride_a[d] * (p.out[d] - 1);
      ib -= p.stride_b[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace detail

enum class BinaryKind { add, sub, mul, div };

template <class T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryKind kind) {
  auto plan = detail::plan_broadcast(a.shape(), b.shape());
  Tensor<T> out(plan.out);
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  detail::for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
    switch (kind) {
      case BinaryKind::add: po[o] = pa[ia] + pb[ib]; break;
      case BinaryKind::sub: po[o] = pa[ia] - pb[ib]; break;
      case BinaryKind::mul: po[o] = pa[ia] * pb[ib]; break;
      case BinaryKind::div: po[o] = pa[ia] / pb[ib]; break;
    }
  });
  return Var<T>::make(std::move(out), {a, b}, [plan, kind](Node<T>& n) {
    const T* g = n.grad.data();
    const T* va = n.parents[0]->value.data();
    const T* vb = n.parents[1]->value.data();
    T* ga = parent_grad(n, 0);
    T* gb = parent_grad(n, 1);
    detail::for_each_broadcast(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
      switch (kind) {
        case BinaryKind::add:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] += g[o];
          break;
        case BinaryKind::sub:
          if (ga) ga[ia] += g[o];
          if (gb) gb[ib] -= g[o];
          break;
        case BinaryKind::mul:
          if (ga) ga[ia] += g[o] * vb[ib];
          if (gb) gb[ib] += g[o] * va[ia];
          break;
        case BinaryKind::div:
          if (ga) ga[ia] += g[o] / vb[ib];
          if (gb) gb[ib] -= g[o] * va[ia] / (vb[ib] * vb[ib]);
          break;
      }
    });
  });
}

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::add); }
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::sub); }
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::mul); }
template <class T> Var<T> div(const Var<T>& a, const Var<T>& b) { return binary(a, b, BinaryKind::div); }

template <class T>
Var<T> constant(Tensor<T> t) {
  return Var<T>(std::move(t), false);
}

// ---------------------------------------------------------------------------
// Unary element-wise ops

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const T* pa = a.value().data();
  T* po = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] = fwd(pa[i]);
  return Var<T>::make(std::move(out), {a}, [deriv](Node<T>& n) {
    T* ga = parent_grad(n, 0);
    if (!ga) return;
    const T* x = n.parents[0]->value.data();
    const T* y = n.value.data();
    const T* g = n.grad.data();
    for (std::int64_t i = 0; i < n.value.numel(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return unary(a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <class T>
Var<T> exp(const Var<T>& a) {
  return unary(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

/// sqrt with a zero subgradient at 0.
template <class T>
Var<T> sqrt(const Var<T>& a) {
  return unary(
      a, [](T x) { return std::sqrt(x); }, [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
}

template <class T>
Var<T> clamp_min(const Var<T>& a, T lo) {
  return unary(
      a, [lo](T x) { return std::max(x, lo); }, [lo](T x, T) { return x > lo ? T(1) : T(0); });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

/// Exact (erf) GELU.
template <class T>
Var<T> gelu(const Var<T>& a) {
  constexpr T inv_sqrt2 = T(0.70710678118654752440);
  constexpr T inv_sqrt2pi = T(0.39894228040143267794);
  return unary(
      a, [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

// ---------------------------------------------------------------------------
// Shape ops and reductions

template <class T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(std::move(shape));
  return Var<T>::make(std::move(out), {a}, [](Node<T>& n) {
    T* ga = parent_grad(n, 0);
    if (!ga) return;
    const T* g = n.grad.data();
    for (std::int64_t i = 0; i < n.value.numel(); ++i) ga[i] += g[i];
  });
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().values()) acc += v;
  return Var<T>::make(Tensor<T>({1}, acc), {a}, [](Node<T>& n) {
    T* ga = parent_grad(n, 0);
    if (!ga) return;
    const T g = n.grad[0];
    for (std::int64_t i = 0; i < n.parents[0]->value.numel(); ++i) ga[i] += g;
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.value().numel()));
}

/// Sum over one axis, keeping it as size 1.
template <class T>
Var<T> sum_axis(const Var<T>& a, int axis) {
  const Shape& s = a.shape();
  if (axis < 0) axis += static_cast<int>(s.size());
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::int64_t len = s[axis];
  Shape os = s;
  os[axis] = 1;
  Tensor<T> out(os);
  const T* pa = a.value().data();
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t k = 0; k < len; ++k)
      for (std::int64_t i = 0; i < inner; ++i) out[o * inner + i] += pa[(o * len + k) * inner + i];
  return Var<T>::make(std::move(out), {a}, [outer, inner, len](Node<T>& n) {
    T* ga = parent_grad(n, 0);
    if (!ga) return;
    const T* g = n.grad.data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t k = 0; k < len; ++k)
        for (std::int64_t i = 0; i < inner; ++i) ga[(o * len + k) * inner + i] += g[o * inner + i];
  });
}

template <class T>
Var<T> mean_axis(const Var<T>& a, int axis) {
  const int ax = axis < 0 ? axis + a.value().rank() : axis;
  return scale(sum_axis(a, ax), T(1) / static_cast<T>(a.shape()[ax]));
}

/// Concatenate along the last axis; leading dims must match.
template <class T>
Var<T> concat_last(const Var<T>& a, const Var<T>& b) {
  Shape sa = a.shape(), sb = b.shape();
  const std::int64_t da = sa.back(), db = sb.back();
  sa.pop_back();
  sb.pop_back();
  if (sa != sb) throw ShapeError("concat_last: leading dims differ");
  const std::int64_t rows = shape_numel(sa);
  Shape os = sa;
  os.push_back(da + db);
  Tensor<T> out(os);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(a.value().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.value().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return Var<T>::make(std::move(out), {a, b}, [rows, da, db](Node<T>& n) {
    T* ga = parent_grad(n, 0);
    T* gb = parent_grad(n, 1);
    const T* g = n.grad.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      if (ga)
        for (std::int64_t i = 0; i < da; ++i) ga[r * da + i] += g[r * (da + db) + i];
      if (gb)
        for (std::int64_t i = 0; i < db; ++i) gb[r * db + i] += g[r * (da + db) + da + i];
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W + b over the last axis of x. W is [in, out]; bias may be undefined.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias) {
  const std::int64_t in = w.dim(0), outd = w.dim(1);
  if (x.shape().back() != in)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const std::int64_t rows = x.value().numel() / in;
  Shape os = x.shape();
  os.back() = outd;
  Tensor<T> out(os);
  ConstMatMap<T> X(x.value().data(), rows, in);
  ConstMatMap<T> W(w.value().data(), in, outd);
  MatMap<T> Y(out.data(), rows, outd);
  Y.noalias() = X * W;
  const bool has_bias = bias.defined();
  if (has_bias) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.value().data(), outd);
    Y.rowwise() += b;
  }
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return Var<T>::make(std::move(out), std::move(inputs), [rows, in, outd, has_bias](Node<T>& n) {
    ConstMatMap<T> G(n.grad.data(), rows, outd);
    if (T* gx = parent_grad(n, 0)) {
      ConstMatMap<T> W(n.parents[1]->value.data(), in, outd);
      MatMap<T>(gx, rows, in).noalias() += G * W.transpose();
    }
    if (T* gw = parent_grad(n, 1)) {
      ConstMatMap<T> X(n.parents[0]->value.data(), rows, in);
      MatMap<T>(gw, in, outd).noalias() += X.transpose() * G;
    }
    if (has_bias)
      if (T* gb = parent_grad(n, 2)) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gbm(gb, outd);
        gbm += G.colwise().sum();
      }
  });
}

/// Layer normalization over the last axis with affine scale and shift.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::int64_t c = x.shape().back();
  const std::int64_t rows = x.value().numel() / c;
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  const T* px = x.value().data();
  const T* g = gamma.value().data();
  const T* b = beta.value().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * c;
    T m = 0;
    for (std::int64_t i = 0; i < c; ++i) m += row[i];
    m /= static_cast<T>(c);
    T v = 0;
    for (std::int64_t i = 0; i < c; ++i) v += (row[i] - m) * (row[i] - m);
    v /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(v + eps);
    rstd[r] = rs;
    for (std::int64_t i = 0; i < c; ++i) {
      const T xh = (row[i] - m) * rs;
      xhat[r * c + i] = xh;
      out[r * c + i] = xh * g[i] + b[i];
    }
  }
  return Var<T>::make(std::move(out), {x, gamma, beta},
                      [xhat, rstd = std::move(rstd), rows, c](Node<T>& n) {
                        const T* gy = n.grad.data();
                        const T* g = n.parents[1]->value.data();
                        T* gx = parent_grad(n, 0);
                        T* gg = parent_grad(n, 1);
                        T* gb = parent_grad(n, 2);
                        std::vector<T> dxh(static_cast<std::size_t>(c));
                        for (std::int64_t r = 0; r < rows; ++r) {
                          const T* xh = xhat.data() + r * c;
                          const T* dy = gy + r * c;
                          if (gg)
                            for (std::int64_t i = 0; i < c; ++i) gg[i] += dy[i] * xh[i];
                          if (gb)
                            for (std::int64_t i = 0; i < c; ++i) gb[i] += dy[i];
                          if (!gx) continue;
                          T m1 = 0, m2 = 0;
                          for (std::int64_t i = 0; i < c; ++i) {
                            dxh[i] = dy[i] * g[i];
                            m1 += dxh[i];
                            m2 += dxh[i] * xh[i];
                          }
                          m1 /= static_cast<T>(c);
                          m2 /= static_cast<T>(c);
                          for (std::int64_t i = 0; i < c; ++i)
                            gx[r * c + i] += rstd[r] * (dxh[i] - m1 - xh[i] * m2);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Convolutions (NHWC)

struct ConvGeometry {
  std::int64_t n, h, w, cin, kh, kw, cout, stride, pad, oh, ow;
};

inline ConvGeometry conv_geometry(const Shape& x, std::int64_t kh, std::int64_t kw, std::int64_t cout,
                                  std::int64_t stride, std::int64_t pad) {
  if (x.size() != 4) throw ShapeError("conv2d: expected NHWC input, got " + shape_str(x));
  ConvGeometry g{x[0], x[1], x[2], x[3], kh, kw, cout, stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - kh) / stride + 1;
  g.ow = (g.w + 2 * pad - kw) / stride + 1;
  if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x));
  return g;
}

namespace detail {

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::int64_t patch = g.kh * g.kw * g.cin;
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t oy = 0; oy < g.oh; ++oy)
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        T* row = cols + ((n * g.oh + oy) * g.ow + ox) * patch;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.stride + ky - g.pad;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.stride + kx - g.pad;
            T* dst = row + (ky * g.kw + kx) * g.cin;
            if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
              std::fill_n(dst, g.cin, T(0));
            } else {
              std::copy_n(x + ((n * g.h + iy) * g.w + ix) * g.cin, g.cin, dst);
            }
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
  const std::int64_t patch = g.kh * g.kw * g.cin;
  for (std::int64_t n = 0; n < g.n; ++n)
    for (std::int64_t oy = 0; oy < g.oh; ++oy)
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        const T* row = cols + ((n * g.oh + oy) * g.ow + ox) * patch;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.stride + kx - g.pad;
            if (ix < 0 || ix >= g.w) continue;
            const T* src = row + (ky * g.kw + kx) * g.cin;
            T* dst = gx + ((n * g.h + iy) * g.w + ix) * g.cin;
            for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += src[c];
          }
        }
      }
}

}  // namespace detail

/// Dense 2-D convolution. x: [N,H,W,Cin]; w: [kh,kw,Cin,Cout]; bias: [Cout] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t stride, std::int64_t pad) {
  if (w.value().rank() != 4 || w.dim(2) != x.shape().back())
    throw ShapeError("conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
  const ConvGeometry g = conv_geometry(x.shape(), w.dim(0), w.dim(1), w.dim(3), stride, pad);
  const std::int64_t rows = g.n * g.oh * g.ow;
  const std::int64_t patch = g.kh * g.kw * g.cin;
  const bool direct = g.kh == 1 && g.kw == 1 && stride == 1 && pad == 0;
  Tensor<T> cols;
  if (!direct) {
    cols = Tensor<T>({rows, patch});
    detail::im2col(x.value().data(), g, cols.data());
  }
  const T* colp = direct ? x.value().data() : cols.data();
  Tensor<T> out({g.n, g.oh, g.ow, g.cout});
  MatMap<T> Y(out.data(), rows, g.cout);
  Y.noalias() = ConstMatMap<T>(colp, rows, patch) * ConstMatMap<T>(w.value().data(), patch, g.cout);
  const bool has_bias = bias.defined();
  if (has_bias) Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.value().data(), g.cout);
  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  if (!grad_enabled()) cols = Tensor<T>();
  return Var<T>::make(std::move(out), std::move(inputs), [g, cols, rows, patch, direct, has_bias](Node<T>& n) {
    ConstMatMap<T> G(n.grad.data(), rows, g.cout);
    if (T* gw = parent_grad(n, 1)) {
      const T* colp = direct ? n.parents[0]->value.data() : cols.data();
      MatMap<T>(gw, patch, g.cout).noalias() += ConstMatMap<T>(colp, rows, patch).transpose() * G;
    }
    if (has_bias)
      if (T* gb = parent_grad(n, 2))
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gb, g.cout) += G.colwise().sum();
    if (T* gx = parent_grad(n, 0)) {
      ConstMatMap<T> W(n.parents[1]->value.data(), patch, g.cout);
      if (direct) {
        MatMap<T>(gx, rows, patch).noalias() += G * W.transpose();
      } else {
        RowMat<T> dcols = G * W.transpose();
        detail::col2im_add(dcols.data(), g, gx);
      }
    }
  });
}

/// Depthwise stride-1 convolution. x: [N,H,W,C]; w: [k,k,C]; bias: [C].
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::int64_t pad) {
  const Shape& s = x.shape();
  if (s.size() != 4 || w.value().rank() != 3 || w.dim(2) != s[3])
    throw ShapeError("depthwise_conv2d: weight " + shape_str(w.shape()) + " vs input " + shape_str(s));
  const std::int64_t N = s[0], H = s[1], W = s[2], C = s[3], K = w.dim(0);
  const std::int64_t OH = H + 2 * pad - K + 1, OW = W + 2 * pad - K + 1;
  Tensor<T> out({N, OH, OW, C});
  const T* px = x.value().data();
  const T* pw = w.value().data();
  const T* pb = bias.value().data();
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t oy = 0; oy < OH; ++oy)
      for (std::int64_t ox = 0; ox < OW; ++ox) {
        T* o = out.data() + ((n * OH + oy) * OW + ox) * C;
        for (std::int64_t c = 0; c < C; ++c) o[c] = pb[c];
        for (std::int64_t ky = 0; ky < K; ++ky) {
          const std::int64_t iy = oy + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (std::int64_t kx = 0; kx < K; ++kx) {
            const std::int64_t ix = ox + kx - pad;
            if (ix < 0 || ix >= W) continue;
            const T* xi = px + ((n * H + iy) * W + ix) * C;
            const T* wi = pw + (ky * K + kx) * C;
            for (std::int64_t c = 0; c < C; ++c) o[c] += xi[c] * wi[c];
          }
        }
      }
  return Var<T>::make(std::move(out), {x, w, bias}, [N, H, W, C, K, OH, OW, pad](Node<T>& n) {
    const T* g = n.grad.data();
    const T* px = n.parents[0]->value.data();
    const T* pw = n.parents[1]->value.data();
    T* gx = parent_grad(n, 0);
    T* gw = parent_grad(n, 1);
    T* gb = parent_grad(n, 2);
    for (std::int64_t b = 0; b < N; ++b)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          const T* go = g + ((b * OH + oy) * OW + ox) * C;
          if (gb)
            for (std::int64_t c = 0; c < C; ++c) gb[c] += go[c];
          for (std::int64_t ky = 0; ky < K; ++ky) {
            const std::int64_t iy = oy + ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (std::int64_t kx = 0; kx < K; ++kx) {
              const std::int64_t ix = ox + kx - pad;
              if (ix < 0 || ix >= W) continue;
              const std::int64_t xo = ((b * H + iy) * W + ix) * C;
              const std::int64_t wo = (ky * K + kx) * C;
              if (gx)
                for (std::int64_t c = 0; c < C; ++c) gx[xo + c] += go[c] * pw[wo + c];
              if (gw)
                for (std::int64_t c = 0; c < C; ++c) gw[wo + c] += go[c] * px[xo + c];
            }
          }
        }
  });
}

/// Mean over H and W: [N,H,W,C] -> [N,C].
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape& s = x.shape();
  const std::int64_t N = s[0], HW = s[1] * s[2], C = s[3];
  return reshape(mean_axis(reshape(x, {N, HW, C}), 1), {N, C});
}

// ---------------------------------------------------------------------------
// Attention

/// Shapes for multi-head attention over [B, L, d] tensors.
struct AttentionShape {
  std::int64_t batch, len_q, len_k, width, heads;
  std::int64_t head_dim() const { return width / heads; }
};

/// Forward kernel for de-stationary attention on raw arrays.
/// scores = (tau_b * q.k + delta_b[j]) / sqrt(d_h); probs = row-softmax(scores); out = probs v.
/// `raw` and `probs` receive [B, H, Lq, Lk] buffers when non-null.
template <class T>
void attention_forward(const AttentionShape& a, const T* q, const T* k, const T* v, const T* tau, const T* delta,
                       T* out, T* raw, T* probs) {
  const std::int64_t dh = a.head_dim();
  const T inv = T(1) / std::sqrt(static_cast<T>(dh));
  std::vector<T> r(static_cast<std::size_t>(a.len_k)), p(static_cast<std::size_t>(a.len_k));
  for (std::int64_t b = 0; b < a.batch; ++b) {
    const T t = tau ? tau[b] : T(1);
    for (std::int64_t h = 0; h < a.heads; ++h)
      for (std::int64_t i = 0; i < a.len_q; ++i) {
        const T* qi = q + (b * a.len_q + i) * a.width + h * dh;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::int64_t j = 0; j < a.len_k; ++j) {
          const T* kj = k + (b * a.len_k + j) * a.width + h * dh;
          T dot = 0;
          for (std::int64_t e = 0; e < dh; ++e) dot += qi[e] * kj[e];
          r[j] = dot;
          const T s = (t * dot + (delta ? delta[b * a.len_k + j] : T(0))) * inv;
          if (!std::isfinite(s)) throw std::domain_error("attention: non-finite score");
          p[j] = s;
          mx = std::max(mx, s);
        }
        T z = 0;
        for (std::int64_t j = 0; j < a.len_k; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        for (std::int64_t j = 0; j < a.len_k; ++j) p[j] /= z;
        T* oi = out + (b * a.len_q + i) * a.width + h * dh;
        std::fill_n(oi, dh, T(0));
        for (std::int64_t j = 0; j < a.len_k; ++j) {
          const T* vj = v + (b * a.len_k + j) * a.width + h * dh;
          for (std::int64_t e = 0; e < dh; ++e) oi[e] += p[j] * vj[e];
        }
        const std::int64_t base = ((b * a.heads + h) * a.len_q + i) * a.len_k;
        if (raw) std::copy(r.begin(), r.end(), raw + base);
        if (probs) std::copy(p.begin(), p.end(), probs + base);
      }
  }
}

/// Differentiable multi-head de-stationary attention. q: [B,Lq,d]; k, v: [B,Lk,d];
/// tau: [B] (undefined means 1); delta: [B,Lk] (undefined means 0).
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const Var<T>& tau, const Var<T>& delta,
                 std::int64_t heads) {
  const Shape& qs = q.shape();
  if (qs.size() != 3 || k.shape() != v.shape() || k.dim(0) != qs[0] || k.dim(2) != qs[2])
    throw ShapeError("attention: q " + shape_str(qs) + " k " + shape_str(k.shape()));
  if (qs[2] % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const AttentionShape a{qs[0], qs[1], k.dim(1), qs[2], heads};
  const bool has_tau = tau.defined(), has_delta = delta.defined();
  if (has_tau && tau.value().numel() != a.batch) throw ShapeError("attention: tau must hold one value per sample");
  if (has_delta && delta.value().numel() != a.batch * a.len_k)
    throw ShapeError("attention: delta must be [B, Lk]");
  Tensor<T> out(qs);
  Tensor<T> raw({a.batch, heads, a.len_q, a.len_k});
  Tensor<T> probs({a.batch, heads, a.len_q, a.len_k});
  attention_forward(a, q.value().data(), k.value().data(), v.value().data(),
                    has_tau ? tau.value().data() : nullptr, has_delta ? delta.value().data() : nullptr, out.data(),
                    raw.data(), probs.data());
  std::vector<Var<T>> inputs{q, k, v};
  if (has_tau) inputs.push_back(tau);
  if (has_delta) inputs.push_back(delta);
  return Var<T>::make(std::move(out), std::move(inputs), [a, raw, probs, has_tau, has_delta](Node<T>& n) {
    const std::int64_t dh = a.head_dim();
    const T inv = T(1) / std::sqrt(static_cast<T>(dh));
    const T* q = n.parents[0]->value.data();
    const T* k = n.parents[1]->value.data();
    const T* v = n.parents[2]->value.data();
    const T* tau = has_tau ? n.parents[3]->value.data() : nullptr;
    T* gq = parent_grad(n, 0);
    T* gk = parent_grad(n, 1);
    T* gv = parent_grad(n, 2);
    T* gtau = has_tau ? parent_grad(n, 3) : nullptr;
    T* gdelta = has_delta ? parent_grad(n, has_tau ? 4 : 3) : nullptr;
    const T* go = n.grad.data();
    std::vector<T> dp(static_cast<std::size_t>(a.len_k));
    for (std::int64_t b = 0; b < a.batch; ++b) {
      const T t = tau ? tau[b] : T(1);
      for (std::int64_t h = 0; h < a.heads; ++h)
        for (std::int64_t i = 0; i < a.len_q; ++i) {
          const std::int64_t base = ((b * a.heads + h) * a.len_q + i) * a.len_k;
          const T* p = probs.data() + base;
          const T* r = raw.data() + base;
          const T* goi = go + (b * a.len_q + i) * a.width + h * dh;
          T dot_pp = 0;
          for (std::int64_t j = 0; j < a.len_k; ++j) {
            const T* vj = v + (b * a.len_k + j) * a.width + h * dh;
            T s = 0;
            for (std::int64_t e = 0; e < dh; ++e) s += goi[e] * vj[e];
            dp[j] = s;
            dot_pp += s * p[j];
            if (gv) {
              T* gvj = gv + (b * a.len_k + j) * a.width + h * dh;
              for (std::int64_t e = 0; e < dh; ++e) gvj[e] += p[j] * goi[e];
            }
          }
          const T* qi = q + (b * a.len_q + i) * a.width + h * dh;
          T* gqi = gq ? gq + (b * a.len_q + i) * a.width + h * dh : nullptr;
          for (std::int64_t j = 0; j < a.len_k; ++j) {
            const T ds = p[j] * (dp[j] - dot_pp) * inv;  // d loss / d (pre-scale score)
            if (gdelta) gdelta[b * a.len_k + j] += ds;
            if (gtau) gtau[b] += ds * r[j];
            const T dr = ds * t;
            const T* kj = k + (b * a.len_k + j) * a.width + h * dh;
            if (gqi)
              for (std::int64_t e = 0; e < dh; ++e) gqi[e] += dr * kj[e];
            if (gk) {
              T* gkj = gk + (b * a.len_k + j) * a.width + h * dh;
              for (std::int64_t e = 0; e < dh; ++e) gkj[e] += dr * qi[e];
            }
          }
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean cross-entropy of [N, C] logits against class indices.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const std::int64_t N = logits.dim(0), C = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != N) throw ShapeError("cross_entropy: label count mismatch");
  Tensor<T> soft({N, C});
  T loss = 0;
  const T* z = logits.value().data();
  for (std::int64_t i = 0; i < N; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= C) throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0, C)");
    T mx = *std::max_element(z + i * C, z + (i + 1) * C);
    T sum = 0;
    for (std::int64_t c = 0; c < C; ++c) sum += std::exp(z[i * C + c] - mx);
    const T lse = mx + std::log(sum);
    loss += lse - z[i * C + y];
    for (std::int64_t c = 0; c < C; ++c) soft[i * C + c] = std::exp(z[i * C + c] - lse);
  }
  loss /= static_cast<T>(N);
  std::vector<int> ys(labels.begin(), labels.end());
  return Var<T>::make(Tensor<T>({1}, loss), {logits}, [soft, ys = std::move(ys), N, C](Node<T>& n) {
    T* gl = parent_grad(n, 0);
    if (!gl) return;
    const T g = n.grad[0] / static_cast<T>(N);
    for (std::int64_t i = 0; i < N; ++i)
      for (std::int64_t c = 0; c < C; ++c)
        gl[i * C + c] += g * (soft[i * C + c] - (c == ys[i] ? T(1) : T(0)));
  });
}

/// Mean squared error between N predictions (any shape with N elements) and targets.
template <class T>
Var<T> mse_loss(const Var<T>& pred, std::span<const T> target) {
  const std::int64_t N = pred.value().numel();
  if (static_cast<std::int64_t>(target.size()) != N) throw ShapeError("mse_loss: target count mismatch");
  T loss = 0;
  for (std::int64_t i = 0; i < N; ++i) {
    const T d = pred.value()[i] - target[i];
    loss += d * d;
  }
  loss /= static_cast<T>(N);
  std::vector<T> t(target.begin(), target.end());
  return Var<T>::make(Tensor<T>({1}, loss), {pred}, [t = std::move(t), N](Node<T>& n) {
    T* gp = parent_grad(n, 0);
    if (!gp) return;
    const T g = n.grad[0] * T(2) / static_cast<T>(N);
    const T* p = n.parents[0]->value.data();
    for (std::int64_t i = 0; i < N; ++i) gp[i] += g * (p[i] - t[i]);
  });
}

}  // namespace cyclesafe::ops
