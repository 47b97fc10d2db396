#pragma once

#include <cmath>
#include <string>

#include "cyclesafe/core/ops.hpp"
#include "cyclesafe/model/parameters.hpp"

namespace cyclesafe::model {

enum class Init { trunc_normal_02, xavier, kaiming, zeros };

template <class T>
Tensor<T> make_weight(Shape shape, std::int64_t fan_in, std::int64_t fan_out, Init init, Rng& rng) {
  switch (init) {
    case Init::trunc_normal_02: return init_trunc_normal<T>(std::move(shape), 0.02, rng);
    case Init::xavier: return init_uniform<T>(std::move(shape), std::sqrt(6.0 / double(fan_in + fan_out)), rng);
    case Init::kaiming: return init_normal<T>(std::move(shape), std::sqrt(2.0 / double(fan_in)), rng);
    case Init::zeros: return Tensor<T>(std::move(shape));
  }
  return Tensor<T>(std::move(shape));
}

template <class T>
struct Linear {
  Var<T> weight, bias;

  Linear() = default;
  Linear(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t out, Init init, Rng& rng,
         bool with_bias = true) {
    weight = ps.add(name + ".weight", make_weight<T>({in, out}, in, out, init, rng));
    if (with_bias) bias = ps.add(name + ".bias", Tensor<T>({out}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::linear(x, weight, bias); }
};

template <class T>
struct LayerNorm {
  Var<T> gamma, beta;
  T eps = T(1e-5);

  LayerNorm() = default;
  LayerNorm(ParameterSet<T>& ps, const std::string& name, std::int64_t width, T eps_ = T(1e-5)) : eps(eps_) {
    gamma = ps.add(name + ".weight", Tensor<T>({width}, T(1)));
    beta = ps.add(name + ".bias", Tensor<T>({width}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

template <class T>
struct Conv2d {
  Var<T> weight, bias;
  std::int64_t stride = 1, pad = 0;

  Conv2d() = default;
  Conv2d(ParameterSet<T>& ps, const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t kernel,
         std::int64_t stride_, std::int64_t pad_, Init init, Rng& rng, bool with_bias = true)
      : stride(stride_), pad(pad_) {
    const std::int64_t fan_in = kernel * kernel * cin;
    weight = ps.add(name + ".weight", make_weight<T>({kernel, kernel, cin, cout}, fan_in, cout, init, rng));
    if (with_bias) bias = ps.add(name + ".bias", Tensor<T>({cout}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <class T>
struct DepthwiseConv2d {
  Var<T> weight, bias;
  std::int64_t pad = 3;

  DepthwiseConv2d() = default;
  DepthwiseConv2d(ParameterSet<T>& ps, const std::string& name, std::int64_t channels, std::int64_t kernel, Rng& rng)
      : pad((kernel - 1) / 2) {
    weight = ps.add(name + ".weight", init_trunc_normal<T>({kernel, kernel, channels}, 0.02, rng));
    bias = ps.add(name + ".bias", Tensor<T>({channels}));
  }
  Var<T> operator()(const Var<T>& x) const { return ops::depthwise_conv2d(x, weight, bias, pad); }
};

/// Two-layer perceptron with GELU.
template <class T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(ParameterSet<T>& ps, const std::string& name, std::int64_t in, std::int64_t hidden, std::int64_t out, Rng& rng,
      Init last = Init::xavier) {
    fc1 = Linear<T>(ps, name + ".fc1", in, hidden, Init::xavier, rng);
    fc2 = Linear<T>(ps, name + ".fc2", hidden, out, last, rng);
  }
  Var<T> operator()(const Var<T>& x) const { return fc2(ops::gelu(fc1(x))); }
};

}  // namespace cyclesafe::model
