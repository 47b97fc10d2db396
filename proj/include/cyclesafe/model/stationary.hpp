#pragma once

#include "cyclesafe/core/ops.hpp"

namespace cyclesafe::model {

/// Moments removed from an embedding series and the normalized series itself.
/// mu, sigma: [B, 1, d]; normalized: [B, T, d].
template <class T>
struct StationarizerState {
  Var<T> mu;
  Var<T> sigma;
  Var<T> normalized;
};

/// Per-instance, per-feature z-scoring over time using the population standard deviation:
/// x' = (x - mu) / max(sigma, eps).
template <class T>
StationarizerState<T> stationarize(const Var<T>& x, T eps) {
  if (x.value().rank() != 3) throw ShapeError("stationarize: expected [B, T, d], got " + shape_str(x.shape()));
  StationarizerState<T> s;
  s.mu = ops::mean_axis(x, 1);
  Var<T> centered = ops::sub(x, s.mu);
  s.sigma = ops::sqrt(ops::mean_axis(ops::mul(centered, centered), 1));
  s.normalized = ops::div(centered, ops::clamp_min(s.sigma, eps));
  return s;
}

/// Restores removed moments: y = y' * sigma + mu, broadcast over the predicted tokens.
template <class T>
Var<T> denormalize(const Var<T>& y_prime, const Var<T>& mu, const Var<T>& sigma) {
  return ops::add(ops::mul(y_prime, sigma), mu);
}

}  // namespace cyclesafe::model
