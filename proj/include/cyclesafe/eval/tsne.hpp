#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "cyclesafe/core/rng.hpp"

namespace cyclesafe::eval {

struct TsneOptions {
  double perplexity = 30.0;
  int iterations = 1000;
  double learning_rate = 0.0;  // 0 selects max(n / (4 * early_exaggeration), 50)
  double early_exaggeration = 12.0;
  int exaggeration_iters = 250;
  std::uint64_t seed = 0;
};

struct TsneResult {
  Eigen::MatrixXd y;  // n x 2
  double kl = 0;      // final KL(P || Q)
};

namespace detail {

inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd sq = x.rowwise().squaredNorm();
  Eigen::MatrixXd d = (-2.0 * x * x.transpose()).colwise() + sq;
  d.rowwise() += sq.transpose();
  return d.cwiseMax(0.0);
}

/// Row-conditional affinities with a per-row Gaussian bandwidth found by bisection on entropy.
inline Eigen::MatrixXd conditional_affinities(const Eigen::MatrixXd& d2, double perplexity) {
  const Eigen::Index n = d2.rows();
  const double target = std::log(perplexity);
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int it = 0; it < 100; ++it) {
      double nearest = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j)
        if (j != i) nearest = std::min(nearest, d2(i, j));
      double sum = 0, weighted = 0;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * (d2(i, j) - nearest));
        p(i, j) = w;
        sum += w;
        weighted += w * (d2(i, j) - nearest);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      p.row(i) /= sum;
      if (std::abs(entropy - target) < 1e-5) break;
      if (entropy > target) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (lo + hi) / 2;
      } else {
        hi = beta;
        beta = (lo + hi) / 2;
      }
    }
  }
  return p;
}

/// Symmetrized joint affinities summing to one, floored away from zero off the diagonal.
inline Eigen::MatrixXd joint_affinities(const Eigen::MatrixXd& x, double perplexity) {
  const Eigen::MatrixXd c = conditional_affinities(squared_distances(x), perplexity);
  Eigen::MatrixXd p = ((c + c.transpose()) / (2.0 * static_cast<double>(x.rows()))).cwiseMax(1e-12);
  p.diagonal().setZero();
  return p;
}

}  // namespace detail

/// Exact t-SNE to two dimensions (dense affinities, gradient descent with momentum and gains).
inline TsneResult tsne(const std::vector<std::vector<double>>& rows, const TsneOptions& o = {}) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n < 4) throw std::invalid_argument("tsne: need at least 4 points");
  const auto dim = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(rows[static_cast<std::size_t>(i)].size()) != dim)
      throw std::invalid_argument("tsne: ragged input");
    for (Eigen::Index k = 0; k < dim; ++k) x(i, k) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  x.rowwise() -= x.colwise().mean();
  const double scale = x.cwiseAbs().maxCoeff();
  if (scale > 0) x /= scale;

  const Eigen::MatrixXd p = detail::joint_affinities(x, std::min(o.perplexity, (static_cast<double>(n) - 1) / 3));

  Rng rng(derive_seed(o.seed, 0x75E));
  std::normal_distribution<double> init(0.0, 1e-4);
  TsneResult r;
  r.y.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) r.y(i, 0) = init(rng), r.y(i, 1) = init(rng);
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(n, 2), gains = Eigen::MatrixXd::Ones(n, 2);

  const double lr = o.learning_rate > 0
                        ? o.learning_rate
                        : std::max(static_cast<double>(n) / (4.0 * o.early_exaggeration), 50.0);
  Eigen::MatrixXd num(n, n), grad(n, 2);
  for (int it = 0; it < o.iterations; ++it) {
    const double exaggeration = it < o.exaggeration_iters ? o.early_exaggeration : 1.0;
    num = (1.0 + detail::squared_distances(r.y).array()).inverse().matrix();
    num.diagonal().setZero();
    const double z = num.sum();
    const Eigen::MatrixXd w = ((exaggeration * p).array() - num.array() / z).matrix().cwiseProduct(num);
    grad = 4.0 * (w.rowwise().sum().asDiagonal() * r.y - w * r.y);
    if (it == o.exaggeration_iters) {
      velocity.setZero();
      gains.setOnes();
    }
    const double momentum = it < o.exaggeration_iters ? 0.5 : 0.8;
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < 2; ++k) {
        const bool same_sign = (grad(i, k) > 0) == (velocity(i, k) > 0);
        gains(i, k) = std::max(same_sign ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
        velocity(i, k) = momentum * velocity(i, k) - lr * gains(i, k) * grad(i, k);
      }
    r.y += velocity;
    r.y.rowwise() -= r.y.colwise().mean();
  }
  num = (1.0 + detail::squared_distances(r.y).array()).inverse().matrix();
  num.diagonal().setZero();
  const Eigen::MatrixXd q = (num / num.sum()).cwiseMax(1e-12);
  r.kl = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) r.kl += p(i, j) * std::log(p(i, j) / q(i, j));
  return r;
}

}  // namespace cyclesafe::eval
