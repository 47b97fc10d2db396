#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cyclesafe/model/parameters.hpp"

namespace cyclesafe::train {

struct AdamWConfig {
  double lr = 2e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdamWConfig, lr, beta1, beta2, eps, weight_decay)

/// Adam with decoupled weight decay. Parameters that received no gradient in a step are left
/// untouched, including their decay.
template <class T>
class AdamW {
 public:
  AdamW(model::ParameterSet<T>& params, AdamWConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace(e.name, Tensor<T>(e.var.shape()));
      v_.emplace(e.name, Tensor<T>(e.var.shape()));
    }
  }

  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return step_; }

  void step() {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    const T decay = static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(cfg_.lr / bc1), root_bc2 = static_cast<T>(std::sqrt(bc2));
    const T eps = static_cast<T>(cfg_.eps);
    for (auto& e : params_->entries()) {
      if (!e.var.has_grad()) continue;
      Var<T> var = e.var;
      T* p = var.mutable_value().data();
      const T* g = var.grad().data();
      T* m = m_.at(e.name).data();
      T* v = v_.at(e.name).data();
      for (std::int64_t i = 0, n = var.value().numel(); i < n; ++i) {
        p[i] *= decay;
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
        p[i] -= step_size * m[i] / (std::sqrt(v[i]) / root_bc2 + eps);
      }
    }
  }

  /// Moment buffers as a named archive ("m.<name>", "v.<name>").
  void save(const std::string& path) const {
    std::vector<std::pair<std::string, Tensor<T>>> items;
    for (const auto& [name, t] : m_) items.emplace_back("m." + name, t);
    for (const auto& [name, t] : v_) items.emplace_back("v." + name, t);
    model::write_archive(path, items);
  }

  void load(const std::string& path, std::int64_t steps) {
    for (auto& [name, t] : model::read_archive<T>(path)) {
      auto& target = name.rfind("m.", 0) == 0 ? m_ : v_;
      auto it = target.find(name.substr(2));
      if (it == target.end() || it->second.shape() != t.shape())
        throw std::runtime_error("optimizer state does not match the model: " + name);
      it->second = t;
    }
    step_ = steps;
  }

 private:
  model::ParameterSet<T>* params_;
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

}  // namespace cyclesafe::train
