#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include <json.hpp>

namespace cyclesafe::train {

struct PlateauConfig {
  double factor = 0.5;
  int patience = 5;
  double threshold = 1e-4;  // relative improvement required
  double min_lr = 1e-8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PlateauConfig, factor, patience, threshold, min_lr)

/// Reduce-on-plateau over a metric where larger is better. After `patience` consecutive epochs
/// without a relative improvement beyond `threshold` the rate is multiplied by `factor`, never
/// going below `min_lr`; a rate already at or below the floor stays put.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr = 0, PlateauConfig cfg = {}) : cfg_(cfg), lr_(lr) {}

  double lr() const { return lr_; }
  double best() const { return best_; }
  int bad_epochs() const { return bad_; }
  const PlateauConfig& config() const { return cfg_; }

  double step(double metric) {
    const double bar = best_ + std::abs(best_) * cfg_.threshold;
    if (best_ == -std::numeric_limits<double>::infinity() || metric > bar) {
      best_ = metric;
      bad_ = 0;
    } else if (++bad_ >= cfg_.patience) {
      if (lr_ > cfg_.min_lr) lr_ = std::max(lr_ * cfg_.factor, cfg_.min_lr);
      bad_ = 0;
    }
    return lr_;
  }

  friend void to_json(nlohmann::json& j, const PlateauScheduler& s) {
    j = {{"config", s.cfg_}, {"lr", s.lr_}, {"bad_epochs", s.bad_}};
    j["best"] = s.best_ == -std::numeric_limits<double>::infinity() ? nlohmann::json(nullptr) : nlohmann::json(s.best_);
  }
  friend void from_json(const nlohmann::json& j, PlateauScheduler& s) {
    j.at("config").get_to(s.cfg_);
    j.at("lr").get_to(s.lr_);
    j.at("bad_epochs").get_to(s.bad_);
    s.best_ = j.at("best").is_null() ? -std::numeric_limits<double>::infinity() : j.at("best").get<double>();
  }

 private:
  PlateauConfig cfg_;
  double lr_;
  double best_ = -std::numeric_limits<double>::infinity();
  int bad_ = 0;
};

/// Learning rate after replaying a monitored-metric history from `initial_lr`.
inline double plateau_schedule(const std::vector<double>& history, double initial_lr, const PlateauConfig& cfg = {}) {
  PlateauScheduler s(initial_lr, cfg);
  for (double m : history) s.step(m);
  return s.lr();
}

}  // namespace cyclesafe::train
