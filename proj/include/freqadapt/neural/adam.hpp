#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "freqadapt/neural/tensor.hpp"

namespace freqadapt::nn {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update at step t (1-based), in place.
inline void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m,
                        std::span<double> v, const AdamConfig& cfg, std::int64_t t) {
  if (params.size() != grads.size() || params.size() != m.size() || params.size() != v.size())
    throw ShapeError("adam_update: parameter, gradient and moment lengths differ");
  if (t < 1) throw ValueError("adam_update: step count must be >= 1");
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    params[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
  }
}

/// Adam over a named parameter set. Moments are keyed by parameter name, so
/// one optimizer can drive a subset of a model and be checkpointed.
class Adam {
 public:
  struct Moments {
    std::vector<double> m, v;
  };

  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {
    if (!(cfg.lr > 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
        !(cfg.eps > 0.0))
      throw ConfigError("invalid Adam config");
  }

  void step(const std::vector<Param*>& params) {
    ++t_;
    for (Param* p : params) {
      auto& mom = moments_[p->name];
      if (mom.m.empty()) {
        mom.m.assign(p->size(), 0.0);
        mom.v.assign(p->size(), 0.0);
      }
      adam_update(p->value, p->grad, mom.m, mom.v, cfg_, t_);
    }
  }

  const AdamConfig& config() const noexcept { return cfg_; }
  std::int64_t steps() const noexcept { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace freqadapt::nn
