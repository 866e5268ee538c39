#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "freqadapt/errors.hpp"

namespace freqadapt {

struct DyMixConfig {
  double tau = 0.05;
  int patience = 5;
  double min_region = 0.1;
  double max_region = 1.0;
  double initial_beta = 1.0;
};

struct Hold {
  friend bool operator==(const Hold&, const Hold&) = default;
};

struct ProbeRequested {
  double beta_plus = 0.0;
  double beta_minus = 0.0;
  friend bool operator==(const ProbeRequested&, const ProbeRequested&) = default;
};

using SchedulerDecision = std::variant<Hold, ProbeRequested>;

/// Plain-data scheduler state, as stored in checkpoints.
struct DyMixState {
  std::int64_t beta_units = 0;  // beta = beta_units * tau
  double best_score = 0.0;
  int num_bad_epochs = 0;
  bool probe_pending = false;
  friend bool operator==(const DyMixState&, const DyMixState&) = default;
};

/// Plateau-driven region scheduler.
///
/// step() consumes one validation score per epoch. After more than
/// `patience` consecutive non-improving epochs it asks the caller to evaluate
/// beta + tau and beta - tau; resolve_probe() then commits the better
/// direction, clamped to [min_region, max_region]. beta is kept as an integer
/// count of tau so long trajectories accumulate no rounding.
class DyMixScheduler {
 public:
  explicit DyMixScheduler(const DyMixConfig& cfg) : cfg_(cfg) {
    validate();
    min_units_ = to_units(cfg.min_region);
    max_units_ = to_units(cfg.max_region);
    state_.beta_units = to_units(cfg.initial_beta);
  }

  DyMixScheduler(const DyMixConfig& cfg, const DyMixState& state) : DyMixScheduler(cfg) {
    if (state.beta_units < min_units_ || state.beta_units > max_units_)
      throw ConfigError("DyMix state beta_units out of configured bounds");
    if (state.num_bad_epochs < 0) throw ConfigError("DyMix state num_bad_epochs negative");
    state_ = state;
  }

  const DyMixConfig& config() const noexcept { return cfg_; }
  const DyMixState& state() const noexcept { return state_; }

  double beta() const noexcept { return units_to_beta(state_.beta_units); }
  std::int64_t beta_units() const noexcept { return state_.beta_units; }
  double best_score() const noexcept { return state_.best_score; }
  int num_bad_epochs() const noexcept { return state_.num_bad_epochs; }
  bool probe_pending() const noexcept { return state_.probe_pending; }

  // When 1/tau is an integer k, units / k is the correctly rounded fraction
  // (19 / 20 == 0.95, whereas 19 * 0.05 is not).
  double units_to_beta(std::int64_t units) const noexcept {
    const double k = std::round(1.0 / cfg_.tau);
    if (std::abs(1.0 / cfg_.tau - k) < 1e-9) return static_cast<double>(units) / k;
    return static_cast<double>(units) * cfg_.tau;
  }

  SchedulerDecision step(double auc_score) {
    if (!(auc_score >= 0.0 && auc_score <= 1.0))
      throw ValueError("DyMix step: score must lie in [0,1], got " + std::to_string(auc_score));
    if (state_.probe_pending) throw ProtocolError("DyMix step: a probe is pending; call resolve_probe first");
    if (auc_score > state_.best_score) {
      state_.best_score = auc_score;
      state_.num_bad_epochs = 0;
      return Hold{};
    }
    ++state_.num_bad_epochs;
    if (state_.num_bad_epochs > cfg_.patience) {
      state_.num_bad_epochs = 0;
      state_.probe_pending = true;
      return ProbeRequested{units_to_beta(clamp_units(state_.beta_units + 1)),
                            units_to_beta(clamp_units(state_.beta_units - 1))};
    }
    return Hold{};
  }

  // Ties go to beta - tau.
  double resolve_probe(double eval_plus, double eval_minus) {
    if (!state_.probe_pending) throw ProtocolError("DyMix resolve_probe: no probe pending");
    state_.beta_units = clamp_units(state_.beta_units + (eval_plus > eval_minus ? 1 : -1));
    state_.probe_pending = false;
    return beta();
  }

 private:
  std::int64_t clamp_units(std::int64_t u) const noexcept {
    return u < min_units_ ? min_units_ : (u > max_units_ ? max_units_ : u);
  }

  std::int64_t to_units(double x) const { return std::llround(x / cfg_.tau); }

  bool aligned(double x) const {
    const double u = x / cfg_.tau;
    return std::abs(u - std::round(u)) < 1e-9;
  }

  void validate() const {
    std::string bad;
    if (!(cfg_.tau > 0.0 && cfg_.tau <= 1.0)) bad += " tau must be in (0,1];";
    if (cfg_.patience < 1) bad += " patience must be >= 1;";
    if (!(0.0 <= cfg_.min_region)) bad += " min_region must be >= 0;";
    if (!(cfg_.min_region <= cfg_.initial_beta)) bad += " min_region must be <= initial_beta;";
    if (!(cfg_.initial_beta <= cfg_.max_region)) bad += " initial_beta must be <= max_region;";
    if (!(cfg_.max_region <= 1.0)) bad += " max_region must be <= 1;";
    if (bad.empty() && !(aligned(cfg_.min_region) && aligned(cfg_.max_region) && aligned(cfg_.initial_beta)))
      bad += " min_region, max_region and initial_beta must be multiples of tau;";
    if (!bad.empty()) throw ConfigError("invalid DyMix config:" + bad);
  }

  DyMixConfig cfg_;
  DyMixState state_;
  std::int64_t min_units_ = 0;
  std::int64_t max_units_ = 0;
};

}  // namespace freqadapt
