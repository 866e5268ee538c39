#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "freqadapt/neural/objectives.hpp"

namespace freqadapt::nn {

struct GradCheckOptions {
  double epsilon = 1e-3;
  double tolerance = 1e-3;
  // Denominator floor for the relative error; gradients smaller than this
  // are compared absolutely.
  double abs_floor = 1e-6;
  // Elements checked per parameter tensor; 0 checks every element.
  std::size_t max_elements = 0;
  std::uint64_t sample_seed = 7;
};

struct ParamCheck {
  std::string name;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // perturbation crossed a ReLU / max-pool kink
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  bool passed = true;

  std::string str() const {
    std::ostringstream os;
    os.precision(3);
    for (const auto& p : params)
      os << p.name << "\tchecked=" << p.checked << "\tskipped=" << p.skipped << "\tmax_rel_err=" << p.max_rel_err
         << (p.max_rel_err <= tolerance ? "\tok" : "\tFAIL") << "\n";
    os << "overall max_rel_err=" << max_rel_err << " tolerance=" << tolerance << (passed ? " PASS" : " FAIL")
       << "\n";
    return os.str();
  }
};

/// Evaluates every scalar of interest. With backward set it must also
/// accumulate analytic gradients (callers zero them first). Dropout masks
/// and any other randomness must be fixed across calls.
using MultiObjective = std::function<std::vector<double>(bool backward, KinkSignature* kinks)>;

struct ParamGroup {
  std::vector<Param*> params;
  std::size_t scalar = 0;  // which objective output these gradients belong to
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central differences against analytic gradients for each group. Elements
/// whose perturbation changes the kink signature are skipped.
inline GradCheckReport gradient_check(const MultiObjective& f, const std::vector<ParamGroup>& groups,
                                      const GradCheckOptions& opt = {}) {
  for (const auto& g : groups)
    for (Param* p : g.params) p->zero_grad();
  KinkSignature base;
  f(true, &base);
  GradCheckReport rep;
  rep.tolerance = opt.tolerance;
  Rng pick(opt.sample_seed);
  for (const auto& g : groups) {
    for (Param* p : g.params) {
      ParamCheck pc{p->name};
      std::vector<std::size_t> idx(p->size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      if (opt.max_elements && idx.size() > opt.max_elements) {
        pick.shuffle(idx.begin(), idx.end());
        idx.resize(opt.max_elements);
      }
      for (std::size_t i : idx) {
        const double orig = p->value[i];
        KinkSignature kp, km;
        p->value[i] = orig + opt.epsilon;
        const double fp = f(false, &kp)[g.scalar];
        p->value[i] = orig - opt.epsilon;
        const double fm = f(false, &km)[g.scalar];
        p->value[i] = orig;
        if (kp.hash != base.hash || km.hash != base.hash) {
          ++pc.skipped;
          continue;
        }
        const double numeric = (fp - fm) / (2.0 * opt.epsilon);
        pc.max_rel_err = std::max(pc.max_rel_err, relative_error(p->grad[i], numeric, opt.abs_floor));
        ++pc.checked;
      }
      rep.max_rel_err = std::max(rep.max_rel_err, pc.max_rel_err);
      rep.passed = rep.passed && pc.max_rel_err <= opt.tolerance;
      rep.params.push_back(pc);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Adaptation-objective checks on a whole model.

struct Stage2Batch {
  Tensor xs;
  std::vector<int> ys;
  Tensor xt_mixed;
};

// Train-mode forward with running statistics frozen and a fixed dropout seed.
inline MultiObjective stage2_multi_objective(Model& m, const Stage2Batch& b, const Stage2Options& so,
                                             std::uint64_t dropout_seed) {
  return [&m, &b, so, dropout_seed](bool backward, KinkSignature* kinks) {
    Rng rng(dropout_seed);
    ForwardContext ctx{Mode::train, &rng, kinks, false};
    const Stage2Losses l = stage2_objective(m, b.xs, b.ys, b.xt_mixed, ctx, so, backward);
    return std::vector<double>{l.total, l.l_dom};
  };
}

/// Every trainable tensor of the adaptation objective: encoders, attention
/// and classifier against the reported total, the domain discriminator
/// against its own cross-entropy.
inline GradCheckReport stage2_gradient_check(Model& m, const Stage2Batch& b, const Stage2Options& so,
                                             const GradCheckOptions& opt = {}, std::uint64_t dropout_seed = 11) {
  ParamGroup total{{}, 0}, dom{m.domain_disc.params(), 1};
  for (auto* p : m.enc_src.params()) total.params.push_back(p);
  for (auto* p : m.enc_tgt.params()) total.params.push_back(p);
  for (auto* p : m.attention.params()) total.params.push_back(p);
  for (auto* p : m.classifier.params()) total.params.push_back(p);
  return gradient_check(stage2_multi_objective(m, b, so, dropout_seed), {total, dom}, opt);
}

struct ReversalCheck {
  // |g_rev + f*g_plain|_inf / |f*g_plain|_inf over all upstream gradients
  // together. Per-tensor ratios are meaningless for conv biases feeding batch
  // norm, whose exact gradient is zero and whose computed one is rounding.
  double max_rel_dev = 0.0;
  bool passed = false;
};

/// Domain-branch gradients reaching the encoders and attention with the
/// reversal in place must equal -lambda_dom times those without it.
inline ReversalCheck gradient_reversal_check(Model& m, const Stage2Batch& b, double lambda_dom,
                                             double tolerance = 1e-6, std::uint64_t dropout_seed = 11) {
  std::vector<Param*> upstream = m.enc_src.params();
  for (auto* p : m.enc_tgt.params()) upstream.push_back(p);
  for (auto* p : m.attention.params()) upstream.push_back(p);
  auto grads = [&](bool reversal) {
    m.zero_grad();
    Stage2Options so;
    so.lambda_dom = lambda_dom;
    so.domain_branch_only = true;
    so.disable_reversal = !reversal;
    stage2_multi_objective(m, b, so, dropout_seed)(true, nullptr);
    std::vector<std::vector<double>> g;
    for (auto* p : upstream) g.push_back(p->grad);
    return g;
  };
  const auto rev = grads(true);
  const auto plain = grads(false);
  m.zero_grad();
  ReversalCheck rc;
  double dev = 0.0, scale = 0.0;
  for (std::size_t t = 0; t < upstream.size(); ++t)
    for (std::size_t i = 0; i < rev[t].size(); ++i) {
      dev = std::max(dev, std::abs(rev[t][i] + lambda_dom * plain[t][i]));
      scale = std::max(scale, std::abs(lambda_dom * plain[t][i]));
    }
  rc.max_rel_dev = scale > 0.0 ? dev / scale : (dev > 0.0 ? 1.0 : 0.0);
  rc.passed = rc.max_rel_dev <= tolerance;
  return rc;
}

}  // namespace freqadapt::nn
