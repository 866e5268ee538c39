#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "freqadapt/neural/model.hpp"

namespace freqadapt::nn {

struct LossGrad {
  double loss = 0.0;
  Tensor grad;  // d loss / d input
};

/// Mean over the batch of -log softmax(logits)[label], logits shaped (N,2).
inline LossGrad cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const std::size_t N = logits.shape.n;
  if (logits.shape.per_sample() != 2) throw ShapeError("cross_entropy: logits must have 2 columns");
  if (labels.size() != N) throw ShapeError("cross_entropy: label count does not match batch");
  LossGrad r{0.0, Tensor(logits.shape)};
  for (std::size_t i = 0; i < N; ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValueError("cross_entropy: label must be 0 or 1");
    const double a = logits.v[2 * i], b = logits.v[2 * i + 1];
    const double m = std::max(a, b);
    const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
    r.loss += lse - (labels[i] == 0 ? a : b);
    const double p1 = std::exp(b - lse), p0 = std::exp(a - lse);
    r.grad.v[2 * i] = (p0 - (labels[i] == 0 ? 1.0 : 0.0)) / static_cast<double>(N);
    r.grad.v[2 * i + 1] = (p1 - (labels[i] == 1 ? 1.0 : 0.0)) / static_cast<double>(N);
  }
  r.loss /= static_cast<double>(N);
  return r;
}

// Softmax probability of class 1 per row.
inline std::vector<double> positive_probability(const Tensor& logits) {
  std::vector<double> p(logits.shape.n);
  for (std::size_t i = 0; i < p.size(); ++i)
    p[i] = 1.0 / (1.0 + std::exp(logits.v[2 * i] - logits.v[2 * i + 1]));
  return p;
}

struct PairLossGrad {
  double loss = 0.0;
  Tensor grad_a;
  Tensor grad_b;
};

/// Batch mean of (1/S) sum over positions of the channel-wise euclidean norm
/// of a - b. At a zero difference the subgradient 0 is used.
inline PairLossGrad attention_consistency_loss(const Tensor& a, const Tensor& b) {
  if (!(a.shape == b.shape))
    throw ShapeError("attention_consistency_loss: shapes differ " + a.shape.str() + " vs " + b.shape.str());
  const std::size_t N = a.shape.n, C = a.shape.c, S = a.shape.spatial();
  PairLossGrad r{0.0, Tensor(a.shape), Tensor(a.shape)};
  const double scale = 1.0 / static_cast<double>(N * S);
  for (std::size_t i = 0; i < N; ++i) {
    const double* ai = a.sample(i);
    const double* bi = b.sample(i);
    double* ga = r.grad_a.sample(i);
    double* gb = r.grad_b.sample(i);
    for (std::size_t p = 0; p < S; ++p) {
      double sq = 0.0;
      for (std::size_t c = 0; c < C; ++c) sq += (ai[c * S + p] - bi[c * S + p]) * (ai[c * S + p] - bi[c * S + p]);
      const double norm = std::sqrt(sq);
      r.loss += norm;
      if (norm == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = scale * (ai[c * S + p] - bi[c * S + p]) / norm;
        ga[c * S + p] = g;
        gb[c * S + p] = -g;
      }
    }
  }
  r.loss *= scale;
  return r;
}

/// Identity forward; backward multiplies the upstream gradient by -factor.
struct GradientReversal {
  double factor = 1.0;

  explicit GradientReversal(double f) : factor(f) {
    if (!(f > 0.0)) throw ValueError("gradient reversal factor must be > 0");
  }
  const Tensor& forward(const Tensor& x) const noexcept { return x; }
  Tensor backward(const Tensor& dy) const {
    Tensor dx(dy.shape);
    for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = -factor * dy.v[i];
    return dx;
  }
};

inline double stage1_loss(double cls, double int_adv) { return cls - int_adv; }

inline double stage2_loss(double cls, double att, double dom_adv, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValueError("stage2_loss: lambda weights must be non-negative");
  return cls + lambda1 * att - lambda2 * dom_adv;
}

inline std::vector<int> provenance_labels(std::size_t first, std::size_t second) {
  std::vector<int> y(first, 0);
  y.resize(first + second, 1);
  return y;
}

inline std::vector<int> repeat_labels(std::span<const int> y, std::size_t times) {
  std::vector<int> out;
  for (std::size_t t = 0; t < times; ++t) out.insert(out.end(), y.begin(), y.end());
  return out;
}

// ---------------------------------------------------------------------------
// Whole-model objectives. Each runs the forward pass and, when `backward` is
// set, accumulates gradients into the model's parameters (callers zero them).

struct FeatureCache {
  EncoderCache encoder;
  AttentionCache attention;
  Shape att_shape;
};

// Pooled attentive features GAP(M(E(x))).
inline Tensor pooled_features(Encoder& enc, SpatialAttention& att, const Tensor& x, const ForwardContext& ctx,
                              FeatureCache& cache, Tensor* f_att_out = nullptr) {
  Tensor f = enc.forward(x, ctx, cache.encoder);
  AttentionOutput a = att.forward(f, ctx, cache.attention);
  cache.att_shape = a.f_att.shape;
  Tensor pooled = global_avg_pool(a.f_att);
  if (f_att_out) *f_att_out = std::move(a.f_att);
  return pooled;
}

inline void pooled_features_backward(Encoder& enc, SpatialAttention& att, const Tensor& d_pooled,
                                     const Tensor* d_f_att, const FeatureCache& cache) {
  Tensor g = global_avg_pool_backward(d_pooled, cache.att_shape);
  if (d_f_att)
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] += d_f_att->v[i];
  enc.backward(att.backward(g, nullptr, cache.attention), cache.encoder);
}

/// Label-classifier CE through the given encoder.
inline double classification_objective(Model& m, Encoder& enc, const Tensor& x, std::span<const int> y,
                                       const ForwardContext& ctx, bool backward) {
  FeatureCache fc;
  HeadCache hc;
  Tensor p = pooled_features(enc, m.attention, x, ctx, fc);
  LossGrad ce = cross_entropy(m.classifier.forward(p, ctx, hc), y);
  if (backward) pooled_features_backward(enc, m.attention, m.classifier.backward(ce.grad, hc), nullptr, fc);
  return ce.loss;
}

struct Stage1Options {
  bool use_intensity = true;
  double grl_factor = 1.0;
};

struct Stage1Losses {
  double l_cls = 0.0, l_int = 0.0, total = 0.0;
};

/// Pretraining objective on [x; x_shifted]: the classifier sees the category
/// labels for both halves, the intensity discriminator sees provenance
/// (original 0, shifted 1) behind a gradient reversal.
inline Stage1Losses stage1_objective(Model& m, const Tensor& x, const Tensor& x_shifted, std::span<const int> y,
                                     const ForwardContext& ctx, const Stage1Options& opt, bool backward) {
  const Tensor both = concat_batch(x, x_shifted);
  FeatureCache fc;
  HeadCache hc_cls, hc_int;
  Tensor p = pooled_features(m.enc_src, m.attention, both, ctx, fc);
  const auto y2 = repeat_labels(y, 2);
  LossGrad cls = cross_entropy(m.classifier.forward(p, ctx, hc_cls), y2);
  Stage1Losses out;
  out.l_cls = cls.loss;
  LossGrad inten;
  const GradientReversal grl(opt.grl_factor);
  if (opt.use_intensity) {
    const auto prov = provenance_labels(x.shape.n, x_shifted.shape.n);
    inten = cross_entropy(m.intensity_disc.forward(grl.forward(p), ctx, hc_int), prov);
    out.l_int = inten.loss;
  }
  out.total = stage1_loss(out.l_cls, out.l_int);
  if (backward) {
    Tensor dp = m.classifier.backward(cls.grad, hc_cls);
    if (opt.use_intensity) {
      Tensor di = grl.backward(m.intensity_disc.backward(inten.grad, hc_int));
      for (std::size_t i = 0; i < dp.v.size(); ++i) dp.v[i] += di.v[i];
    }
    pooled_features_backward(m.enc_src, m.attention, dp, nullptr, fc);
  }
  return out;
}

struct Stage2Options {
  double lambda_att = 0.5;
  double lambda_dom = 0.1;
  // Route the domain gradient into the encoders unreversed and unscaled
  // (paired checks only).
  bool disable_reversal = false;
  // Restrict backward to the domain branch (paired checks only).
  bool domain_branch_only = false;
};

struct Stage2Losses {
  double l_cls = 0.0, l_att = 0.0, l_dom = 0.0, total = 0.0;
};

/// Adaptation objective. Source images go through enc_src, mixed target
/// images through enc_tgt; attention is shared. The classifier sees source
/// features only; the domain discriminator sees both (source 0, target 1).
inline Stage2Losses stage2_objective(Model& m, const Tensor& xs, std::span<const int> ys, const Tensor& xt_mixed,
                                     const ForwardContext& ctx, const Stage2Options& opt, bool backward) {
  if (opt.lambda_att < 0.0 || opt.lambda_dom < 0.0) throw ValueError("stage2: lambda weights must be non-negative");
  FeatureCache fs, ft;
  HeadCache hc_cls, hc_dom;
  Tensor fatt_s, fatt_t;
  Tensor ps = pooled_features(m.enc_src, m.attention, xs, ctx, fs, &fatt_s);
  Tensor pt = pooled_features(m.enc_tgt, m.attention, xt_mixed, ctx, ft, &fatt_t);
  LossGrad cls = cross_entropy(m.classifier.forward(ps, ctx, hc_cls), ys);
  PairLossGrad att = attention_consistency_loss(fatt_s, fatt_t);
  const Tensor pooled = concat_batch(ps, pt);
  LossGrad dom = cross_entropy(m.domain_disc.forward(pooled, ctx, hc_dom), provenance_labels(ps.shape.n, pt.shape.n));

  Stage2Losses out{cls.loss, att.loss, dom.loss, stage2_loss(cls.loss, att.loss, dom.loss, opt.lambda_att, opt.lambda_dom)};
  if (!backward) return out;

  Tensor d_pooled = m.domain_disc.backward(dom.grad, hc_dom);
  if (!opt.disable_reversal) {
    if (opt.lambda_dom > 0.0)
      d_pooled = GradientReversal(opt.lambda_dom).backward(d_pooled);
    else
      std::fill(d_pooled.v.begin(), d_pooled.v.end(), 0.0);
  }
  Tensor dps = slice_batch(d_pooled, 0, ps.shape.n);
  Tensor dpt = slice_batch(d_pooled, ps.shape.n, pt.shape.n);
  Tensor dfs(fatt_s.shape), dft(fatt_t.shape);
  if (!opt.domain_branch_only) {
    Tensor dc = m.classifier.backward(cls.grad, hc_cls);
    for (std::size_t i = 0; i < dps.v.size(); ++i) dps.v[i] += dc.v[i];
    for (std::size_t i = 0; i < dfs.v.size(); ++i) {
      dfs.v[i] = opt.lambda_att * att.grad_a.v[i];
      dft.v[i] = opt.lambda_att * att.grad_b.v[i];
    }
  }
  pooled_features_backward(m.enc_src, m.attention, dps, &dfs, fs);
  pooled_features_backward(m.enc_tgt, m.attention, dpt, &dft, ft);
  return out;
}

}  // namespace freqadapt::nn
