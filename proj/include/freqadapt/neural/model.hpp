#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "freqadapt/neural/layers.hpp"
#include "freqadapt/neural/tensor.hpp"

namespace freqadapt::nn {

struct EncoderConfig {
  std::vector<std::size_t> widths{8, 16, 32, 32};
  std::size_t kernel = 3;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;

  // Zero-based even blocks (0, 2, ...) halve every spatial axis.
  static bool downsamples(std::size_t block) { return block % 2 == 0; }
};

struct ModelConfig {
  EncoderConfig encoder;
  std::size_t spatial_rank = 2;  // 2 for (h,w) inputs, 3 for (d,h,w)
  std::size_t attention_kernel = 7;
  std::vector<std::size_t> head_hidden{128, 64};
  double dropout = 0.5;

  static ModelConfig desk(std::size_t rank = 2) {
    ModelConfig c;
    c.spatial_rank = rank;
    return c;
  }

  // Ten conv layers, five of them downsampling.
  static ModelConfig paper(std::size_t rank = 3) {
    ModelConfig c;
    c.spatial_rank = rank;
    c.encoder.widths = {8, 8, 16, 16, 32, 32, 64, 64, 128, 128};
    return c;
  }
};

inline ConvGeometry make_geometry(std::size_t rank, std::size_t kernel, std::size_t stride) {
  ConvGeometry g;
  if (rank == 2) {
    g.kernel = {1, kernel, kernel};
    g.stride = {1, stride, stride};
  } else {
    g.kernel = {kernel, kernel, kernel};
    g.stride = {stride, stride, stride};
  }
  return g;
}

// ---------------------------------------------------------------------------
// Encoder: conv -> batch norm -> ReLU blocks.

struct BlockCache {
  ConvCache conv;
  BatchNormCache bn;
  ReluCache relu;
};

struct EncoderCache {
  std::vector<BlockCache> blocks;
};

class Encoder {
 public:
  Encoder() = default;
  Encoder(const std::string& name, const EncoderConfig& cfg, std::size_t rank) : name_(name), rank_(rank) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
      const std::string bn = name + ".block" + std::to_string(i);
      convs_.emplace_back(bn + ".conv", in, cfg.widths[i],
                          make_geometry(rank, cfg.kernel, EncoderConfig::downsamples(i) ? 2 : 1));
      norms_.emplace_back(bn + ".bn", cfg.widths[i], cfg.bn_momentum, cfg.bn_eps);
      in = cfg.widths[i];
    }
  }

  std::size_t block_count() const noexcept { return convs_.size(); }
  std::size_t out_channels() const { return convs_.back().out_channels(); }

  void init(Rng& rng) {
    for (auto& c : convs_) {
      init_uniform(c.weight, std::sqrt(6.0 / static_cast<double>(c.weight.dims[1])), rng);
      std::fill(c.bias.value.begin(), c.bias.value.end(), 0.0);
    }
  }

  Tensor forward(const Tensor& x, const ForwardContext& ctx, EncoderCache& cache) {
    cache.blocks.resize(convs_.size());
    Tensor h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      const auto& g = convs_[i].geometry();
      const auto sp = h.shape.space();
      for (int a = 0; a < 3; ++a)
        if (g.stride[a] > 1 && sp[a] < g.stride[a])
          throw ShapeError(name_ + " block " + std::to_string(i) + ": spatial extent " + std::to_string(sp[a]) +
                           " too small to downsample (input " + x.shape.str() + ")");
      h = convs_[i].forward(h, cache.blocks[i].conv);
      h = norms_[i].forward(h, ctx, cache.blocks[i].bn);
      h = relu_forward(h, ctx, cache.blocks[i].relu);
    }
    return h;
  }

  Tensor backward(const Tensor& dy, const EncoderCache& cache) {
    Tensor g = dy;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      g = relu_backward(g, cache.blocks[i].relu);
      g = norms_[i].backward(g, cache.blocks[i].bn);
      g = convs_[i].backward(g, cache.blocks[i].conv);
    }
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      for (auto* p : convs_[i].params()) out.push_back(p);
      for (auto* p : norms_[i].params()) out.push_back(p);
    }
    return out;
  }

  std::vector<Buffer*> buffers() {
    std::vector<Buffer*> out;
    for (auto& n : norms_)
      for (auto* b : n.buffers()) out.push_back(b);
    return out;
  }

  // Copies parameter values and running statistics, keeping own names.
  void copy_state_from(Encoder& other) {
    auto mine = params();
    auto theirs = other.params();
    if (mine.size() != theirs.size()) throw ShapeError("encoder copy: architecture mismatch");
    for (std::size_t i = 0; i < mine.size(); ++i) {
      if (mine[i]->dims != theirs[i]->dims) throw ShapeError("encoder copy: parameter shape mismatch");
      mine[i]->value = theirs[i]->value;
    }
    auto mb = buffers();
    auto tb = other.buffers();
    for (std::size_t i = 0; i < mb.size(); ++i) mb[i]->value = tb[i]->value;
  }

  std::vector<Conv>& convs() { return convs_; }
  std::vector<BatchNorm>& norms() { return norms_; }

 private:
  std::string name_;
  std::size_t rank_ = 2;
  std::vector<Conv> convs_;
  std::vector<BatchNorm> norms_;
};

// ---------------------------------------------------------------------------
// Spatial attention: s = sigmoid(conv([max_c f, mean_c f])), f' = f * s.

struct AttentionCache {
  Tensor f;
  std::vector<std::uint32_t> argmax;  // per (n, position)
  ConvCache conv;
  Tensor s;
};

struct AttentionOutput {
  Tensor s;      // (N,1,spatial), values in (0,1)
  Tensor f_att;  // same shape as f
};

class SpatialAttention {
 public:
  SpatialAttention() = default;
  SpatialAttention(const std::string& name, std::size_t rank, std::size_t kernel)
      : conv_(name + ".conv", 2, 1, make_geometry(rank, kernel, 1)) {}

  void init(Rng& rng) {
    init_uniform(conv_.weight, 1.0 / std::sqrt(static_cast<double>(conv_.weight.dims[1])), rng);
    std::fill(conv_.bias.value.begin(), conv_.bias.value.end(), 0.0);
  }

  AttentionOutput forward(const Tensor& f, const ForwardContext& ctx, AttentionCache& cache) {
    const Shape& sh = f.shape;
    const std::size_t C = sh.c, S = sh.spatial();
    Tensor pooled(Shape{sh.n, 2, sh.d, sh.h, sh.w});
    cache.f = f;
    cache.argmax.assign(sh.n * S, 0);
    for (std::size_t i = 0; i < sh.n; ++i) {
      const double* fi = f.sample(i);
      double* pi = pooled.sample(i);
      for (std::size_t p = 0; p < S; ++p) {
        double mx = fi[p], sum = 0.0;
        std::uint32_t arg = 0;
        for (std::size_t c = 0; c < C; ++c) {
          const double x = fi[c * S + p];
          sum += x;
          if (x > mx) {
            mx = x;
            arg = static_cast<std::uint32_t>(c);
          }
        }
        cache.argmax[i * S + p] = arg;
        pi[p] = mx;
        pi[S + p] = sum / static_cast<double>(C);
        if (ctx.kinks) ctx.kinks->mix(arg);
      }
    }
    Tensor pre = conv_.forward(pooled, cache.conv);
    AttentionOutput out{Tensor(pre.shape), Tensor(sh)};
    for (std::size_t k = 0; k < pre.v.size(); ++k) out.s.v[k] = 1.0 / (1.0 + std::exp(-pre.v[k]));
    for (std::size_t i = 0; i < sh.n; ++i) {
      const double* si = out.s.sample(i);
      const double* fi = f.sample(i);
      double* oi = out.f_att.sample(i);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < S; ++p) oi[c * S + p] = fi[c * S + p] * si[p];
    }
    cache.s = out.s;
    return out;
  }

  // d_f_att: gradient w.r.t. attentive features; d_s (optional, may be empty)
  // adds a direct gradient on the attention map.
  Tensor backward(const Tensor& d_f_att, const Tensor* d_s, const AttentionCache& cache) {
    const Shape& sh = cache.f.shape;
    const std::size_t C = sh.c, S = sh.spatial();
    Tensor df(sh);
    Tensor dpre(cache.s.shape);
    for (std::size_t i = 0; i < sh.n; ++i) {
      const double* si = cache.s.sample(i);
      const double* fi = cache.f.sample(i);
      const double* gi = d_f_att.sample(i);
      double* dfi = df.sample(i);
      double* dpi = dpre.sample(i);
      for (std::size_t p = 0; p < S; ++p) {
        double ds = d_s ? d_s->sample(i)[p] : 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          dfi[c * S + p] = gi[c * S + p] * si[p];
          ds += gi[c * S + p] * fi[c * S + p];
        }
        dpi[p] = ds * si[p] * (1.0 - si[p]);
      }
    }
    Tensor dpooled = conv_.backward(dpre, cache.conv);
    for (std::size_t i = 0; i < sh.n; ++i) {
      const double* dp = dpooled.sample(i);
      double* dfi = df.sample(i);
      for (std::size_t p = 0; p < S; ++p) {
        dfi[cache.argmax[i * S + p] * S + p] += dp[p];
        const double davg = dp[S + p] / static_cast<double>(C);
        for (std::size_t c = 0; c < C; ++c) dfi[c * S + p] += davg;
      }
    }
    return df;
  }

  std::vector<Param*> params() { return conv_.params(); }
  Conv& conv() { return conv_; }

 private:
  Conv conv_;
};

// ---------------------------------------------------------------------------
// Fully connected head: in -> hidden... -> 2, ReLU + dropout between layers.

struct HeadCache {
  std::vector<LinearCache> linear;
  std::vector<ReluCache> relu;
  std::vector<DropoutCache> drop;
};

class Head {
 public:
  Head() = default;
  Head(const std::string& name, std::size_t in, const std::vector<std::size_t>& hidden, double dropout)
      : dropout_(dropout) {
    std::size_t prev = in;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      layers_.emplace_back(name + ".fc" + std::to_string(i), prev, hidden[i]);
      prev = hidden[i];
    }
    layers_.emplace_back(name + ".fc" + std::to_string(hidden.size()), prev, 2);
  }

  void init(Rng& rng) {
    for (auto& l : layers_) {
      init_uniform(l.weight, std::sqrt(6.0 / static_cast<double>(l.in_features())), rng);
      std::fill(l.bias.value.begin(), l.bias.value.end(), 0.0);
    }
  }

  Tensor forward(const Tensor& x, const ForwardContext& ctx, HeadCache& cache) {
    const std::size_t L = layers_.size();
    cache.linear.resize(L);
    cache.relu.resize(L - 1);
    cache.drop.resize(L - 1);
    Tensor h = x;
    for (std::size_t i = 0; i < L; ++i) {
      h = layers_[i].forward(h, cache.linear[i]);
      if (i + 1 < L) {
        h = relu_forward(h, ctx, cache.relu[i]);
        h = dropout_forward(h, dropout_, ctx, cache.drop[i]);
      }
    }
    return h;
  }

  Tensor backward(const Tensor& dlogits, const HeadCache& cache) {
    Tensor g = dlogits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      if (i + 1 < layers_.size()) {
        g = dropout_backward(g, cache.drop[i]);
        g = relu_backward(g, cache.relu[i]);
      }
      g = layers_[i].backward(g, cache.linear[i]);
    }
    return g;
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto& l : layers_)
      for (auto* p : l.params()) out.push_back(p);
    return out;
  }

  std::vector<Linear>& layers() { return layers_; }

 private:
  double dropout_ = 0.5;
  std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------

/// Source and target encoders, the shared attention module and the three
/// heads (label classifier, intensity discriminator, domain discriminator).
struct Model {
  ModelConfig config;
  Encoder enc_src;
  Encoder enc_tgt;
  SpatialAttention attention;
  Head classifier;
  Head intensity_disc;
  Head domain_disc;

  Model() = default;
  explicit Model(const ModelConfig& cfg, std::uint64_t seed = 0)
      : config(cfg),
        enc_src("enc_src", cfg.encoder, cfg.spatial_rank),
        enc_tgt("enc_tgt", cfg.encoder, cfg.spatial_rank),
        attention("attention", cfg.spatial_rank, cfg.attention_kernel),
        classifier("classifier", cfg.encoder.widths.back(), cfg.head_hidden, cfg.dropout),
        intensity_disc("intensity_disc", cfg.encoder.widths.back(), cfg.head_hidden, cfg.dropout),
        domain_disc("domain_disc", cfg.encoder.widths.back(), cfg.head_hidden, cfg.dropout) {
    if (cfg.spatial_rank != 2 && cfg.spatial_rank != 3) throw ShapeError("model spatial rank must be 2 or 3");
    if (cfg.encoder.widths.empty()) throw ShapeError("encoder needs at least one block");
    Rng rng(seed);
    enc_src.init(rng);
    attention.init(rng);
    classifier.init(rng);
    intensity_disc.init(rng);
    domain_disc.init(rng);
    enc_tgt.copy_state_from(enc_src);
  }

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto* group : {&enc_src, &enc_tgt})
      for (auto* p : group->params()) out.push_back(p);
    for (auto* p : attention.params()) out.push_back(p);
    for (auto* h : {&classifier, &intensity_disc, &domain_disc})
      for (auto* p : h->params()) out.push_back(p);
    return out;
  }

  std::vector<Buffer*> buffers() {
    auto out = enc_src.buffers();
    for (auto* b : enc_tgt.buffers()) out.push_back(b);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  // Order-sensitive FNV-1a digest over every parameter and buffer byte.
  std::uint64_t checksum() {
    std::uint64_t h = 1469598103934665603ULL;
    auto eat = [&](const std::vector<double>& v) {
      const auto* b = reinterpret_cast<const unsigned char*>(v.data());
      for (std::size_t i = 0; i < v.size() * sizeof(double); ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (auto* p : params()) eat(p->value);
    for (auto* b : buffers()) eat(b->value);
    return h;
  }
};

}  // namespace freqadapt::nn
