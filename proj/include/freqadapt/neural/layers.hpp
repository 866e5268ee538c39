#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "freqadapt/neural/tensor.hpp"

namespace freqadapt::nn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void init_uniform(Param& p, double bound, Rng& rng) {
  for (auto& x : p.value) x = rng.uniform(-bound, bound);
}

// ---------------------------------------------------------------------------
// Convolution over (d,h,w) with per-axis kernel, stride and "same" padding.
// Stride-2 axes produce floor(n/2) outputs; output o reads input o*s-p+t.

struct ConvGeometry {
  std::array<std::size_t, 3> kernel{1, 1, 1};
  std::array<std::size_t, 3> stride{1, 1, 1};

  std::array<std::size_t, 3> out_extent(const std::array<std::size_t, 3>& in) const {
    std::array<std::size_t, 3> out{};
    for (int a = 0; a < 3; ++a) out[a] = stride[a] == 1 ? in[a] : in[a] / stride[a];
    return out;
  }
};

struct ConvCache {
  Shape in_shape;
  Shape out_shape;
  std::vector<double> cols;  // per sample K x P, stacked
};

class Conv {
 public:
  Conv() = default;
  Conv(std::string name, std::size_t in_ch, std::size_t out_ch, ConvGeometry geom)
      : in_ch_(in_ch), out_ch_(out_ch), geom_(geom),
        weight(name + ".weight", {out_ch, in_ch * geom.kernel[0] * geom.kernel[1] * geom.kernel[2]}),
        bias(name + ".bias", {out_ch}) {}

  std::size_t in_channels() const noexcept { return in_ch_; }
  std::size_t out_channels() const noexcept { return out_ch_; }
  const ConvGeometry& geometry() const noexcept { return geom_; }
  std::size_t taps() const noexcept { return geom_.kernel[0] * geom_.kernel[1] * geom_.kernel[2]; }

  Shape out_shape(const Shape& in) const {
    const auto o = geom_.out_extent(in.space());
    return Shape{in.n, out_ch_, o[0], o[1], o[2]};
  }

  Tensor forward(const Tensor& x, ConvCache& cache) const {
    if (x.shape.c != in_ch_)
      throw ShapeError("conv " + weight.name + ": expected " + std::to_string(in_ch_) + " input channels, got " +
                       std::to_string(x.shape.c));
    const Shape os = out_shape(x.shape);
    const auto& table = gather_table(x.shape);
    const std::size_t K = in_ch_ * taps(), P = os.spatial();
    cache.in_shape = x.shape;
    cache.out_shape = os;
    cache.cols.assign(x.shape.n * K * P, 0.0);
    Tensor y(os);
    ConstMatMap W(weight.value.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(K));
    for (std::size_t i = 0; i < x.shape.n; ++i) {
      const double* in = x.sample(i);
      double* col = cache.cols.data() + i * K * P;
      for (std::size_t j = 0; j < K * P; ++j) col[j] = table[j] >= 0 ? in[table[j]] : 0.0;
      MatMap out(y.sample(i), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(P));
      out.noalias() = W * ConstMatMap(col, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      for (std::size_t c = 0; c < out_ch_; ++c) out.row(static_cast<Eigen::Index>(c)).array() += bias.value[c];
    }
    return y;
  }

  // Accumulates weight/bias gradients; returns the input gradient.
  Tensor backward(const Tensor& dy, const ConvCache& cache) {
    const Shape& is = cache.in_shape;
    const std::size_t K = in_ch_ * taps(), P = cache.out_shape.spatial();
    const auto& table = gather_table(is);
    Tensor dx(is);
    MatMap dW(weight.grad.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(K));
    ConstMatMap W(weight.value.data(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(K));
    RowMatrix dcol(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
    for (std::size_t i = 0; i < is.n; ++i) {
      ConstMatMap g(dy.sample(i), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(P));
      ConstMatMap col(cache.cols.data() + i * K * P, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(P));
      dW.noalias() += g * col.transpose();
      // Plain loop: Eigen's vectorized sum() peels by runtime address
      // alignment, which would make the summation order heap-dependent.
      for (std::size_t c = 0; c < out_ch_; ++c) {
        const double* row = dy.sample(i) + c * P;
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += row[p];
        bias.grad[c] += s;
      }
      dcol.noalias() = W.transpose() * g;
      double* din = dx.sample(i);
      const double* dc = dcol.data();
      for (std::size_t j = 0; j < K * P; ++j)
        if (table[j] >= 0) din[table[j]] += dc[j];
    }
    return dx;
  }

  std::vector<Param*> params() { return {&weight, &bias}; }

 private:
  // For each (row, col) of the K x P patch matrix, the flat input offset
  // within one sample, or -1 for padding.
  const std::vector<std::int64_t>& gather_table(const Shape& in) const {
    const auto key = std::array<std::size_t, 4>{in.c, in.d, in.h, in.w};
    std::lock_guard lock(tables_->mutex);
    auto it = tables_->map.find(key);
    if (it != tables_->map.end()) return it->second;
    const auto ins = in.space();
    const auto outs = geom_.out_extent(ins);
    const std::size_t P = outs[0] * outs[1] * outs[2];
    const std::size_t K = in_ch_ * taps();
    std::vector<std::int64_t> t(K * P, -1);
    std::array<std::int64_t, 3> pad{};
    for (int a = 0; a < 3; ++a) pad[a] = static_cast<std::int64_t>(geom_.kernel[a] / 2);
    for (std::size_t ci = 0; ci < in_ch_; ++ci)
      for (std::size_t td = 0; td < geom_.kernel[0]; ++td)
        for (std::size_t th = 0; th < geom_.kernel[1]; ++th)
          for (std::size_t tw = 0; tw < geom_.kernel[2]; ++tw) {
            const std::size_t r = ((ci * geom_.kernel[0] + td) * geom_.kernel[1] + th) * geom_.kernel[2] + tw;
            for (std::size_t od = 0; od < outs[0]; ++od)
              for (std::size_t oh = 0; oh < outs[1]; ++oh)
                for (std::size_t ow = 0; ow < outs[2]; ++ow) {
                  const std::int64_t id = static_cast<std::int64_t>(od * geom_.stride[0] + td) - pad[0];
                  const std::int64_t ih = static_cast<std::int64_t>(oh * geom_.stride[1] + th) - pad[1];
                  const std::int64_t iw = static_cast<std::int64_t>(ow * geom_.stride[2] + tw) - pad[2];
                  if (id < 0 || ih < 0 || iw < 0 || id >= static_cast<std::int64_t>(ins[0]) ||
                      ih >= static_cast<std::int64_t>(ins[1]) || iw >= static_cast<std::int64_t>(ins[2]))
                    continue;
                  const std::size_t p = (od * outs[1] + oh) * outs[2] + ow;
                  t[r * P + p] = static_cast<std::int64_t>(
                      ((ci * ins[0] + static_cast<std::size_t>(id)) * ins[1] + static_cast<std::size_t>(ih)) *
                          ins[2] +
                      static_cast<std::size_t>(iw));
                }
          }
    return tables_->map.emplace(key, std::move(t)).first->second;
  }

  std::size_t in_ch_ = 0, out_ch_ = 0;
  ConvGeometry geom_;
  struct TableCache {
    std::mutex mutex;
    std::map<std::array<std::size_t, 4>, std::vector<std::int64_t>> map;
  };
  // Shared between copies; tables depend only on geometry and input shape.
  std::shared_ptr<TableCache> tables_ = std::make_shared<TableCache>();

 public:
  Param weight;
  Param bias;
};

// ---------------------------------------------------------------------------
// Batch normalization over (n, spatial) per channel.

struct BatchNormCache {
  Shape shape;
  std::vector<double> xhat;
  std::vector<double> inv_std;  // per channel
  bool batch_stats = false;
};

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels, double momentum = 0.9, double eps = 1e-5)
      : momentum_(momentum), eps_(eps), gamma(name + ".gamma", {channels}), beta(name + ".beta", {channels}),
        running_mean{name + ".running_mean", std::vector<double>(channels, 0.0)},
        running_var{name + ".running_var", std::vector<double>(channels, 1.0)} {
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
  }

  Tensor forward(const Tensor& x, const ForwardContext& ctx, BatchNormCache& cache) {
    const Shape& s = x.shape;
    const std::size_t C = s.c, S = s.spatial(), M = s.n * S;
    if (C != gamma.size()) throw ShapeError("batch norm " + gamma.name + ": channel mismatch");
    Tensor y(s);
    cache.shape = s;
    cache.xhat.assign(s.size(), 0.0);
    cache.inv_std.assign(C, 0.0);
    cache.batch_stats = ctx.mode == Mode::train;
    for (std::size_t c = 0; c < C; ++c) {
      double mean, var;
      if (cache.batch_stats) {
        double sum = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
          const double* p = x.sample(i) + c * S;
          for (std::size_t k = 0; k < S; ++k) sum += p[k];
        }
        mean = sum / static_cast<double>(M);
        double sq = 0.0;
        for (std::size_t i = 0; i < s.n; ++i) {
          const double* p = x.sample(i) + c * S;
          for (std::size_t k = 0; k < S; ++k) sq += (p[k] - mean) * (p[k] - mean);
        }
        var = sq / static_cast<double>(M);
        if (ctx.update_running_stats) {
          const double unbiased = M > 1 ? sq / static_cast<double>(M - 1) : var;
          running_mean.value[c] = momentum_ * running_mean.value[c] + (1.0 - momentum_) * mean;
          running_var.value[c] = momentum_ * running_var.value[c] + (1.0 - momentum_) * unbiased;
        }
      } else {
        mean = running_mean.value[c];
        var = running_var.value[c];
      }
      const double inv = 1.0 / std::sqrt(var + eps_);
      cache.inv_std[c] = inv;
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t off = i * s.per_sample() + c * S;
        for (std::size_t k = 0; k < S; ++k) {
          const double xh = (x.v[off + k] - mean) * inv;
          cache.xhat[off + k] = xh;
          y.v[off + k] = gamma.value[c] * xh + beta.value[c];
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& dy, const BatchNormCache& cache) {
    const Shape& s = cache.shape;
    const std::size_t C = s.c, S = s.spatial();
    const double M = static_cast<double>(s.n * S);
    Tensor dx(s);
    for (std::size_t c = 0; c < C; ++c) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t off = i * s.per_sample() + c * S;
        for (std::size_t k = 0; k < S; ++k) {
          sum_dy += dy.v[off + k];
          sum_dy_xhat += dy.v[off + k] * cache.xhat[off + k];
        }
      }
      gamma.grad[c] += sum_dy_xhat;
      beta.grad[c] += sum_dy;
      const double g = gamma.value[c], inv = cache.inv_std[c];
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t off = i * s.per_sample() + c * S;
        for (std::size_t k = 0; k < S; ++k) {
          if (cache.batch_stats)
            dx.v[off + k] = g * inv * (dy.v[off + k] - sum_dy / M - cache.xhat[off + k] * sum_dy_xhat / M);
          else
            dx.v[off + k] = g * inv * dy.v[off + k];
        }
      }
    }
    return dx;
  }

  std::vector<Param*> params() { return {&gamma, &beta}; }
  std::vector<Buffer*> buffers() { return {&running_mean, &running_var}; }

 private:
  double momentum_ = 0.9;
  double eps_ = 1e-5;

 public:
  Param gamma;
  Param beta;
  Buffer running_mean;
  Buffer running_var;
};

// ---------------------------------------------------------------------------
// Elementwise and pooling helpers

struct ReluCache {
  std::vector<std::uint8_t> active;
};

inline Tensor relu_forward(const Tensor& x, const ForwardContext& ctx, ReluCache& cache) {
  Tensor y(x.shape);
  cache.active.resize(x.v.size());
  std::uint64_t word = 0;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    const bool on = x.v[i] > 0.0;
    cache.active[i] = on;
    y.v[i] = on ? x.v[i] : 0.0;
    if (ctx.kinks) {
      word = (word << 1) | static_cast<std::uint64_t>(on);
      if ((i & 63) == 63) ctx.kinks->mix(word);
    }
  }
  if (ctx.kinks) ctx.kinks->mix(word);
  return y;
}

inline Tensor relu_backward(const Tensor& dy, const ReluCache& cache) {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = cache.active[i] ? dy.v[i] : 0.0;
  return dx;
}

// Global average pool: (N,C,spatial) -> (N,C,1,1,1).
inline Tensor global_avg_pool(const Tensor& x) {
  Tensor y(Shape{x.shape.n, x.shape.c, 1, 1, 1});
  const std::size_t S = x.shape.spatial();
  for (std::size_t i = 0; i < x.shape.n; ++i)
    for (std::size_t c = 0; c < x.shape.c; ++c) {
      const double* p = x.sample(i) + c * S;
      double s = 0.0;
      for (std::size_t k = 0; k < S; ++k) s += p[k];
      y.v[i * x.shape.c + c] = s / static_cast<double>(S);
    }
  return y;
}

inline Tensor global_avg_pool_backward(const Tensor& dy, const Shape& in_shape) {
  Tensor dx(in_shape);
  const std::size_t S = in_shape.spatial();
  for (std::size_t i = 0; i < in_shape.n; ++i)
    for (std::size_t c = 0; c < in_shape.c; ++c) {
      const double g = dy.v[i * in_shape.c + c] / static_cast<double>(S);
      double* p = dx.sample(i) + c * S;
      for (std::size_t k = 0; k < S; ++k) p[k] = g;
    }
  return dx;
}

// ---------------------------------------------------------------------------
// Fully connected layer on (N, in) rows.

struct LinearCache {
  Tensor x;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out)
      : in_(in), out_(out), weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

  Tensor forward(const Tensor& x, LinearCache& cache) const {
    if (x.shape.per_sample() != in_)
      throw ShapeError("linear " + weight.name + ": expected " + std::to_string(in_) + " features, got " +
                       std::to_string(x.shape.per_sample()));
    cache.x = x;
    Tensor y(Shape{x.shape.n, out_, 1, 1, 1});
    const auto N = static_cast<Eigen::Index>(x.shape.n);
    ConstMatMap X(x.v.data(), N, static_cast<Eigen::Index>(in_));
    ConstMatMap W(weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap Y(y.v.data(), N, static_cast<Eigen::Index>(out_));
    Y.noalias() = X * W.transpose();
    for (Eigen::Index i = 0; i < N; ++i)
      for (std::size_t o = 0; o < out_; ++o) Y(i, static_cast<Eigen::Index>(o)) += bias.value[o];
    return y;
  }

  Tensor backward(const Tensor& dy, const LinearCache& cache) {
    const auto N = static_cast<Eigen::Index>(cache.x.shape.n);
    ConstMatMap X(cache.x.v.data(), N, static_cast<Eigen::Index>(in_));
    ConstMatMap G(dy.v.data(), N, static_cast<Eigen::Index>(out_));
    ConstMatMap W(weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    MatMap dW(weight.grad.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
    dW.noalias() += G.transpose() * X;
    for (Eigen::Index i = 0; i < N; ++i)
      for (std::size_t o = 0; o < out_; ++o) bias.grad[o] += G(i, static_cast<Eigen::Index>(o));
    Tensor dx(cache.x.shape);
    MatMap dX(dx.v.data(), N, static_cast<Eigen::Index>(in_));
    dX.noalias() = G * W;
    return dx;
  }

  std::vector<Param*> params() { return {&weight, &bias}; }

 private:
  std::size_t in_ = 0, out_ = 0;

 public:
  Param weight;
  Param bias;
};

// Inverted dropout: kept units are scaled by 1/(1-rate) in train mode.
struct DropoutCache {
  std::vector<double> scale;
};

inline Tensor dropout_forward(const Tensor& x, double rate, const ForwardContext& ctx, DropoutCache& cache) {
  if (ctx.mode != Mode::train || rate <= 0.0) {
    cache.scale.assign(x.v.size(), 1.0);
    return x;
  }
  if (!ctx.rng) throw ValueError("dropout in train mode needs an rng");
  Tensor y(x.shape);
  cache.scale.resize(x.v.size());
  const double keep = 1.0 - rate;
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    cache.scale[i] = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
    y.v[i] = x.v[i] * cache.scale[i];
  }
  return y;
}

inline Tensor dropout_backward(const Tensor& dy, const DropoutCache& cache) {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * cache.scale[i];
  return dx;
}

}  // namespace freqadapt::nn
