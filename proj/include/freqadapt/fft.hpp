#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <vector>

#include "freqadapt/volume.hpp"

namespace freqadapt {

using Complex = std::complex<double>;

/// Precomputed factorization and twiddles for a length-n complex transform.
///
/// Mixed-radix decimation in time: n is split into its prime factors (4s
/// taken first), each stage recursing over the remaining length. Radix 2 and
/// 4 have dedicated butterflies, any other prime uses the generic O(p^2)
/// butterfly, so arbitrary extents are supported.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddles_(n) {
    if (n == 0) throw ShapeError("FFT length must be positive");
    for (std::size_t k = 0; k < n; ++k) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddles_[k] = Complex(std::cos(angle), std::sin(angle));
    }
    std::size_t rest = n;
    while (rest % 4 == 0) {
      factors_.push_back(4);
      rest /= 4;
    }
    while (rest % 2 == 0) {
      factors_.push_back(2);
      rest /= 2;
    }
    for (std::size_t p = 3; p * p <= rest; p += 2)
      while (rest % p == 0) {
        factors_.push_back(p);
        rest /= p;
      }
    if (rest > 1) factors_.push_back(rest);
  }

  std::size_t size() const noexcept { return n_; }
  const std::vector<std::size_t>& factors() const noexcept { return factors_; }

  // out[k] = sum_j in[j*stride] * exp(-2 pi i jk/n)
  void forward(const Complex* in, std::size_t stride, Complex* out) const {
    if (n_ == 1) {
      out[0] = in[0];
      return;
    }
    scratch_.resize(factors_.empty() ? 1 : *std::max_element(factors_.begin(), factors_.end()));
    work(out, in, 1, stride, 0, n_);
  }

 private:
  void work(Complex* out, const Complex* in, std::size_t fstride, std::size_t in_stride,
            std::size_t level, std::size_t len) const {
    const std::size_t p = factors_[level];
    const std::size_t m = len / p;
    if (m == 1) {
      for (std::size_t q = 0; q < p; ++q) out[q] = in[q * fstride * in_stride];
    } else {
      for (std::size_t q = 0; q < p; ++q)
        work(out + q * m, in + q * fstride * in_stride, fstride * p, in_stride, level + 1, m);
    }
    switch (p) {
      case 2: butterfly2(out, fstride, m); break;
      case 4: butterfly4(out, fstride, m); break;
      default: butterfly_generic(out, fstride, m, p); break;
    }
  }

  void butterfly2(Complex* out, std::size_t fstride, std::size_t m) const {
    for (std::size_t u = 0; u < m; ++u) {
      const Complex t = out[u + m] * twiddles_[u * fstride];
      out[u + m] = out[u] - t;
      out[u] += t;
    }
  }

  void butterfly4(Complex* out, std::size_t fstride, std::size_t m) const {
    for (std::size_t u = 0; u < m; ++u) {
      const Complex a0 = out[u];
      const Complex a1 = out[u + m] * twiddles_[u * fstride];
      const Complex a2 = out[u + 2 * m] * twiddles_[2 * u * fstride];
      const Complex a3 = out[u + 3 * m] * twiddles_[3 * u * fstride];
      const Complex s02 = a0 + a2, d02 = a0 - a2;
      const Complex s13 = a1 + a3, d13 = a1 - a3;
      // multiply by -i
      const Complex d13_mi(d13.imag(), -d13.real());
      out[u] = s02 + s13;
      out[u + m] = d02 + d13_mi;
      out[u + 2 * m] = s02 - s13;
      out[u + 3 * m] = d02 - d13_mi;
    }
  }

  void butterfly_generic(Complex* out, std::size_t fstride, std::size_t m, std::size_t p) const {
    for (std::size_t u = 0; u < m; ++u) {
      for (std::size_t q = 0; q < p; ++q) scratch_[q] = out[u + q * m];
      for (std::size_t q1 = 0; q1 < p; ++q1) {
        const std::size_t k = u + q1 * m;
        Complex acc = scratch_[0];
        std::size_t tw = 0;
        for (std::size_t q = 1; q < p; ++q) {
          tw += fstride * k;
          if (tw >= n_) tw %= n_;
          acc += scratch_[q] * twiddles_[tw];
        }
        out[k] = acc;
      }
    }
  }

  std::size_t n_;
  std::vector<Complex> twiddles_;
  std::vector<std::size_t> factors_;
  mutable std::vector<Complex> scratch_;
};

namespace detail {

inline const FftPlan& plan_for(std::size_t n) {
  thread_local std::map<std::size_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
  return it->second;
}

}  // namespace detail

/// In-place unnormalized N-d transform over a row-major grid. The inverse
/// direction applies the 1/N scale.
inline void fft_nd(std::span<Complex> data, const Dims& dims, bool inverse) {
  if (element_count(dims) != data.size()) throw ShapeError("fft_nd: data does not match dims");
  if (inverse)
    for (auto& c : data) c = std::conj(c);

  std::vector<Complex> line, out;
  std::size_t stride = data.size();
  for (std::size_t axis = 0; axis < dims.size(); ++axis) {
    const std::size_t n = dims[axis];
    stride /= n;
    if (n == 1) continue;
    const FftPlan& plan = detail::plan_for(n);
    line.resize(n);
    out.resize(n);
    const std::size_t outer = data.size() / (n * stride);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t s = 0; s < stride; ++s) {
        Complex* base = data.data() + o * n * stride + s;
        for (std::size_t k = 0; k < n; ++k) line[k] = base[k * stride];
        plan.forward(line.data(), 1, out.data());
        for (std::size_t k = 0; k < n; ++k) base[k * stride] = out[k];
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(data.size());
    for (auto& c : data) c = std::conj(c) * scale;
  }
}

}  // namespace freqadapt
