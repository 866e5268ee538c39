#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "freqadapt/rng.hpp"
#include "freqadapt/spectral.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt {

/// Centered hyper-rectangle over a spectrum grid covering round(beta * n)
/// bins along every axis.
struct RegionMask {
  Dims dims;
  double beta = 0.0;
  std::vector<std::size_t> side;   // per axis
  std::vector<std::size_t> start;  // per axis
  std::vector<std::uint8_t> flags;

  bool contains(std::size_t flat) const { return flags[flat] != 0; }
  std::size_t count() const {
    std::size_t c = 0;
    for (auto f : flags) c += f;
    return c;
  }
};

inline void check_fraction(double x, const char* what) {
  if (!(x >= 0.0 && x <= 1.0))
    throw ValueError(std::string(what) + " must lie in [0,1], got " + std::to_string(x));
}

// Round half up; the epsilon absorbs representation error in products such
// as 0.05 * k * n landing a hair under an exact half.
inline std::size_t region_side(double beta, std::size_t n) {
  return static_cast<std::size_t>(std::floor(beta * static_cast<double>(n) + 0.5 + 1e-9));
}

inline RegionMask region_mask(const Dims& dims, double beta) {
  check_fraction(beta, "region_mask: beta");
  Volume::check_dims(dims);
  RegionMask m;
  m.dims = dims;
  m.beta = beta;
  for (auto n : dims) {
    const std::size_t s = std::min(region_side(beta, n), n);
    m.side.push_back(s);
    m.start.push_back((n - s) / 2);
  }
  const std::size_t total = element_count(dims);
  m.flags.assign(total, 0);
  const std::size_t rank = dims.size();
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    bool inside = true;
    for (std::size_t a = 0; a < rank && inside; ++a)
      inside = idx[a] >= m.start[a] && idx[a] < m.start[a] + m.side[a];
    m.flags[flat] = inside ? 1 : 0;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Random bias field: v * exp(B), B a polynomial over coordinates in [-1,1].

struct BiasFieldParams {
  int order = 3;
  double sigma = 0.4;
  std::uint64_t seed = 0;

  void validate() const {
    if (order < 0) throw ValueError("bias field order must be >= 0");
    if (!(sigma > 0.0)) throw ValueError("bias field sigma must be > 0");
  }
};

// Exponent tuples (one per axis) with total degree <= order, in
// lexicographic order. This fixes the coefficient order.
inline std::vector<std::vector<int>> bias_monomials(std::size_t rank, int order) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(rank, 0);
  auto rec = [&](auto&& self, std::size_t axis, int budget) -> void {
    if (axis == rank) {
      out.push_back(e);
      return;
    }
    for (int p = 0; p <= budget; ++p) {
      e[axis] = p;
      self(self, axis + 1, budget - p);
    }
    e[axis] = 0;
  };
  rec(rec, 0, order);
  return out;
}

/// Log-field B over `dims` for explicit coefficients (one per monomial).
inline std::vector<double> bias_log_field(const Dims& dims, int order,
                                          const std::vector<double>& coefficients) {
  Volume::check_dims(dims);
  const auto monos = bias_monomials(dims.size(), order);
  if (coefficients.size() != monos.size())
    throw ValueError("bias field: expected " + std::to_string(monos.size()) + " coefficients, got " +
                     std::to_string(coefficients.size()));
  const std::size_t rank = dims.size();
  // coordinate powers per axis: pow[a][i][p]
  std::vector<std::vector<std::vector<double>>> pw(rank);
  for (std::size_t a = 0; a < rank; ++a) {
    const std::size_t n = dims[a];
    pw[a].resize(n, std::vector<double>(static_cast<std::size_t>(order) + 1, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
      const double x = n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
      for (int p = 1; p <= order; ++p) pw[a][i][p] = pw[a][i][p - 1] * x;
    }
  }
  const std::size_t total = element_count(dims);
  std::vector<double> field(total, 0.0);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    double b = 0.0;
    for (std::size_t m = 0; m < monos.size(); ++m) {
      double term = coefficients[m];
      for (std::size_t a = 0; a < rank; ++a) term *= pw[a][idx[a]][monos[m][a]];
      b += term;
    }
    field[flat] = b;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
  return field;
}

inline Volume apply_bias_field(const Volume& v, int order, const std::vector<double>& coefficients) {
  const auto b = bias_log_field(v.dims(), order, coefficients);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(0.0, v[i] * std::exp(b[i]));
  return Volume(v.dims(), std::move(out));
}

inline std::vector<double> draw_bias_coefficients(std::size_t rank, const BiasFieldParams& p) {
  p.validate();
  Rng rng(p.seed);
  const auto n = bias_monomials(rank, p.order).size();
  std::vector<double> c(n);
  for (auto& x : c) x = rng.normal(0.0, p.sigma);
  return c;
}

inline Volume random_bias_field(const Volume& v, const BiasFieldParams& p) {
  return apply_bias_field(v, p.order, draw_bias_coefficients(v.rank(), p));
}

// ---------------------------------------------------------------------------
// Spectral recombination and mixing

/// Image with the structure (phase) of `original` and the intensity
/// statistics (amplitude) of `transformed`.
inline Volume apr_recombine(const Volume& original, const Volume& transformed) {
  require_same_shape(original, transformed, "apr_recombine");
  return recombine(fft_forward(transformed), fft_forward(original));
}

/// Composite spectrum used by amplitude_mixup, exposed for inspection.
/// Inside the beta region the amplitude is (1-lambda)*A(source) +
/// lambda*A(target); outside it is A(target). Phase is P(target) everywhere.
inline Spectrum amplitude_mixup_spectrum(const Volume& source, const Volume& target, double beta,
                                         double lambda) {
  require_same_shape(source, target, "amplitude_mixup");
  check_fraction(beta, "amplitude_mixup: beta");
  check_fraction(lambda, "amplitude_mixup: lambda");
  const Spectrum ss = fft_forward(source);
  Spectrum st = fft_forward(target);
  const RegionMask mask = region_mask(target.dims(), beta);
  for (std::size_t i = 0; i < st.amplitude.size(); ++i)
    if (mask.contains(i)) st.amplitude[i] = (1.0 - lambda) * ss.amplitude[i] + lambda * st.amplitude[i];
  // An asymmetric region breaks conjugate symmetry; the inverse keeps the
  // real part and reports the residue instead of rejecting it.
  st.from_real_input = false;
  return st;
}

inline Volume amplitude_mixup(const Volume& source, const Volume& target, double beta, double lambda) {
  return fft_inverse(amplitude_mixup_spectrum(source, target, beta, lambda));
}

/// Low-frequency swap: the centered beta region of the target amplitude is
/// replaced by the source amplitude, target phase kept.
inline Volume fda_transfer(const Volume& source, const Volume& target, double beta) {
  require_same_shape(source, target, "fda_transfer");
  check_fraction(beta, "fda_transfer: beta");
  const Spectrum ss = fft_forward(source);
  Spectrum st = fft_forward(target);
  const RegionMask mask = region_mask(target.dims(), beta);
  for (std::size_t i = 0; i < st.amplitude.size(); ++i)
    if (mask.contains(i)) st.amplitude[i] = ss.amplitude[i];
  st.from_real_input = false;
  return fft_inverse(st);
}

}  // namespace freqadapt
