#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "freqadapt/fft.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt {

/// Centered amplitude/phase pair. Bin layout puts the DC term at index
/// floor(n/2) along every axis.
struct Spectrum {
  Dims dims;
  std::vector<double> amplitude;
  std::vector<double> phase;
  // True when both halves come from forward transforms of real volumes, in
  // which case the inverse must be real up to rounding and is checked.
  bool from_real_input = false;
};

/// Tolerance on the imaginary residue for spectra of real inputs.
inline constexpr double kImagResidueTolerance = 1e-6;

namespace detail {

template <class T>
std::vector<T> shift_axes(const std::vector<T>& in, const Dims& dims, bool forward) {
  if (in.size() != element_count(dims)) throw ShapeError("shift: data does not match dims");
  std::vector<T> out(in.size());
  const std::size_t rank = dims.size();
  std::vector<std::size_t> strides(rank, 1);
  for (std::size_t a = rank; a-- > 1;) strides[a - 1] = strides[a] * dims[a];
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < in.size(); ++flat) {
    std::size_t dst = 0;
    for (std::size_t a = 0; a < rank; ++a) {
      const std::size_t n = dims[a];
      const std::size_t off = forward ? n / 2 : n - n / 2;
      dst += ((idx[a] + off) % n) * strides[a];
    }
    out[dst] = in[flat];
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
  return out;
}

}  // namespace detail

// Maps an uncentered grid (DC at 0) to a centered one: element at index k
// along an axis moves to (k + n/2) mod n.
template <class T>
std::vector<T> center_shift(const std::vector<T>& in, const Dims& dims) {
  return detail::shift_axes(in, dims, true);
}

// Inverse of center_shift for every extent, odd ones included.
template <class T>
std::vector<T> uncenter_shift(const std::vector<T>& in, const Dims& dims) {
  return detail::shift_axes(in, dims, false);
}

/// Forward transform of a real volume into centered amplitude and phase.
inline Spectrum fft_forward(const Volume& v) {
  std::vector<Complex> c(v.data().begin(), v.data().end());
  fft_nd(c, v.dims(), false);
  const auto centered = center_shift(c, v.dims());
  Spectrum s;
  s.dims = v.dims();
  s.amplitude.resize(centered.size());
  s.phase.resize(centered.size());
  for (std::size_t i = 0; i < centered.size(); ++i) {
    const double re = centered[i].real(), im = centered[i].imag();
    s.amplitude[i] = std::hypot(re, im);
    s.phase[i] = (std::abs(re) < 1e-300 && std::abs(im) < 1e-300) ? 0.0 : std::atan2(im, re);
  }
  s.from_real_input = true;
  return s;
}

struct InverseResult {
  Volume volume;
  double imag_residue = 0.0;  // max |Im| discarded by taking the real part
};

/// Inverse transform keeping the real part. The discarded imaginary residue
/// is reported; for spectra of real inputs it must stay below
/// kImagResidueTolerance or NumericConsistencyError is thrown.
inline InverseResult fft_inverse_detailed(const Spectrum& s) {
  Volume::check_dims(s.dims);
  const std::size_t n = element_count(s.dims);
  if (s.amplitude.size() != n || s.phase.size() != n)
    throw ShapeError("fft_inverse: spectrum arrays do not match dims " + dims_string(s.dims));
  std::vector<Complex> centered(n);
  for (std::size_t i = 0; i < n; ++i) centered[i] = std::polar(s.amplitude[i], s.phase[i]);
  auto c = uncenter_shift(centered, s.dims);
  fft_nd(c, s.dims, true);
  std::vector<double> re(n);
  double residue = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    re[i] = c[i].real();
    residue = std::max(residue, std::abs(c[i].imag()));
  }
  if (s.from_real_input && residue > kImagResidueTolerance)
    throw NumericConsistencyError("fft_inverse: imaginary residue " + std::to_string(residue) +
                                  " exceeds tolerance for a real-input spectrum");
  return {Volume(s.dims, std::move(re)), residue};
}

inline Volume fft_inverse(const Spectrum& s) { return fft_inverse_detailed(s).volume; }

/// Volume rebuilt from the amplitude of one spectrum and the phase of another.
inline Volume recombine(const Spectrum& amplitude_src, const Spectrum& phase_src) {
  if (amplitude_src.dims != phase_src.dims)
    throw ShapeError("recombine: dims mismatch " + dims_string(amplitude_src.dims) + " vs " +
                     dims_string(phase_src.dims));
  Spectrum s{amplitude_src.dims, amplitude_src.amplitude, phase_src.phase,
             amplitude_src.from_real_input && phase_src.from_real_input};
  return fft_inverse(s);
}

}  // namespace freqadapt
