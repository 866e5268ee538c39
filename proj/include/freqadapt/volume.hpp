#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "freqadapt/errors.hpp"

namespace freqadapt {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

using Dims = std::vector<std::size_t>;

inline std::size_t element_count(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string dims_string(const Dims& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(dims[i]);
  }
  return s;
}

/// Dense real-valued 2D or 3D grid, row-major (last axis fastest).
///
/// Every constructor validates rank, extents, payload length and finiteness,
/// so a Volume in hand always satisfies its invariants.
class Volume {
 public:
  Volume() = default;

  Volume(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
    validate();
  }

  static Volume zeros(const Dims& dims) {
    check_dims(dims);
    return Volume(dims, std::vector<double>(element_count(dims), 0.0));
  }

  static Volume filled(const Dims& dims, double value) {
    check_dims(dims);
    return Volume(dims, std::vector<double>(element_count(dims), value));
  }

  const Dims& dims() const noexcept { return dims_; }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Moves the payload out; the volume is left empty.
  std::vector<double> release() && { return std::move(data_); }

  bool same_shape(const Volume& o) const noexcept { return dims_ == o.dims_; }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

  static void check_dims(const Dims& dims) {
    if (dims.size() != 2 && dims.size() != 3)
      throw ShapeError("volume rank must be 2 or 3, got " + std::to_string(dims.size()));
    for (auto d : dims)
      if (d == 0) throw ShapeError("volume extents must be positive: " + dims_string(dims));
  }

 private:
  void validate() const {
    check_dims(dims_);
    if (data_.size() != element_count(dims_))
      throw ShapeError("payload length " + std::to_string(data_.size()) + " does not match dims " +
                       dims_string(dims_));
    for (double x : data_)
      if (!std::isfinite(x)) throw ValueError("volume contains a non-finite value");
  }

  Dims dims_;
  std::vector<double> data_;
};

enum class Domain : std::uint8_t { source = 0, target = 1 };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

struct LabeledVolume {
  Volume volume;
  int label = 0;
  Domain domain = Domain::source;

  LabeledVolume(Volume v, int lbl, Domain dom) : volume(std::move(v)), label(lbl), domain(dom) {
    if (lbl != 0 && lbl != 1) throw ValueError("label must be 0 or 1, got " + std::to_string(lbl));
  }
};

inline void require_same_shape(const Volume& a, const Volume& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": dims mismatch " + dims_string(a.dims()) + " vs " +
                     dims_string(b.dims()));
}

/// Affine rescale to [0,1]. A constant volume (range below 1e-12) maps to
/// all zeros.
inline Volume minmax_normalize(const Volume& v) {
  if (v.empty()) throw ValueError("minmax_normalize: empty volume");
  const auto [lo_it, hi_it] = std::minmax_element(v.data().begin(), v.data().end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::vector<double> out(v.size(), 0.0);
  if (range >= 1e-12) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / range;
  }
  return Volume(v.dims(), std::move(out));
}

// ---------------------------------------------------------------------------
// VOLB binary format
//   "VOLB" | u32 version=1 | u32 ndim | u32 dims[ndim] | f64 payload[...]
// All little-endian, payload row-major.

namespace detail {

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
bool get(const std::string& buf, std::size_t& pos, T& out) {
  if (pos + sizeof(T) > buf.size()) return false;
  std::memcpy(&out, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return true;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return buf;
}

inline void spit(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline constexpr char kVolbMagic[4] = {'V', 'O', 'L', 'B'};
inline constexpr std::uint32_t kVolbVersion = 1;

inline std::string encode_volume(const Volume& v) {
  std::string buf;
  buf.reserve(12 + 4 * v.rank() + 8 * v.size());
  buf.append(kVolbMagic, 4);
  detail::put<std::uint32_t>(buf, kVolbVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(v.rank()));
  for (auto d : v.dims()) detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
  for (double x : v.data()) detail::put<double>(buf, x);
  return buf;
}

inline Volume decode_volume(const std::string& buf, const std::string& where = "<memory>") {
  if (buf.size() < 4 || std::memcmp(buf.data(), kVolbMagic, 4) != 0)
    throw FormatError(FormatErrorKind::bad_magic, where);
  std::size_t pos = 4;
  std::uint32_t version = 0, ndim = 0;
  if (!detail::get(buf, pos, version) || !detail::get(buf, pos, ndim))
    throw FormatError(FormatErrorKind::bad_header, where);
  if (version != kVolbVersion) throw FormatError(FormatErrorKind::bad_version, where);
  if (ndim != 2 && ndim != 3) throw FormatError(FormatErrorKind::bad_header, where);
  Dims dims(ndim);
  for (auto& d : dims) {
    std::uint32_t e = 0;
    if (!detail::get(buf, pos, e) || e == 0) throw FormatError(FormatErrorKind::bad_header, where);
    d = e;
  }
  const std::size_t n = element_count(dims);
  if (buf.size() - pos < n * sizeof(double)) throw FormatError(FormatErrorKind::truncated, where);
  if (buf.size() - pos > n * sizeof(double)) throw FormatError(FormatErrorKind::bad_header, where);
  std::vector<double> data(n);
  std::memcpy(data.data(), buf.data() + pos, n * sizeof(double));
  for (double x : data)
    if (!std::isfinite(x)) throw FormatError(FormatErrorKind::non_finite, where);
  return Volume(std::move(dims), std::move(data));
}

inline void write_volume(const Volume& v, const std::filesystem::path& path) {
  detail::spit(path, encode_volume(v));
}

inline Volume read_volume(const std::filesystem::path& path) {
  return decode_volume(detail::slurp(path), path.string());
}

}  // namespace freqadapt
