#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "freqadapt/freq_augment.hpp"
#include "freqadapt/rng.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt {

/// Axis-aligned patch: per-axis start and extent in voxels.
class PatchBox {
 public:
  PatchBox(std::vector<std::size_t> start, std::vector<std::size_t> extent)
      : start_(std::move(start)), extent_(std::move(extent)) {
    if (start_.size() != extent_.size() || start_.empty())
      throw ShapeError("PatchBox: start and extent must have the same non-zero rank");
    for (auto e : extent_)
      if (e == 0) throw ShapeError("PatchBox: extents must be >= 1");
  }

  const std::vector<std::size_t>& start() const noexcept { return start_; }
  const std::vector<std::size_t>& extent() const noexcept { return extent_; }

  std::size_t voxel_count() const {
    std::size_t n = 1;
    for (auto e : extent_) n *= e;
    return n;
  }

  void check_inside(const Dims& dims) const {
    if (dims.size() != start_.size())
      throw ShapeError("PatchBox rank " + std::to_string(start_.size()) + " does not match volume rank " +
                       std::to_string(dims.size()));
    for (std::size_t a = 0; a < dims.size(); ++a)
      if (start_[a] + extent_[a] > dims[a])
        throw ShapeError("PatchBox overflows axis " + std::to_string(a) + " (" +
                         std::to_string(start_[a]) + "+" + std::to_string(extent_[a]) + " > " +
                         std::to_string(dims[a]) + ")");
  }

  bool contains(const std::vector<std::size_t>& idx) const {
    for (std::size_t a = 0; a < idx.size(); ++a)
      if (idx[a] < start_[a] || idx[a] >= start_[a] + extent_[a]) return false;
    return true;
  }

 private:
  std::vector<std::size_t> start_;
  std::vector<std::size_t> extent_;
};

struct BoxSampling {
  double min_fraction = 0.2;
  double max_fraction = 0.5;
};

// Extent fraction uniform in [min, max] per axis, start uniform over the
// positions that keep the box inside.
inline PatchBox sample_box(const Dims& dims, Rng& rng, const BoxSampling& cfg = {}) {
  std::vector<std::size_t> start(dims.size()), extent(dims.size());
  for (std::size_t a = 0; a < dims.size(); ++a) {
    const double f = rng.uniform(cfg.min_fraction, cfg.max_fraction);
    extent[a] = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(f * static_cast<double>(dims[a]))),
                                        1, dims[a]);
    start[a] = rng.below(dims[a] - extent[a] + 1);
  }
  return PatchBox(std::move(start), std::move(extent));
}

namespace detail {

// Calls fn(flat, inside) for every voxel.
template <class Fn>
void for_each_voxel(const Dims& dims, const PatchBox& box, Fn&& fn) {
  const std::size_t total = element_count(dims);
  std::vector<std::size_t> idx(dims.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, box.contains(idx));
    for (std::size_t a = dims.size(); a-- > 0;) {
      if (++idx[a] < dims[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace detail

/// (1 - lambda) * a + lambda * b
inline Volume mixup_images(const Volume& a, const Volume& b, double lambda) {
  require_same_shape(a, b, "mixup_images");
  check_fraction(lambda, "mixup_images: lambda");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - lambda) * a[i] + lambda * b[i];
  return Volume(a.dims(), std::move(out));
}

inline Volume cutout(const Volume& v, const PatchBox& box, double fill = 0.0) {
  box.check_inside(v.dims());
  std::vector<double> out(v.data().begin(), v.data().end());
  detail::for_each_voxel(v.dims(), box, [&](std::size_t i, bool inside) {
    if (inside) out[i] = fill;
  });
  return Volume(v.dims(), std::move(out));
}

struct CutMixResult {
  Volume volume;
  double mixed_label_weight = 0.0;  // fraction of voxels taken from b
};

inline CutMixResult cutmix(const Volume& a, const Volume& b, const PatchBox& box) {
  require_same_shape(a, b, "cutmix");
  box.check_inside(a.dims());
  std::vector<double> out(a.data().begin(), a.data().end());
  detail::for_each_voxel(a.dims(), box, [&](std::size_t i, bool inside) {
    if (inside) out[i] = b[i];
  });
  return {Volume(a.dims(), std::move(out)),
          static_cast<double>(box.voxel_count()) / static_cast<double>(a.size())};
}

}  // namespace freqadapt
