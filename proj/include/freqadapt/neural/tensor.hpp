#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "freqadapt/errors.hpp"
#include "freqadapt/rng.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt::nn {

/// Batch x channel x three spatial axes. 2D data uses d == 1.
struct Shape {
  std::size_t n = 0, c = 0, d = 1, h = 1, w = 1;

  std::size_t spatial() const noexcept { return d * h * w; }
  std::size_t per_sample() const noexcept { return c * spatial(); }
  std::size_t size() const noexcept { return n * per_sample(); }
  std::array<std::size_t, 3> space() const noexcept { return {d, h, w}; }

  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

struct Tensor {
  Shape shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0) : shape(s), v(s.size(), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(s), v(std::move(values)) {
    if (v.size() != shape.size()) throw ShapeError("tensor payload does not match shape " + shape.str());
  }

  double* sample(std::size_t i) { return v.data() + i * shape.per_sample(); }
  const double* sample(std::size_t i) const { return v.data() + i * shape.per_sample(); }
};

/// Trainable parameter with its paired gradient buffer.
struct Param {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> value;
  std::vector<double> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> d)
      : name(std::move(n)), dims(std::move(d)), value(element_count_of(dims), 0.0), grad(value.size(), 0.0) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

  static std::size_t element_count_of(const std::vector<std::size_t>& d) {
    std::size_t n = 1;
    for (auto x : d) n *= x;
    return n;
  }
};

/// Named non-trainable state (batch-norm running statistics).
struct Buffer {
  std::string name;
  std::vector<double> value;
};

enum class Mode { train, eval };

// Rolling hash of every piecewise-linear branch taken during a forward pass
// (ReLU signs, max-pool winners). Two passes with equal signatures are on
// the same smooth piece, which is what finite differences need.
struct KinkSignature {
  std::uint64_t hash = 1469598103934665603ULL;
  void mix(std::uint64_t x) {
    hash ^= x + 0x9e3779b97f4a7c15ULL + (hash << 6) + (hash >> 2);
  }
};

struct ForwardContext {
  Mode mode = Mode::eval;
  Rng* rng = nullptr;                // dropout masks; required in train mode when dropout > 0
  KinkSignature* kinks = nullptr;    // optional
  bool update_running_stats = true;  // batch-norm running averages, train mode only
};

/// Volumes of identical dims stacked into an (N,1,d,h,w) tensor.
inline Tensor stack_volumes(const std::vector<const Volume*>& vols) {
  if (vols.empty()) throw ShapeError("stack_volumes: empty batch");
  const Dims& dims = vols.front()->dims();
  Shape s;
  s.n = vols.size();
  s.c = 1;
  if (dims.size() == 2) {
    s.d = 1;
    s.h = dims[0];
    s.w = dims[1];
  } else {
    s.d = dims[0];
    s.h = dims[1];
    s.w = dims[2];
  }
  Tensor t(s);
  for (std::size_t i = 0; i < vols.size(); ++i) {
    if (vols[i]->dims() != dims) throw ShapeError("stack_volumes: mixed dims in batch");
    std::copy(vols[i]->data().begin(), vols[i]->data().end(), t.sample(i));
  }
  return t;
}

inline Tensor concat_batch(const Tensor& a, const Tensor& b) {
  Shape sa = a.shape, sb = b.shape;
  sa.n = sb.n = 0;
  if (!(sa == sb)) throw ShapeError("concat_batch: shapes differ " + a.shape.str() + " vs " + b.shape.str());
  Shape s = a.shape;
  s.n = a.shape.n + b.shape.n;
  Tensor t(s);
  std::copy(a.v.begin(), a.v.end(), t.v.begin());
  std::copy(b.v.begin(), b.v.end(), t.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return t;
}

// Rows [begin, begin + count) of the batch axis.
inline Tensor slice_batch(const Tensor& t, std::size_t begin, std::size_t count) {
  Shape s = t.shape;
  s.n = count;
  const std::size_t ps = t.shape.per_sample();
  return Tensor(s, std::vector<double>(t.v.begin() + static_cast<std::ptrdiff_t>(begin * ps),
                                       t.v.begin() + static_cast<std::ptrdiff_t>((begin + count) * ps)));
}

inline void check_finite(const Tensor& t, const char* where) {
  for (double x : t.v)
    if (!std::isfinite(x)) throw ValueError(std::string("non-finite value in ") + where);
}

}  // namespace freqadapt::nn
