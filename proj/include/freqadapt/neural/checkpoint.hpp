#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "freqadapt/neural/adam.hpp"
#include "freqadapt/neural/model.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt::nn {

// Container layout (little-endian host order, like VOLB):
//   "FQCK" u32 version
//   u32 tensor_count, then per tensor: u32 name_len, name, u32 ndim, u32 dims[ndim], f64 payload
//   u32 meta_count, then per entry: u32 key_len, key, u32 value_len, value
// Reals inside meta values are written as hex floats, so round trips are exact.

inline constexpr char kCheckpointMagic[4] = {'F', 'Q', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> values;
  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::map<std::string, std::string> meta;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const std::string& get(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw FormatError(FormatErrorKind::bad_header, "checkpoint missing key '" + key + "'");
    return it->second;
  }
  bool has(const std::string& key) const { return meta.count(key) != 0; }

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline double parse_real(const std::string& s) {
  char* end = nullptr;
  const double x = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw FormatError(FormatErrorKind::bad_header, "bad real '" + s + "'");
  return x;
}

namespace detail {

inline void put_string(std::string& buf, const std::string& s) {
  freqadapt::detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

inline std::string get_string(const std::string& buf, std::size_t& pos, const std::string& where) {
  std::uint32_t n = 0;
  if (!freqadapt::detail::get(buf, pos, n)) throw FormatError(FormatErrorKind::truncated, where);
  if (buf.size() - pos < n) throw FormatError(FormatErrorKind::truncated, where);
  std::string s = buf.substr(pos, n);
  pos += n;
  return s;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ck) {
  using freqadapt::detail::put;
  std::string buf(kCheckpointMagic, 4);
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (n != t.values.size()) throw ShapeError("checkpoint tensor '" + t.name + "': dims do not match payload");
    detail::put_string(buf, t.name);
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) put<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (double x : t.values) {
      if (!std::isfinite(x)) throw ValueError("checkpoint tensor '" + t.name + "' holds a non-finite value");
      put<double>(buf, x);
    }
  }
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_string(buf, k);
    detail::put_string(buf, v);
  }
  return buf;
}

inline Checkpoint decode_checkpoint(const std::string& buf, const std::string& where = "<memory>") {
  using freqadapt::detail::get;
  if (buf.size() < 4 || std::memcmp(buf.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(FormatErrorKind::bad_magic, where);
  std::size_t pos = 4;
  std::uint32_t version = 0, count = 0;
  if (!get(buf, pos, version)) throw FormatError(FormatErrorKind::truncated, where);
  if (version != kCheckpointVersion) throw FormatError(FormatErrorKind::bad_version, where);
  if (!get(buf, pos, count)) throw FormatError(FormatErrorKind::truncated, where);
  Checkpoint ck;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = detail::get_string(buf, pos, where);
    std::uint32_t ndim = 0;
    if (!get(buf, pos, ndim)) throw FormatError(FormatErrorKind::truncated, where);
    if (ndim > 8) throw FormatError(FormatErrorKind::bad_header, where);
    std::size_t n = 1;
    for (std::uint32_t a = 0; a < ndim; ++a) {
      std::uint32_t e = 0;
      if (!get(buf, pos, e)) throw FormatError(FormatErrorKind::truncated, where);
      t.dims.push_back(e);
      n *= e;
    }
    if ((buf.size() - pos) / sizeof(double) < n) throw FormatError(FormatErrorKind::truncated, where);
    t.values.resize(n);
    if (n) std::memcpy(t.values.data(), buf.data() + pos, n * sizeof(double));
    pos += n * sizeof(double);
    for (double x : t.values)
      if (!std::isfinite(x)) throw FormatError(FormatErrorKind::non_finite, where);
    ck.tensors.push_back(std::move(t));
  }
  if (!get(buf, pos, count)) throw FormatError(FormatErrorKind::truncated, where);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string k = detail::get_string(buf, pos, where);
    ck.meta[k] = detail::get_string(buf, pos, where);
  }
  if (pos != buf.size()) throw FormatError(FormatErrorKind::bad_header, where);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  // Write-then-rename so an interrupted save never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  freqadapt::detail::spit(tmp, encode_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(freqadapt::detail::slurp(path), path.string());
}

// ---------------------------------------------------------------------------
// Model and optimizer <-> checkpoint.

inline void store_model(Checkpoint& ck, Model& m) {
  for (Param* p : m.params()) ck.tensors.push_back({p->name, p->dims, p->value});
  for (Buffer* b : m.buffers()) ck.tensors.push_back({b->name, {b->value.size()}, b->value});
}

inline void load_model(const Checkpoint& ck, Model& m) {
  auto take = [&](const std::string& name, std::vector<double>& dst) {
    const NamedTensor* t = ck.find(name);
    if (!t) throw FormatError(FormatErrorKind::bad_header, "checkpoint lacks tensor '" + name + "'");
    if (t->values.size() != dst.size())
      throw ShapeError("checkpoint tensor '" + name + "' does not match the model architecture");
    dst = t->values;
  };
  for (Param* p : m.params()) take(p->name, p->value);
  for (Buffer* b : m.buffers()) take(b->name, b->value);
}

inline void store_optimizer(Checkpoint& ck, const Adam& opt, const std::string& prefix) {
  ck.meta[prefix + ".steps"] = std::to_string(opt.steps());
  for (const auto& [name, mom] : opt.moments()) {
    ck.tensors.push_back({prefix + ".m/" + name, {mom.m.size()}, mom.m});
    ck.tensors.push_back({prefix + ".v/" + name, {mom.v.size()}, mom.v});
  }
}

inline void load_optimizer(const Checkpoint& ck, Adam& opt, const std::string& prefix) {
  opt.set_steps(std::stoll(ck.get(prefix + ".steps")));
  opt.moments().clear();
  const std::string pm = prefix + ".m/", pv = prefix + ".v/";
  for (const auto& t : ck.tensors) {
    if (t.name.rfind(pm, 0) == 0) opt.moments()[t.name.substr(pm.size())].m = t.values;
    if (t.name.rfind(pv, 0) == 0) opt.moments()[t.name.substr(pv.size())].v = t.values;
  }
}

}  // namespace freqadapt::nn
