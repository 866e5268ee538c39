#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "freqadapt/errors.hpp"
#include "freqadapt/freq_augment.hpp"
#include "freqadapt/metrics.hpp"
#include "freqadapt/rng.hpp"
#include "freqadapt/volume.hpp"

namespace freqadapt {

/// Acquisition-style appearance of one domain. A bias_field sigma of 0
/// disables the bias field (identity).
struct DomainSpec {
  std::string name = "source";
  BiasFieldParams bias_field{2, 0.05, 0};
  double gamma = 1.0;
  double noise_sigma = 0.05;

  void validate() const {
    if (name.empty()) throw ValueError("domain name must not be empty");
    if (bias_field.sigma != 0.0) bias_field.validate();
    else if (bias_field.order < 0) throw ValueError("bias field order must be >= 0");
    if (!(gamma > 0.0)) throw ValueError("domain gamma must be > 0");
    if (!(noise_sigma >= 0.0)) throw ValueError("domain noise_sigma must be >= 0");
  }

  static DomainSpec source_default() { return {"source", {2, 0.05, 0}, 1.0, 0.05}; }
  static DomainSpec target_default() { return {"target", {2, 0.7, 0}, 2.5, 0.12}; }
};

/// Class signal, shared by both domains: a centered soft blob whose radius
/// (as a fraction of the half-extent) depends on the class.
struct ClassSpec {
  double radius_class0 = 0.45;
  double radius_class1 = 0.60;
  double radius_jitter = 0.05;
  double softness = 0.06;
  double texture_frequency = 6.0;  // cycles across the field of view
  double texture_amplitude = 0.25;
  int texture_components = 4;

  void validate() const {
    if (!(radius_class0 > 0.0 && radius_class1 > 0.0)) throw ValueError("class radii must be positive");
    if (radius_class0 == radius_class1) throw ValueError("class radii must differ");
    if (!(radius_jitter >= 0.0)) throw ValueError("radius_jitter must be >= 0");
    if (!(softness > 0.0)) throw ValueError("softness must be > 0");
    if (!(texture_frequency >= 0.0) || !(texture_amplitude >= 0.0) || texture_components < 0)
      throw ValueError("texture parameters must be non-negative");
  }
};

enum class Split { train, val, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValueError("unknown split '" + s + "'");
}

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ValueError("unknown domain '" + s + "'");
}

struct ManifestEntry {
  std::string path;  // relative to the manifest directory
  int label = 0;
  Domain domain = Domain::source;
  Split split = Split::train;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<ManifestEntry> entries;
  std::uint64_t seed = 0;
  std::string spec_echo;

  std::size_t count(Split s, int label) const {
    return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) {
      return e.split == s && e.label == label;
    }));
  }
};

struct SplitFractions {
  double train = 0.5, val = 0.25, test = 0.25;
};

// ---------------------------------------------------------------------------
// Sample synthesis

namespace detail {

// Normalized coordinate of index i on an axis of extent n, in [-1, 1].
inline double axis_coord(std::size_t i, std::size_t n) {
  return n == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1);
}

}  // namespace detail

/// Band-limited texture: a sum of plane waves at a fixed spatial frequency.
/// Drawn once per dataset, so it is part of a domain's appearance.
struct Texture {
  struct Wave {
    std::vector<double> k;
    double phase = 0.0;
  };
  std::vector<Wave> waves;
  double scale = 0.0;

  static Texture draw(const ClassSpec& c, std::size_t rank, Rng& rng) {
    Texture t;
    for (int i = 0; i < c.texture_components; ++i) {
      Wave w{std::vector<double>(rank), 0.0};
      double norm = 0.0;
      for (auto& x : w.k) {
        x = rng.normal();
        norm += x * x;
      }
      norm = std::sqrt(norm);
      for (auto& x : w.k) x = x / (norm > 0 ? norm : 1.0) * c.texture_frequency * std::numbers::pi / 2.0;
      w.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      t.waves.push_back(std::move(w));
    }
    if (c.texture_components > 0) t.scale = c.texture_amplitude / std::sqrt(static_cast<double>(c.texture_components));
    return t;
  }

  double at(const std::vector<double>& coord) const {
    double sum = 0.0;
    for (const auto& w : waves) {
      double arg = w.phase;
      for (std::size_t a = 0; a < coord.size(); ++a) arg += w.k[a] * coord[a];
      sum += std::cos(arg);
    }
    return scale * sum;
  }
};

/// One sample: bias ⊙ (blob + texture + noise), gamma contrast, min-max
/// normalized. Per-sample randomness (radius jitter, noise, bias field)
/// comes from `rng`.
inline Volume synthesize_sample(const DomainSpec& domain, const ClassSpec& classes, const Texture& texture, int label,
                                const Dims& dims, Rng& rng) {
  Volume::check_dims(dims);
  const std::size_t rank = dims.size();
  const double radius =
      std::max(1e-3, (label == 0 ? classes.radius_class0 : classes.radius_class1) + classes.radius_jitter * rng.normal());
  const std::size_t n = element_count(dims);
  std::vector<double> x(n);
  std::vector<double> coord(rank);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = rank; a-- > 0;) {
      coord[a] = detail::axis_coord(rem % dims[a], dims[a]);
      rem /= dims[a];
    }
    double r2 = 0.0;
    for (double c : coord) r2 += c * c;
    const double blob = 1.0 / (1.0 + std::exp((std::sqrt(r2) - radius) / classes.softness));
    x[flat] = blob + texture.at(coord) + (domain.noise_sigma > 0.0 ? domain.noise_sigma * rng.normal() : 0.0);
  }
  BiasFieldParams bp = domain.bias_field;
  bp.seed = rng.next_u64();
  Volume field(dims, std::move(x));
  if (bp.sigma != 0.0) field = apply_bias_field(field, bp.order, draw_bias_coefficients(rank, bp));
  Volume unit = minmax_normalize(field);
  std::vector<double> g(unit.data().begin(), unit.data().end());
  for (auto& v : g) v = std::pow(v, domain.gamma);
  return minmax_normalize(Volume(dims, std::move(g)));
}

inline int worker_count(std::size_t jobs) {
  int n = 1;
  if (const char* env = std::getenv("FREQADAPT_THREADS")) n = std::max(1, std::atoi(env));
  else n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), std::max<std::size_t>(1, jobs)));
}

// Runs fn(i) for i in [0, n) on up to `threads` workers; the first exception
// is rethrown after all workers stop.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex err_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(err_mutex);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------------------
// Splits and manifests

/// Stratified split: each class is shuffled with its own derived seed and cut
/// by rounded cumulative fractions.
inline DatasetManifest split_holdout(DatasetManifest m, const SplitFractions& f, std::uint64_t seed) {
  const double fr[3] = {f.train, f.val, f.test};
  for (double x : fr)
    if (!(x >= 0.0)) throw ValueError("split fractions must be non-negative");
  if (std::abs(f.train + f.val + f.test - 1.0) > 1e-9) throw ValueError("split fractions must sum to 1");
  const int nonzero = (f.train > 0) + (f.val > 0) + (f.test > 0);
  for (int label = 0; label < 2; ++label) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < m.entries.size(); ++i)
      if (m.entries[i].label == label) idx.push_back(i);
    if (idx.size() < static_cast<std::size_t>(nonzero))
      throw ValueError("class " + std::to_string(label) + " has fewer samples than non-empty splits");
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label)));
    rng.shuffle(idx.begin(), idx.end());
    const double total = static_cast<double>(idx.size());
    const auto cut1 = static_cast<std::size_t>(std::llround(total * f.train));
    const auto cut2 = static_cast<std::size_t>(std::llround(total * (f.train + f.val)));
    for (std::size_t k = 0; k < idx.size(); ++k)
      m.entries[idx[k]].split = k < cut1 ? Split::train : (k < cut2 ? Split::val : Split::test);
  }
  return m;
}

inline void write_manifest(const DatasetManifest& m, const std::filesystem::path& dir) {
  std::ofstream out(dir / "manifest.tsv", std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << "path\tlabel\tdomain\tsplit\n";
  for (const auto& e : m.entries)
    out << e.path << '\t' << e.label << '\t' << to_string(e.domain) << '\t' << to_string(e.split) << '\n';
  if (!out) throw IoError("manifest write failed in " + dir.string());
  std::ofstream spec(dir / "spec.txt", std::ios::trunc);
  if (!spec) throw IoError("cannot write spec echo in " + dir.string());
  spec << m.spec_echo;
}

inline DatasetManifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  if (!in) throw IoError("cannot open manifest: " + (dir / "manifest.tsv").string());
  DatasetManifest m;
  m.root = dir;
  std::string line;
  if (!std::getline(in, line) || line != "path\tlabel\tdomain\tsplit")
    throw FormatError(FormatErrorKind::bad_header, (dir / "manifest.tsv").string());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string path, label, domain, split;
    if (!std::getline(ls, path, '\t') || !std::getline(ls, label, '\t') || !std::getline(ls, domain, '\t') ||
        !std::getline(ls, split))
      throw FormatError(FormatErrorKind::bad_header,
                        (dir / "manifest.tsv").string() + " line " + std::to_string(lineno));
    ManifestEntry e;
    e.path = path;
    if (label != "0" && label != "1") throw ValueError("manifest line " + std::to_string(lineno) + ": bad label");
    e.label = label == "1";
    e.domain = parse_domain(domain);
    e.split = parse_split(split);
    m.entries.push_back(e);
  }
  std::ifstream spec(dir / "spec.txt");
  if (spec) m.spec_echo.assign(std::istreambuf_iterator<char>(spec), std::istreambuf_iterator<char>());
  return m;
}

inline std::string echo_generator(const DomainSpec& d, const ClassSpec& c, std::size_t n_per_class, const Dims& dims,
                                  std::uint64_t seed, const SplitFractions& f) {
  std::ostringstream os;
  os.precision(17);
  os << "[generator]\nseed=" << seed << "\nn_per_class=" << n_per_class << "\ndims=";
  for (std::size_t i = 0; i < dims.size(); ++i) os << (i ? "x" : "") << dims[i];
  os << "\nsplit_train=" << f.train << "\nsplit_val=" << f.val << "\nsplit_test=" << f.test;
  os << "\n[domain]\nname=" << d.name << "\nbias_order=" << d.bias_field.order << "\nbias_sigma=" << d.bias_field.sigma
     << "\ngamma=" << d.gamma << "\nnoise_sigma=" << d.noise_sigma;
  os << "\n[classes]\nradius_class0=" << c.radius_class0 << "\nradius_class1=" << c.radius_class1
     << "\nradius_jitter=" << c.radius_jitter << "\nsoftness=" << c.softness
     << "\ntexture_frequency=" << c.texture_frequency << "\ntexture_amplitude=" << c.texture_amplitude
     << "\ntexture_components=" << c.texture_components << "\n";
  return os.str();
}

struct GenerateOptions {
  std::size_t n_per_class = 400;
  Dims dims{32, 32};
  std::uint64_t seed = 1;
  SplitFractions fractions{};
  int threads = 0;  // 0: FREQADAPT_THREADS or hardware concurrency
};

/// Writes 2 * n_per_class VOLB files plus manifest.tsv and spec.txt into
/// `dir`. Sample i draws from derive_seed(seed, domain name, i), so output is
/// independent of the worker count.
inline DatasetManifest generate_dataset(const DomainSpec& domain, const ClassSpec& classes, const GenerateOptions& opt,
                                        const std::filesystem::path& dir) {
  domain.validate();
  classes.validate();
  if (opt.n_per_class < 1) throw ValueError("n_per_class must be >= 1");
  Volume::check_dims(opt.dims);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());

  const std::size_t total = 2 * opt.n_per_class;
  const Domain tag = domain.name == "target" ? Domain::target : Domain::source;
  DatasetManifest m;
  m.root = dir;
  m.seed = opt.seed;
  m.entries.resize(total);
  const int threads = opt.threads > 0 ? opt.threads : worker_count(total);
  Rng tex_rng(derive_seed(opt.seed, domain.name + "/texture"));
  const Texture texture = Texture::draw(classes, opt.dims.size(), tex_rng);
  parallel_for(total, threads, [&](std::size_t i) {
    const int label = i < opt.n_per_class ? 0 : 1;
    Rng rng(derive_seed(opt.seed, domain.name, i));
    Volume v = synthesize_sample(domain, classes, texture, label, opt.dims, rng);
    char name[32];
    std::snprintf(name, sizeof name, "s%05zu.volb", i);
    write_volume(v, dir / name);
    m.entries[i] = ManifestEntry{name, label, tag, Split::train};
  });
  m = split_holdout(std::move(m), opt.fractions, derive_seed(opt.seed, domain.name + "/split"));
  m.spec_echo = echo_generator(domain, classes, opt.n_per_class, opt.dims, opt.seed, opt.fractions);
  write_manifest(m, dir);
  return m;
}

// ---------------------------------------------------------------------------
// In-memory dataset

struct Dataset {
  DatasetManifest manifest;
  std::vector<Volume> volumes;  // parallel to manifest.entries

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < manifest.entries.size(); ++i)
      if (manifest.entries[i].split == s) out.push_back(i);
    return out;
  }
};

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  d.manifest = read_manifest(dir);
  d.volumes.reserve(d.manifest.entries.size());
  for (const auto& e : d.manifest.entries) d.volumes.push_back(read_volume(dir / e.path));
  return d;
}

// ---------------------------------------------------------------------------
// Calibration probe

/// L2-regularized logistic regression on standardized raw voxels, trained
/// by full-batch gradient descent on (train_x, train_y); returns the AUC on
/// each evaluation set.
inline std::vector<double> linear_probe_auc(const std::vector<const Volume*>& train_x, const std::vector<int>& train_y,
                                            const std::vector<std::pair<std::vector<const Volume*>, std::vector<int>>>& evals,
                                            int iterations = 300, double lr = 0.5, double l2 = 1e-2) {
  if (train_x.empty()) throw ValueError("linear probe needs training data");
  const std::size_t D = train_x.front()->size(), N = train_x.size();
  std::vector<double> mean(D, 0.0), sd(D, 0.0);
  for (auto* v : train_x)
    for (std::size_t j = 0; j < D; ++j) mean[j] += (*v)[j] / static_cast<double>(N);
  for (auto* v : train_x)
    for (std::size_t j = 0; j < D; ++j) sd[j] += ((*v)[j] - mean[j]) * ((*v)[j] - mean[j]) / static_cast<double>(N);
  for (auto& s : sd) s = std::sqrt(s) + 1e-6;
  auto feat = [&](const Volume& v, std::size_t j) { return (v[j] - mean[j]) / sd[j]; };
  std::vector<double> w(D, 0.0);
  double b = 0.0;
  std::vector<double> gw(D);
  for (int it = 0; it < iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
      double z = b;
      for (std::size_t j = 0; j < D; ++j) z += w[j] * feat(*train_x[i], j);
      const double err = 1.0 / (1.0 + std::exp(-z)) - train_y[i];
      for (std::size_t j = 0; j < D; ++j) gw[j] += err * feat(*train_x[i], j) / static_cast<double>(N);
      gb += err / static_cast<double>(N);
    }
    for (std::size_t j = 0; j < D; ++j) w[j] -= lr * (gw[j] + l2 * w[j]);
    b -= lr * gb;
  }
  std::vector<double> out;
  for (const auto& [xs, ys] : evals) {
    std::vector<double> scores;
    for (auto* v : xs) {
      double z = b;
      for (std::size_t j = 0; j < D; ++j) z += w[j] * feat(*v, j);
      scores.push_back(z);
    }
    out.push_back(auc(scores, ys));
  }
  return out;
}

}  // namespace freqadapt
