#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "freqadapt/baseline_augment.hpp"
#include "freqadapt/dymix.hpp"
#include "freqadapt/freq_augment.hpp"
#include "freqadapt/metrics.hpp"
#include "freqadapt/neural/adam.hpp"
#include "freqadapt/neural/checkpoint.hpp"
#include "freqadapt/neural/model.hpp"
#include "freqadapt/neural/objectives.hpp"
#include "freqadapt/synth.hpp"

namespace freqadapt {

// ---------------------------------------------------------------------------
// Configuration

/// How the mixed target batch of the adaptation stage is produced.
enum class Method { dymix, mixup, cutout, cutmix, apr, fda };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::dymix: return "dymix";
    case Method::mixup: return "mixup";
    case Method::cutout: return "cutout";
    case Method::cutmix: return "cutmix";
    case Method::apr: return "apr";
    case Method::fda: return "fda";
  }
  return "?";
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"dymix", "mixup", "cutout", "cutmix", "apr", "fda"};
  return names;
}

inline Method parse_method(const std::string& s) {
  for (int i = 0; i < 6; ++i)
    if (s == method_names()[static_cast<std::size_t>(i)]) return static_cast<Method>(i);
  std::string valid;
  for (const auto& n : method_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown method '" + s + "' (valid: " + valid + ")");
}

struct RunConfig {
  std::uint64_t seed = 1;
  nn::ModelConfig model = nn::ModelConfig::desk();
  std::size_t batch_size = 4;
  nn::AdamConfig adam{};  // lr 1e-4
  int warmup_epochs = 50;
  int pretrain_epochs = 100;  // adversarial epochs after the warmup
  int adapt_epochs = 100;
  double lambda_att = 0.5;
  double lambda_dom = 0.1;
  bool use_intensity = true;
  BiasFieldParams intensity_shift{3, 0.4, 0};  // random bias field for the shifted copy
  DyMixConfig dymix{};
  double fda_beta = 0.1;
  BoxSampling box{};
  double threshold = 0.5;
  std::size_t eval_batch = 32;

  /// Settings that fit a laptop-CPU budget on the 32x32 benchmark.
  static RunConfig desk() {
    RunConfig c;
    c.adam.lr = 1e-3;
    c.warmup_epochs = 4;
    c.pretrain_epochs = 20;
    c.adapt_epochs = 20;
    c.dymix.patience = 2;
    return c;
  }

  void validate() const {
    std::string bad;
    if (batch_size < 2) bad += " batch_size must be >= 2 (batch statistics);";
    if (warmup_epochs < 0 || pretrain_epochs < 0 || adapt_epochs < 0) bad += " epoch counts must be >= 0;";
    if (lambda_att < 0.0 || lambda_dom < 0.0) bad += " loss weights must be >= 0;";
    if (!(adam.lr > 0.0)) bad += " lr must be > 0;";
    if (!(fda_beta >= 0.0 && fda_beta <= 1.0)) bad += " fda_beta must lie in [0,1];";
    if (!(threshold >= 0.0 && threshold <= 1.0)) bad += " threshold must lie in [0,1];";
    if (eval_batch < 1) bad += " eval_batch must be >= 1;";
    if (!bad.empty()) throw ConfigError("invalid run config:" + bad);
    DyMixScheduler probe(dymix);  // validates
    intensity_shift.validate();
  }
};

/// Where a stage writes and how it resumes.
struct StageIo {
  std::filesystem::path metrics;         // empty: no metrics file
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  bool resume = false;                   // continue from checkpoint_dir/<stage>_last.fqck
  int stop_after_epoch = -1;             // simulate an interruption after this epoch
};

// ---------------------------------------------------------------------------
// Target-label guard

/// Read access to a dataset whose labels may be locked. Any label read while
/// locked is counted and aborts with LabelAccessError.
class GuardedDataset {
 public:
  GuardedDataset(const Dataset& d, bool labels_locked) : data_(&d), locked_(labels_locked) {}

  const Volume& volume(std::size_t i) const { return data_->volumes.at(i); }
  std::vector<std::size_t> indices(Split s) const { return data_->indices(s); }
  bool locked() const noexcept { return locked_; }
  std::size_t denied_reads() const noexcept { return denied_; }

  int label(std::size_t i) const {
    if (locked_) {
      ++denied_;
      throw LabelAccessError("target label read during unsupervised training (sample " + std::to_string(i) + ")");
    }
    return data_->manifest.entries.at(i).label;
  }

 private:
  const Dataset* data_;
  bool locked_;
  mutable std::size_t denied_ = 0;
};

// ---------------------------------------------------------------------------
// Metrics file

struct EpochRecord {
  int epoch = 0;
  std::optional<double> beta;
  double l_cls = 0.0;
  std::optional<double> l_att;
  std::optional<double> l_dom;
  double val_auc = 0.0;
  std::string event = "none";
  std::optional<double> l_int;

  std::string str() const {
    auto num = [](std::optional<double> x) {
      if (!x) return std::string("na");
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.9g", *x);
      return std::string(buf);
    };
    std::string s = "epoch=" + std::to_string(epoch) + "\tbeta=" + num(beta) + "\tl_cls=" + num(l_cls) +
                    "\tl_att=" + num(l_att) + "\tl_dom=" + num(l_dom) + "\tval_auc=" + num(val_auc) +
                    "\tevent=" + event;
    if (l_int) s += "\tl_int=" + num(l_int);
    return s;
  }
};

/// Append-only per-epoch log. On resume, records after the resumed epoch
/// are dropped so the stream continues exactly where the checkpoint left off.
class MetricsLog {
 public:
  MetricsLog() = default;
  MetricsLog(const std::filesystem::path& path, const std::string& header, int resume_epoch) : path_(path) {
    if (path.empty()) return;
    std::vector<std::string> keep;
    if (resume_epoch >= 0) {
      std::ifstream in(path);
      if (!in) throw IoError("cannot reopen metrics file for resume: " + path.string());
      for (std::string line; std::getline(in, line);) {
        if (line.rfind("epoch=", 0) == 0 && std::stoi(line.substr(6)) > resume_epoch) break;
        keep.push_back(line);
      }
    } else {
      keep.push_back(header);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write metrics file: " + path.string());
    for (const auto& l : keep) out << l << '\n';
  }

  void append(const EpochRecord& r) {
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to metrics file: " + path_.string());
    out << r.str() << '\n';
    out.flush();
  }

 private:
  std::filesystem::path path_;
};

// ---------------------------------------------------------------------------
// Batching and evaluation

namespace detail {

inline nn::Tensor stack(const std::vector<Volume>& vs) {
  std::vector<const Volume*> ptrs;
  for (const auto& v : vs) ptrs.push_back(&v);
  return nn::stack_volumes(ptrs);
}

// Batches of a shuffled index list; a trailing singleton is folded into the
// previous batch so batch statistics always see at least two samples.
inline std::vector<std::vector<std::size_t>> make_batches(std::vector<std::size_t> idx, std::size_t batch, Rng& rng) {
  rng.shuffle(idx.begin(), idx.end());
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < idx.size(); i += batch)
    out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(i),
                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(idx.size(), i + batch)));
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

template <class Vec>
void append(Vec& dst, const Vec& src) {
  dst.insert(dst.end(), src.begin(), src.end());
}

inline void require_both_classes(const Dataset& d, Split s, const char* what) {
  if (d.manifest.count(s, 0) == 0 || d.manifest.count(s, 1) == 0)
    throw ValueError(std::string(what) + ": " + to_string(s) + " split is missing a class");
}

}  // namespace detail

enum class EncoderChoice { source, target };

/// Class-1 probabilities from an eval-mode forward pass.
inline std::vector<double> predict_scores(nn::Model& m, EncoderChoice enc, const std::vector<const Volume*>& vols,
                                          std::size_t batch = 32) {
  std::vector<double> scores;
  nn::ForwardContext ctx{nn::Mode::eval, nullptr, nullptr, false};
  nn::Encoder& e = enc == EncoderChoice::source ? m.enc_src : m.enc_tgt;
  for (std::size_t i = 0; i < vols.size(); i += batch) {
    std::vector<const Volume*> chunk(vols.begin() + static_cast<std::ptrdiff_t>(i),
                                     vols.begin() + static_cast<std::ptrdiff_t>(std::min(vols.size(), i + batch)));
    nn::FeatureCache fc;
    nn::HeadCache hc;
    nn::Tensor p = nn::pooled_features(e, m.attention, nn::stack_volumes(chunk), ctx, fc);
    detail::append(scores, nn::positive_probability(m.classifier.forward(p, ctx, hc)));
  }
  return scores;
}

inline EvalReport evaluate_model(nn::Model& m, const Dataset& d, Split split, EncoderChoice enc,
                                 double threshold = 0.5) {
  const auto idx = d.indices(split);
  if (idx.empty()) throw ValueError(std::string("evaluate_model: split '") + to_string(split) + "' is empty");
  std::vector<const Volume*> vols;
  std::vector<int> labels;
  for (auto i : idx) {
    vols.push_back(&d.volumes[i]);
    labels.push_back(d.manifest.entries[i].label);
  }
  return evaluate_scores(predict_scores(m, enc, vols), labels, threshold);
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing

inline void store_model_config(nn::Checkpoint& ck, const nn::ModelConfig& c) {
  std::string widths, hidden;
  for (auto w : c.encoder.widths) widths += (widths.empty() ? "" : ",") + std::to_string(w);
  for (auto h : c.head_hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
  ck.meta["model.widths"] = widths;
  ck.meta["model.kernel"] = std::to_string(c.encoder.kernel);
  ck.meta["model.bn_momentum"] = nn::format_real(c.encoder.bn_momentum);
  ck.meta["model.bn_eps"] = nn::format_real(c.encoder.bn_eps);
  ck.meta["model.rank"] = std::to_string(c.spatial_rank);
  ck.meta["model.attention_kernel"] = std::to_string(c.attention_kernel);
  ck.meta["model.head_hidden"] = hidden;
  ck.meta["model.dropout"] = nn::format_real(c.dropout);
}

inline std::vector<std::size_t> parse_size_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  return out;
}

inline nn::ModelConfig load_model_config(const nn::Checkpoint& ck) {
  nn::ModelConfig c;
  c.encoder.widths = parse_size_list(ck.get("model.widths"));
  c.encoder.kernel = std::stoull(ck.get("model.kernel"));
  c.encoder.bn_momentum = nn::parse_real(ck.get("model.bn_momentum"));
  c.encoder.bn_eps = nn::parse_real(ck.get("model.bn_eps"));
  c.spatial_rank = std::stoull(ck.get("model.rank"));
  c.attention_kernel = std::stoull(ck.get("model.attention_kernel"));
  c.head_hidden = parse_size_list(ck.get("model.head_hidden"));
  c.dropout = nn::parse_real(ck.get("model.dropout"));
  return c;
}

inline nn::Checkpoint model_checkpoint(nn::Model& m, const std::string& stage) {
  nn::Checkpoint ck;
  ck.meta["stage"] = stage;
  store_model_config(ck, m.config);
  nn::store_model(ck, m);
  return ck;
}

inline nn::Model model_from_checkpoint(const nn::Checkpoint& ck) {
  nn::Model m(load_model_config(ck));
  nn::load_model(ck, m);
  return m;
}

// ---------------------------------------------------------------------------
// Training loops

struct StageResult {
  nn::Model model;            // selected model (best validation for supervised stages, final for adaptation)
  double best_val_auc = 0.0;
  int epochs_completed = 0;
  bool interrupted = false;
  std::vector<EpochRecord> records;  // records produced by this invocation
};

namespace detail {

struct LoopState {
  int epoch = 0;  // epochs completed
  double best_auc = -1.0;
  std::optional<nn::Model> best;
};

inline std::filesystem::path last_path(const StageIo& io, const std::string& stage) {
  return io.checkpoint_dir / (stage + "_last.fqck");
}
inline std::filesystem::path best_path(const StageIo& io, const std::string& stage) {
  return io.checkpoint_dir / (stage + "_best.fqck");
}

inline void save_loop(const StageIo& io, const std::string& stage, nn::Model& m, const nn::Adam& opt,
                      LoopState& st, const DyMixScheduler* sched, std::uint64_t seed) {
  if (io.checkpoint_dir.empty()) return;
  std::filesystem::create_directories(io.checkpoint_dir);
  nn::Checkpoint ck = model_checkpoint(m, stage);
  nn::store_optimizer(ck, opt, "adam");
  ck.meta["epoch"] = std::to_string(st.epoch);
  ck.meta["best_auc"] = nn::format_real(st.best_auc);
  ck.meta["seed"] = std::to_string(seed);
  ck.meta["rng_state"] = Rng(derive_seed(seed, stage, static_cast<std::uint64_t>(st.epoch))).state();
  if (sched) {
    const auto& s = sched->state();
    ck.meta["dymix.beta_units"] = std::to_string(s.beta_units);
    ck.meta["dymix.best_score"] = nn::format_real(s.best_score);
    ck.meta["dymix.num_bad_epochs"] = std::to_string(s.num_bad_epochs);
    ck.meta["dymix.probe_pending"] = s.probe_pending ? "1" : "0";
  }
  if (st.best) nn::save_checkpoint(model_checkpoint(*st.best, stage), best_path(io, stage));
  nn::save_checkpoint(ck, last_path(io, stage));
}

inline void load_loop(const StageIo& io, const std::string& stage, nn::Model& m, nn::Adam& opt, LoopState& st,
                      DyMixScheduler* sched) {
  if (io.checkpoint_dir.empty()) throw ConfigError("resume requested without a checkpoint directory");
  const nn::Checkpoint ck = nn::load_checkpoint(last_path(io, stage));
  if (ck.get("stage") != stage) throw ConfigError("checkpoint belongs to stage '" + ck.get("stage") + "'");
  nn::load_model(ck, m);
  nn::load_optimizer(ck, opt, "adam");
  st.epoch = std::stoi(ck.get("epoch"));
  st.best_auc = nn::parse_real(ck.get("best_auc"));
  if (std::filesystem::exists(best_path(io, stage))) {
    st.best = m;
    nn::load_model(nn::load_checkpoint(best_path(io, stage)), *st.best);
  }
  if (sched) {
    DyMixState s;
    s.beta_units = std::stoll(ck.get("dymix.beta_units"));
    s.best_score = nn::parse_real(ck.get("dymix.best_score"));
    s.num_bad_epochs = std::stoi(ck.get("dymix.num_bad_epochs"));
    s.probe_pending = ck.get("dymix.probe_pending") == "1";
    *sched = DyMixScheduler(sched->config(), s);
  }
}

inline std::vector<nn::Param*> collect(std::initializer_list<std::vector<nn::Param*>> groups) {
  std::vector<nn::Param*> out;
  for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
  return out;
}

inline double validation_auc(nn::Model& m, EncoderChoice enc, const std::vector<const Volume*>& vols,
                             const std::vector<int>& labels, std::size_t batch) {
  return auc(predict_scores(m, enc, vols, batch), labels);
}

}  // namespace detail

/// Supervised training on one labeled dataset (CE only), selecting the
/// best epoch by validation AUC through the source encoder. Serves the
/// source-only and target-only (oracle) baselines.
inline StageResult supervised_stage(const RunConfig& cfg, const GuardedDataset& data, int epochs,
                                    const std::string& stage, const StageIo& io = {}) {
  cfg.validate();
  nn::Model model(cfg.model, derive_seed(cfg.seed, "init"));
  nn::Adam opt(cfg.adam);
  detail::LoopState st;
  if (io.resume) detail::load_loop(io, stage, model, opt, st, nullptr);
  MetricsLog log(io.metrics, "# stage=" + stage + " seed=" + std::to_string(cfg.seed), io.resume ? st.epoch : -1);

  const auto train = data.indices(Split::train);
  const auto val = data.indices(Split::val);
  std::vector<const Volume*> val_x;
  std::vector<int> val_y;
  for (auto i : val) {
    val_x.push_back(&data.volume(i));
    val_y.push_back(data.label(i));
  }
  const auto params = detail::collect({model.enc_src.params(), model.attention.params(), model.classifier.params()});
  StageResult res;
  while (st.epoch < epochs) {
    Rng rng(derive_seed(cfg.seed, stage, static_cast<std::uint64_t>(st.epoch)));
    double sum = 0.0;
    const auto batches = detail::make_batches(train, cfg.batch_size, rng);
    for (const auto& b : batches) {
      std::vector<Volume> xs;
      std::vector<int> ys;
      for (auto i : b) {
        xs.push_back(data.volume(i));
        ys.push_back(data.label(i));
      }
      model.zero_grad();
      nn::ForwardContext ctx{nn::Mode::train, &rng, nullptr, true};
      sum += nn::classification_objective(model, model.enc_src, detail::stack(xs), ys, ctx, true);
      opt.step(params);
    }
    ++st.epoch;
    EpochRecord r;
    r.epoch = st.epoch;
    r.l_cls = sum / static_cast<double>(batches.size());
    r.val_auc = detail::validation_auc(model, EncoderChoice::source, val_x, val_y, cfg.eval_batch);
    r.event = "supervised";
    if (r.val_auc > st.best_auc) {
      st.best_auc = r.val_auc;
      st.best = model;
    }
    log.append(r);
    res.records.push_back(r);
    detail::save_loop(io, stage, model, opt, st, nullptr, cfg.seed);
    if (io.stop_after_epoch >= 0 && st.epoch >= io.stop_after_epoch && st.epoch < epochs) {
      res.interrupted = true;
      break;
    }
  }
  res.model = st.best ? *st.best : model;
  res.best_val_auc = st.best_auc;
  res.epochs_completed = st.epoch;
  return res;
}

/// Stage 1. Warmup epochs train the source encoder, attention and label
/// classifier on cross-entropy; later epochs add the intensity-shifted copy
/// of every batch and the adversarial intensity discriminator. The model
/// with the best source-validation AUC is returned.
inline StageResult pretrain_stage(const RunConfig& cfg, const Dataset& source, const StageIo& io = {}) {
  cfg.validate();
  detail::require_both_classes(source, Split::train, "pretrain");
  detail::require_both_classes(source, Split::val, "pretrain");
  const std::string stage = "pretrain";
  nn::Model model(cfg.model, derive_seed(cfg.seed, "init"));
  nn::Adam opt(cfg.adam);
  detail::LoopState st;
  if (io.resume) detail::load_loop(io, stage, model, opt, st, nullptr);
  MetricsLog log(io.metrics, "# stage=pretrain seed=" + std::to_string(cfg.seed), io.resume ? st.epoch : -1);

  const auto train = source.indices(Split::train);
  std::vector<const Volume*> val_x;
  std::vector<int> val_y;
  for (auto i : source.indices(Split::val)) {
    val_x.push_back(&source.volumes[i]);
    val_y.push_back(source.manifest.entries[i].label);
  }
  const auto base = detail::collect({model.enc_src.params(), model.attention.params(), model.classifier.params()});
  const auto adv = detail::collect({base, model.intensity_disc.params()});
  const int total = cfg.warmup_epochs + cfg.pretrain_epochs;
  StageResult res;
  while (st.epoch < total) {
    Rng rng(derive_seed(cfg.seed, stage, static_cast<std::uint64_t>(st.epoch)));
    const bool warm = st.epoch < cfg.warmup_epochs;
    double sum_cls = 0.0, sum_int = 0.0;
    const auto batches = detail::make_batches(train, cfg.batch_size, rng);
    for (const auto& b : batches) {
      std::vector<Volume> xs;
      std::vector<int> ys;
      for (auto i : b) {
        xs.push_back(source.volumes[i]);
        ys.push_back(source.manifest.entries[i].label);
      }
      model.zero_grad();
      nn::ForwardContext ctx{nn::Mode::train, &rng, nullptr, true};
      if (warm) {
        sum_cls += nn::classification_objective(model, model.enc_src, detail::stack(xs), ys, ctx, true);
        opt.step(base);
      } else {
        std::vector<Volume> shifted;
        for (const auto& x : xs) {
          BiasFieldParams bp = cfg.intensity_shift;
          bp.seed = rng.next_u64();
          shifted.push_back(apr_recombine(x, random_bias_field(x, bp)));
        }
        nn::Stage1Options so;
        so.use_intensity = cfg.use_intensity;
        const auto l = nn::stage1_objective(model, detail::stack(xs), detail::stack(shifted), ys, ctx, so, true);
        sum_cls += l.l_cls;
        sum_int += l.l_int;
        opt.step(cfg.use_intensity ? adv : base);
      }
    }
    ++st.epoch;
    EpochRecord r;
    r.epoch = st.epoch;
    r.l_cls = sum_cls / static_cast<double>(batches.size());
    if (!warm && cfg.use_intensity) r.l_int = sum_int / static_cast<double>(batches.size());
    r.val_auc = detail::validation_auc(model, EncoderChoice::source, val_x, val_y, cfg.eval_batch);
    r.event = warm ? "warmup" : (cfg.use_intensity ? "adversarial" : "shifted");
    if (r.val_auc > st.best_auc) {
      st.best_auc = r.val_auc;
      st.best = model;
    }
    log.append(r);
    res.records.push_back(r);
    detail::save_loop(io, stage, model, opt, st, nullptr, cfg.seed);
    if (io.stop_after_epoch >= 0 && st.epoch >= io.stop_after_epoch && st.epoch < total) {
      res.interrupted = true;
      break;
    }
  }
  res.model = st.best ? *st.best : model;
  res.best_val_auc = st.best_auc;
  res.epochs_completed = st.epoch;
  return res;
}

/// Mixed target input for one (source, target) pair under `method`. All
/// methods keep the target image's structure except fda, which restyles the
/// source image with the target's low-frequency amplitude.
inline Volume mix_pair(Method method, const Volume& xs, const Volume& xt, double beta, double lambda,
                       const RunConfig& cfg, Rng& rng) {
  switch (method) {
    case Method::dymix: return amplitude_mixup(xs, xt, beta, lambda);
    case Method::mixup: return mixup_images(xs, xt, lambda);
    case Method::cutout: return cutout(xt, sample_box(xt.dims(), rng, cfg.box));
    case Method::cutmix: return cutmix(xt, xs, sample_box(xt.dims(), rng, cfg.box)).volume;
    case Method::apr: return apr_recombine(xt, xs);
    case Method::fda: return fda_transfer(xt, xs, cfg.fda_beta);
  }
  throw ConfigError("unhandled method");
}

struct ProbeAudit {
  std::size_t probes = 0;
  std::size_t checksum_mismatches = 0;
};

/// Stage 2. The target encoder starts as a copy of the source encoder; every
/// step pairs a labeled source batch with an unlabeled target batch (the
/// target stream is cycled), builds the mixed target batch with `method`,
/// and descends the adaptation objective. Validation scores source-val
/// images whose amplitude is mixed with random target images at the current
/// region size (phase kept from the source-val image so labels stay valid),
/// scored through the target encoder. For DyMix the score drives the region
/// scheduler; probes re-run validation at beta +/- tau without touching the
/// model. The final model is returned.
inline StageResult adapt_stage(const RunConfig& cfg, const Dataset& source, const GuardedDataset& target,
                               const nn::Model& pretrained, Method method, const StageIo& io = {},
                               ProbeAudit* audit = nullptr) {
  cfg.validate();
  detail::require_both_classes(source, Split::train, "adapt");
  detail::require_both_classes(source, Split::val, "adapt");
  const std::string stage = std::string("adapt_") + to_string(method);
  nn::Model model = pretrained;
  model.enc_tgt.copy_state_from(model.enc_src);
  nn::Adam opt(cfg.adam);
  DyMixScheduler sched(cfg.dymix);
  detail::LoopState st;
  if (io.resume) detail::load_loop(io, stage, model, opt, st, &sched);
  MetricsLog log(io.metrics, "# stage=" + stage + " seed=" + std::to_string(cfg.seed), io.resume ? st.epoch : -1);

  const auto src_train = source.indices(Split::train);
  const auto tgt_train = target.indices(Split::train);
  if (tgt_train.empty()) throw ValueError("adapt: target train split is empty");
  std::vector<const Volume*> val_x;
  std::vector<int> val_y;
  for (auto i : source.indices(Split::val)) {
    val_x.push_back(&source.volumes[i]);
    val_y.push_back(source.manifest.entries[i].label);
  }
  const auto params = detail::collect({model.enc_src.params(), model.enc_tgt.params(), model.attention.params(),
                                       model.classifier.params(), model.domain_disc.params()});
  nn::Stage2Options so;
  so.lambda_att = cfg.lambda_att;
  so.lambda_dom = cfg.lambda_dom;

  // Same draws for the regular pass and both probes of an epoch.
  auto validate_at = [&](double beta, std::uint64_t epoch) {
    Rng vr(derive_seed(cfg.seed, stage + "/val", epoch));
    std::vector<Volume> mixed;
    std::vector<const Volume*> ptrs;
    mixed.reserve(val_x.size());
    for (const Volume* v : val_x) {
      const Volume& t = target.volume(tgt_train[vr.below(tgt_train.size())]);
      mixed.push_back(amplitude_mixup(t, *v, beta, vr.uniform()));
    }
    for (const auto& v : mixed) ptrs.push_back(&v);
    return detail::validation_auc(model, EncoderChoice::target, ptrs, val_y, cfg.eval_batch);
  };

  StageResult res;
  while (st.epoch < cfg.adapt_epochs) {
    Rng rng(derive_seed(cfg.seed, stage, static_cast<std::uint64_t>(st.epoch)));
    const double beta = method == Method::dymix ? sched.beta() : 1.0;
    const auto sb = detail::make_batches(src_train, cfg.batch_size, rng);
    auto tb = detail::make_batches(tgt_train, cfg.batch_size, rng);
    double s_cls = 0.0, s_att = 0.0, s_dom = 0.0;
    for (std::size_t k = 0; k < sb.size(); ++k) {
      const auto& tbatch = tb[k % tb.size()];
      std::vector<Volume> xs, xt;
      std::vector<int> ys;
      for (std::size_t j = 0; j < sb[k].size(); ++j) {
        const Volume& s = source.volumes[sb[k][j]];
        const Volume& t = target.volume(tbatch[j % tbatch.size()]);
        xs.push_back(s);
        ys.push_back(source.manifest.entries[sb[k][j]].label);
        xt.push_back(mix_pair(method, s, t, beta, rng.uniform(), cfg, rng));
      }
      model.zero_grad();
      nn::ForwardContext ctx{nn::Mode::train, &rng, nullptr, true};
      const auto l = nn::stage2_objective(model, detail::stack(xs), ys, detail::stack(xt), ctx, so, true);
      s_cls += l.l_cls;
      s_att += l.l_att;
      s_dom += l.l_dom;
      opt.step(params);
    }
    const auto epoch_id = static_cast<std::uint64_t>(st.epoch);
    ++st.epoch;
    EpochRecord r;
    r.epoch = st.epoch;
    r.beta = beta;
    const double nb = static_cast<double>(sb.size());
    r.l_cls = s_cls / nb;
    r.l_att = s_att / nb;
    r.l_dom = s_dom / nb;
    r.val_auc = validate_at(beta, epoch_id);
    r.event = "hold";
    if (method == Method::dymix) {
      const auto decision = sched.step(r.val_auc);
      if (const auto* probe = std::get_if<ProbeRequested>(&decision)) {
        const std::uint64_t before = model.checksum();
        const double ep = validate_at(probe->beta_plus, epoch_id);
        const double em = validate_at(probe->beta_minus, epoch_id);
        if (audit) {
          ++audit->probes;
          if (model.checksum() != before) ++audit->checksum_mismatches;
        }
        const double next = sched.resolve_probe(ep, em);
        char buf[160];
        std::snprintf(buf, sizeof buf, "probe(plus=%.9g:%.9g,minus=%.9g:%.9g)->%.9g", probe->beta_plus, ep,
                      probe->beta_minus, em, next);
        r.event = buf;
      }
    } else {
      r.event = "fixed";
    }
    if (r.val_auc > st.best_auc) st.best_auc = r.val_auc;
    log.append(r);
    res.records.push_back(r);
    detail::save_loop(io, stage, model, opt, st, &sched, cfg.seed);
    if (io.stop_after_epoch >= 0 && st.epoch >= io.stop_after_epoch && st.epoch < cfg.adapt_epochs) {
      res.interrupted = true;
      break;
    }
  }
  res.model = model;
  res.best_val_auc = st.best_auc;
  res.epochs_completed = st.epoch;
  return res;
}

// ---------------------------------------------------------------------------
// Baselines and studies

enum class Baseline { source_only, target_only, mixup, cutout, cutmix, apr, fda };

inline const std::vector<std::string>& baseline_names() {
  static const std::vector<std::string> names{"source_only", "target_only", "mixup", "cutout",
                                              "cutmix",      "apr",         "fda"};
  return names;
}

inline Baseline parse_baseline(const std::string& s) {
  for (std::size_t i = 0; i < baseline_names().size(); ++i)
    if (s == baseline_names()[i]) return static_cast<Baseline>(i);
  std::string valid;
  for (const auto& n : baseline_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw ConfigError("unknown baseline '" + s + "' (valid: " + valid + ")");
}

inline Method baseline_method(Baseline b) {
  switch (b) {
    case Baseline::mixup: return Method::mixup;
    case Baseline::cutout: return Method::cutout;
    case Baseline::cutmix: return Method::cutmix;
    case Baseline::apr: return Method::apr;
    case Baseline::fda: return Method::fda;
    default: throw ConfigError("baseline has no adaptation method");
  }
}

/// Runs one baseline and evaluates it on the target test split. Augmentation
/// baselines reuse `pretrained` and substitute their transform for DyMix;
/// source_only trains on source labels only; target_only is the oracle that
/// trains on target labels.
inline EvalReport run_baseline(const RunConfig& cfg, Baseline which, const Dataset& source, const Dataset& target,
                               const nn::Model* pretrained, const StageIo& io = {}) {
  switch (which) {
    case Baseline::source_only: {
      auto r = supervised_stage(cfg, GuardedDataset(source, false), cfg.warmup_epochs + cfg.pretrain_epochs,
                                "source_only", io);
      return evaluate_model(r.model, target, Split::test, EncoderChoice::source, cfg.threshold);
    }
    case Baseline::target_only: {
      auto r = supervised_stage(cfg, GuardedDataset(target, false), cfg.warmup_epochs + cfg.pretrain_epochs,
                                "target_only", io);
      return evaluate_model(r.model, target, Split::test, EncoderChoice::source, cfg.threshold);
    }
    default: {
      if (!pretrained) throw ConfigError("baseline requires a pretrained model");
      auto r = adapt_stage(cfg, source, GuardedDataset(target, true), *pretrained, baseline_method(which), io);
      return evaluate_model(r.model, target, Split::test, EncoderChoice::target, cfg.threshold);
    }
  }
}

struct StudyRow {
  std::string method;
  std::uint64_t seed = 0;
  EvalReport report;
};

inline std::string format_study(const std::vector<StudyRow>& rows) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "method\tseed\tACC\tSEN\tSPE\tAUC\n";
  for (const auto& r : rows)
    os << r.method << '\t' << r.seed << '\t' << r.report.acc << '\t' << r.report.sen << '\t' << r.report.spe << '\t'
       << r.report.auc << '\n';
  std::vector<std::string> order;
  for (const auto& r : rows)
    if (std::find(order.begin(), order.end(), r.method) == order.end()) order.push_back(r.method);
  os << "# means\nmethod\tn\tACC\tSEN\tSPE\tAUC\n";
  for (const auto& m : order) {
    double a = 0, s = 0, p = 0, u = 0;
    int n = 0;
    for (const auto& r : rows)
      if (r.method == m) {
        a += r.report.acc;
        s += r.report.sen;
        p += r.report.spe;
        u += r.report.auc;
        ++n;
      }
    os << m << '\t' << n << '\t' << a / n << '\t' << s / n << '\t' << p / n << '\t' << u / n << '\n';
  }
  return os.str();
}

inline double mean_auc(const std::vector<StudyRow>& rows, const std::string& method) {
  double s = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.method == method) {
      s += r.report.auc;
      ++n;
    }
  if (n == 0) throw ValueError("no rows for method '" + method + "'");
  return s / n;
}

}  // namespace freqadapt
