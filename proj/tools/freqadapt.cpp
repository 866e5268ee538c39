// Command-line front end: data generation, training stages, evaluation,
// augmentation dumps and the augmentation comparison study.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "freqadapt/freqadapt.hpp"

namespace fs = std::filesystem;
using namespace freqadapt;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string metrics_out;
  std::string resume;
  std::vector<std::string> overrides;  // key=value
  std::string report;                  // optional copy of the final report
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

AppConfig effective_config(const Globals& g) {
  AppConfig c;
  if (!g.config_path.empty()) load_config_file(c, g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (g.seed) {
    c.run.seed = *g.seed;
    c.data.seed = *g.seed;
  }
  if (c.data.dims.size() != c.run.model.spatial_rank) c.run.model.spatial_rank = c.data.dims.size();
  validate_config(c);
  return c;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw UsageError("--out is required for this command");
  fs::create_directories(g.out);
  return g.out;
}

void echo_config(AppConfig& c, const fs::path& dir) {
  std::ofstream out(dir / "effective_config.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write effective config in " + dir.string());
  out << config_to_text(c);
}

void write_report(const EvalReport& r, const fs::path& p) {
  std::ofstream out(p, std::ios::trunc);
  out << r.to_kv();
  if (!out) throw IoError("cannot write report " + p.string());
}

void print_report(const Globals& g, const std::string& title, const EvalReport& r) {
  if (!g.report.empty()) write_report(r, g.report);
  std::cout << "# " << title << "\n" << r.to_kv() << std::flush;
}

fs::path metrics_path(const Globals& g, const fs::path& out, const std::string& stage) {
  return g.metrics_out.empty() ? out / ("metrics_" + stage + ".tsv") : fs::path(g.metrics_out);
}

// --resume takes <dir>/<stage>_last.fqck; the stage must match.
StageIo stage_io(const Globals& g, const fs::path& out, const std::string& stage, int stop_after) {
  StageIo io;
  io.metrics = metrics_path(g, out, stage);
  io.checkpoint_dir = out / "checkpoints";
  io.stop_after_epoch = stop_after;
  if (!g.resume.empty()) {
    const fs::path r(g.resume);
    if (r.filename() != stage + "_last.fqck")
      throw UsageError("--resume expects a '" + stage + "_last.fqck' checkpoint, got " + r.string());
    if (!fs::exists(r)) throw IoError("resume checkpoint not found: " + r.string());
    io.checkpoint_dir = r.parent_path();
    io.resume = true;
  }
  return io;
}

Dataset load_domain(const fs::path& data, const char* domain) {
  const fs::path dir = data / domain;
  if (!fs::exists(dir / "manifest.tsv"))
    throw IoError("no " + std::string(domain) + " dataset under " + data.string() + " (run gen-data first)");
  return load_dataset(dir);
}

nn::Model load_model_file(const fs::path& p, std::string* stage = nullptr) {
  if (!fs::exists(p)) throw IoError("checkpoint not found: " + p.string());
  const auto ck = nn::load_checkpoint(p);
  if (stage) *stage = ck.get("stage");
  return model_from_checkpoint(ck);
}

void save_model_file(nn::Model& m, const std::string& stage, const fs::path& p) {
  nn::save_checkpoint(model_checkpoint(m, stage), p);
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const Globals& g) {
  AppConfig c = effective_config(g);
  const fs::path out = require_out(g);
  echo_config(c, out);
  for (auto* d : {&c.source, &c.target}) {
    const auto m = generate_dataset(*d, c.classes, c.data, out / d->name);
    std::cout << d->name << ":";
    for (Split s : {Split::train, Split::val, Split::test})
      std::cout << " " << to_string(s) << "=" << m.count(s, 0) << "/" << m.count(s, 1);
    std::cout << "  (class0/class1)\n";
  }
  std::cout << "root=" << out.string() << "\n";
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& data, int stop_after) {
  AppConfig c = effective_config(g);
  const fs::path out = require_out(g);
  echo_config(c, out);
  const Dataset src = load_domain(data, "source");
  auto res = pretrain_stage(c.run, src, stage_io(g, out, "pretrain", stop_after));
  save_model_file(res.model, "pretrain", out / "pretrain.fqck");
  std::cout << "epochs_completed=" << res.epochs_completed << (res.interrupted ? " (interrupted)" : "") << "\n";
  print_report(g, "source test, source encoder", evaluate_model(res.model, src, Split::test, EncoderChoice::source,
                                                              c.run.threshold));
  return 0;
}

int cmd_adapt(const Globals& g, const std::string& data, const std::string& pretrained, const std::string& method,
              int stop_after) {
  AppConfig c = effective_config(g);
  const Method m = parse_method(method);
  const fs::path out = require_out(g);
  echo_config(c, out);
  nn::Model pre = load_model_file(pretrained);
  const Dataset src = load_domain(data, "source");
  const Dataset tgt = load_domain(data, "target");
  const std::string stage = std::string("adapt_") + to_string(m);
  auto res = adapt_stage(c.run, src, GuardedDataset(tgt, true), pre, m, stage_io(g, out, stage, stop_after));
  save_model_file(res.model, stage, out / (stage + ".fqck"));
  std::cout << "epochs_completed=" << res.epochs_completed << (res.interrupted ? " (interrupted)" : "") << "\n";
  print_report(g, "target test, target encoder",
               evaluate_model(res.model, tgt, Split::test, EncoderChoice::target, c.run.threshold));
  return 0;
}

int cmd_eval(const Globals& g, const std::string& data, const std::string& checkpoint, const std::string& domain,
             const std::string& split, std::string encoder) {
  AppConfig c = effective_config(g);
  std::string stage = "init";
  nn::Model model = checkpoint.empty() ? nn::Model(c.run.model, derive_seed(c.run.seed, "init"))
                                       : load_model_file(checkpoint, &stage);
  if (encoder == "auto") encoder = stage.rfind("adapt_", 0) == 0 ? "target" : "source";
  if (encoder != "source" && encoder != "target") throw UsageError("--encoder must be auto, source or target");
  const Dataset d = load_domain(data, domain == "source" ? "source" : domain == "target" ? "target" : "?");
  const auto report = evaluate_model(model, d, parse_split(split),
                                     encoder == "source" ? EncoderChoice::source : EncoderChoice::target,
                                     c.run.threshold);
  print_report(g, domain + " " + split + ", " + encoder + " encoder, checkpoint stage " + stage, report);
  return 0;
}

int cmd_baseline(const Globals& g, const std::string& data, const std::string& which, const std::string& pretrained) {
  AppConfig c = effective_config(g);
  const Baseline b = parse_baseline(which);
  const fs::path out = require_out(g);
  echo_config(c, out);
  const Dataset src = load_domain(data, "source");
  const Dataset tgt = load_domain(data, "target");
  std::optional<nn::Model> pre;
  if (b != Baseline::source_only && b != Baseline::target_only) {
    if (!pretrained.empty()) {
      pre = load_model_file(pretrained);
    } else {
      StageIo io;
      io.metrics = out / "metrics_pretrain.tsv";
      pre = pretrain_stage(c.run, src, io).model;
    }
  }
  StageIo io;
  io.metrics = metrics_path(g, out, which);
  const auto report = run_baseline(c.run, b, src, tgt, pre ? &*pre : nullptr, io);
  if (b == Baseline::target_only) std::cout << "# note: target_only reads target labels (oracle upper bound)\n";
  print_report(g, "target test, baseline " + which, report);
  return 0;
}

// 8-bit binary PGM per slice along the first axis (one image for 2D).
void dump_slices(const Volume& v, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  const auto& d = v.dims();
  const std::size_t slices = d.size() == 3 ? d[0] : 1;
  const std::size_t h = d.size() == 3 ? d[1] : d[0];
  const std::size_t w = d.back();
  double lo = v[0], hi = v[0];
  for (double x : v.data()) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  for (std::size_t s = 0; s < slices; ++s) {
    char name[64];
    std::snprintf(name, sizeof name, "_%03zu.pgm", s);
    std::ofstream out(dir / (stem + name), std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write slice dump in " + dir.string());
    out << "P5\n" << w << " " << h << "\n255\n";
    for (std::size_t i = 0; i < h * w; ++i)
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround((v[s * h * w + i] - lo) * scale))));
  }
}

int cmd_augment(const Globals& g, const std::string& method, const std::vector<std::string>& inputs,
                std::optional<double> lambda, std::optional<double> beta, const std::string& slices) {
  static const std::vector<std::string> valid{"mixup", "cutout", "cutmix", "apr", "fda", "dymix", "bias"};
  if (std::find(valid.begin(), valid.end(), method) == valid.end()) {
    std::string list;
    for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
    throw UsageError("unknown method '" + method + "' (valid: " + list + ")");
  }
  AppConfig c = effective_config(g);
  if (g.out.empty()) throw UsageError("--out is required (output VOLB path)");
  const bool pair = method != "cutout" && method != "bias";
  if (inputs.size() != (pair ? 2u : 1u))
    throw UsageError("method '" + method + "' takes " + (pair ? "two" : "one") + " --input file(s)");
  const Volume a = read_volume(inputs[0]);
  const Volume b = pair ? read_volume(inputs[1]) : a;
  Rng rng(derive_seed(c.run.seed, "augment"));
  const double lam = lambda ? *lambda : rng.uniform();
  Volume outv = a;
  if (method == "mixup") outv = mixup_images(a, b, lam);
  else if (method == "cutout") outv = cutout(a, sample_box(a.dims(), rng, c.run.box));
  else if (method == "cutmix") outv = cutmix(a, b, sample_box(a.dims(), rng, c.run.box)).volume;
  else if (method == "apr") outv = apr_recombine(a, b);
  else if (method == "fda") outv = fda_transfer(a, b, beta ? *beta : c.run.fda_beta);
  else if (method == "dymix") outv = amplitude_mixup(a, b, beta ? *beta : c.run.dymix.initial_beta, lam);
  else {
    BiasFieldParams bp = c.run.intensity_shift;
    bp.seed = rng.next_u64();
    outv = random_bias_field(a, bp);
  }
  const fs::path out(g.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_volume(outv, out);
  if (!slices.empty()) {
    dump_slices(a, slices, "input0");
    if (pair) dump_slices(b, slices, "input1");
    dump_slices(outv, slices, method);
  }
  std::cout << "method=" << method << "\nlambda=" << lam << "\noutput=" << out.string() << "\n";
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');)
    if (!tok.empty()) out.push_back(tok);
  return out;
}

EvalReport read_report(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError("missing report " + p.string());
  EvalReport r;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = line.substr(0, eq);
    const double v = std::strtod(line.c_str() + eq + 1, nullptr);
    if (k == "acc") r.acc = v;
    else if (k == "sen") r.sen = v;
    else if (k == "spe") r.spe = v;
    else if (k == "auc") r.auc = v;
    else if (k == "n_pos") r.n_pos = static_cast<std::size_t>(v);
    else if (k == "n_neg") r.n_neg = static_cast<std::size_t>(v);
    else if (k == "threshold") r.threshold = v;
  }
  return r;
}

std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char ch : s) q += ch == '\'' ? std::string("'\\''") : std::string(1, ch);
  return q + "'";
}

int cmd_compare_aug(const Globals& g, const std::string& data, const std::string& methods_arg,
                    const std::string& seeds_arg, bool subprocess) {
  AppConfig base = effective_config(g);
  const fs::path out = require_out(g);
  echo_config(base, out);
  const auto methods = split_list(methods_arg);
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) seeds.push_back(std::stoull(s));
  if (methods.empty() || seeds.empty()) throw UsageError("--methods and --seeds must be non-empty");
  for (const auto& m : methods)
    if (m != "source_only" && m != "target_only") parse_method(m);
  const Dataset src = load_domain(data, "source");
  const Dataset tgt = load_domain(data, "target");

  std::vector<StudyRow> rows;
  for (auto seed : seeds) {
    AppConfig c = base;
    c.run.seed = seed;
    const fs::path sdir = out / ("seed" + std::to_string(seed));
    fs::create_directories(sdir);
    std::optional<nn::Model> pre;
    auto need_pretrain = std::any_of(methods.begin(), methods.end(),
                                     [](const std::string& m) { return m != "source_only" && m != "target_only"; });
    if (need_pretrain) {
      StageIo io;
      io.metrics = sdir / "metrics_pretrain.tsv";
      pre = pretrain_stage(c.run, src, io).model;
      save_model_file(*pre, "pretrain", sdir / "pretrain.fqck");
    }
    std::vector<EvalReport> reports(methods.size());
    auto run_one = [&](std::size_t k) {
      const std::string& m = methods[k];
      const fs::path report = sdir / (m + ".report");
      if (subprocess) {
        std::string cmd = shell_quote(fs::read_symlink("/proc/self/exe").string());
        cmd += m == "source_only" || m == "target_only" ? " baseline --which " + m : " adapt --method " + m +
                                                                                         " --pretrained " +
                                                                                         shell_quote((sdir / "pretrain.fqck").string());
        cmd += " --data " + shell_quote(data) + " --out " + shell_quote((sdir / m).string());
        cmd += " --seed " + std::to_string(seed);
        if (!g.config_path.empty()) cmd += " --config " + shell_quote(g.config_path);
        for (const auto& o : g.overrides) cmd += " --set " + shell_quote(o);
        cmd += " --report " + shell_quote(report.string()) + " > " + shell_quote((sdir / (m + ".log")).string()) + " 2>&1";
        if (std::system(cmd.c_str()) != 0) throw Error("subprocess failed for method " + m + " (see log)");
        reports[k] = read_report(report);
      } else {
        StageIo io;
        io.metrics = sdir / ("metrics_" + m + ".tsv");
        if (m == "source_only" || m == "target_only")
          reports[k] = run_baseline(c.run, parse_baseline(m), src, tgt, nullptr, io);
        else {
          auto r = adapt_stage(c.run, src, GuardedDataset(tgt, true), *pre, parse_method(m), io);
          reports[k] = evaluate_model(r.model, tgt, Split::test, EncoderChoice::target, c.run.threshold);
        }
        write_report(reports[k], report);
      }
    };
    parallel_for(methods.size(), subprocess ? worker_count(methods.size()) : 1, run_one);
    for (std::size_t k = 0; k < methods.size(); ++k) rows.push_back({methods[k], seed, reports[k]});
  }
  const std::string table = format_study(rows);
  std::ofstream(out / "compare.tsv", std::ios::trunc) << table;
  std::cout << table;
  return 0;
}

int cmd_grad_check(const Globals& g, std::size_t size, std::size_t max_elements) {
  AppConfig c = effective_config(g);
  nn::ModelConfig mc = c.run.model;
  mc.spatial_rank = 2;
  nn::Model model(mc, derive_seed(c.run.seed, "init"));
  Rng rng(derive_seed(c.run.seed, "grad-check"));
  const nn::Shape shape{2, 1, 1, size, size};
  nn::Stage2Batch b{nn::Tensor(shape), {0, 1}, nn::Tensor(shape)};
  for (auto& x : b.xs.v) x = rng.uniform();
  for (auto& x : b.xt_mixed.v) x = rng.uniform();
  nn::Stage2Options so;
  so.lambda_att = c.run.lambda_att;
  so.lambda_dom = c.run.lambda_dom;
  nn::GradCheckOptions opt;
  opt.max_elements = max_elements;
  const auto rep = nn::stage2_gradient_check(model, b, so, opt);
  const auto rev = nn::gradient_reversal_check(model, b, c.run.lambda_dom > 0 ? c.run.lambda_dom : 0.1);
  std::cout << rep.str();
  std::cout << "reversal_max_rel_dev=" << rev.max_rel_dev << (rev.passed ? " PASS" : " FAIL") << "\n";
  std::cout << "passed=" << (rep.passed && rev.passed ? "true" : "false") << "\n";
  return rep.passed && rev.passed ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"freqadapt: frequency-domain unsupervised domain adaptation toolkit"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (key = value with [sections])")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for data generation and training");
  app.add_option("--out", g.out, "Output directory (augment: output VOLB file)");
  app.add_option("--metrics-out", g.metrics_out, "Metrics file path (default <out>/metrics_<stage>.tsv)");
  app.add_option("--resume", g.resume, "Resume from <dir>/<stage>_last.fqck");
  app.add_option("--set", g.overrides, "Override a config key: section.key=value (repeatable)");

  std::string data, pretrained, method = "dymix", which, checkpoint, domain = "target", split = "test",
                                encoder = "auto", methods = "mixup,cutout,cutmix,apr,fda,dymix", seeds = "1,2,3",
                                slices;
  int stop_after = -1;
  bool subprocess = false;
  std::vector<std::string> inputs;
  std::optional<double> lambda, beta;
  std::size_t gc_size = 16, gc_max = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate the two-domain synthetic benchmark under --out");
  auto* pre = app.add_subcommand("pretrain", "Stage 1: invariant-feature pretraining on labeled source data");
  pre->add_option("--data", data, "Dataset root from gen-data")->required();
  pre->add_option("--stop-after-epoch", stop_after, "Stop after this epoch (simulated interruption)");
  auto* ad = app.add_subcommand("adapt", "Stage 2: adaptation to the unlabeled target domain");
  ad->add_option("--data", data, "Dataset root from gen-data")->required();
  ad->add_option("--pretrained", pretrained, "Checkpoint written by pretrain")->required();
  ad->add_option("--method", method, "dymix | mixup | cutout | cutmix | apr | fda");
  ad->add_option("--stop-after-epoch", stop_after, "Stop after this epoch (simulated interruption)");
  ad->add_option("--report", g.report, "Also write the final report to this file");
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint (or a fresh model) on a dataset split");
  ev->add_option("--data", data, "Dataset root from gen-data")->required();
  ev->add_option("--checkpoint", checkpoint, "Checkpoint file; omitted: freshly initialized model");
  ev->add_option("--domain", domain, "source | target")->check(CLI::IsMember({"source", "target"}));
  ev->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--encoder", encoder, "auto | source | target")->check(CLI::IsMember({"auto", "source", "target"}));
  auto* bl = app.add_subcommand("baseline", "Run one baseline and evaluate it on the target test split");
  bl->add_option("--data", data, "Dataset root from gen-data")->required();
  bl->add_option("--which", which, "source_only | target_only | mixup | cutout | cutmix | apr | fda")->required();
  bl->add_option("--pretrained", pretrained, "Pretrained checkpoint (augmentation baselines; default: train one)");
  bl->add_option("--report", g.report, "Also write the final report to this file");
  auto* au = app.add_subcommand("augment", "Apply one augmentation to VOLB input(s)");
  au->add_option("--method", method, "mixup | cutout | cutmix | apr | fda | dymix | bias")->required();
  au->add_option("--input", inputs, "Input VOLB file(s); pair methods take two")->required();
  au->add_option("--lambda", lambda, "Mixing weight (default: drawn from --seed)");
  au->add_option("--beta", beta, "Region fraction for dymix / fda");
  au->add_option("--slices", slices, "Directory for PGM slice dumps");
  auto* ca = app.add_subcommand("compare-aug", "Augmentation comparison study (methods x seeds)");
  ca->add_option("--data", data, "Dataset root from gen-data")->required();
  ca->add_option("--methods", methods, "Comma-separated methods");
  ca->add_option("--seeds", seeds, "Comma-separated seeds");
  ca->add_flag("--subprocess", subprocess, "Run each method as an independent subprocess");
  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of the adaptation objective gradients");
  gc->add_option("--size", gc_size, "Input extent (square)");
  gc->add_option("--max-elements", gc_max, "Elements checked per tensor (0: all)");
  for (auto* sub : {gen, pre, ad, ev, bl, au, ca, gc}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    int rc = 0;
    if (*gen) rc = cmd_gen_data(g);
    else if (*pre) rc = cmd_pretrain(g, data, stop_after);
    else if (*ad) rc = cmd_adapt(g, data, pretrained, method, stop_after);
    else if (*ev) rc = cmd_eval(g, data, checkpoint, domain, split, encoder);
    else if (*bl) rc = cmd_baseline(g, data, which, pretrained);
    else if (*au) rc = cmd_augment(g, method, inputs, lambda, beta, slices);
    else if (*ca) rc = cmd_compare_aug(g, data, methods, seeds, subprocess);
    else if (*gc) rc = cmd_grad_check(g, gc_size, gc_max);
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
