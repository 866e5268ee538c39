#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "freqadapt/pipeline.hpp"
#include "freqadapt/synth.hpp"

namespace freqadapt {

/// Everything a command needs: training, generator and split settings.
struct AppConfig {
  RunConfig run = RunConfig::desk();
  DomainSpec source = DomainSpec::source_default();
  DomainSpec target = DomainSpec::target_default();
  ClassSpec classes{};
  GenerateOptions data{};
};

// Config text grammar:
//   file    := line*
//   line    := blank | comment | section | entry
//   comment := ('#' | ';') any*
//   section := '[' name ']'
//   entry   := key '=' value      (whitespace around key and value is trimmed)
// Keys are looked up as "<section>.<key>"; unknown keys and malformed values
// are errors. Later entries override earlier ones.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  T x{};
  if (!(is >> x) || !is.eof()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

inline std::vector<std::size_t> split_sizes(const std::string& key, const std::string& v, char sep) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, sep);) {
    tok = trim(tok);
    if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("config key '" + key + "': bad list '" + v + "'");
    out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

}  // namespace detail

struct ConfigField {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

/// Every recognised key, bound to the fields of `c`.
inline std::map<std::string, ConfigField> config_schema(AppConfig& c) {
  std::map<std::string, ConfigField> s;
  auto real = [&s](const std::string& k, double& f) {
    s[k] = {[&f, k](const std::string& v) { f = detail::parse_number<double>(k, v); },
            [&f] { return detail::fmt_real(f); }};
  };
  auto integer = [&s](const std::string& k, int& f) {
    s[k] = {[&f, k](const std::string& v) { f = detail::parse_number<int>(k, v); },
            [&f] { return std::to_string(f); }};
  };
  auto size = [&s](const std::string& k, std::size_t& f) {
    s[k] = {[&f, k](const std::string& v) {
              if (v.find('-') != std::string::npos) throw ConfigError("config key '" + k + "' must be >= 0");
              f = detail::parse_number<std::size_t>(k, v);
            },
            [&f] { return std::to_string(f); }};
  };
  auto u64 = [&s](const std::string& k, std::uint64_t& f) {
    s[k] = {[&f, k](const std::string& v) { f = detail::parse_number<std::uint64_t>(k, v); },
            [&f] { return std::to_string(f); }};
  };
  auto flag = [&s](const std::string& k, bool& f) {
    s[k] = {[&f, k](const std::string& v) { f = detail::parse_bool(k, v); }, [&f] { return f ? "true" : "false"; }};
  };

  RunConfig& r = c.run;
  u64("run.seed", r.seed);
  size("run.batch_size", r.batch_size);
  real("run.lr", r.adam.lr);
  real("run.beta1", r.adam.beta1);
  real("run.beta2", r.adam.beta2);
  real("run.adam_eps", r.adam.eps);
  integer("run.warmup_epochs", r.warmup_epochs);
  integer("run.pretrain_epochs", r.pretrain_epochs);
  integer("run.adapt_epochs", r.adapt_epochs);
  real("run.lambda_att", r.lambda_att);
  real("run.lambda_dom", r.lambda_dom);
  flag("run.use_intensity", r.use_intensity);
  integer("run.intensity_order", r.intensity_shift.order);
  real("run.intensity_sigma", r.intensity_shift.sigma);
  real("run.fda_beta", r.fda_beta);
  real("run.box_min", r.box.min_fraction);
  real("run.box_max", r.box.max_fraction);
  real("run.threshold", r.threshold);
  size("run.eval_batch", r.eval_batch);

  nn::ModelConfig& m = r.model;
  s["model.profile"] = {[&m](const std::string& v) {
                          const std::size_t rank = m.spatial_rank;
                          if (v == "desk") m = nn::ModelConfig::desk(rank);
                          else if (v == "paper") m = nn::ModelConfig::paper(rank);
                          else throw ConfigError("config key 'model.profile': expected desk or paper, got '" + v + "'");
                        },
                        [&m] { return m.encoder.widths == nn::ModelConfig::paper().encoder.widths ? "paper" : "desk"; }};
  s["model.widths"] = {[&m](const std::string& v) { m.encoder.widths = detail::split_sizes("model.widths", v, ','); },
                       [&m] { return detail::join_sizes(m.encoder.widths, ','); }};
  s["model.head_hidden"] = {
      [&m](const std::string& v) { m.head_hidden = detail::split_sizes("model.head_hidden", v, ','); },
      [&m] { return detail::join_sizes(m.head_hidden, ','); }};
  size("model.kernel", m.encoder.kernel);
  size("model.rank", m.spatial_rank);
  size("model.attention_kernel", m.attention_kernel);
  real("model.dropout", m.dropout);
  real("model.bn_momentum", m.encoder.bn_momentum);
  real("model.bn_eps", m.encoder.bn_eps);

  real("dymix.tau", r.dymix.tau);
  integer("dymix.patience", r.dymix.patience);
  real("dymix.min_region", r.dymix.min_region);
  real("dymix.max_region", r.dymix.max_region);
  real("dymix.initial_beta", r.dymix.initial_beta);

  size("data.n_per_class", c.data.n_per_class);
  s["data.dims"] = {[&c](const std::string& v) { c.data.dims = detail::split_sizes("data.dims", v, 'x'); },
                    [&c] { return detail::join_sizes(c.data.dims, 'x'); }};
  real("data.split_train", c.data.fractions.train);
  real("data.split_val", c.data.fractions.val);
  real("data.split_test", c.data.fractions.test);

  for (auto* d : {&c.source, &c.target}) {
    const std::string p = d == &c.source ? "source." : "target.";
    integer(p + "bias_order", d->bias_field.order);
    real(p + "bias_sigma", d->bias_field.sigma);
    real(p + "gamma", d->gamma);
    real(p + "noise_sigma", d->noise_sigma);
  }

  ClassSpec& k = c.classes;
  real("classes.radius_class0", k.radius_class0);
  real("classes.radius_class1", k.radius_class1);
  real("classes.radius_jitter", k.radius_jitter);
  real("classes.softness", k.softness);
  real("classes.texture_frequency", k.texture_frequency);
  real("classes.texture_amplitude", k.texture_amplitude);
  integer("classes.texture_components", k.texture_components);
  return s;
}

/// Applies one "section.key" = value assignment.
inline void set_config_value(AppConfig& c, const std::string& key, const std::string& value) {
  auto schema = config_schema(c);
  auto it = schema.find(key);
  if (it == schema.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(value);
}

inline void apply_config_text(AppConfig& c, const std::string& text, const std::string& where = "<config>") {
  auto schema = config_schema(c);
  std::istringstream in(text);
  std::string section;
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const std::string line = detail::trim(raw);
    const std::string at = where + ":" + std::to_string(lineno);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ConfigError(at + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(at + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    auto it = schema.find(full);
    if (it == schema.end()) throw ConfigError(at + ": unknown config key '" + full + "'");
    try {
      it->second.set(detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(at + ": " + e.what());
    }
  }
}

inline void load_config_file(AppConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str(), path.string());
}

/// Canonical text form; apply_config_text(to_text(c)) reproduces c.
inline std::string config_to_text(AppConfig& c) {
  auto schema = config_schema(c);
  std::ostringstream os;
  std::string section;
  // model.profile first so that explicit widths written after it win.
  std::vector<std::string> keys;
  for (const auto& [k, f] : schema) keys.push_back(k);
  std::stable_partition(keys.begin(), keys.end(), [](const std::string& k) { return k == "model.profile"; });
  std::stable_sort(keys.begin(), keys.end(), [](const std::string& a, const std::string& b) {
    return a.substr(0, a.find('.')) < b.substr(0, b.find('.'));
  });
  for (const auto& k : keys) {
    const auto dot = k.find('.');
    const std::string sec = k.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    os << k.substr(dot + 1) << " = " << schema.at(k).get() << "\n";
  }
  return os.str();
}

inline void validate_config(const AppConfig& c) {
  c.run.validate();
  c.source.validate();
  c.target.validate();
  c.classes.validate();
  Volume::check_dims(c.data.dims);
  if (c.run.model.spatial_rank != 2 && c.run.model.spatial_rank != 3)
    throw ConfigError("model.rank must be 2 or 3");
  if (c.data.dims.size() != c.run.model.spatial_rank)
    throw ConfigError("data.dims has " + std::to_string(c.data.dims.size()) + " axes but model.rank is " +
                      std::to_string(c.run.model.spatial_rank));
}

}  // namespace freqadapt
