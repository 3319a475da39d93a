#pragma once

// Experiment config files: sectioned "key = value" text.
//
//   # comment
//   [model]
//   q = 1
//   hidden = 2          # comma list, one entry per hidden layer
//
// Every key must be consumed by the reader; anything left over is an error
// anchored at its line.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlpreg/io.hpp"
#include "mlpreg/optimizer.hpp"
#include "mlpreg/sampler.hpp"

namespace mlpreg {

class KeyValueFile {
 public:
  struct Entry {
    std::string value;
    int line = 0;
    mutable bool used = false;
  };

  static KeyValueFile parse(const std::string& text) {
    KeyValueFile f;
    std::istringstream in(text);
    std::string raw, section;
    int lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      std::string s = trim(raw.substr(0, raw.find('#')));
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError("unterminated section header", lineno);
        section = trim(s.substr(1, s.size() - 2));
        if (section.empty()) throw ConfigError("empty section name", lineno);
        if (f.sections_.count(section)) throw ConfigError("duplicate section [" + section + "]", lineno);
        f.sections_[section];
        f.section_line_[section] = lineno;
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'", lineno);
      if (section.empty()) throw ConfigError("key outside of any [section]", lineno);
      const std::string key = trim(s.substr(0, eq));
      if (key.empty()) throw ConfigError("missing key", lineno);
      auto& sec = f.sections_[section];
      if (sec.count(key)) throw ConfigError("duplicate key '" + key + "' in [" + section + "]", lineno);
      sec[key] = Entry{trim(s.substr(eq + 1)), lineno};
    }
    return f;
  }

  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  const Entry* find(const std::string& sec, const std::string& key) const {
    auto it = sections_.find(sec);
    if (it == sections_.end()) return nullptr;
    auto k = it->second.find(key);
    if (k == it->second.end()) return nullptr;
    k->second.used = true;
    return &k->second;
  }

  const Entry& require(const std::string& sec, const std::string& key) const {
    const Entry* e = find(sec, key);
    if (!e) {
      auto it = section_line_.find(sec);
      throw ConfigError("missing required key '" + key + "' in [" + sec + "]",
                        it == section_line_.end() ? 0 : it->second);
    }
    return *e;
  }

  std::string get_string(const std::string& sec, const std::string& key,
                         std::optional<std::string> def = std::nullopt) const {
    if (const Entry* e = def ? find(sec, key) : &require(sec, key)) return e->value;
    return *def;
  }

  double get_double(const std::string& sec, const std::string& key, std::optional<double> def = std::nullopt) const {
    const Entry* e = def ? find(sec, key) : &require(sec, key);
    if (!e) return *def;
    const auto v = parse_double(e->value);
    if (!v || !std::isfinite(*v)) throw ConfigError(key + ": expected a number, got '" + e->value + "'", e->line);
    return *v;
  }

  long long get_int(const std::string& sec, const std::string& key, std::optional<long long> def = std::nullopt) const {
    const Entry* e = def ? find(sec, key) : &require(sec, key);
    if (!e) return *def;
    return to_int(e->value, key, e->line);
  }

  std::uint64_t get_seed(const std::string& sec, const std::string& key) const {
    const Entry& e = require(sec, key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(e.value.data(), e.value.data() + e.value.size(), v);
    if (ec != std::errc() || ptr != e.value.data() + e.value.size())
      throw ConfigError(key + ": expected a non-negative integer, got '" + e.value + "'", e.line);
    return v;
  }

  std::vector<long long> get_int_list(const std::string& sec, const std::string& key,
                                      std::optional<std::vector<long long>> def = std::nullopt) const {
    const Entry* e = def ? find(sec, key) : &require(sec, key);
    if (!e) return *def;
    std::vector<long long> out;
    for (const std::string& item : split(e->value, ',')) out.push_back(to_int(trim(item), key, e->line));
    return out;
  }

  std::optional<std::vector<double>> get_double_list(const std::string& sec, const std::string& key) const {
    const Entry* e = find(sec, key);
    if (!e) return std::nullopt;
    std::vector<double> out;
    for (const std::string& item : split(e->value, ',')) {
      const auto v = parse_double(item);
      if (!v || !std::isfinite(*v)) throw ConfigError(key + ": bad number '" + trim(item) + "'", e->line);
      out.push_back(*v);
    }
    return out;
  }

  /// Line of a key, for validation errors raised after parsing.
  int line_of(const std::string& sec, const std::string& key) const {
    auto it = sections_.find(sec);
    if (it != sections_.end()) {
      auto k = it->second.find(key);
      if (k != it->second.end()) return k->second.line;
      return section_line_.at(sec);
    }
    return 0;
  }

  /// Throws on the first section or key (in file order) that nobody read.
  void reject_unused(const std::vector<std::string>& known_sections) const {
    std::vector<std::pair<int, std::string>> bad;
    for (const auto& [name, keys] : sections_) {
      if (std::find(known_sections.begin(), known_sections.end(), name) == known_sections.end()) {
        bad.emplace_back(section_line_.at(name), "unknown section [" + name + "]");
        continue;
      }
      for (const auto& [k, e] : keys)
        if (!e.used) bad.emplace_back(e.line, "unknown key '" + k + "' in [" + name + "]");
    }
    if (!bad.empty()) {
      std::sort(bad.begin(), bad.end());
      throw ConfigError(bad.front().second, bad.front().first);
    }
  }

  /// Canonical "section.key = value" lines in sorted order, for report echoes.
  std::map<std::string, std::string> flat() const {
    std::map<std::string, std::string> out;
    for (const auto& [name, keys] : sections_)
      for (const auto& [k, e] : keys) out[name + "." + k] = e.value;
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  }

  static long long to_int(const std::string& s, const std::string& key, int line) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
      throw ConfigError(key + ": expected an integer, got '" + s + "'", line);
    return v;
  }

  std::map<std::string, std::map<std::string, Entry>> sections_;
  std::map<std::string, int> section_line_;
};

// ---------------------------------------------------------------------------

struct ModelSection {
  ParamVector w0;
};

struct NoiseSection {
  GammaKind kind = GammaKind::Identity;
  double scale = 1.0;
  double rho = 0.0;
  SpdMatrix gamma0 = SpdMatrix::identity(1);
};

struct StudySection {
  std::uint64_t seed = 0;
  Eigen::Index n = 2000;
  int replications = 300;
  double perturbation = 0.01;
  Eigen::Index n_ref = 100000;
  std::vector<Eigen::Index> hessian_grid{100, 1000, 10000};
  Eigen::Index score_n = 2000;
  int score_replications = 500;
  std::vector<Eigen::Index> consistency_n{250, 1000, 4000};
  int consistency_replications = 50;  // 0 skips the consistency study
};

enum class EfficiencyExpectation { Gain, Parity };

/// Tolerance bands for cmd_montecarlo. Defaults are the acceptance values.
struct Bands {
  double hessian_final = 0.1;
  double score_distance = 0.15;
  double cov_vs_i0inv = 0.25;
  double cov_vs_gls = 0.25;
  double efficiency_sigmas = 2.0;
  EfficiencyExpectation efficiency = EfficiencyExpectation::Gain;
  double max_failure_rate = 0.05;
};

struct ExperimentConfig {
  ModelSection model;
  NoiseSection noise;
  std::optional<Eigen::Index> data_n;
  std::optional<std::uint64_t> data_seed;
  std::optional<StudySection> study;
  FitConfig fit;
  Bands bands;
  std::string output_dir = ".";
  std::map<std::string, std::string> echo;

  GenSpec gen_spec(Eigen::Index n, std::uint64_t seed) const {
    return GenSpec{model.w0, NoiseSpec{noise.gamma0}, InputLaw::StandardGaussian, n, seed};
  }
};

namespace detail {

inline std::vector<Eigen::Index> sizes(const KeyValueFile& f, const std::string& sec, const std::string& key,
                                       std::vector<Eigen::Index> def) {
  std::vector<long long> d(def.begin(), def.end());
  const auto v = f.get_int_list(sec, key, d);
  for (long long x : v)
    if (x < 1) throw ConfigError(key + ": sizes must be >= 1", f.line_of(sec, key));
  return {v.begin(), v.end()};
}

}  // namespace detail

/// Parses and validates everything up front. Sections: model, noise, data,
/// study, fit, bands, output. Which ones a subcommand needs is checked by
/// the caller via the optional members.
inline ExperimentConfig parse_experiment(const std::string& text) {
  const KeyValueFile f = KeyValueFile::parse(text);
  ExperimentConfig c;
  c.echo = f.flat();

  if (!f.has_section("model")) throw ConfigError("missing [model] section");
  {
    const long long q = f.get_int("model", "q"), d = f.get_int("model", "d");
    const auto hidden = f.get_int_list("model", "hidden");
    if (q < 1) throw ConfigError("q must be >= 1", f.line_of("model", "q"));
    if (d < 1) throw ConfigError("d must be >= 1", f.line_of("model", "d"));
    std::vector<int> h;
    for (long long x : hidden) {
      if (x < 1) throw ConfigError("hidden sizes must be >= 1", f.line_of("model", "hidden"));
      h.push_back(static_cast<int>(x));
    }
    Architecture arch(static_cast<int>(q), h, static_cast<int>(d));
    const auto act = f.get_string("model", "activation", std::string("tanh"));
    try {
      arch.activation = activation_from_string(act);
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f.line_of("model", "activation"));
    }
    if (const auto w = f.get_double_list("model", "w0")) {
      if (static_cast<int>(w->size()) != arch.param_count())
        throw ConfigError("w0 has " + std::to_string(w->size()) + " values, architecture needs " +
                              std::to_string(arch.param_count()),
                          f.line_of("model", "w0"));
      c.model.w0 = ParamVector(arch, Eigen::Map<const Vector>(w->data(), arch.param_count()));
    } else {
      const long long s = f.get_int("model", "w0_seed");
      c.model.w0 = init_random(arch, static_cast<std::uint64_t>(s));
    }
  }

  if (!f.has_section("noise")) throw ConfigError("missing [noise] section");
  {
    const int line = f.line_of("noise", "kind");
    try {
      c.noise.kind = gamma_kind_from_string(f.get_string("noise", "kind"));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), line);
    }
    c.noise.scale = f.get_double("noise", "scale", 1.0);
    c.noise.rho = f.get_double("noise", "rho", 0.0);
    try {
      c.noise.gamma0 = make_gamma0(c.noise.kind, c.model.w0.arch.output_dim, c.noise.scale, c.noise.rho);
    } catch (const NotPositiveDefinite& e) {
      throw ConfigError(e.what(), f.find("noise", "rho") ? f.line_of("noise", "rho") : line);
    }
  }

  if (f.has_section("data")) {
    const long long n = f.get_int("data", "n");
    if (n < 1) throw ConfigError("n must be >= 1", f.line_of("data", "n"));
    c.data_n = n;
    c.data_seed = f.get_seed("data", "seed");
  }

  if (f.has_section("study")) {
    StudySection s;
    s.seed = f.get_seed("study", "seed");
    s.n = f.get_int("study", "n", s.n);
    s.replications = static_cast<int>(f.get_int("study", "replications", s.replications));
    s.perturbation = f.get_double("study", "perturbation", s.perturbation);
    s.n_ref = f.get_int("study", "n_ref", s.n_ref);
    s.hessian_grid = detail::sizes(f, "study", "hessian_grid", s.hessian_grid);
    s.score_n = f.get_int("study", "score_n", s.score_n);
    s.score_replications = static_cast<int>(f.get_int("study", "score_replications", s.score_replications));
    s.consistency_n = detail::sizes(f, "study", "consistency_n", s.consistency_n);
    s.consistency_replications =
        static_cast<int>(f.get_int("study", "consistency_replications", s.consistency_replications));
    if (s.replications < 200)
      throw ConfigError("replications must be >= 200 for covariance estimates", f.line_of("study", "replications"));
    if (s.score_replications < 200)
      throw ConfigError("score_replications must be >= 200", f.line_of("study", "score_replications"));
    if (s.consistency_replications < 0)
      throw ConfigError("consistency_replications must be >= 0", f.line_of("study", "consistency_replications"));
    const long long d = c.model.w0.arch.output_dim;
    if (s.n <= d) throw ConfigError("n must exceed d", f.line_of("study", "n"));
    if (s.score_n <= d) throw ConfigError("score_n must exceed d", f.line_of("study", "score_n"));
    if (s.n_ref < 1) throw ConfigError("n_ref must be >= 1", f.line_of("study", "n_ref"));
    if (!(s.perturbation >= 0.0)) throw ConfigError("perturbation must be >= 0", f.line_of("study", "perturbation"));
    for (size_t i = 1; i < s.hessian_grid.size(); ++i)
      if (s.hessian_grid[i] <= s.hessian_grid[i - 1])
        throw ConfigError("hessian_grid must increase", f.line_of("study", "hessian_grid"));
    c.study = s;
  }

  if (f.has_section("fit")) {
    try {
      c.fit.method = method_from_string(f.get_string("fit", "method", std::string("quasi_newton")));
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f.line_of("fit", "method"));
    }
    c.fit.grad_tol = f.get_double("fit", "grad_tol", c.fit.grad_tol);
    c.fit.cost_tol = f.get_double("fit", "cost_tol", c.fit.cost_tol);
    c.fit.max_iters = static_cast<int>(f.get_int("fit", "max_iters", c.fit.max_iters));
    c.fit.restarts = static_cast<int>(f.get_int("fit", "restarts", c.study ? 1 : c.fit.restarts));
    try {
      c.fit.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what(), f.line_of("fit", "method"));
    }
  } else if (c.study) {
    c.fit.restarts = 1;
  }
  if (c.study) c.fit.seed = c.study->seed;
  else if (c.data_seed) c.fit.seed = *c.data_seed;

  if (f.has_section("bands")) {
    Bands& b = c.bands;
    b.hessian_final = f.get_double("bands", "hessian_final", b.hessian_final);
    b.score_distance = f.get_double("bands", "score_distance", b.score_distance);
    b.cov_vs_i0inv = f.get_double("bands", "cov_vs_i0inv", b.cov_vs_i0inv);
    b.cov_vs_gls = f.get_double("bands", "cov_vs_gls", b.cov_vs_gls);
    b.efficiency_sigmas = f.get_double("bands", "efficiency_sigmas", b.efficiency_sigmas);
    b.max_failure_rate = f.get_double("bands", "max_failure_rate", b.max_failure_rate);
    const std::string e = f.get_string("bands", "efficiency", std::string("gain"));
    if (e == "gain") b.efficiency = EfficiencyExpectation::Gain;
    else if (e == "parity") b.efficiency = EfficiencyExpectation::Parity;
    else throw ConfigError("efficiency must be 'gain' or 'parity'", f.line_of("bands", "efficiency"));
  }

  if (f.has_section("output")) c.output_dir = f.get_string("output", "dir", c.output_dir);

  f.reject_unused({"model", "noise", "data", "study", "fit", "bands", "output"});
  return c;
}

inline ExperimentConfig read_experiment(const std::string& path) {
  try {
    return parse_experiment(read_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError::in_file(path, e);
  }
}

}  // namespace mlpreg
