#pragma once

// Experiment configuration files: sections in brackets, `key = value` lines,
// `#` or `;` comments. Every value remembers its line for diagnostics.
//
//   [experiment]
//   kind = filter
//   n = 20, 50, 100
//   [model]
//   type = lgss

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "skh/errors.hpp"

namespace skh::harness {

struct ConfigEntry {
  std::string value;
  int line = 0;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in) {
    ConfigFile cfg;
    std::string section;
    std::string raw;
    int line = 0;
    while (std::getline(in, raw)) {
      ++line;
      cfg.text_ += raw;
      cfg.text_ += '\n';
      std::string s = strip_comment(raw);
      if (s.empty()) continue;
      if (s.front() == '[') {
        if (s.back() != ']') throw ConfigError(line, "unterminated section header");
        section = lower(trim(std::string_view(s).substr(1, s.size() - 2)));
        if (section.empty()) throw ConfigError(line, "empty section name");
        cfg.sections_.insert(section);
        continue;
      }
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value'");
      if (section.empty()) throw ConfigError(line, "key outside of any [section]");
      const std::string key = lower(trim(std::string_view(s).substr(0, eq)));
      const std::string value = trim(std::string_view(s).substr(eq + 1));
      if (key.empty()) throw ConfigError(line, "empty key");
      if (value.empty()) throw ConfigError(line, "empty value for '" + key + "'");
      const auto [it, inserted] = cfg.entries_.emplace(section + "." + key, ConfigEntry{value, line});
      if (!inserted) {
        throw ConfigError(line, "duplicate key '" + key + "' (first set on line " + std::to_string(it->second.line) + ")");
      }
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
    return parse(in);
  }

  /// Raw file contents, hashed into every output row.
  const std::string& text() const { return text_; }
  bool has_section(const std::string& s) const { return sections_.count(s) > 0; }

  const ConfigEntry* find(const std::string& section, const std::string& key) const {
    const auto it = entries_.find(section + "." + key);
    return it == entries_.end() ? nullptr : &it->second;
  }

  std::string get_string(const std::string& section, const std::string& key, const std::string& fallback) const {
    const ConfigEntry* e = find(section, key);
    return e ? e->value : fallback;
  }
  std::string require_string(const std::string& section, const std::string& key) const {
    const ConfigEntry* e = find(section, key);
    if (!e) throw ConfigError(0, "missing required key '" + key + "' in [" + section + "]");
    return e->value;
  }

  double get_double(const std::string& section, const std::string& key, double fallback) const {
    const ConfigEntry* e = find(section, key);
    return e ? to_double(e->value, *e, key) : fallback;
  }
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const {
    const ConfigEntry* e = find(section, key);
    return e ? to_int(e->value, *e, key) : fallback;
  }
  std::vector<double> get_doubles(const std::string& section, const std::string& key,
                                  const std::vector<double>& fallback) const {
    const ConfigEntry* e = find(section, key);
    if (!e) return fallback;
    std::vector<double> out;
    for (const std::string& item : split_list(e->value)) out.push_back(to_double(item, *e, key));
    if (out.empty()) throw ConfigError(e->line, "'" + key + "' must list at least one value");
    return out;
  }
  std::vector<std::int64_t> get_ints(const std::string& section, const std::string& key,
                                     const std::vector<std::int64_t>& fallback) const {
    const ConfigEntry* e = find(section, key);
    if (!e) return fallback;
    std::vector<std::int64_t> out;
    for (const std::string& item : split_list(e->value)) out.push_back(to_int(item, *e, key));
    if (out.empty()) throw ConfigError(e->line, "'" + key + "' must list at least one value");
    return out;
  }
  std::vector<std::string> get_list(const std::string& section, const std::string& key,
                                    const std::vector<std::string>& fallback) const {
    const ConfigEntry* e = find(section, key);
    if (!e) return fallback;
    std::vector<std::string> out;
    for (const std::string& item : split_list(e->value)) out.push_back(lower(item));
    if (out.empty()) throw ConfigError(e->line, "'" + key + "' must list at least one value");
    return out;
  }

  /// Rejects sections or keys not listed in `known` (typos fail loudly).
  void check_known(const std::map<std::string, std::set<std::string>>& known) const {
    for (const auto& [full, entry] : entries_) {
      const auto dot = full.find('.');
      const std::string section = full.substr(0, dot), key = full.substr(dot + 1);
      const auto it = known.find(section);
      if (it == known.end()) throw ConfigError(entry.line, "unknown section [" + section + "]");
      if (!it->second.count(key)) throw ConfigError(entry.line, "unknown key '" + key + "' in [" + section + "]");
    }
  }

 private:
  static std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
  }

  static std::string strip_comment(const std::string& raw) {
    std::string s = trim(raw);
    if (s.empty() || s.front() == '#' || s.front() == ';') return {};
    for (std::size_t i = 1; i < s.size(); ++i) {
      if ((s[i] == '#' || s[i] == ';') && (s[i - 1] == ' ' || s[i - 1] == '\t')) return trim(s.substr(0, i));
    }
    return s;
  }

  static double to_double(const std::string& s, const ConfigEntry& e, const std::string& key) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(e.line, "'" + key + "': expected a number, got '" + s + "'");
    }
    return v;
  }
  static std::int64_t to_int(const std::string& s, const ConfigEntry& e, const std::string& key) {
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError(e.line, "'" + key + "': expected an integer, got '" + s + "'");
    }
    return v;
  }

  std::map<std::string, ConfigEntry> entries_;
  std::set<std::string> sections_;
  std::string text_;
};

// ---------------------------------------------------------------------------

enum class ExperimentKind { Quad, Filter, Rbpf };

inline std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::Quad:
      return "quad";
    case ExperimentKind::Filter:
      return "filter";
    case ExperimentKind::Rbpf:
      return "rbpf";
  }
  return "?";
}

/// Random mixture family: means uniform on [-mean_range, mean_range]^dim,
/// isotropic variances uniform on [var_min, var_max], weights normalized
/// uniforms.
struct MixtureSpec {
  int dim = 2;
  int components = 100;
  std::uint64_t seed = 1;
  double mean_range = 5.0;
  double var_min = 0.1;
  double var_max = 4.1;
};

struct ModelSpec {
  std::string type = "lgss";  ///< lgss | jmls | nonlinear | clgss
  std::uint64_t seed = 1;
  int dim_x = 3;
  int dim_y = 1;
  double coupling = 1.0;
  int reference_particles = 100000;
  int reference_runs = 3;
};

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::Quad;
  std::vector<int> n_grid{10, 20, 50, 100, 200};
  int m = 20000;
  int T = 50;
  int batches = 10;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::uint64_t base_seed = 0;
  std::vector<std::string> methods;
  std::vector<double> sigma2{1.0};
  MixtureSpec mixture;
  ModelSpec model;
  std::string output;
  int workers = 1;
  std::string source;  ///< config text, hashed into every row
  bool full_scale = false;

  /// Batches 30, T = 100 (10 for the jump Markov model), M = 50000.
  void apply_full_scale() {
    full_scale = true;
    batches = 30;
    m = 50000;
    T = model.type == "jmls" ? 10 : 100;
    if (kind == ExperimentKind::Filter || kind == ExperimentKind::Rbpf) {
      n_grid = {20, 50, 100, 200};
      model.reference_runs = 10;
    }
  }
};

inline const std::vector<std::string>& quad_methods() {
  static const std::vector<std::string> m{"mc", "qmc", "fw", "fw-ls", "fcfw"};
  return m;
}
inline const std::vector<std::string>& filter_methods() {
  static const std::vector<std::string> m{"pf", "pf-multinomial", "qmc", "skh-fw", "skh-fw-ls", "skh-fcfw"};
  return m;
}

inline ExperimentConfig parse_config(const ConfigFile& f) {
  f.check_known({
      {"experiment", {"kind", "n", "m", "t", "batches", "seeds", "seed", "output", "workers"}},
      {"mixture", {"dim", "components", "seed", "mean_range", "var_min", "var_max"}},
      {"model", {"type", "seed", "dim_x", "dim_y", "coupling", "reference_particles", "reference_runs"}},
      {"methods", {"list", "sigma2"}},
  });
  ExperimentConfig c;
  c.source = f.text();
  const std::string kind = f.require_string("experiment", "kind");
  const ConfigEntry* kind_entry = f.find("experiment", "kind");
  if (kind == "quad") {
    c.kind = ExperimentKind::Quad;
  } else if (kind == "filter") {
    c.kind = ExperimentKind::Filter;
  } else if (kind == "rbpf") {
    c.kind = ExperimentKind::Rbpf;
  } else {
    throw ConfigError(kind_entry->line, "kind must be quad, filter or rbpf, got '" + kind + "'");
  }
  auto line_of = [&](const std::string& s, const std::string& k) {
    const ConfigEntry* e = f.find(s, k);
    return e ? e->line : 0;
  };
  auto positive = [&](std::int64_t v, const std::string& s, const std::string& k) {
    if (v < 1) throw ConfigError(line_of(s, k), "'" + k + "' must be >= 1");
    return static_cast<int>(v);
  };

  if (c.kind != ExperimentKind::Quad) c.n_grid = {20, 50, 100};
  std::vector<std::int64_t> ns(c.n_grid.begin(), c.n_grid.end());
  c.n_grid.clear();
  for (std::int64_t n : f.get_ints("experiment", "n", ns)) c.n_grid.push_back(positive(n, "experiment", "n"));
  c.m = positive(f.get_int("experiment", "m", c.m), "experiment", "m");
  c.T = positive(f.get_int("experiment", "t", c.T), "experiment", "t");
  c.batches = positive(f.get_int("experiment", "batches", c.batches), "experiment", "batches");
  c.workers = positive(f.get_int("experiment", "workers", c.workers), "experiment", "workers");
  c.base_seed = static_cast<std::uint64_t>(f.get_int("experiment", "seed", 0));
  std::vector<std::int64_t> seeds(c.seeds.begin(), c.seeds.end());
  c.seeds.clear();
  for (std::int64_t s : f.get_ints("experiment", "seeds", seeds)) {
    if (s < 0) throw ConfigError(line_of("experiment", "seeds"), "seeds must be non-negative");
    c.seeds.push_back(static_cast<std::uint64_t>(s));
  }
  c.output = f.get_string("experiment", "output", "");

  const auto& allowed = c.kind == ExperimentKind::Quad ? quad_methods() : filter_methods();
  c.methods = f.get_list("methods", "list", c.kind == ExperimentKind::Quad
                                                ? std::vector<std::string>{"mc", "qmc", "fw", "fcfw"}
                                                : std::vector<std::string>{"pf", "qmc", "skh-fw", "skh-fcfw"});
  for (const std::string& m : c.methods) {
    if (std::find(allowed.begin(), allowed.end(), m) == allowed.end()) {
      throw ConfigError(line_of("methods", "list"), "unknown method '" + m + "' for a " + kind + " experiment");
    }
  }
  c.sigma2 = f.get_doubles("methods", "sigma2", c.sigma2);
  for (double s : c.sigma2) {
    if (!(s > 0.0)) throw ConfigError(line_of("methods", "sigma2"), "sigma2 values must be > 0");
  }

  MixtureSpec& mx = c.mixture;
  mx.dim = positive(f.get_int("mixture", "dim", mx.dim), "mixture", "dim");
  mx.components = positive(f.get_int("mixture", "components", mx.components), "mixture", "components");
  mx.seed = static_cast<std::uint64_t>(f.get_int("mixture", "seed", static_cast<std::int64_t>(mx.seed)));
  mx.mean_range = f.get_double("mixture", "mean_range", mx.mean_range);
  mx.var_min = f.get_double("mixture", "var_min", mx.var_min);
  mx.var_max = f.get_double("mixture", "var_max", mx.var_max);
  if (!(mx.var_min > 0.0) || mx.var_max < mx.var_min) {
    throw ConfigError(line_of("mixture", "var_min"), "need 0 < var_min <= var_max");
  }

  ModelSpec& md = c.model;
  md.type = f.get_string("model", "type", c.kind == ExperimentKind::Rbpf ? "clgss" : md.type);
  const int type_line = line_of("model", "type");
  if (c.kind == ExperimentKind::Filter && md.type != "lgss" && md.type != "jmls" && md.type != "nonlinear") {
    throw ConfigError(type_line, "filter experiments need model type lgss, jmls or nonlinear");
  }
  if (c.kind == ExperimentKind::Rbpf && md.type != "clgss") {
    throw ConfigError(type_line, "rbpf experiments need model type clgss");
  }
  md.seed = static_cast<std::uint64_t>(f.get_int("model", "seed", static_cast<std::int64_t>(md.seed)));
  md.dim_x = positive(f.get_int("model", "dim_x", md.dim_x), "model", "dim_x");
  md.dim_y = positive(f.get_int("model", "dim_y", md.dim_y), "model", "dim_y");
  md.coupling = f.get_double("model", "coupling", md.coupling);
  md.reference_particles =
      positive(f.get_int("model", "reference_particles", md.reference_particles), "model", "reference_particles");
  md.reference_runs = positive(f.get_int("model", "reference_runs", md.reference_runs), "model", "reference_runs");
  if (md.type == "jmls" && !f.find("experiment", "t")) c.T = 10;
  if (md.type == "jmls" && c.T > 20) {
    throw ConfigError(line_of("experiment", "t"), "the exact jump-Markov reference needs T <= 20 (2^T branches)");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) { return parse_config(ConfigFile::load(path)); }

}  // namespace skh::harness
