#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ren/datasets.hpp"
#include "ren/errors.hpp"
#include "ren/trainer.hpp"
#include "ren/variant.hpp"

namespace ren {

/// Training knobs plus the benchmark the run trains on. `data` names a dataset
/// CSV to load instead of generating the benchmark.
struct ExperimentConfig {
  TrainConfig train;
  BenchmarkSpec bench;
  std::string data;

  /// The benchmark is regenerated from the run seed.
  BenchmarkSpec benchmark() const {
    BenchmarkSpec b = bench;
    b.seed = train.seed;
    return b;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

inline std::uint64_t parse_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_switch(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected on or off, got '" + v + "'");
}

inline EmaCoefficient parse_alpha_theta(const std::string& key, const std::string& v) {
  if (v == "ramp") return {0.99, true};
  if (v.starts_with("ramp:")) return {parse_real(key, v.substr(5)), true};
  return {parse_real(key, v), false};
}

inline std::string format_alpha_theta(const EmaCoefficient& a) {
  if (!a.ramp) return format_double(a.value);
  return a.value == 0.99 ? "ramp" : "ramp:" + format_double(a.value);
}

struct ConfigKey {
  const char* name;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)> set;
};

template <class T>
ConfigKey real_key(const char* name, T ExperimentConfig::*group, double T::*field) {
  return {name, [=](const ExperimentConfig& c) { return format_double(c.*group.*field); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*group.*field = parse_real(k, v); }};
}

template <class T, class N>
ConfigKey count_key(const char* name, T ExperimentConfig::*group, N T::*field) {
  return {name, [=](const ExperimentConfig& c) { return std::to_string(c.*group.*field); },
          [=](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*group.*field = static_cast<N>(parse_count(k, v));
          }};
}

/// Every key, in the order serialize() writes them.
inline const std::vector<ConfigKey>& config_keys() {
  using E = ExperimentConfig;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back({"variant", [](const E& c) { return to_string(c.train.variant); },
                 [](E& c, const std::string&, const std::string& v) { c.train.variant = parse_variant(v); }});
    k.push_back(count_key("seed", &E::train, &TrainConfig::seed));
    k.push_back(count_key("total_steps", &E::train, &TrainConfig::total_steps));
    k.push_back(count_key("batch_size", &E::train, &TrainConfig::batch_size));
    k.push_back(count_key("eval_every", &E::train, &TrainConfig::eval_every));
    k.push_back(real_key("eta0", &E::train, &TrainConfig::eta0));
    k.push_back(real_key("anneal_alpha", &E::train, &TrainConfig::anneal_alpha));
    k.push_back(real_key("anneal_beta", &E::train, &TrainConfig::anneal_beta));
    k.push_back(real_key("momentum", &E::train, &TrainConfig::momentum));
    k.push_back(real_key("disc_lr_mult", &E::train, &TrainConfig::disc_lr_mult));
    k.push_back({"alpha_theta", [](const E& c) { return format_alpha_theta(c.train.alpha_theta); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.train.alpha_theta = parse_alpha_theta(key, v);
                 }});
    k.push_back(real_key("alpha_p", &E::train, &TrainConfig::alpha_p));
    k.push_back(real_key("lambda_stu", &E::train, &TrainConfig::lambda_stu));
    k.push_back(real_key("lambda_tea", &E::train, &TrainConfig::lambda_tea));
    k.push_back(real_key("gamma", &E::train, &TrainConfig::gamma));
    k.push_back(real_key("gamma_rampup", &E::train, &TrainConfig::gamma_rampup));
    k.push_back({"grl_ramp", [](const E& c) { return std::string(c.train.grl_ramp ? "on" : "off"); },
                 [](E& c, const std::string& key, const std::string& v) { c.train.grl_ramp = parse_switch(key, v); }});
    k.push_back({"consistency_norm",
                 [](const E& c) {
                   return std::string(c.train.consistency_norm == ConsistencyNorm::squared ? "squared" : "l2");
                 },
                 [](E& c, const std::string& key, const std::string& v) {
                   if (v == "squared") c.train.consistency_norm = ConsistencyNorm::squared;
                   else if (v == "l2") c.train.consistency_norm = ConsistencyNorm::l2;
                   else throw ConfigError("config key '" + key + "': expected squared or l2, got '" + v + "'");
                 }});
    k.push_back(count_key("hidden_width", &E::train, &TrainConfig::hidden_width));
    k.push_back(count_key("feature_dim", &E::train, &TrainConfig::feature_dim));
    k.push_back(count_key("disc_hidden", &E::train, &TrainConfig::disc_hidden));

    k.push_back({"generator", [](const E& c) { return to_string(c.bench.generator); },
                 [](E& c, const std::string&, const std::string& v) { c.bench.generator = parse_generator(v); }});
    k.push_back(count_key("n_source", &E::bench, &BenchmarkSpec::n_source));
    k.push_back(count_key("n_target", &E::bench, &BenchmarkSpec::n_target));
    k.push_back(real_key("noise", &E::bench, &BenchmarkSpec::noise_sigma));
    k.push_back(count_key("classes", &E::bench, &BenchmarkSpec::classes));
    k.push_back(real_key("blob_radius", &E::bench, &BenchmarkSpec::blob_radius));
    k.push_back({"rotation_deg", [](const E& c) { return format_double(c.bench.shift.rotation_deg); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.bench.shift.rotation_deg = parse_real(key, v);
                 }});
    k.push_back({"translation_x", [](const E& c) { return format_double(c.bench.shift.translation[0]); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.bench.shift.translation[0] = parse_real(key, v);
                 }});
    k.push_back({"translation_y", [](const E& c) { return format_double(c.bench.shift.translation[1]); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.bench.shift.translation[1] = parse_real(key, v);
                 }});
    k.push_back({"scale", [](const E& c) { return format_double(c.bench.shift.scale); },
                 [](E& c, const std::string& key, const std::string& v) { c.bench.shift.scale = parse_real(key, v); }});
    k.push_back({"shift_noise", [](const E& c) { return format_double(c.bench.shift.noise_sigma); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.bench.shift.noise_sigma = parse_real(key, v);
                 }});
    k.push_back({"class_imbalance_ratio", [](const E& c) { return format_double(c.bench.shift.class_imbalance_ratio); },
                 [](E& c, const std::string& key, const std::string& v) {
                   c.bench.shift.class_imbalance_ratio = parse_real(key, v);
                 }});
    k.push_back(count_key("lift_dim", &E::bench, &BenchmarkSpec::lift_dim));
    k.push_back(real_key("lift_noise", &E::bench, &BenchmarkSpec::lift_noise));
    k.push_back({"data", [](const E& c) { return c.data; },
                 [](E& c, const std::string&, const std::string& v) { c.data = v; }});
    return k;
  }();
  return keys;
}

}  // namespace detail

/// Short spellings accepted on the command line.
inline std::string canonical_key(std::string key) {
  for (char& ch : key) {
    if (ch == '-') ch = '_';
  }
  if (key == "steps") return "total_steps";
  if (key == "batch") return "batch_size";
  if (key == "gen") return "generator";
  if (key == "rot") return "rotation_deg";
  return key;
}

/// Sets one key; unknown keys and malformed values raise ConfigError naming the key.
inline void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  const std::string name = canonical_key(key);
  for (const auto& k : detail::config_keys()) {
    if (name == k.name) {
      k.set(cfg, name, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> out;
  for (const auto& k : detail::config_keys()) out.emplace_back(k.name);
  return out;
}

/// Flat `key = value` lines; '#' starts a comment.
inline void parse_config(std::istream& is, ExperimentConfig& cfg) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(cfg, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)));
  }
}

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  parse_config(is, cfg);
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  ExperimentConfig cfg;
  parse_config(is, cfg);
  return cfg;
}

inline std::string serialize_config(const ExperimentConfig& cfg, bool include_seed = true) {
  std::string out;
  for (const auto& k : detail::config_keys()) {
    if (!include_seed && std::string_view(k.name) == "seed") continue;
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hash of everything but the seed, as 16 hex digits. Runs that differ only by
/// seed share it.
inline std::string config_hash(const ExperimentConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(serialize_config(cfg, false))));
  return buf;
}

inline std::string run_dir_name(const ExperimentConfig& cfg) {
  return "run-" + config_hash(cfg) + "-s" + std::to_string(cfg.train.seed);
}

}  // namespace ren
