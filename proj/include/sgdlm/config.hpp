#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgdlm/csv.hpp"
#include "sgdlm/runner.hpp"
#include "sgdlm/sim.hpp"

namespace sgdlm {

struct SignalConfig {
  std::vector<int> lags = {1, 2, 5, 10, 20};
  double threshold = 0.0;
  std::string cutoff_date;         // in-sample lag selection boundary
  double deadband_frac = 0.01;     // of the trailing interquartile range
  int deadband_window = 250;
};

// Flat run configuration; every knob maps to one `section.key` line in the
// config file and one CLI flag.
struct RunConfig {
  std::string data_path;  // empty -> simulate
  SimSpec sim;
  RvConfig rv;
  FeatureFlags features;
  DiscountConfig discounts;
  ParentConfig parents;
  int n_mc = 500;
  double interval_prob = 0.90;
  double ess_floor = 10.0;
  std::uint64_t seed = 42;
  int std_warmup = 250;  // expanding z-score warm-up
  SignalConfig signals;
  std::string out_dir = "out";
  bool dump_state = false;
  bool dump_features = false;

  PipelineConfig pipeline() const {
    PipelineConfig p;
    p.rv = rv;
    p.features = features;
    p.engine.discounts = discounts;
    p.engine.parents = parents;
    p.engine.n_mc = n_mc;
    p.engine.interval_prob = interval_prob;
    p.engine.ess_floor = ess_floor;
    p.engine.seed = seed;
    p.std_warmup = std_warmup;
    p.dump_state = dump_state;
    p.dump_features = dump_features;
    return p;
  }

  void validate() const {
    rv.validate();
    discounts.validate();
    parents.validate();
    if (n_mc < 2) throw std::invalid_argument("engine.n_mc must be >= 2");
    if (std_warmup < 2)
      throw std::invalid_argument("standardizer.warmup must be >= 2");
    if (data_path.empty()) sim.validate();
  }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

inline std::vector<int> parse_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& tok : csv::split(v))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

inline std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

}  // namespace detail

// Applies one `section.key = value` assignment. Unknown keys are an error
// that names the offending field.
inline void apply_kv(RunConfig& c, const std::string& key,
                     const std::string& value) {
  using detail::parse_bool;
  auto d = [&] { return std::stod(value); };
  auto i = [&] { return std::stoi(value); };
  if (key == "data.path") c.data_path = value;
  else if (key == "sim.generator") c.sim.generator = generator_from_string(value);
  else if (key == "sim.n_series") c.sim.n_series = i();
  else if (key == "sim.n_days") c.sim.n_days = i();
  else if (key == "sim.seed") c.sim.seed = std::stoull(value);
  else if (key == "sim.with_ohlc") c.sim.with_ohlc = parse_bool(value, key);
  else if (key == "sim.har_sigma_eps") c.sim.har_sigma_eps = d();
  else if (key == "sim.har_level") c.sim.har_level = d();
  else if (key == "sim.har_beta_d") c.sim.har_beta[0] = d();
  else if (key == "sim.har_beta_w") c.sim.har_beta[1] = d();
  else if (key == "sim.har_beta_m") c.sim.har_beta[2] = d();
  else if (key == "rv.rho") c.rv.rho = d();
  else if (key == "rv.window") c.rv.window = i();
  else if (key == "rv.scales") c.rv.scales = detail::parse_int_list(value);
  else if (key == "rv.log_floor") c.rv.log_floor = d();
  else if (key == "features.har") c.features.har = parse_bool(value, key);
  else if (key == "features.leverage") c.features.leverage = parse_bool(value, key);
  else if (key == "features.ohlc") c.features.ohlc = parse_bool(value, key);
  else if (key == "discounts.delta_phi") c.discounts.delta_phi = d();
  else if (key == "discounts.delta_gamma") c.discounts.delta_gamma = d();
  else if (key == "discounts.beta_lambda") c.discounts.beta_lambda = d();
  else if (key == "parents.enabled") c.parents.enabled = parse_bool(value, key);
  else if (key == "parents.n_core") c.parents.n_core = i();
  else if (key == "parents.n_up") c.parents.n_up = i();
  else if (key == "parents.n_down") c.parents.n_down = i();
  else if (key == "parents.dt") c.parents.dt = i();
  else if (key == "parents.n_max") c.parents.n_max = i();
  else if (key == "parents.delta_w") c.parents.delta_w = d();
  else if (key == "parents.beta_w") c.parents.beta_w = d();
  else if (key == "parents.new_coef_var") c.parents.new_coef_var = d();
  else if (key == "engine.n_mc") c.n_mc = i();
  else if (key == "engine.interval_prob") c.interval_prob = d();
  else if (key == "engine.ess_floor") c.ess_floor = d();
  else if (key == "engine.seed") c.seed = std::stoull(value);
  else if (key == "standardizer.warmup") c.std_warmup = i();
  else if (key == "signals.lags") c.signals.lags = detail::parse_int_list(value);
  else if (key == "signals.threshold") c.signals.threshold = d();
  else if (key == "signals.cutoff_date") c.signals.cutoff_date = value;
  else if (key == "signals.deadband_frac") c.signals.deadband_frac = d();
  else if (key == "signals.deadband_window") c.signals.deadband_window = i();
  else if (key == "out.dir") c.out_dir = value;
  else if (key == "out.dump_state") c.dump_state = parse_bool(value, key);
  else if (key == "out.dump_features") c.dump_features = parse_bool(value, key);
  else
    throw std::invalid_argument("config: unknown key '" + key + "'");
}

inline std::string serialize(const RunConfig& c) {
  std::ostringstream out;
  auto kv = [&](const std::string& k, const std::string& v) {
    out << k << " = " << v << "\n";
  };
  auto f = csv::fmt;
  kv("data.path", c.data_path);
  kv("sim.generator", to_string(c.sim.generator));
  kv("sim.n_series", std::to_string(c.sim.n_series));
  kv("sim.n_days", std::to_string(c.sim.n_days));
  kv("sim.seed", std::to_string(c.sim.seed));
  kv("sim.with_ohlc", c.sim.with_ohlc ? "true" : "false");
  kv("sim.har_sigma_eps", f(c.sim.har_sigma_eps));
  kv("sim.har_level", f(c.sim.har_level));
  kv("sim.har_beta_d", f(c.sim.har_beta[0]));
  kv("sim.har_beta_w", f(c.sim.har_beta[1]));
  kv("sim.har_beta_m", f(c.sim.har_beta[2]));
  kv("rv.rho", f(c.rv.rho));
  kv("rv.window", std::to_string(c.rv.window));
  kv("rv.scales", detail::join_ints(c.rv.scales));
  kv("rv.log_floor", f(c.rv.log_floor));
  kv("features.har", c.features.har ? "true" : "false");
  kv("features.leverage", c.features.leverage ? "true" : "false");
  kv("features.ohlc", c.features.ohlc ? "true" : "false");
  kv("discounts.delta_phi", f(c.discounts.delta_phi));
  kv("discounts.delta_gamma", f(c.discounts.delta_gamma));
  kv("discounts.beta_lambda", f(c.discounts.beta_lambda));
  kv("parents.enabled", c.parents.enabled ? "true" : "false");
  kv("parents.n_core", std::to_string(c.parents.n_core));
  kv("parents.n_up", std::to_string(c.parents.n_up));
  kv("parents.n_down", std::to_string(c.parents.n_down));
  kv("parents.dt", std::to_string(c.parents.dt));
  kv("parents.n_max", std::to_string(c.parents.n_max));
  kv("parents.delta_w", f(c.parents.delta_w));
  kv("parents.beta_w", f(c.parents.beta_w));
  kv("parents.new_coef_var", f(c.parents.new_coef_var));
  kv("engine.n_mc", std::to_string(c.n_mc));
  kv("engine.interval_prob", f(c.interval_prob));
  kv("engine.ess_floor", f(c.ess_floor));
  kv("engine.seed", std::to_string(c.seed));
  kv("standardizer.warmup", std::to_string(c.std_warmup));
  kv("signals.lags", detail::join_ints(c.signals.lags));
  kv("signals.threshold", f(c.signals.threshold));
  kv("signals.cutoff_date", c.signals.cutoff_date);
  kv("signals.deadband_frac", f(c.signals.deadband_frac));
  kv("signals.deadband_window", std::to_string(c.signals.deadband_window));
  kv("out.dir", c.out_dir);
  kv("out.dump_state", c.dump_state ? "true" : "false");
  kv("out.dump_features", c.dump_features ? "true" : "false");
  return out.str();
}

inline void apply_config_text(RunConfig& c, std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto strip = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    line = strip(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " is not key = value");
    apply_kv(c, strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  RunConfig c;
  apply_config_text(c, in);
  return c;
}

}  // namespace sgdlm
