// Copyright 2026 The saceo Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Run configuration: built-in defaults, `key = value` files, overrides and
// validation.

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "saceo/agent.hpp"
#include "saceo/buffers.hpp"
#include "saceo/envs.hpp"

namespace saceo {

enum class Algorithm { kSac, kSacEo, kBco, kSacEoFixed };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kSac: return "sac";
    case Algorithm::kSacEo: return "sac-eo";
    case Algorithm::kBco: return "bco";
    case Algorithm::kSacEoFixed: return "sac-eo-fixed";
  }
  return "?";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "sac") return Algorithm::kSac;
  if (name == "sac-eo") return Algorithm::kSacEo;
  if (name == "bco") return Algorithm::kBco;
  if (name == "sac-eo-fixed") return Algorithm::kSacEoFixed;
  throw ConfigError("unknown algorithm '" + name + "' (expected sac, sac-eo, bco or sac-eo-fixed)");
}

inline bool uses_expert(Algorithm a) { return a != Algorithm::kSac; }

struct RunConfig {
  Algorithm algorithm = Algorithm::kSacEo;
  std::string env = "pendulum-swingup";
  int horizon = 200;
  std::uint64_t seed = 0;
  std::int64_t steps = 200000;  // 1000 trajectories of `horizon` steps

  std::vector<Index> hidden{256, 256};
  std::vector<Index> model_hidden{256, 256};
  double gamma = 0.99;
  double tau = 5e-3;
  double beta = 100.0;
  double epsilon = 0.1;  // sac-eo-fixed only
  Index replay_capacity = 1000000;
  Index model_capacity = 100000;
  Index env_batch = 1024;
  Index expert_batch = 256;
  Index model_batch = 256;
  int model_epochs = 10;
  double policy_lr = 1e-4;
  double critic_lr = 3e-4;
  std::optional<double> temperature_lr;  // defaults to critic_lr
  double model_lr = 1e-3;
  double initial_alpha = 0.1;
  double initial_std = 0.3;
  std::optional<double> target_entropy;  // defaults to -action_dim
  int warmup_steps = 1000;
  int eval_interval = 2000;
  int eval_episodes = 5;
  bool delta_over_full_expert = false;
  int expert_trajectories = 4;

  std::string expert_path;
  std::string out = "runs/latest";

  AgentConfig agent_config() const {
    AgentConfig a;
    a.hidden = hidden;
    a.gamma = gamma;
    a.tau = tau;
    a.policy_lr = policy_lr;
    a.critic_lr = critic_lr;
    a.temperature_lr = temperature_lr.value_or(critic_lr);
    a.initial_alpha = initial_alpha;
    a.initial_std = initial_std;
    a.target_entropy = target_entropy;
    return a;
  }

  // Label used to group runs in reports.
  std::string label() const {
    switch (algorithm) {
      case Algorithm::kSacEo: return "sac-eo(beta=" + format_double(beta) + ")";
      case Algorithm::kSacEoFixed: return "sac-eo-fixed(eps=" + format_double(epsilon) + ")";
      default: return to_string(algorithm);
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0;
  if (!parse_double(v, out)) throw ConfigError(key + ": '" + v + "' is not a number");
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);  // accepts 1e6
  if (d != static_cast<double>(static_cast<Int>(d))) throw ConfigError(key + ": '" + v + "' is not an integer");
  return static_cast<Int>(d);
}

inline std::vector<Index> to_sizes(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_int<Index>(key, item));
  }
  return out;
}

inline std::string join_sizes(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": '" + v + "' is not a boolean");
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SACEO_DOUBLE(name) \
  {#name, {[](RunConfig& c, const std::string& v) { c.name = to_double(#name, v); }, \
           [](const RunConfig& c) { return format_double(c.name); }}}
#define SACEO_INT(name, type) \
  {#name, {[](RunConfig& c, const std::string& v) { c.name = to_int<type>(#name, v); }, \
           [](const RunConfig& c) { return std::to_string(c.name); }}}
#define SACEO_OPT_DOUBLE(name) \
  {#name, {[](RunConfig& c, const std::string& v) { \
             if (v == "auto") c.name.reset(); else c.name = to_double(#name, v); }, \
           [](const RunConfig& c) { return c.name ? format_double(*c.name) : std::string("auto"); }}}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"algo", {[](RunConfig& c, const std::string& v) { c.algorithm = parse_algorithm(v); },
                [](const RunConfig& c) { return to_string(c.algorithm); }}},
      {"env", {[](RunConfig& c, const std::string& v) { c.env = v; }, [](const RunConfig& c) { return c.env; }}},
      {"expert_path", {[](RunConfig& c, const std::string& v) { c.expert_path = v; },
                       [](const RunConfig& c) { return c.expert_path; }}},
      {"out", {[](RunConfig& c, const std::string& v) { c.out = v; }, [](const RunConfig& c) { return c.out; }}},
      {"hidden", {[](RunConfig& c, const std::string& v) { c.hidden = to_sizes("hidden", v); },
                  [](const RunConfig& c) { return join_sizes(c.hidden); }}},
      {"model_hidden", {[](RunConfig& c, const std::string& v) { c.model_hidden = to_sizes("model_hidden", v); },
                        [](const RunConfig& c) { return join_sizes(c.model_hidden); }}},
      {"delta_over_full_expert",
       {[](RunConfig& c, const std::string& v) { c.delta_over_full_expert = to_bool("delta_over_full_expert", v); },
        [](const RunConfig& c) { return std::string(c.delta_over_full_expert ? "true" : "false"); }}},
      SACEO_INT(horizon, int),
      SACEO_INT(seed, std::uint64_t),
      SACEO_INT(steps, std::int64_t),
      SACEO_DOUBLE(gamma),
      SACEO_DOUBLE(tau),
      SACEO_DOUBLE(beta),
      SACEO_DOUBLE(epsilon),
      SACEO_INT(replay_capacity, Index),
      SACEO_INT(model_capacity, Index),
      SACEO_INT(env_batch, Index),
      SACEO_INT(expert_batch, Index),
      SACEO_INT(model_batch, Index),
      SACEO_INT(model_epochs, int),
      SACEO_DOUBLE(policy_lr),
      SACEO_DOUBLE(critic_lr),
      SACEO_OPT_DOUBLE(temperature_lr),
      SACEO_DOUBLE(model_lr),
      SACEO_DOUBLE(initial_alpha),
      SACEO_DOUBLE(initial_std),
      SACEO_OPT_DOUBLE(target_entropy),
      SACEO_INT(warmup_steps, int),
      SACEO_INT(eval_interval, int),
      SACEO_INT(eval_episodes, int),
      SACEO_INT(expert_trajectories, int),
  };
  return table;
}

#undef SACEO_DOUBLE
#undef SACEO_INT
#undef SACEO_OPT_DOUBLE

}  // namespace detail

inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::fields();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(cfg, detail::trim(value));
}

// Applies `key = value` lines; '#' starts a comment.
inline void apply_config_text(RunConfig& cfg, std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value'");
    std::string value = detail::trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), value);
    } catch (const ConfigError& e) {
      throw ParseError(lineno, e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  apply_config_text(cfg, in);
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  apply_config_text(cfg, in);
  return cfg;
}

// Every key, sorted, `key = value` per line.
inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, field] : detail::fields()) out += key + " = " + field.get(cfg) + "\n";
  return out;
}

// Fills in values derived from other settings.
inline RunConfig resolve(RunConfig cfg) {
  if (!cfg.temperature_lr) cfg.temperature_lr = cfg.critic_lr;
  if (!cfg.target_entropy) cfg.target_entropy = -static_cast<double>(make_env(cfg.env, std::max(cfg.horizon, 1))->spec().action_dim);
  return cfg;
}

struct Validation {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;

  bool ok() const { return errors.empty(); }
};

inline Validation validate(const RunConfig& c, bool require_expert_path = true) {
  Validation v;
  auto need = [&](bool cond, const std::string& msg) {
    if (!cond) v.errors.push_back(msg);
  };
  if (c.env != "pendulum-swingup" && c.env != "pointmass-reach") v.errors.push_back("unknown env '" + c.env + "'");
  need(c.horizon > 0, "horizon must be positive");
  need(c.steps >= 0, "steps must be non-negative");
  need(!c.hidden.empty(), "hidden must list at least one layer size");
  need(!c.model_hidden.empty(), "model_hidden must list at least one layer size");
  for (Index h : c.hidden) need(h > 0, "hidden sizes must be positive");
  for (Index h : c.model_hidden) need(h > 0, "model_hidden sizes must be positive");
  need(c.gamma >= 0.0 && c.gamma < 1.0, "gamma must lie in [0, 1)");
  need(c.tau >= 0.0 && c.tau <= 1.0, "tau must lie in [0, 1]");
  need(c.replay_capacity > 0, "replay_capacity must be positive");
  need(c.model_capacity > 0, "model_capacity must be positive");
  need(c.model_capacity < c.replay_capacity, "model_capacity must be smaller than replay_capacity");
  need(c.env_batch > 0 && c.expert_batch > 0 && c.model_batch > 0, "batch sizes must be positive");
  need(c.model_epochs >= 0, "model_epochs must be non-negative");
  need(c.policy_lr > 0 && c.critic_lr > 0 && c.model_lr > 0, "learning rates must be positive");
  need(!c.temperature_lr || *c.temperature_lr > 0, "temperature_lr must be positive");
  need(c.initial_alpha > 0, "initial_alpha must be positive");
  need(c.initial_std > 0, "initial_std must be positive");
  need(c.warmup_steps >= 0, "warmup_steps must be non-negative");
  need(c.eval_interval > 0, "eval_interval must be positive");
  need(c.eval_episodes > 0, "eval_episodes must be positive");
  need(c.expert_trajectories > 0, "expert_trajectories must be positive");
  need(c.beta >= 0.0, "beta must be non-negative");

  switch (c.algorithm) {
    case Algorithm::kSacEo:
      need(c.beta != 0.0, "sac-eo with beta = 0 is modified-BCO; select algo = bco explicitly");
      break;
    case Algorithm::kBco:
      need(c.beta == 0.0, "bco requires beta = 0");
      break;
    case Algorithm::kSacEoFixed:
      need(c.epsilon >= 0.0 && c.epsilon <= 1.0, "fixed epsilon must lie in [0, 1]");
      break;
    case Algorithm::kSac:
      if (!c.expert_path.empty()) v.warnings.push_back("algo sac ignores expert_path");
      break;
  }
  if (require_expert_path && uses_expert(c.algorithm) && c.expert_path.empty())
    v.errors.push_back(to_string(c.algorithm) + " needs expert_path");
  return v;
}

inline void validate_or_throw(const RunConfig& c, bool require_expert_path = true) {
  const Validation v = validate(c, require_expert_path);
  if (v.ok()) return;
  std::string msg = "invalid configuration:";
  for (const auto& e : v.errors) msg += "\n  - " + e;
  throw ConfigError(msg);
}

}  // namespace saceo
