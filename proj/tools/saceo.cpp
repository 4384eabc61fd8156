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

// Command-line front end: train-expert, record-expert, run, compare.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saceo/harness.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> algo, env, expert, out;
  std::optional<double> beta, epsilon;
  std::optional<std::int64_t> steps;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "key = value config file");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--algo", f.algo, "sac | sac-eo | bco | sac-eo-fixed");
  cmd->add_option("--env", f.env, "pendulum-swingup | pointmass-reach");
  cmd->add_option("--beta", f.beta, "discrepancy scale for adaptive epsilon");
  cmd->add_option("--epsilon", f.epsilon, "fixed epsilon (sac-eo-fixed)");
  cmd->add_option("--expert", f.expert, "expert observation file");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--steps", f.steps, "environment step budget");
}

// Built-in defaults, then the config file, then flags.
saceo::RunConfig build_config(const CommonFlags& f) {
  saceo::RunConfig cfg;
  if (!f.config.empty()) saceo::apply_config_file(cfg, f.config);
  if (f.seed) cfg.seed = *f.seed;
  if (f.algo) cfg.algorithm = saceo::parse_algorithm(*f.algo);
  if (f.env) cfg.env = *f.env;
  if (f.beta) cfg.beta = *f.beta;
  if (f.epsilon) cfg.epsilon = *f.epsilon;
  if (f.expert) cfg.expert_path = *f.expert;
  if (f.out) cfg.out = *f.out;
  if (f.steps) cfg.steps = *f.steps;
  return cfg;
}

int fail(const std::string& kind, const std::string& what) {
  std::string one_line = what;
  for (char& c : one_line)
    if (c == '\n') c = ';';
  std::cerr << "error kind=" << kind << " message=\"" << one_line << "\"\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  saceo::tune_allocator();
  CLI::App app{"Soft actor-critic with expert observations"};
  app.require_subcommand(1);

  CommonFlags run_flags, expert_flags;
  auto* run = app.add_subcommand("run", "train one algorithm and write a run directory");
  add_common(run, run_flags);
  auto* train_expert = app.add_subcommand("train-expert", "train a SAC expert and record its performance");
  add_common(train_expert, expert_flags);

  saceo::RecordOptions record;
  std::optional<saceo::Index> record_states;
  std::optional<std::string> record_env;
  std::string record_out;
  auto* rec = app.add_subcommand("record-expert", "roll out an expert checkpoint and save its states");
  rec->add_option("--checkpoint", record.checkpoint, "checkpoint.bin from train-expert")->required();
  rec->add_option("--out", record_out, "expert file to write")->required();
  rec->add_option("--trajectories", record.trajectories, "number of trajectories")->capture_default_str();
  rec->add_option("--states", record_states, "total states (default: horizon + 1 per trajectory)");
  rec->add_option("--env", record_env, "expected environment");
  rec->add_option("--seed", record.seed, "seed for initial states")->capture_default_str();

  std::vector<std::string> compare_dirs;
  std::string compare_record, compare_out = "report";
  auto* cmp = app.add_subcommand("compare", "aggregate run directories into tables and plots");
  cmp->add_option("runs", compare_dirs, "run directories")->required();
  cmp->add_option("--expert-record", compare_record, "expert_record.txt from train-expert")->required();
  cmp->add_option("--out", compare_out, "report directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      const auto cfg = build_config(run_flags);
      for (const auto& w : saceo::validate(cfg).warnings) std::cerr << "warning: " << w << "\n";
      const auto outcome = saceo::cmd_run(cfg);
      std::cout << "wrote " << outcome.dir.string() << " (" << outcome.rows.size() << " evaluation rows)\n";
    } else if (*train_expert) {
      const auto rec_out = saceo::cmd_train_expert(build_config(expert_flags));
      std::cout << "expert return " << rec_out.expert_return << " +- " << rec_out.expert_return_std << "\n";
    } else if (*rec) {
      record.output = record_out;
      record.total_states = record_states;
      record.env = record_env;
      const auto data = saceo::cmd_record_expert(record);
      std::cout << "wrote " << data.num_states() << " states in " << data.num_trajectories() << " trajectories to "
                << record_out << "\n";
    } else if (*cmp) {
      std::vector<saceo::fs::path> dirs(compare_dirs.begin(), compare_dirs.end());
      const auto report = saceo::cmd_compare(dirs, compare_record, compare_out);
      std::cout << saceo::report_to_text(report);
    }
  } catch (const saceo::ParseError& e) {
    return fail("parse", e.what());
  } catch (const saceo::ConfigError& e) {
    return fail("config", e.what());
  } catch (const saceo::UsageError& e) {
    return fail("usage", e.what());
  } catch (const saceo::NumericalError& e) {
    return fail("numerical", e.what());
  } catch (const std::exception& e) {
    return fail("io", e.what());
  }
  return EXIT_SUCCESS;
}
