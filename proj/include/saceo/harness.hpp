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

// Experiment orchestration behind the command-line tool: runs, expert
// training and recording, and cross-run comparison reports.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "saceo/buffers.hpp"
#include "saceo/config.hpp"
#include "saceo/trainer.hpp"

namespace saceo {

namespace fs = std::filesystem;

inline constexpr int kExpertEvalEpisodes = 20;
inline constexpr const char* kResolvedConfigFile = "config.resolved";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kExpertRecordFile = "expert_record.txt";

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_run_directory(const Trainer& trainer, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / kResolvedConfigFile, config_to_text(trainer.config()));
  write_text(dir / kMetricsFile, metrics_to_csv(trainer.rows()));
  trainer.save_checkpoint(dir / kCheckpointFile);
}

struct RunOutcome {
  fs::path dir;
  std::vector<MetricsRow> rows;
  std::vector<std::string> warnings;
};

// Trains the configured algorithm and writes config snapshot, metrics and
// final checkpoint into cfg.out.
inline RunOutcome cmd_run(const RunConfig& cfg, TrainerHooks hooks = {}) {
  const Validation v = validate(cfg);
  if (!v.ok()) validate_or_throw(cfg);
  ExpertDataset expert;
  if (uses_expert(cfg.algorithm)) expert = load_expert_file(cfg.expert_path);
  Trainer trainer(cfg, std::move(expert), std::move(hooks));
  trainer.run();
  write_run_directory(trainer, cfg.out);
  return {cfg.out, trainer.rows(), v.warnings};
}

struct ExpertRecord {
  std::string env;
  double expert_return = 0.0;
  double expert_return_std = 0.0;
  std::int64_t steps = 0;
  std::uint64_t seed = 0;
  int episodes = 0;
};

inline std::string expert_record_to_text(const ExpertRecord& r) {
  return "env = " + r.env + "\nexpert_return = " + format_double(r.expert_return) +
         "\nexpert_return_std = " + format_double(r.expert_return_std) + "\nsteps = " + std::to_string(r.steps) +
         "\nseed = " + std::to_string(r.seed) + "\nepisodes = " + std::to_string(r.episodes) + "\n";
}

inline ExpertRecord read_expert_record(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::map<std::string, std::string> kv;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(lineno, "expected 'key = value' in expert record");
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  if (!kv.count("env") || !kv.count("expert_return")) throw ConfigError(path.string() + ": incomplete expert record");
  ExpertRecord r;
  r.env = kv["env"];
  r.expert_return = detail::to_double("expert_return", kv["expert_return"]);
  if (kv.count("expert_return_std")) r.expert_return_std = detail::to_double("expert_return_std", kv["expert_return_std"]);
  if (kv.count("steps")) r.steps = detail::to_int<std::int64_t>("steps", kv["steps"]);
  if (kv.count("seed")) r.seed = detail::to_int<std::uint64_t>("seed", kv["seed"]);
  if (kv.count("episodes")) r.episodes = detail::to_int<int>("episodes", kv["episodes"]);
  return r;
}

// Pure SAC at the configured budget; the final policy's deterministic return
// becomes the expert baseline.
inline ExpertRecord cmd_train_expert(RunConfig cfg) {
  cfg.algorithm = Algorithm::kSac;
  cfg.expert_path.clear();
  validate_or_throw(cfg);
  Trainer trainer(cfg, ExpertDataset());
  trainer.run();
  write_run_directory(trainer, cfg.out);
  Rng rng = make_stream(cfg.seed, 100);
  const EvaluationResult eval = evaluate(trainer.agent().policy, trainer.env(), kExpertEvalEpisodes, rng);
  ExpertRecord record{cfg.env, eval.mean, eval.std, cfg.steps, cfg.seed, kExpertEvalEpisodes};
  write_text(fs::path(cfg.out) / kExpertRecordFile, expert_record_to_text(record));
  return record;
}

// Rolls out the checkpointed policy deterministically and keeps only the
// visited states: the initial state plus one per step.
inline ExpertDataset record_expert(const MlpNet& policy, const Environment& env, int trajectories,
                                   Index states_per_trajectory, Rng& rng) {
  if (trajectories < 1) throw ConfigError("record-expert: need at least one trajectory");
  if (states_per_trajectory < 2 || states_per_trajectory > env.spec().horizon + 1)
    throw ConfigError("record-expert: states per trajectory must lie in [2, horizon + 1]");
  if (policy.input_dim() != env.spec().state_dim || policy.output_dim() != 2 * env.spec().action_dim)
    throw ConfigError("record-expert: policy dimensions do not match " + env.spec().name);
  ExpertDataset data(env.spec().state_dim);
  auto sim = env.clone();
  for (int k = 0; k < trajectories; ++k) {
    Matrix states(env.spec().state_dim, states_per_trajectory);
    Vector obs = sim->reset(rng);
    states.col(0) = obs;
    for (Index t = 1; t < states_per_trajectory; ++t) {
      obs = sim->step(deterministic_action(policy, obs).col(0)).observation;
      states.col(t) = obs;
    }
    data.add_trajectory(std::move(states));
  }
  return data;
}

struct RecordOptions {
  fs::path checkpoint;
  fs::path output;
  int trajectories = 4;
  std::optional<Index> total_states;  // default: horizon + 1 per trajectory
  std::optional<std::string> env;     // must match the checkpoint when given
  std::uint64_t seed = 0;
};

inline ExpertDataset cmd_record_expert(const RecordOptions& opt) {
  const Trainer source = Trainer::load_checkpoint(opt.checkpoint);
  const Environment& env = source.env();
  if (opt.env && *opt.env != env.spec().name)
    throw ConfigError("record-expert: checkpoint was trained on " + env.spec().name + ", not " + *opt.env);
  Index per = env.spec().horizon + 1;
  if (opt.total_states) {
    if (*opt.total_states % opt.trajectories != 0)
      throw ConfigError("record-expert: states must divide evenly into trajectories");
    per = *opt.total_states / opt.trajectories;
  }
  Rng rng = make_stream(opt.seed, 200);
  ExpertDataset data = record_expert(source.agent().policy, env, opt.trajectories, per, rng);
  if (opt.output.has_parent_path()) fs::create_directories(opt.output.parent_path());
  save_expert_file(data, opt.output);
  return data;
}

// ---------------------------------------------------------------------------
// Reports

struct RunCurve {
  std::string label;
  std::string env;
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

inline RunCurve load_run(const fs::path& dir) {
  const RunConfig cfg = parse_config_text(read_text(dir / kResolvedConfigFile));
  return {cfg.label(), cfg.env, cfg.seed, read_metrics_csv(dir / kMetricsFile)};
}

// First evaluation step whose return reaches `threshold`; nullopt is "NA".
inline std::optional<std::int64_t> steps_to_threshold(const std::vector<std::int64_t>& steps,
                                                      const std::vector<double>& returns, double threshold) {
  for (std::size_t i = 0; i < steps.size() && i < returns.size(); ++i)
    if (returns[i] >= threshold) return steps[i];
  return std::nullopt;
}

inline std::pair<double, double> mean_and_standard_error(const std::vector<double>& v) {
  if (v.empty()) return {kMissing, kMissing};
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()))};
}

inline const std::vector<double> kReportFractions = {0.75, 0.95};

struct LabelSummary {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<std::int64_t> steps;
  std::vector<double> mean;
  std::vector<double> standard_error;
  std::vector<std::optional<std::int64_t>> steps_to;                 // per fraction, on the mean curve
  std::vector<std::vector<std::optional<std::int64_t>>> seed_steps_to;  // [fraction][seed]
  std::vector<double> final_returns;                                 // per seed
  double final_mean = kMissing;
  double final_standard_error = kMissing;
};

struct ExperimentReport {
  std::string env;
  double expert_return = 0.0;
  std::vector<LabelSummary> labels;

  const LabelSummary* find(const std::string& label) const {
    for (const auto& l : labels)
      if (l.label == label) return &l;
    return nullptr;
  }
};

inline ExperimentReport build_report(const std::vector<RunCurve>& runs, double expert_return) {
  if (runs.empty()) throw UsageError("compare: no runs given");
  ExperimentReport report;
  report.env = runs.front().env;
  report.expert_return = expert_return;
  std::vector<std::string> order;
  std::map<std::string, std::vector<const RunCurve*>> groups;
  for (const auto& r : runs) {
    if (r.env != report.env) throw ConfigError("compare: runs mix environments " + report.env + " and " + r.env);
    if (!groups.count(r.label)) order.push_back(r.label);
    groups[r.label].push_back(&r);
  }
  for (const auto& label : order) {
    const auto& group = groups[label];
    LabelSummary s;
    s.label = label;
    // evaluation steps present in every seed of the group
    std::set<std::int64_t> common;
    for (const auto& row : group.front()->rows)
      if (!std::isnan(row.episode_return_mean)) common.insert(row.step);
    for (const RunCurve* run : group) {
      std::set<std::int64_t> mine;
      for (const auto& row : run->rows)
        if (!std::isnan(row.episode_return_mean)) mine.insert(row.step);
      std::set<std::int64_t> keep;
      std::set_intersection(common.begin(), common.end(), mine.begin(), mine.end(), std::inserter(keep, keep.end()));
      common = std::move(keep);
      s.seeds.push_back(run->seed);
    }
    s.steps.assign(common.begin(), common.end());
    std::vector<std::vector<double>> per_seed(group.size());
    for (std::size_t g = 0; g < group.size(); ++g)
      for (const auto& row : group[g]->rows)
        if (common.count(row.step)) per_seed[g].push_back(row.episode_return_mean);
    for (std::size_t i = 0; i < s.steps.size(); ++i) {
      std::vector<double> at;
      for (const auto& seed_curve : per_seed) at.push_back(seed_curve[i]);
      const auto [m, se] = mean_and_standard_error(at);
      s.mean.push_back(m);
      s.standard_error.push_back(se);
    }
    for (double f : kReportFractions) {
      s.steps_to.push_back(steps_to_threshold(s.steps, s.mean, f * expert_return));
      std::vector<std::optional<std::int64_t>> seeds;
      for (const auto& seed_curve : per_seed) seeds.push_back(steps_to_threshold(s.steps, seed_curve, f * expert_return));
      s.seed_steps_to.push_back(std::move(seeds));
    }
    for (const auto& seed_curve : per_seed)
      if (!seed_curve.empty()) s.final_returns.push_back(seed_curve.back());
    std::tie(s.final_mean, s.final_standard_error) = mean_and_standard_error(s.final_returns);
    report.labels.push_back(std::move(s));
  }
  return report;
}

inline std::string steps_cell(const std::optional<std::int64_t>& s) { return s ? std::to_string(*s) : "NA"; }

inline std::string report_to_text(const ExperimentReport& r) {
  std::ostringstream out;
  out << "env: " << r.env << "\nexpert return: " << format_double(r.expert_return) << "\n\n";
  out << "steps to reach a fraction of the expert return (mean curve over seeds)\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %6s %12s %12s %22s\n", "algorithm", "seeds", "75%", "95%", "final return");
  out << buf;
  for (const auto& s : r.labels) {
    const std::string final_cell = format_double(std::round(s.final_mean * 100) / 100) + " +- " +
                                   format_double(std::round(s.final_standard_error * 100) / 100);
    std::snprintf(buf, sizeof buf, "%-28s %6zu %12s %12s %22s\n", s.label.c_str(), s.seeds.size(),
                  steps_cell(s.steps_to[0]).c_str(), steps_cell(s.steps_to[1]).c_str(), final_cell.c_str());
    out << buf;
  }
  out << "\nper-seed steps to 75% / 95%\n";
  for (const auto& s : r.labels) {
    out << s.label << ":";
    for (std::size_t k = 0; k < s.seeds.size(); ++k)
      out << " seed " << s.seeds[k] << " " << steps_cell(s.seed_steps_to[0][k]) << "/"
          << steps_cell(s.seed_steps_to[1][k]);
    out << "\n";
  }
  return out.str();
}

inline std::string curves_to_csv(const ExperimentReport& r) {
  std::string out = "label,step,mean_return,standard_error,seeds\n";
  for (const auto& s : r.labels)
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      out += s.label + "," + std::to_string(s.steps[i]) + "," + format_double(s.mean[i]) + "," +
             format_double(s.standard_error[i]) + "," + std::to_string(s.seeds.size()) + "\n";
  return out;
}

// Mean learning curves with one-standard-error bands and the expert line.
inline std::string report_to_svg(const ExperimentReport& r) {
  constexpr double W = 720, H = 440, L = 70, R = 200, T = 30, B = 50;
  static const char* colors[] = {"#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"};
  std::int64_t max_step = 1;
  double max_y = r.expert_return;
  for (const auto& s : r.labels) {
    if (!s.steps.empty()) max_step = std::max(max_step, s.steps.back());
    for (std::size_t i = 0; i < s.mean.size(); ++i) max_y = std::max(max_y, s.mean[i] + s.standard_error[i]);
  }
  max_y = std::max(1.0, max_y * 1.05);
  auto px = [&](double step) { return L + (W - L - R) * step / static_cast<double>(max_step); };
  auto py = [&](double y) { return H - B - (H - T - B) * std::clamp(y, 0.0, max_y) / max_y; };
  char buf[256];
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"20\" font-size=\"14\" font-family=\"sans-serif\">%s</text>\n", L,
                r.env.c_str());
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>"
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n",
                L, H - B, W - R, H - B, L, T, L, H - B);
  out << buf;
  for (int k = 0; k <= 4; ++k) {
    const double yv = max_y * k / 4.0, sv = static_cast<double>(max_step) * k / 4.0;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\" font-family=\"sans-serif\">%.0f</text>"
                  "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"middle\" font-family=\"sans-serif\">%.0f</text>\n",
                  L - 6, py(yv) + 4, yv, px(sv), H - B + 16, sv);
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"middle\" font-family=\"sans-serif\">environment steps</text>\n",
                (L + W - R) / 2, H - 12);
  out << buf;
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n", L,
                py(r.expert_return), W - R, py(r.expert_return));
  out << buf;
  for (std::size_t li = 0; li < r.labels.size(); ++li) {
    const auto& s = r.labels[li];
    const char* c = colors[li % (sizeof(colors) / sizeof(*colors))];
    if (s.steps.empty()) continue;
    std::ostringstream band, line;
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      band << px(static_cast<double>(s.steps[i])) << "," << py(s.mean[i] + s.standard_error[i]) << " ";
    for (std::size_t i = s.steps.size(); i-- > 0;)
      band << px(static_cast<double>(s.steps[i])) << "," << py(s.mean[i] - s.standard_error[i]) << " ";
    for (std::size_t i = 0; i < s.steps.size(); ++i)
      line << px(static_cast<double>(s.steps[i])) << "," << py(s.mean[i]) << " ";
    out << "<polygon points=\"" << band.str() << "\" fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\"/>\n";
    out << "<polyline points=\"" << line.str() << "\" fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"%s\" font-family=\"sans-serif\">%s</text>\n",
                  W - R + 10, T + 18.0 * static_cast<double>(li + 1), c, s.label.c_str());
    out << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<text x=\"%g\" y=\"%g\" font-size=\"12\" fill=\"#1f77b4\" font-family=\"sans-serif\">expert</text>\n",
                W - R + 10, T + 18.0 * static_cast<double>(r.labels.size() + 1));
  out << buf << "</svg>\n";
  return out.str();
}

inline ExperimentReport cmd_compare(const std::vector<fs::path>& run_dirs, const fs::path& expert_record,
                                    const fs::path& out_dir) {
  if (run_dirs.empty()) throw UsageError("compare: give at least one run directory");
  std::vector<RunCurve> runs;
  for (const auto& d : run_dirs) runs.push_back(load_run(d));
  const ExpertRecord record = read_expert_record(expert_record);
  if (record.env != runs.front().env)
    throw ConfigError("compare: expert record is for " + record.env + ", runs are on " + runs.front().env);
  ExperimentReport report = build_report(runs, record.expert_return);
  fs::create_directories(out_dir);
  write_text(out_dir / "report.txt", report_to_text(report));
  write_text(out_dir / "curves.csv", curves_to_csv(report));
  write_text(out_dir / "learning_curves.svg", report_to_svg(report));
  return report;
}

}  // namespace saceo
