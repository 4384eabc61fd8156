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

// The training loop. Each outer iteration spans one episode of `horizon`
// steps: refit the dynamics models, draw the expert mini-batch, measure the
// models' disagreement on it and set epsilon; then every environment
// step stores the transition and performs one critic, policy, temperature
// and target update.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "saceo/agent.hpp"
#include "saceo/buffers.hpp"
#include "saceo/config.hpp"
#include "saceo/dynamics.hpp"
#include "saceo/envs.hpp"

namespace saceo {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

struct MetricsRow {
  std::int64_t step = 0;
  double episode_return_mean = kMissing;
  double episode_return_std = kMissing;
  double epsilon = kMissing;
  double delta_max = kMissing;
  double alpha = kMissing;
  double j_q = kMissing;
  double j_pi = kMissing;
  double mse_expert = kMissing;
  double model1_nll = kMissing;
  double model2_nll = kMissing;
};

inline constexpr const char* kMetricsHeader =
    "step,episode_return_mean,episode_return_std,epsilon,delta_max,alpha,j_q,j_pi,mse_expert,model1_nll,model2_nll";

inline std::string format_cell(double v) { return std::isnan(v) ? std::string() : format_double(v); }

inline std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step);
    for (double v : {r.episode_return_mean, r.episode_return_std, r.epsilon, r.delta_max, r.alpha, r.j_q, r.j_pi,
                     r.mse_expert, r.model1_nll, r.model2_nll})
      out += "," + format_cell(v);
    out += "\n";
  }
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line) || line != kMetricsHeader) throw ParseError(1, "unexpected metrics header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      double v = kMissing;
      if (!cell.empty() && !parse_double(cell, v)) throw ParseError(lineno, "non-numeric cell '" + cell + "'");
      cells.push_back(v);
    }
    if (line.back() == ',') cells.push_back(kMissing);
    if (cells.size() != 11) throw ParseError(lineno, "expected 11 columns");
    MetricsRow r;
    r.step = static_cast<std::int64_t>(cells[0]);
    double* fields[] = {&r.episode_return_mean, &r.episode_return_std, &r.epsilon, &r.delta_max, &r.alpha,
                        &r.j_q, &r.j_pi, &r.mse_expert, &r.model1_nll, &r.model2_nll};
    for (std::size_t i = 0; i < 10; ++i) *fields[i] = cells[i + 1];
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file " + path.string());
  return parse_metrics_csv(in);
}

// What the policy update weighted, reported once per policy step.
struct PolicyStepInfo {
  std::int64_t step = 0;
  double epsilon = 0.0;
  double rl_weight = 1.0;
  double expert_weight = 0.0;
  double loss = 0.0;
};

struct TrainerHooks {
  std::function<void(const PolicyStepInfo&)> on_policy_step;
};

namespace ckpt {

inline constexpr std::string_view kMagic = "SACEO-CKPT v1\n";

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  void i64(std::int64_t v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void f64(double v) { out_.write(reinterpret_cast<const char*>(&v), sizeof v); }
  void str(const std::string& s) {
    i64(static_cast<std::int64_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void mat(const Matrix& m) {
    i64(m.rows());
    i64(m.cols());
    out_.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(sizeof(double) * m.size()));
  }
  void vec(const Vector& v) { mat(v); }
  void rng(const Rng& r) {
    std::ostringstream os;
    os << r;
    str(os.str());
  }
  void adam(const AdamState& a) {
    vec(a.m);
    vec(a.v);
    i64(a.step);
    for (double x : {a.learning_rate, a.beta1, a.beta2, a.epsilon}) f64(x);
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  std::int64_t i64() {
    std::int64_t v = 0;
    read(&v, sizeof v);
    return v;
  }
  double f64() {
    double v = 0;
    read(&v, sizeof v);
    return v;
  }
  std::string str() {
    const auto n = i64();
    if (n < 0 || n > (1LL << 32)) throw std::runtime_error("checkpoint: corrupt string length");
    std::string s(static_cast<std::size_t>(n), '\0');
    read(s.data(), s.size());
    return s;
  }
  Matrix mat() {
    const auto r = i64();
    const auto c = i64();
    if (r < 0 || c < 0) throw std::runtime_error("checkpoint: corrupt matrix shape");
    Matrix m(r, c);
    read(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()));
    return m;
  }
  Vector vec() {
    Matrix m = mat();
    if (m.cols() != 1 && m.size() != 0) throw std::runtime_error("checkpoint: expected a vector");
    return Eigen::Map<Vector>(m.data(), m.size());
  }
  Rng rng() {
    Rng r;
    std::istringstream is(str());
    is >> r;
    if (!is) throw std::runtime_error("checkpoint: corrupt random state");
    return r;
  }
  AdamState adam() {
    AdamState a;
    a.m = vec();
    a.v = vec();
    a.step = i64();
    a.learning_rate = f64();
    a.beta1 = f64();
    a.beta2 = f64();
    a.epsilon = f64();
    return a;
  }

 private:
  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw std::runtime_error("checkpoint: truncated file");
  }
  std::istream& in_;
};

inline void net_into(Reader& r, MlpNet& net) {
  Vector p = r.vec();
  if (p.size() != net.num_params()) throw std::runtime_error("checkpoint: network size mismatch");
  net.set_params(p);
}

}  // namespace ckpt

class Trainer {
 public:
  // `expert` may be empty only when the algorithm ignores expert data.
  Trainer(RunConfig config, ExpertDataset expert, TrainerHooks hooks = {})
      : cfg_(resolve(std::move(config))),
        expert_(std::move(expert)),
        hooks_(std::move(hooks)),
        env_(make_env(cfg_.env, cfg_.horizon)),
        replay_(env_->spec().state_dim, env_->spec().action_dim, cfg_.replay_capacity) {
    validate_or_throw(cfg_, /*require_expert_path=*/false);
    const EnvSpec& spec = env_->spec();
    Rng init = make_stream(cfg_.seed, kInitStream);
    agent_ = AgentState::create(spec.state_dim, spec.action_dim, cfg_.agent_config(), init);
    env_rng_ = make_stream(cfg_.seed, kEnvStream);
    act_rng_ = make_stream(cfg_.seed, kActStream);
    update_rng_ = make_stream(cfg_.seed, kUpdateStream);
    expert_rng_ = make_stream(cfg_.seed, kExpertStream);
    model_rng_ = make_stream(cfg_.seed, kModelStream);
    eval_rng_ = make_stream(cfg_.seed, kEvalStream);

    if (uses_expert(cfg_.algorithm)) {
      if (expert_.num_pairs() == 0)
        throw ConfigError(to_string(cfg_.algorithm) + " needs an expert dataset with at least one state pair");
      if (expert_.state_dim() != spec.state_dim)
        throw ConfigError("expert dataset dimension " + std::to_string(expert_.state_dim()) +
                          " does not match env state dimension " + std::to_string(spec.state_dim));
      Rng model_init = make_stream(cfg_.seed, kModelInitStream);
      ensemble_.emplace(spec.state_dim, spec.action_dim, cfg_.model_hidden, cfg_.model_lr, model_init);
      model_buffer_.emplace(spec.state_dim, spec.action_dim, cfg_.model_capacity);
      schedule_ = cfg_.algorithm == Algorithm::kSacEoFixed ? EpsilonSchedule::fixed(cfg_.epsilon)
                                                           : EpsilonSchedule::adaptive(cfg_.beta);
    } else {
      expert_ = ExpertDataset();
      schedule_ = EpsilonSchedule::fixed(0.0);
    }
  }

  const RunConfig& config() const { return cfg_; }
  const AgentState& agent() const { return agent_; }
  const std::optional<DynamicsEnsemble>& ensemble() const { return ensemble_; }
  const ReplayBuffer& replay() const { return replay_; }
  const std::vector<MetricsRow>& rows() const { return rows_; }
  std::int64_t steps_done() const { return step_; }
  double epsilon() const { return schedule_.current(); }
  const Environment& env() const { return *env_; }
  void set_hooks(TrainerHooks hooks) { hooks_ = std::move(hooks); }

  // Runs until `cfg.steps` environment steps have been taken.
  void run() { run_until(cfg_.steps); }

  void run_until(std::int64_t total_steps) {
    while (step_ < total_steps) step();
  }

  void step() {
    if (step_ % cfg_.horizon == 0) begin_iteration();
    if (!episode_started_ || env_->done()) {
      obs_ = env_->reset(env_rng_);
      episode_started_ = true;
    }
    const EnvSpec& spec = env_->spec();
    Vector action(spec.action_dim);
    if (step_ < cfg_.warmup_steps) {
      std::uniform_real_distribution<double> uniform(-1.0, 1.0);
      for (Index i = 0; i < action.size(); ++i) action[i] = uniform(act_rng_);
    } else {
      const auto head = SquashedGaussianHead::from_net_output(predict(agent_.policy, obs_));
      action = policy_sample(head, standard_normal(spec.action_dim, 1, act_rng_)).action.col(0);
    }
    const StepResult result = env_->step(action);
    replay_.add(obs_, action, result.reward, result.observation);
    if (model_buffer_) model_buffer_->add(obs_, action, 0.0, result.observation);
    obs_ = result.observation;
    ++step_;

    if (step_ >= cfg_.warmup_steps) update();
    if (step_ % cfg_.eval_interval == 0) record_row();
  }

  void save_checkpoint(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    out.write(ckpt::kMagic.data(), static_cast<std::streamsize>(ckpt::kMagic.size()));
    ckpt::Writer w(out);
    w.str(config_to_text(cfg_));
    // expert data travels with the checkpoint so a resume is self-contained
    w.i64(expert_.state_dim());
    w.i64(static_cast<std::int64_t>(expert_.num_trajectories()));
    for (std::size_t i = 0; i < expert_.num_trajectories(); ++i) w.mat(expert_.trajectory(i));

    w.vec(agent_.policy.params());
    for (std::size_t i = 0; i < 2; ++i) {
      w.vec(agent_.critics[i].params());
      w.vec(agent_.target_critics[i].params());
      w.adam(agent_.critic_optimizers[i]);
    }
    w.adam(agent_.policy_optimizer);
    w.adam(agent_.alpha_optimizer);
    w.f64(agent_.log_alpha);
    w.f64(agent_.target_entropy);

    w.i64(ensemble_ ? 1 : 0);
    if (ensemble_) {
      for (int i = 0; i < 2; ++i) {
        w.vec(ensemble_->model(i).params());
        w.adam(ensemble_->optimizer(i));
      }
      w.vec(ensemble_->input_mean());
      w.vec(ensemble_->input_std());
      w.vec(ensemble_->delta_mean());
      w.vec(ensemble_->delta_std());
    }
    write_ring(w, replay_.storage());
    w.i64(model_buffer_ ? 1 : 0);
    if (model_buffer_) write_ring(w, model_buffer_->storage());

    w.vec(env_->physical_state());
    w.i64(env_->steps_taken());
    w.i64(episode_started_ ? 1 : 0);
    w.vec(obs_);
    for (const Rng* r : {&env_rng_, &act_rng_, &update_rng_, &expert_rng_, &model_rng_, &eval_rng_}) w.rng(*r);

    w.i64(step_);
    w.f64(schedule_.current());
    w.f64(last_delta_);
    w.f64(last_nll_[0]);
    w.f64(last_nll_[1]);
    w.mat(expert_batch_.current);
    w.mat(expert_batch_.next);
    for (double x : {acc_jq_, acc_jpi_, acc_mse_}) w.f64(x);
    w.i64(acc_updates_);
    w.i64(acc_mse_count_);
    w.str(metrics_to_csv(rows_));
    if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
  }

  static Trainer load_checkpoint(const std::filesystem::path& path, TrainerHooks hooks = {}) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    std::string magic(ckpt::kMagic.size(), '\0');
    in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
    if (magic != ckpt::kMagic) throw std::runtime_error(path.string() + " is not a checkpoint");
    ckpt::Reader r(in);
    RunConfig cfg = parse_config_text(r.str());
    ExpertDataset expert(r.i64());
    const auto ntraj = r.i64();
    for (std::int64_t i = 0; i < ntraj; ++i) expert.add_trajectory(r.mat());

    Trainer t(std::move(cfg), std::move(expert), std::move(hooks));
    ckpt::net_into(r, t.agent_.policy);
    for (std::size_t i = 0; i < 2; ++i) {
      ckpt::net_into(r, t.agent_.critics[i]);
      ckpt::net_into(r, t.agent_.target_critics[i]);
      t.agent_.critic_optimizers[i] = r.adam();
    }
    t.agent_.policy_optimizer = r.adam();
    t.agent_.alpha_optimizer = r.adam();
    t.agent_.log_alpha = r.f64();
    t.agent_.target_entropy = r.f64();

    if ((r.i64() != 0) != t.ensemble_.has_value()) throw std::runtime_error("checkpoint: ensemble mismatch");
    if (t.ensemble_) {
      for (int i = 0; i < 2; ++i) {
        ckpt::net_into(r, t.ensemble_->model(i));
        t.ensemble_->optimizer(i) = r.adam();
      }
      Vector mean = r.vec();
      Vector std = r.vec();
      t.ensemble_->set_normalization(std::move(mean), std::move(std));
      Vector dmean = r.vec();
      Vector dstd = r.vec();
      t.ensemble_->set_delta_normalization(std::move(dmean), std::move(dstd));
    }
    t.replay_.restore(read_ring<ReplayBuffer::Storage>(r));
    if ((r.i64() != 0) != t.model_buffer_.has_value()) throw std::runtime_error("checkpoint: model buffer mismatch");
    if (t.model_buffer_) t.model_buffer_->restore(read_ring<ModelBuffer::Storage>(r));

    Vector physical = r.vec();
    const auto env_steps = r.i64();
    t.env_->restore(physical, static_cast<int>(env_steps));
    t.episode_started_ = r.i64() != 0;
    t.obs_ = r.vec();
    for (Rng* g : {&t.env_rng_, &t.act_rng_, &t.update_rng_, &t.expert_rng_, &t.model_rng_, &t.eval_rng_})
      *g = r.rng();

    t.step_ = r.i64();
    t.schedule_.set_current(r.f64());
    t.last_delta_ = r.f64();
    t.last_nll_[0] = r.f64();
    t.last_nll_[1] = r.f64();
    t.expert_batch_.current = r.mat();
    t.expert_batch_.next = r.mat();
    t.acc_jq_ = r.f64();
    t.acc_jpi_ = r.f64();
    t.acc_mse_ = r.f64();
    t.acc_updates_ = r.i64();
    t.acc_mse_count_ = r.i64();
    std::istringstream csv(r.str());
    t.rows_ = parse_metrics_csv(csv);
    return t;
  }

 private:
  enum Stream : std::uint64_t {
    kInitStream = 1,
    kEnvStream,
    kActStream,
    kUpdateStream,
    kExpertStream,
    kModelStream,
    kEvalStream,
    kModelInitStream,
  };

  template <typename Storage>
  static void write_ring(ckpt::Writer& w, const Storage& s) {
    w.mat(s.state);
    w.mat(s.action);
    w.mat(s.next_state);
    w.vec(s.reward);
    w.i64(s.head);
    w.i64(s.size);
  }

  template <typename Storage>
  static Storage read_ring(ckpt::Reader& r) {
    Storage s;
    s.state = r.mat();
    s.action = r.mat();
    s.next_state = r.mat();
    s.reward = r.vec();
    s.head = r.i64();
    s.size = r.i64();
    return s;
  }

  void begin_iteration() {
    if (!ensemble_) return;
    if (model_buffer_->size() >= cfg_.model_batch) {
      const auto report = ensemble_->train_models(*model_buffer_, cfg_.model_epochs, cfg_.model_batch, model_rng_);
      if (cfg_.model_epochs > 0) {
        last_nll_[0] = report.last_nll(0);
        last_nll_[1] = report.last_nll(1);
      }
    }
    expert_batch_ = sample_expert_pairs(expert_, cfg_.expert_batch, expert_rng_);
    const Matrix states = cfg_.delta_over_full_expert ? expert_.all_states() : expert_batch_.current;
    last_delta_ = discrepancy_max(*ensemble_, states, agent_.policy);
    if (!std::isfinite(last_delta_))
      throw NumericalError("step " + std::to_string(step_) + ": non-finite delta_max");
    schedule_.update(last_delta_);
  }

  void check(double value, const char* what) const {
    if (!std::isfinite(value))
      throw NumericalError("step " + std::to_string(step_) + ": non-finite " + what);
  }

  void update() {
    const Index adim = env_->spec().action_dim;
    const TransitionBatch batch = replay_.sample_batch(cfg_.env_batch, update_rng_);
    const double alpha = agent_.alpha();

    const Matrix next_noise = standard_normal(adim, batch.size(), update_rng_);
    const Vector target =
        soft_bellman_target(agent_.target_critics, agent_.policy, alpha, agent_.gamma, batch, next_noise);
    double jq = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      const LossGradient l = critic_loss(agent_.critics[i], batch, target);
      check(l.value, "j_q");
      adam_step(agent_.critics[i], l.grad, agent_.critic_optimizers[i], "critic " + std::to_string(i + 1));
      jq += 0.5 * l.value;
    }

    const Matrix policy_noise = standard_normal(adim, batch.size(), update_rng_);
    std::optional<ExpertHalves> halves;
    if (ensemble_) {
      auto [first, second] = split_pairs(expert_batch_, expert_rng_);
      halves = ExpertHalves{&*ensemble_, std::move(first), std::move(second)};
    }
    const double eps = schedule_.current();
    const AugmentedLoss pl =
        augmented_policy_loss(agent_, batch.state, policy_noise, halves ? &*halves : nullptr, eps);
    check(pl.value, "policy loss");
    if (hooks_.on_policy_step) hooks_.on_policy_step({step_, eps, pl.rl_weight, pl.expert_weight, pl.value});
    adam_step(agent_.policy, pl.grad, agent_.policy_optimizer, "policy");

    const Matrix temp_noise = standard_normal(adim, batch.size(), update_rng_);
    const LossGradient tl =
        temperature_loss(agent_.log_alpha, agent_.policy, batch.state, temp_noise, agent_.target_entropy);
    check(tl.value, "temperature loss");
    Vector log_alpha = Vector::Constant(1, agent_.log_alpha);
    adam_step(log_alpha, tl.grad, agent_.alpha_optimizer, "temperature");
    agent_.log_alpha = log_alpha[0];

    soft_update_targets(agent_);

    acc_jq_ += jq;
    acc_jpi_ += pl.rl_loss;
    ++acc_updates_;
    if (!std::isnan(pl.mse)) {
      check(pl.mse, "expert mse");
      acc_mse_ += pl.mse;
      ++acc_mse_count_;
    }
  }

  void record_row() {
    const EvaluationResult eval = evaluate(agent_.policy, *env_, cfg_.eval_episodes, eval_rng_);
    MetricsRow row;
    row.step = step_;
    row.episode_return_mean = eval.mean;
    row.episode_return_std = eval.std;
    row.epsilon = schedule_.current();
    row.alpha = agent_.alpha();
    if (acc_updates_ > 0) {
      row.j_q = acc_jq_ / static_cast<double>(acc_updates_);
      row.j_pi = acc_jpi_ / static_cast<double>(acc_updates_);
    }
    if (acc_mse_count_ > 0) row.mse_expert = acc_mse_ / static_cast<double>(acc_mse_count_);
    if (ensemble_) {
      row.delta_max = last_delta_;
      row.model1_nll = last_nll_[0];
      row.model2_nll = last_nll_[1];
    }
    rows_.push_back(row);
    acc_jq_ = acc_jpi_ = acc_mse_ = 0.0;
    acc_updates_ = acc_mse_count_ = 0;
  }

  RunConfig cfg_;
  ExpertDataset expert_;
  TrainerHooks hooks_;
  std::unique_ptr<Environment> env_;
  AgentState agent_;
  std::optional<DynamicsEnsemble> ensemble_;
  ReplayBuffer replay_;
  std::optional<ModelBuffer> model_buffer_;
  EpsilonSchedule schedule_;
  ExpertPairs expert_batch_;

  Rng env_rng_, act_rng_, update_rng_, expert_rng_, model_rng_, eval_rng_;
  std::int64_t step_ = 0;
  bool episode_started_ = false;
  Vector obs_;
  double last_delta_ = kMissing;
  double last_nll_[2] = {kMissing, kMissing};
  double acc_jq_ = 0.0, acc_jpi_ = 0.0, acc_mse_ = 0.0;
  std::int64_t acc_updates_ = 0, acc_mse_count_ = 0;
  std::vector<MetricsRow> rows_;
};

}  // namespace saceo
