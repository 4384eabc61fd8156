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

// Soft actor-critic losses and the expert-observation extension.
//
// Sampling noise is passed in explicitly so every loss is a deterministic
// function of its inputs; the trainer owns the random streams.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "saceo/buffers.hpp"
#include "saceo/distributions.hpp"
#include "saceo/dynamics.hpp"
#include "saceo/envs.hpp"
#include "saceo/nncore.hpp"

namespace saceo {

struct AgentConfig {
  std::vector<Index> hidden{256, 256};
  double gamma = 0.99;
  double tau = 5e-3;
  double policy_lr = 1e-4;
  double critic_lr = 3e-4;
  double temperature_lr = 3e-4;
  double initial_alpha = 0.1;
  double initial_std = 0.3;
  std::optional<double> target_entropy;  // defaults to -action_dim
};

struct AgentState {
  MlpNet policy;  // state -> (mean, raw log-std)
  std::array<MlpNet, 2> critics;
  std::array<MlpNet, 2> target_critics;
  double log_alpha = 0.0;
  AdamState policy_optimizer;
  std::array<AdamState, 2> critic_optimizers;
  AdamState alpha_optimizer;
  double target_entropy = 0.0;
  double gamma = 0.99;
  double tau = 5e-3;

  double alpha() const { return std::exp(log_alpha); }
  Index state_dim() const { return policy.input_dim(); }
  Index action_dim() const { return policy.output_dim() / 2; }

  static AgentState create(Index state_dim, Index action_dim, const AgentConfig& cfg, Rng& rng) {
    if (cfg.initial_alpha <= 0) throw ConfigError("initial temperature must be positive");
    if (cfg.initial_std <= 0) throw ConfigError("initial policy std must be positive");
    AgentState a;
    a.policy = MlpNet(state_dim, cfg.hidden, 2 * action_dim);
    initialize(a.policy, rng, 0.1);
    const std::size_t last = a.policy.layers().size() - 1;
    a.policy.bias(last).tail(action_dim).setConstant(std::log(cfg.initial_std));
    for (std::size_t i = 0; i < 2; ++i) {
      a.critics[i] = MlpNet(state_dim + action_dim, cfg.hidden, 1);
      initialize(a.critics[i], rng);
      a.target_critics[i] = a.critics[i];
      a.critic_optimizers[i] = AdamState(a.critics[i].num_params(), cfg.critic_lr);
    }
    a.policy_optimizer = AdamState(a.policy.num_params(), cfg.policy_lr);
    a.log_alpha = std::log(cfg.initial_alpha);
    a.alpha_optimizer = AdamState(1, cfg.temperature_lr);
    a.target_entropy = cfg.target_entropy.value_or(-static_cast<double>(action_dim));
    a.gamma = cfg.gamma;
    a.tau = cfg.tau;
    return a;
  }
};

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

struct LossGradient {
  double value = 0.0;
  Vector grad;
};

// r + gamma * (min_i Qbar_i(s', a') - alpha * log pi(a'|s')), a' ~ pi(.|s').
// A constant: nothing is differentiated through it.
inline Vector soft_bellman_target(const std::array<MlpNet, 2>& target_critics, const MlpNet& policy,
                                  double alpha, double gamma, const TransitionBatch& batch,
                                  const Matrix& next_noise) {
  const auto head = SquashedGaussianHead::from_net_output(predict(policy, batch.next_state));
  const PolicySample next = policy_sample(head, next_noise);
  const Matrix sa = stack_rows(batch.next_state, next.action);
  const RowVector q = predict(target_critics[0], sa).cwiseMin(predict(target_critics[1], sa));
  return batch.reward + gamma * (q.transpose() - alpha * next.log_prob);
}

// Mean over the batch of 0.5 * (Q(s, a) - y)^2 and its gradient w.r.t. the
// critic parameters.
inline LossGradient critic_loss(const MlpNet& critic, const TransitionBatch& batch, const Vector& target) {
  if (batch.size() == 0) throw UsageError("critic_loss: empty batch");
  ForwardPass pass = forward(critic, stack_rows(batch.state, batch.action));
  const RowVector diff = pass.output.row(0) - target.transpose();
  const double n = static_cast<double>(batch.size());
  LossGradient out;
  out.value = 0.5 * diff.squaredNorm() / n;
  backward(critic, pass.tape, diff / n);
  out.grad = std::move(pass.tape.param_grad);
  return out;
}

// Soft Bellman residual of one critic with the target built from the twin
// target critics and the current policy.
inline LossGradient critic_loss(const MlpNet& critic, const std::array<MlpNet, 2>& target_critics,
                                const MlpNet& policy, double alpha, double gamma, const TransitionBatch& batch,
                                const Matrix& next_noise) {
  return critic_loss(critic, batch, soft_bellman_target(target_critics, policy, alpha, gamma, batch, next_noise));
}

struct PolicyLoss {
  double value = 0.0;
  Vector grad;  // empty when not requested
  Vector log_prob;
};

// Mean of alpha * log pi(a|s) - min_i Q_i(s, a) with a reparameterised from
// the policy; differentiated w.r.t. the policy only.
inline PolicyLoss policy_rl_loss(const MlpNet& policy, const std::array<MlpNet, 2>& critics, double alpha,
                                 const Matrix& states, const Matrix& noise, bool with_grad = true) {
  if (states.cols() == 0) throw UsageError("policy_rl_loss: empty batch");
  ForwardPass pass = forward(policy, states);
  const auto head = SquashedGaussianHead::from_net_output(pass.output);
  const PolicySample s = policy_sample(head, noise);
  const Matrix sa = stack_rows(states, s.action);
  const double n = static_cast<double>(states.cols());

  PolicyLoss out;
  out.log_prob = s.log_prob;
  if (!with_grad) {
    const RowVector q = predict(critics[0], sa).cwiseMin(predict(critics[1], sa));
    out.value = (alpha * s.log_prob - q.transpose()).mean();
    return out;
  }
  ForwardPass q1 = forward(critics[0], sa);
  ForwardPass q2 = forward(critics[1], sa);
  const RowVector q = q1.output.cwiseMin(q2.output);
  out.value = (alpha * s.log_prob - q.transpose()).mean();

  const Eigen::Array<bool, 1, Eigen::Dynamic> first = q1.output.array() <= q2.output.array();
  const RowVector d1 = first.select(RowVector::Constant(sa.cols(), -1.0 / n), 0.0);
  const RowVector d2 = first.select(RowVector::Zero(sa.cols()), -1.0 / n);
  const Matrix d_in = backward(critics[0], q1.tape, d1) + backward(critics[1], q2.tape, d2);
  const Vector d_logp = Vector::Constant(states.cols(), alpha / n);
  const PolicyHeadGradient g = policy_sample_backward(head, s, d_in.bottomRows(head.action_dim()), d_logp);
  backward(policy, pass.tape, g.stacked());
  out.grad = std::move(pass.tape.param_grad);
  return out;
}

// Mean over expert pairs of ||s_hat_{t+1} - s^e_{t+1}||^2, where s_hat is the
// model's predicted mean at (s^e_t, tanh(policy mean)). Differentiated w.r.t.
// the policy; the model is held fixed.
inline LossGradient expert_mse_loss(const DynamicsEnsemble& ensemble, int model, const MlpNet& policy,
                                    const ExpertPairs& pairs, bool with_grad = true) {
  if (pairs.size() == 0) throw UsageError("expert_mse_loss: no expert pairs");
  const double n = static_cast<double>(pairs.size());
  LossGradient out;
  if (!with_grad) {
    const Matrix pred = ensemble.predict_mean(model, pairs.current, deterministic_action(policy, pairs.current));
    out.value = (pred - pairs.next).colwise().squaredNorm().sum() / n;
    return out;
  }
  ForwardPass pass = forward(policy, pairs.current);
  const auto head = SquashedGaussianHead::from_net_output(pass.output);
  auto mp = ensemble.predict_mean_recorded(model, pairs.current, head.deterministic_action());
  const Matrix diff = mp.mean - pairs.next;
  out.value = diff.colwise().squaredNorm().sum() / n;
  const auto ig = ensemble.mean_backward(model, mp, (2.0 / n) * diff);
  backward(policy, pass.tape, deterministic_action_backward(head, ig.action).stacked());
  out.grad = std::move(pass.tape.param_grad);
  return out;
}

struct ExpertHalves {
  const DynamicsEnsemble* ensemble = nullptr;
  ExpertPairs first;   // scored by model 1
  ExpertPairs second;  // scored by model 2
};

struct AugmentedLoss {
  double value = 0.0;
  double rl_loss = 0.0;
  double mse = std::numeric_limits<double>::quiet_NaN();  // average of the two models
  double rl_weight = 1.0;
  double expert_weight = 0.0;
  Vector grad;
  Vector log_prob;
};

// (1 - eps) * J_pi + eps * (MSE_1 + MSE_2) / 2, model i scored on half i.
// Terms with zero weight contribute no gradient, so eps = 0 reproduces the
// plain policy loss exactly and eps = 1 ignores the critics.
inline AugmentedLoss augmented_policy_loss(const AgentState& agent, const Matrix& states, const Matrix& noise,
                                           const ExpertHalves* expert, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw UsageError("augmented_policy_loss: epsilon outside [0, 1]");
  if (epsilon > 0.0 && (expert == nullptr || expert->ensemble == nullptr))
    throw UsageError("augmented_policy_loss: positive epsilon needs expert pairs and models");
  AugmentedLoss out;
  out.rl_weight = 1.0 - epsilon;
  out.expert_weight = epsilon;

  const PolicyLoss rl = policy_rl_loss(agent.policy, agent.critics, agent.alpha(), states, noise, out.rl_weight != 0.0);
  out.rl_loss = rl.value;
  out.log_prob = rl.log_prob;
  out.grad = Vector::Zero(agent.policy.num_params());
  if (out.rl_weight != 0.0) out.grad = out.rl_weight * rl.grad;

  if (expert != nullptr && expert->ensemble != nullptr) {
    const bool g = epsilon != 0.0;
    const LossGradient m1 = expert_mse_loss(*expert->ensemble, 0, agent.policy, expert->first, g);
    const LossGradient m2 = expert_mse_loss(*expert->ensemble, 1, agent.policy, expert->second, g);
    out.mse = 0.5 * (m1.value + m2.value);
    if (g) out.grad += (0.5 * epsilon) * (m1.grad + m2.grad);
  }
  if (epsilon == 0.0) {
    out.value = rl.value;
  } else if (out.rl_weight == 0.0) {
    out.value = epsilon * out.mse;
  } else {
    out.value = out.rl_weight * rl.value + epsilon * out.mse;
  }
  return out;
}

// J(alpha) = mean(-alpha * (log pi + target_entropy)) with log pi held
// constant. The gradient is w.r.t. log alpha, which equals the value.
inline LossGradient temperature_loss(double log_alpha, const Vector& log_prob, double target_entropy) {
  if (log_prob.size() == 0) throw UsageError("temperature_loss: empty batch");
  const double value = -std::exp(log_alpha) * (log_prob.array() + target_entropy).mean();
  return {value, Vector::Constant(1, value)};
}

inline LossGradient temperature_loss(double log_alpha, const MlpNet& policy, const Matrix& states,
                                     const Matrix& noise, double target_entropy) {
  const auto head = SquashedGaussianHead::from_net_output(predict(policy, states));
  return temperature_loss(log_alpha, policy_sample(head, noise).log_prob, target_entropy);
}

inline void soft_update(MlpNet& target, const MlpNet& online, double tau) {
  if (target.num_params() != online.num_params()) throw ConfigError("soft_update: shape mismatch");
  Vector& t = target.mutable_params();
  t = tau * online.params() + (1.0 - tau) * t;
}

inline void soft_update_targets(AgentState& agent) {
  for (std::size_t i = 0; i < 2; ++i) soft_update(agent.target_critics[i], agent.critics[i], agent.tau);
}

// Weight of the expert term: fixed, or 1 / (1 + beta * delta_max).
class EpsilonSchedule {
 public:
  enum class Mode { kFixed, kAdaptive };

  static EpsilonSchedule fixed(double value) {
    if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("fixed epsilon must lie in [0, 1]");
    EpsilonSchedule s;
    s.mode_ = Mode::kFixed;
    s.current_ = value;
    return s;
  }

  static EpsilonSchedule adaptive(double beta) {
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    EpsilonSchedule s;
    s.mode_ = Mode::kAdaptive;
    s.beta_ = beta;
    s.current_ = 1.0;
    return s;
  }

  Mode mode() const { return mode_; }
  double beta() const { return beta_; }
  double current() const { return current_; }
  void set_current(double value) { current_ = value; }

  double update(double delta_max) {
    if (!(delta_max >= 0.0)) throw UsageError("update_epsilon: delta_max must be non-negative");
    if (mode_ == Mode::kAdaptive) current_ = 1.0 / (1.0 + beta_ * delta_max);
    return current_;
  }

 private:
  Mode mode_ = Mode::kFixed;
  double beta_ = 0.0;
  double current_ = 0.0;
};

struct EvaluationResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> returns;
};

// Undiscounted returns of deterministic-action rollouts on a copy of `env`.
inline EvaluationResult evaluate(const MlpNet& policy, const Environment& env, int episodes, Rng& rng) {
  if (episodes < 1) throw UsageError("evaluate: need at least one episode");
  auto sim = env.clone();
  EvaluationResult r;
  for (int e = 0; e < episodes; ++e) {
    Vector obs = sim->reset(rng);
    double total = 0.0;
    while (!sim->done()) {
      const StepResult step = sim->step(deterministic_action(policy, obs).col(0));
      total += step.reward;
      obs = step.observation;
    }
    r.returns.push_back(total);
  }
  const Eigen::Map<const Vector> v(r.returns.data(), static_cast<Index>(r.returns.size()));
  r.mean = v.mean();
  r.std = std::sqrt((v.array() - r.mean).square().mean());
  return r;
}

}  // namespace saceo
