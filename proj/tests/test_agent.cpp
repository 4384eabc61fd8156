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

#include <cmath>
#include <limits>
#include <numbers>

#include <gtest/gtest.h>

#include "saceo/agent.hpp"
#include "support/assertions.hpp"
#include "support/loss_cases.hpp"

namespace saceo {
namespace {

using testing::finite_difference;
using testing::oracle_forward;
using testing::random_fixture;

MlpNet constant_net(Index in, Index out, double value) {
  MlpNet net(in, {4}, out);
  net.mutable_params().setZero();
  net.bias(1).setConstant(value);
  return net;
}

::testing::AssertionResult ok(const testing::GradientCheck& c) {
  if (c.ok) return ::testing::AssertionSuccess();
  return ::testing::AssertionFailure() << "coordinate " << c.index << ": analytic " << c.analytic << " numeric "
                                       << c.numeric;
}

TEST(LossGradients, Critic) {
  Rng rng(100);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(ok(testing::critic_gradient_case(rng))) << "config " << i;
}

TEST(LossGradients, Policy) {
  Rng rng(101);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(ok(testing::policy_gradient_case(rng))) << "config " << i;
}

TEST(LossGradients, Temperature) {
  Rng rng(102);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(ok(testing::temperature_gradient_case(rng))) << "config " << i;
}

TEST(LossGradients, ExpertMse) {
  Rng rng(103);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(ok(testing::expert_mse_gradient_case(rng))) << "config " << i;
}

TEST(LossGradients, Augmented) {
  Rng rng(104);
  for (int i = 0; i < 10; ++i) EXPECT_TRUE(ok(testing::augmented_gradient_case(rng))) << "config " << i;
}

TEST(AgentState, CreateSetsInvariants) {
  Rng rng(1);
  AgentConfig cfg;
  cfg.hidden = {16, 16};
  const AgentState a = AgentState::create(3, 2, cfg, rng);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.critics[i].params(), a.target_critics[i].params());
    EXPECT_TRUE(a.critics[i].same_shape(a.target_critics[i]));
  }
  EXPECT_TRUE(a.critics[0].same_shape(a.critics[1]));
  EXPECT_NEAR(a.alpha(), 0.1, 1e-15);
  EXPECT_EQ(a.target_entropy, -2.0);
  EXPECT_TRUE(a.policy.bias(2).tail(2).isConstant(std::log(0.3)));
  cfg.initial_alpha = 0.0;
  EXPECT_THROW(AgentState::create(3, 2, cfg, rng), ConfigError);
}

TEST(CriticLoss, ZeroDiscountTargetsReward) {
  Rng rng(2);
  auto f = random_fixture(rng);
  const Vector y = soft_bellman_target(f.agent.target_critics, f.agent.policy, f.agent.alpha(), 0.0, f.batch,
                                       f.next_noise);
  EXPECT_EQ(y, f.batch.reward);
}

TEST(CriticLoss, HandSetValueAndReward) {
  TransitionBatch b{Matrix::Zero(2, 1), Matrix::Zero(1, 1), Vector::Ones(1), Matrix::Zero(2, 1)};
  const MlpNet q = constant_net(3, 1, 2.0);
  EXPECT_DOUBLE_EQ(critic_loss(q, b, b.reward).value, 0.5);
}

TEST(CriticLoss, PinnedToTargetIsZero) {
  Rng rng(3);
  auto f = random_fixture(rng);
  const MlpNet q = constant_net(5, 1, 0.75);
  f.batch.reward.setConstant(0.75);
  const Vector y = soft_bellman_target(f.agent.target_critics, f.agent.policy, f.agent.alpha(), 0.0, f.batch,
                                       f.next_noise);
  const LossGradient l = critic_loss(q, f.batch, y);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_TRUE(l.grad.isZero(0));
}

// Straight-line scalar version of the soft Bellman residual.
double critic_loss_oracle(const testing::LossFixture& f) {
  const auto& b = f.batch;
  const Index adim = b.action.rows();
  double total = 0.0;
  for (Index j = 0; j < b.size(); ++j) {
    const Vector out = oracle_forward(f.agent.policy, Vector(b.next_state.col(j)));
    Vector sa(b.state.rows() + adim);
    sa.head(b.state.rows()) = b.next_state.col(j);
    double log_prob = 0.0;
    for (Index k = 0; k < adim; ++k) {
      const double ls = std::clamp(out[adim + k], -20.0, 2.0);
      const double n = f.next_noise(k, j);
      const double a = std::tanh(out[k] + std::exp(ls) * n);
      sa[b.state.rows() + k] = a;
      log_prob += -0.5 * n * n - ls - 0.5 * std::log(2 * std::numbers::pi) - std::log(1 - a * a + 1e-6);
    }
    const double q1 = oracle_forward(f.agent.target_critics[0], sa)[0];
    const double q2 = oracle_forward(f.agent.target_critics[1], sa)[0];
    const double y = b.reward[j] + f.agent.gamma * (std::min(q1, q2) - f.agent.alpha() * log_prob);
    Vector cur(sa.size());
    cur << b.state.col(j), b.action.col(j);
    const double q = oracle_forward(f.agent.critics[0], cur)[0];
    total += 0.5 * (q - y) * (q - y);
  }
  return total / static_cast<double>(b.size());
}

TEST(CriticLoss, MatchesScalarOracle) {
  Rng rng(4);
  for (int i = 0; i < 5; ++i) {
    const auto f = random_fixture(rng);
    const double got = critic_loss(f.agent.critics[0], f.agent.target_critics, f.agent.policy, f.agent.alpha(),
                                   f.agent.gamma, f.batch, f.next_noise)
                           .value;
    const double want = critic_loss_oracle(f);
    EXPECT_NEAR(got, want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(CriticLoss, TargetIsHeldConstant) {
  Rng rng(5);
  auto f = random_fixture(rng);
  auto value = [&](const AgentState& a) {
    return critic_loss(a.critics[0], a.target_critics, a.policy, a.alpha(), a.gamma, f.batch, f.next_noise);
  };
  const LossGradient base = value(f.agent);
  // the gradient only spans the online critic
  EXPECT_EQ(base.grad.size(), f.agent.critics[0].num_params());
  AgentState moved = f.agent;
  moved.target_critics[0].mutable_params().array() += 0.1;
  moved.target_critics[1].mutable_params().array() += 0.1;
  EXPECT_NE(value(moved).value, base.value);
}

TEST(PolicyLoss, ZeroTemperatureConstantCritic) {
  Rng rng(6);
  const auto f = random_fixture(rng);
  const std::array<MlpNet, 2> critics{constant_net(5, 1, 1.7), constant_net(5, 1, 1.7)};
  const PolicyLoss l = policy_rl_loss(f.agent.policy, critics, 0.0, f.states, f.noise);
  EXPECT_DOUBLE_EQ(l.value, -1.7);
  EXPECT_TRUE(l.grad.isZero(0));
}

TEST(PolicyLoss, LinearInTemperature) {
  Rng rng(7);
  const auto f = random_fixture(rng);
  const auto at = [&](double alpha) {
    return policy_rl_loss(f.agent.policy, f.agent.critics, alpha, f.states, f.noise, false);
  };
  const PolicyLoss l0 = at(0.0), l1 = at(0.3), l2 = at(0.6);
  EXPECT_NEAR(l2.value - l1.value, l1.value - l0.value, 1e-12);
  EXPECT_NEAR(l1.value - l0.value, 0.3 * l1.log_prob.mean(), 1e-12);
  if (l1.log_prob.mean() < 0) EXPECT_LT(l2.value, l1.value);
  EXPECT_THROW(policy_rl_loss(f.agent.policy, f.agent.critics, 0.1, Matrix(3, 0), Matrix(2, 0)), UsageError);
}

// Both models forced to predict s + offset.
void rig_models(DynamicsEnsemble& e, const Vector& offset) {
  for (int i = 0; i < 2; ++i) {
    e.model(i).mutable_params().setZero();
    e.model(i).bias(e.model(i).layers().size() - 1).head(offset.size()) = offset;
  }
}

TEST(ExpertMse, RiggedModelGivesZero) {
  Rng rng(8);
  auto f = random_fixture(rng);
  f.ensemble.set_delta_normalization(Vector::Zero(3), Vector::Ones(3));
  const Vector offset{{0.2, -0.1, 0.4}};
  rig_models(f.ensemble, offset);
  ExpertPairs p{f.first.current, f.first.current.colwise() + offset};
  EXPECT_NEAR(expert_mse_loss(f.ensemble, 0, f.agent.policy, p).value, 0.0, 1e-30);
}

TEST(ExpertMse, HandSetDeviation) {
  Rng rng(9);
  auto f = random_fixture(rng);
  f.ensemble.set_delta_normalization(Vector::Zero(3), Vector::Ones(3));
  rig_models(f.ensemble, Vector{{1.0, 2.0, 2.0}});
  const Matrix s = f.first.current.leftCols(1);
  EXPECT_DOUBLE_EQ(expert_mse_loss(f.ensemble, 1, f.agent.policy, {s, s}).value, 9.0);
  EXPECT_THROW(expert_mse_loss(f.ensemble, 0, f.agent.policy, {Matrix(3, 0), Matrix(3, 0)}), UsageError);
}

TEST(AugmentedLoss, ZeroEpsilonIsThePolicyLoss) {
  Rng rng(10);
  const auto f = random_fixture(rng);
  const ExpertHalves h = f.halves();
  const PolicyLoss rl = policy_rl_loss(f.agent.policy, f.agent.critics, f.agent.alpha(), f.states, f.noise);
  for (const ExpertHalves* e : {&h, static_cast<const ExpertHalves*>(nullptr)}) {
    const AugmentedLoss l = augmented_policy_loss(f.agent, f.states, f.noise, e, 0.0);
    EXPECT_EQ(l.value, rl.value);
    EXPECT_EQ(l.grad, rl.grad);
    EXPECT_EQ(l.expert_weight, 0.0);
  }
}

TEST(AugmentedLoss, UnitEpsilonIsTheAveragedMse) {
  Rng rng(11);
  const auto f = random_fixture(rng);
  const ExpertHalves h = f.halves();
  const LossGradient m1 = expert_mse_loss(f.ensemble, 0, f.agent.policy, f.first);
  const LossGradient m2 = expert_mse_loss(f.ensemble, 1, f.agent.policy, f.second);
  const AugmentedLoss l = augmented_policy_loss(f.agent, f.states, f.noise, &h, 1.0);
  EXPECT_EQ(l.rl_weight, 0.0);
  EXPECT_DOUBLE_EQ(l.value, 0.5 * (m1.value + m2.value));
  EXPECT_LT((l.grad - 0.5 * (m1.grad + m2.grad)).cwiseAbs().maxCoeff(), 1e-15);
  // critics no longer matter
  AgentState other = f.agent;
  other.critics[0].mutable_params().array() += 1.0;
  EXPECT_EQ(augmented_policy_loss(other, f.states, f.noise, &h, 1.0).grad, l.grad);
}

TEST(AugmentedLoss, HalfEpsilonHandPinned) {
  Rng rng(12);
  auto f = random_fixture(rng);
  f.agent.log_alpha = -std::numeric_limits<double>::infinity();
  f.agent.critics = {constant_net(5, 1, -4.0), constant_net(5, 1, -4.0)};
  f.ensemble.set_delta_normalization(Vector::Zero(3), Vector::Ones(3));
  rig_models(f.ensemble, Vector{{1.0, 1.0, 0.0}});
  f.first.next = f.first.current;
  f.second.next = f.second.current;
  const ExpertHalves h = f.halves();
  const AugmentedLoss l = augmented_policy_loss(f.agent, f.states, f.noise, &h, 0.5);
  EXPECT_DOUBLE_EQ(l.rl_loss, 4.0);
  EXPECT_DOUBLE_EQ(l.mse, 2.0);
  EXPECT_DOUBLE_EQ(l.value, 3.0);
}

TEST(AugmentedLoss, LinearInEpsilon) {
  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto f = random_fixture(rng);
    const ExpertHalves h = f.halves();
    const auto at = [&](double e) { return augmented_policy_loss(f.agent, f.states, f.noise, &h, e); };
    const AugmentedLoss a = at(0.0), b = at(1.0), c = at(0.3);
    EXPECT_NEAR(c.value, 0.7 * a.value + 0.3 * b.value, 1e-10);
    EXPECT_LT((c.grad - (0.7 * a.grad + 0.3 * b.grad)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(AugmentedLoss, RejectsBadEpsilon) {
  Rng rng(14);
  const auto f = random_fixture(rng);
  const ExpertHalves h = f.halves();
  EXPECT_THROW(augmented_policy_loss(f.agent, f.states, f.noise, &h, 1.5), UsageError);
  EXPECT_THROW(augmented_policy_loss(f.agent, f.states, f.noise, &h, -0.1), UsageError);
  EXPECT_THROW(augmented_policy_loss(f.agent, f.states, f.noise, nullptr, 0.2), UsageError);
}

TEST(TemperatureLoss, FixedPoint) {
  const LossGradient l = temperature_loss(std::log(0.2), Vector::Constant(4, 2.0), -2.0);
  EXPECT_EQ(l.value, 0.0);
  EXPECT_EQ(l.grad[0], 0.0);
}

TEST(TemperatureLoss, HighEntropyPushesAlphaDown) {
  // log pi = -5 < -H = 2: gradient descent on log alpha lowers it
  const LossGradient l = temperature_loss(0.0, Vector::Constant(3, -5.0), -2.0);
  EXPECT_GT(l.grad[0], 0.0);
  const LossGradient low = temperature_loss(0.0, Vector::Constant(3, 5.0), -2.0);
  EXPECT_LT(low.grad[0], 0.0);
}

TEST(TemperatureLoss, MatchesScalarOracle) {
  Rng rng(15);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 10; ++trial) {
    Vector lp(7);
    for (Index k = 0; k < 7; ++k) lp[k] = 3 * n(rng);
    const double la = n(rng), h = -1 - std::abs(n(rng));
    double want = 0;
    for (Index k = 0; k < 7; ++k) want += -std::exp(la) * (lp[k] + h);
    want /= 7;
    EXPECT_NEAR(temperature_loss(la, lp, h).value, want, 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST(TemperatureLoss, AlphaStaysPositive) {
  double log_alpha = 0.0;
  AdamState opt(1, 0.5);
  for (int i = 0; i < 2000; ++i) {
    Vector p = Vector::Constant(1, log_alpha);
    adam_step(p, temperature_loss(log_alpha, Vector::Constant(2, -50.0), -1.0).grad, opt);
    log_alpha = p[0];
  }
  EXPECT_GT(std::exp(log_alpha), 0.0);
}

TEST(SoftUpdate, Endpoints) {
  Rng rng(16);
  MlpNet online = testing::random_net(3, {4}, 1, rng), target = testing::random_net(3, {4}, 1, rng);
  const Vector t0 = target.params();
  soft_update(target, online, 0.0);
  EXPECT_EQ(target.params(), t0);
  soft_update(target, online, 1.0);
  EXPECT_EQ(target.params(), online.params());
}

TEST(SoftUpdate, ScalarProbe) {
  MlpNet online(1, {}, 1), target(1, {}, 1);
  online.mutable_params().setConstant(2.0);
  target.mutable_params().setZero();
  soft_update(target, online, 0.5);
  EXPECT_TRUE(target.params().isConstant(1.0, 0));
}

TEST(SoftUpdate, RepeatedApplicationClosedForm) {
  MlpNet online(1, {}, 1), target(1, {}, 1);
  online.mutable_params() << 2.0, -1.0;
  target.mutable_params() << 0.5, 3.0;
  const Vector p = online.params(), q = target.params();
  const double tau = 5e-3;
  for (int n = 1; n <= 500; ++n) {
    soft_update(target, online, tau);
    const Vector want = p + std::pow(1 - tau, n) * (q - p);
    ASSERT_LT((target.params() - want).cwiseAbs().maxCoeff(), 1e-12) << "n=" << n;
  }
}

TEST(SoftUpdate, TargetsOfAgent) {
  Rng rng(17);
  AgentConfig cfg;
  cfg.hidden = {4};
  cfg.tau = 1.0;
  AgentState a = AgentState::create(2, 1, cfg, rng);
  a.critics[1].mutable_params().array() += 1.0;
  soft_update_targets(a);
  EXPECT_EQ(a.target_critics[1].params(), a.critics[1].params());
}

TEST(EpsilonSchedule, Examples) {
  auto bco = EpsilonSchedule::adaptive(0.0);
  for (double d : {0.0, 0.5, 1e9}) EXPECT_EQ(bco.update(d), 1.0);
  auto eo = EpsilonSchedule::adaptive(100.0);
  EXPECT_DOUBLE_EQ(eo.update(0.01), 0.5);
  EXPECT_EQ(eo.update(0.0), 1.0);
  EXPECT_THROW(eo.update(-1e-9), UsageError);
  EXPECT_THROW(EpsilonSchedule::adaptive(-1.0), ConfigError);
}

TEST(EpsilonSchedule, FixedIgnoresDiscrepancy) {
  auto s = EpsilonSchedule::fixed(0.1);
  EXPECT_EQ(s.update(123.0), 0.1);
  EXPECT_EQ(s.current(), 0.1);
  EXPECT_THROW(EpsilonSchedule::fixed(1.1), ConfigError);
  EXPECT_THROW(EpsilonSchedule::fixed(-0.1), ConfigError);
}

TEST(EpsilonSchedule, RangeAndMonotonicity) {
  for (double beta : {0.5, 50.0, 100.0, 200.0}) {
    auto s = EpsilonSchedule::adaptive(beta);
    double prev = 2.0;
    for (double d = 0.0; d < 10.0; d += 0.013) {
      const double e = s.update(d);
      EXPECT_GT(e, 0.0);
      EXPECT_LE(e, 1.0);
      EXPECT_LT(e, prev);
      EXPECT_EQ(e, 1.0 / (1.0 + beta * d));
      prev = e;
    }
  }
}

class ConstantRewardEnv final : public Environment {
 public:
  ConstantRewardEnv() : Environment({"constant", 2, 1, 200}) {}
  Vector observation() const override { return state_; }
  Vector physical_state() const override { return state_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<ConstantRewardEnv>(*this); }

 protected:
  void sample_initial_state(Rng& rng) override { state_ = standard_normal(2, 1, rng); }
  double integrate(const Vector& action) override {
    state_ += 0.1 * Vector::Constant(2, action[0]);
    return 0.5;
  }
  void set_physical_state(const Vector& p) override { state_ = p; }

 private:
  Vector state_ = Vector::Zero(2);
};

TEST(Evaluate, ConstantRewardGivesHalfHorizon) {
  Rng rng(18);
  const MlpNet policy = testing::random_net(2, {4}, 2, rng);
  const EvaluationResult r = evaluate(policy, ConstantRewardEnv(), 3, rng);
  EXPECT_DOUBLE_EQ(r.mean, 100.0);
  EXPECT_EQ(r.std, 0.0);
  EXPECT_EQ(r.returns.size(), 3u);
  EXPECT_THROW(evaluate(policy, ConstantRewardEnv(), 0, rng), UsageError);
}

TEST(Evaluate, ReturnWithinHorizonAndRepeatable) {
  Rng init(19);
  const MlpNet policy = testing::random_net(3, {8}, 2, init);
  PendulumSwingup env;
  Rng a(20), b(20);
  const EvaluationResult ra = evaluate(policy, env, 4, a), rb = evaluate(policy, env, 4, b);
  EXPECT_EQ(ra.returns, rb.returns);
  for (double x : ra.returns) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 200.0);
  }
}

}  // namespace
}  // namespace saceo
