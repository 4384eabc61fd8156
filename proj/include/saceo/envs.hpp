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

// Fixed-horizon continuous-control tasks with rewards in [0, 1] and actions
// in [-1, 1]^action_dim. No early termination.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <string>

#include "saceo/common.hpp"

namespace saceo {

struct EnvSpec {
  std::string name;
  Index state_dim = 0;
  Index action_dim = 0;
  int horizon = 200;
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
};

class Environment {
 public:
  explicit Environment(EnvSpec spec) : spec_(std::move(spec)) {
    if (spec_.horizon <= 0) throw ConfigError("environment horizon must be positive");
  }
  virtual ~Environment() = default;

  const EnvSpec& spec() const { return spec_; }
  int steps_taken() const { return t_; }
  bool done() const { return t_ >= spec_.horizon; }

  Vector reset(Rng& rng) {
    sample_initial_state(rng);
    t_ = 0;
    started_ = true;
    return observation();
  }

  StepResult step(const Vector& action) {
    if (!started_) throw UsageError(spec_.name + ": step before reset");
    if (done()) throw UsageError(spec_.name + ": step past horizon " + std::to_string(spec_.horizon));
    if (action.size() != spec_.action_dim) throw ConfigError(spec_.name + ": action dimension mismatch");
    if (!action.allFinite()) throw NumericalError(spec_.name + ": non-finite action");
    const Vector clipped = action.cwiseMax(-1.0).cwiseMin(1.0);
    StepResult r;
    r.reward = std::clamp(integrate(clipped), 0.0, 1.0);
    ++t_;
    r.observation = observation();
    return r;
  }

  virtual Vector observation() const = 0;

  // Internal physical state, for checkpointing.
  virtual Vector physical_state() const = 0;
  void restore(const Vector& physical, int steps_taken) {
    set_physical_state(physical);
    t_ = steps_taken;
    started_ = true;
  }

  virtual std::unique_ptr<Environment> clone() const = 0;

 protected:
  virtual void sample_initial_state(Rng& rng) = 0;
  // Advances the physics with an in-range action and returns the reward.
  virtual double integrate(const Vector& action) = 0;
  virtual void set_physical_state(const Vector& physical) = 0;

 private:
  EnvSpec spec_;
  int t_ = 0;
  bool started_ = false;
};

// Torque-limited pendulum that has to be swung up. theta = 0 is upright.
// Observation (cos theta, sin theta, theta_dot).
class PendulumSwingup final : public Environment {
 public:
  static constexpr double kGravity = 10.0;
  static constexpr double kMass = 1.0;
  static constexpr double kLength = 1.0;
  static constexpr double kDt = 0.05;
  static constexpr double kMaxTorque = 2.0;
  static constexpr double kMaxSpeed = 8.0;

  explicit PendulumSwingup(int horizon = 200) : Environment({"pendulum-swingup", 3, 1, horizon}) {}

  Vector observation() const override { return Vector{{std::cos(theta_), std::sin(theta_), theta_dot_}}; }
  Vector physical_state() const override { return Vector{{theta_, theta_dot_}}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PendulumSwingup>(*this); }

  // (1 + cos theta) / 2, damped by up to one half at maximum speed.
  static double reward(double theta, double theta_dot) {
    const double upright = 0.5 * (1.0 + std::cos(theta));
    const double speed = theta_dot / kMaxSpeed;
    return upright * (1.0 - 0.5 * speed * speed);
  }

 protected:
  void sample_initial_state(Rng& rng) override {
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    std::uniform_real_distribution<double> speed(-1.0, 1.0);
    theta_ = angle(rng);
    theta_dot_ = speed(rng);
  }

  double integrate(const Vector& action) override {
    const double torque = kMaxTorque * action[0];
    const double accel = 3.0 * kGravity / (2.0 * kLength) * std::sin(theta_) +
                         3.0 / (kMass * kLength * kLength) * torque;
    theta_dot_ = std::clamp(theta_dot_ + accel * kDt, -kMaxSpeed, kMaxSpeed);
    theta_ = std::remainder(theta_ + theta_dot_ * kDt, 2.0 * std::numbers::pi);
    return reward(theta_, theta_dot_);
  }

  void set_physical_state(const Vector& physical) override {
    if (physical.size() != 2) throw ConfigError("pendulum: physical state must have 2 entries");
    theta_ = physical[0];
    theta_dot_ = physical[1];
  }

 private:
  double theta_ = std::numbers::pi;
  double theta_dot_ = 0.0;
};

// Damped planar point mass pushed toward the origin.
// Observation (x, y, x_dot, y_dot).
class PointMassReach final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kForceGain = 2.0;
  static constexpr double kDamping = 0.5;
  static constexpr double kArena = 2.0;
  static constexpr double kStartBox = 1.0;
  static constexpr double kRewardScale = 0.3;

  explicit PointMassReach(int horizon = 200) : Environment({"pointmass-reach", 4, 2, horizon}) {}

  Vector observation() const override { return state_; }
  Vector physical_state() const override { return state_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointMassReach>(*this); }

  static double reward(double x, double y) { return std::exp(-std::hypot(x, y) / kRewardScale); }

 protected:
  void sample_initial_state(Rng& rng) override {
    std::uniform_real_distribution<double> pos(-kStartBox, kStartBox);
    state_ = Vector::Zero(4);
    state_[0] = pos(rng);
    state_[1] = pos(rng);
  }

  double integrate(const Vector& action) override {
    for (int k = 0; k < 2; ++k) {
      double v = state_[2 + k] + (kForceGain * action[k] - kDamping * state_[2 + k]) * kDt;
      double x = state_[k] + v * kDt;
      if (std::abs(x) > kArena) {
        x = std::clamp(x, -kArena, kArena);
        v = 0.0;
      }
      state_[k] = x;
      state_[2 + k] = v;
    }
    return reward(state_[0], state_[1]);
  }

  void set_physical_state(const Vector& physical) override {
    if (physical.size() != 4) throw ConfigError("pointmass: physical state must have 4 entries");
    state_ = physical;
  }

 private:
  Vector state_ = Vector::Zero(4);
};

inline std::unique_ptr<Environment> make_env(const std::string& name, int horizon = 200) {
  if (name == "pendulum-swingup") return std::make_unique<PendulumSwingup>(horizon);
  if (name == "pointmass-reach") return std::make_unique<PointMassReach>(horizon);
  throw ConfigError("unknown environment '" + name + "'");
}

}  // namespace saceo
