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

// Probability heads: the tanh-squashed diagonal Gaussian used by the policy
// and the diagonal Gaussian over next states used by the dynamics models.
// Everything is batched column-wise.

#include <cmath>
#include <numbers>

#include "saceo/common.hpp"

namespace saceo {

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;
inline constexpr double kSquashEpsilon = 1e-6;
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 4.0;
inline const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

struct SquashedGaussianHead {
  Matrix mean;     // action_dim x batch
  Matrix log_std;  // clamped to [kLogStdMin, kLogStdMax]
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> log_std_active;  // false where clamped

  SquashedGaussianHead() = default;
  SquashedGaussianHead(Matrix mean_in, const Matrix& raw_log_std)
      : mean(std::move(mean_in)),
        log_std(raw_log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax)),
        log_std_active(raw_log_std.array() >= kLogStdMin && raw_log_std.array() <= kLogStdMax) {
    if (mean.rows() != raw_log_std.rows() || mean.cols() != raw_log_std.cols())
      throw ConfigError("SquashedGaussianHead: mean/log_std shape mismatch");
  }

  // Splits a policy-net output (2*action_dim rows: mean then log-std).
  static SquashedGaussianHead from_net_output(const Matrix& out) {
    const Index d = out.rows() / 2;
    return SquashedGaussianHead(out.topRows(d), out.bottomRows(d));
  }

  Index action_dim() const { return mean.rows(); }
  Matrix deterministic_action() const { return mean.array().tanh().matrix(); }
};

struct PolicySample {
  Matrix noise;
  Matrix action;     // tanh(mean + std * noise), strictly inside (-1, 1)
  Vector log_prob;   // one entry per column
};

// Reparameterised sample with the tanh change-of-variables correction.
inline PolicySample policy_sample(const SquashedGaussianHead& head, const Matrix& noise) {
  if (noise.rows() != head.mean.rows() || noise.cols() != head.mean.cols())
    throw ConfigError("policy_sample: noise shape mismatch");
  if (!head.mean.allFinite() || !head.log_std.allFinite())
    throw NumericalError("policy_sample: non-finite policy head");
  PolicySample s;
  s.noise = noise;
  const Matrix pre = head.mean.array() + head.log_std.array().exp() * noise.array();
  // keep |a| < 1 even where tanh rounds to +-1
  const double edge = std::nextafter(1.0, 0.0);
  s.action = pre.array().tanh().cwiseMax(-edge).cwiseMin(edge).matrix();
  const Matrix gauss = -0.5 * noise.array().square() - head.log_std.array() - 0.5 * kLogTwoPi;
  const Matrix squash = (1.0 - s.action.array().square() + kSquashEpsilon).log();
  s.log_prob = (gauss - squash).colwise().sum().transpose();
  return s;
}

struct PolicyHeadGradient {
  Matrix mean;
  Matrix log_std;  // w.r.t. the raw (unclamped) log-std output

  // Stacked like the policy-net output.
  Matrix stacked() const {
    Matrix out(mean.rows() * 2, mean.cols());
    out << mean, log_std;
    return out;
  }
};

// Pulls d/d(action) and d/d(log_prob) back to the head parameters, holding
// the noise fixed.
inline PolicyHeadGradient policy_sample_backward(const SquashedGaussianHead& head, const PolicySample& s,
                                                 const Matrix& d_action, const Vector& d_log_prob) {
  const auto a = s.action.array();
  const Eigen::ArrayXXd one_minus = 1.0 - a.square();
  Eigen::ArrayXXd d_pre = d_action.array() * one_minus;
  // d/dpre of -log(1 - tanh(pre)^2 + eps)
  const Eigen::ArrayXXd squash_grad = 2.0 * a * one_minus / (one_minus + kSquashEpsilon);
  d_pre += squash_grad.rowwise() * d_log_prob.transpose().array();
  PolicyHeadGradient g;
  g.mean = d_pre.matrix();
  Eigen::ArrayXXd d_ls = d_pre * head.log_std.array().exp() * s.noise.array();
  d_ls.rowwise() -= d_log_prob.transpose().array();
  g.log_std = head.log_std_active.select(d_ls, 0.0).matrix();
  return g;
}

// Gradient of the deterministic action tanh(mean) pulled back to the head.
inline PolicyHeadGradient deterministic_action_backward(const SquashedGaussianHead& head,
                                                        const Matrix& d_action) {
  PolicyHeadGradient g;
  g.mean = (d_action.array() * (1.0 - head.mean.array().tanh().square())).matrix();
  g.log_std = Matrix::Zero(head.log_std.rows(), head.log_std.cols());
  return g;
}

struct GaussianStateHead {
  Matrix mean;     // state_dim x batch
  Matrix log_var;  // clamped to [kLogVarMin, kLogVarMax]
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> log_var_active;

  GaussianStateHead() = default;
  GaussianStateHead(Matrix mean_in, const Matrix& raw_log_var)
      : mean(std::move(mean_in)),
        log_var(raw_log_var.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax)),
        log_var_active(raw_log_var.array() >= kLogVarMin && raw_log_var.array() <= kLogVarMax) {
    if (mean.rows() != raw_log_var.rows() || mean.cols() != raw_log_var.cols())
      throw ConfigError("GaussianStateHead: mean/log_var shape mismatch");
  }

  Matrix variance() const { return log_var.array().exp().matrix(); }
};

// Per-column negative log density of `target` under N(mean, diag(exp(log_var))).
inline Vector gaussian_nll(const GaussianStateHead& head, const Matrix& target) {
  if (target.rows() != head.mean.rows() || target.cols() != head.mean.cols())
    throw ConfigError("gaussian_nll: target shape mismatch");
  const Eigen::ArrayXXd err = target - head.mean;
  const Eigen::ArrayXXd terms = err.square() * (-head.log_var.array()).exp() + head.log_var.array() + kLogTwoPi;
  const Vector nll = 0.5 * terms.colwise().sum().transpose().matrix();
  if (!nll.allFinite()) throw NumericalError("gaussian_nll: non-finite value");
  return nll;
}

struct GaussianHeadGradient {
  Matrix mean;
  Matrix log_var;  // w.r.t. the raw log-variance

  Matrix stacked() const {
    Matrix out(mean.rows() * 2, mean.cols());
    out << mean, log_var;
    return out;
  }
};

// Gradient of sum_j weight_j * nll_j.
inline GaussianHeadGradient gaussian_nll_backward(const GaussianStateHead& head, const Matrix& target,
                                                  const Vector& weight) {
  const Eigen::ArrayXXd err = target - head.mean;
  const Eigen::ArrayXXd prec = (-head.log_var.array()).exp();
  Eigen::ArrayXXd d_mean = -err * prec;
  Eigen::ArrayXXd d_lv = 0.5 * (1.0 - err.square() * prec);
  d_mean.rowwise() *= weight.transpose().array();
  d_lv.rowwise() *= weight.transpose().array();
  return {d_mean.matrix(), head.log_var_active.select(d_lv, 0.0).matrix()};
}

}  // namespace saceo
