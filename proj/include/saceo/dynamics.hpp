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

// Two probabilistic forward models trained on the same data by maximum
// likelihood. Each maps a standardised (state, action) to a Gaussian over
// the state change; predictions add the current state back.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "saceo/buffers.hpp"
#include "saceo/distributions.hpp"
#include "saceo/nncore.hpp"

namespace saceo {

inline constexpr double kInputStdFloor = 1e-3;

struct ModelTrainingReport {
  // Mean per-sample NLL seen during each epoch, per model.
  std::array<std::vector<double>, 2> epoch_nll;

  double last_nll(int model) const {
    const auto& v = epoch_nll[static_cast<std::size_t>(model)];
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : v.back();
  }
};

class DynamicsEnsemble {
 public:
  static constexpr int kModels = 2;

  DynamicsEnsemble() = default;
  DynamicsEnsemble(Index state_dim, Index action_dim, const std::vector<Index>& hidden, double learning_rate,
                   Rng& init_rng)
      : state_dim_(state_dim),
        action_dim_(action_dim),
        input_mean_(Vector::Zero(state_dim + action_dim)),
        input_std_(Vector::Ones(state_dim + action_dim)),
        delta_mean_(Vector::Zero(state_dim)),
        delta_std_(Vector::Ones(state_dim)) {
    for (int i = 0; i < kModels; ++i) {
      models_[i] = MlpNet(state_dim + action_dim, hidden, 2 * state_dim);
      initialize(models_[i], init_rng);
      optimizers_[i] = AdamState(models_[i].num_params(), learning_rate);
    }
  }

  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }
  const MlpNet& model(int i) const { return models_.at(static_cast<std::size_t>(i)); }
  MlpNet& model(int i) { return models_.at(static_cast<std::size_t>(i)); }
  const AdamState& optimizer(int i) const { return optimizers_.at(static_cast<std::size_t>(i)); }
  AdamState& optimizer(int i) { return optimizers_.at(static_cast<std::size_t>(i)); }
  const Vector& input_mean() const { return input_mean_; }
  const Vector& input_std() const { return input_std_; }
  const Vector& delta_mean() const { return delta_mean_; }
  const Vector& delta_std() const { return delta_std_; }

  void set_normalization(Vector mean, Vector std) {
    if (mean.size() != state_dim_ + action_dim_ || std.size() != mean.size() || (std.array() <= 0).any())
      throw ConfigError("DynamicsEnsemble: bad normalisation statistics");
    input_mean_ = std::move(mean);
    input_std_ = std::move(std);
  }

  // Statistics of s' - s; the nets regress the standardised delta.
  void set_delta_normalization(Vector mean, Vector std) {
    if (mean.size() != state_dim_ || std.size() != mean.size() || (std.array() <= 0).any())
      throw ConfigError("DynamicsEnsemble: bad delta statistics");
    delta_mean_ = std::move(mean);
    delta_std_ = std::move(std);
  }

  Matrix model_input(const Matrix& state, const Matrix& action) const {
    if (state.rows() != state_dim_ || action.rows() != action_dim_ || state.cols() != action.cols())
      throw ConfigError("DynamicsEnsemble: state/action shape mismatch");
    Matrix x(state_dim_ + action_dim_, state.cols());
    x << state, action;
    x.colwise() -= input_mean_;
    x.array().colwise() /= input_std_.array();
    return x;
  }

  // Predictive distribution over the next state.
  GaussianStateHead predict(int i, const Matrix& state, const Matrix& action) const {
    const Matrix out = saceo::predict(model(i), model_input(state, action));
    const Matrix log_var = out.bottomRows(state_dim_).colwise() + 2.0 * delta_std_.array().log().matrix();
    return GaussianStateHead(next_state_mean(state, out), log_var);
  }

  Matrix predict_mean(int i, const Matrix& state, const Matrix& action) const {
    return next_state_mean(state, saceo::predict(model(i), model_input(state, action)));
  }

  struct MeanPass {
    Matrix mean;
    GradientTape tape;
  };

  MeanPass predict_mean_recorded(int i, const Matrix& state, const Matrix& action) const {
    ForwardPass pass = forward(model(i), model_input(state, action));
    Matrix mean = next_state_mean(state, pass.output);
    return {std::move(mean), std::move(pass.tape)};
  }

  struct InputGradient {
    Matrix state;
    Matrix action;
  };

  // Pulls d/d(mean) back to (state, action); model parameter gradients
  // accumulate in pass.tape.
  InputGradient mean_backward(int i, MeanPass& pass, const Matrix& d_mean) const {
    Matrix d_out = Matrix::Zero(2 * state_dim_, d_mean.cols());
    d_out.topRows(state_dim_) = d_mean.array().colwise() * delta_std_.array();
    Matrix d_in = backward(model(i), pass.tape, d_out);
    d_in.array().colwise() /= input_std_.array();
    return {d_mean + d_in.topRows(state_dim_), d_in.bottomRows(action_dim_)};
  }

  // Mean NLL of the batch under model i, and its parameter gradient.
  std::pair<double, Vector> nll_and_gradient(int i, const TransitionBatch& batch) const {
    ForwardPass pass = forward(model(i), model_input(batch.state, batch.action));
    const GaussianStateHead head(pass.output.topRows(state_dim_), pass.output.bottomRows(state_dim_));
    const Matrix target = standardized_delta(batch.state, batch.next_state);
    const Vector nll = gaussian_nll(head, target);
    const double n = static_cast<double>(batch.size());
    const Vector weight = Vector::Constant(batch.size(), 1.0 / n);
    const GaussianHeadGradient g = gaussian_nll_backward(head, target, weight);
    backward(model(i), pass.tape, g.stacked());
    // change of variables back to raw next-state units
    return {nll.mean() + delta_std_.array().log().sum(), std::move(pass.tape.param_grad)};
  }

  // Refreshes input standardisation from the buffer, then runs `epochs`
  // shuffled passes of Adam on both models with identical mini-batches.
  ModelTrainingReport train_models(const ModelBuffer& buffer, int epochs, Index batch_size, Rng& rng) {
    if (buffer.empty()) throw UsageError("train_models: model buffer is empty");
    if (batch_size <= 0) throw ConfigError("train_models: batch size must be positive");
    const TransitionBatch all = buffer.contents();
    refresh_normalization(all);
    ModelTrainingReport report;
    std::vector<Index> order(static_cast<std::size_t>(all.size()));
    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::iota(order.begin(), order.end(), Index{0});
      std::shuffle(order.begin(), order.end(), rng);
      std::array<double, kModels> total{};
      for (Index start = 0; start < all.size(); start += batch_size) {
        const Index len = std::min(batch_size, all.size() - start);
        TransitionBatch mb{Matrix(state_dim_, len), Matrix(action_dim_, len), Vector(), Matrix(state_dim_, len)};
        for (Index j = 0; j < len; ++j) {
          const Index src = order[static_cast<std::size_t>(start + j)];
          mb.state.col(j) = all.state.col(src);
          mb.action.col(j) = all.action.col(src);
          mb.next_state.col(j) = all.next_state.col(src);
        }
        for (int i = 0; i < kModels; ++i) {
          auto [loss, grad] = nll_and_gradient(i, mb);
          if (!std::isfinite(loss))
            throw NumericalError("train_models: non-finite NLL in dynamics model " + std::to_string(i + 1));
          total[static_cast<std::size_t>(i)] += loss * static_cast<double>(len);
          adam_step(model(i), grad, optimizer(i), "dynamics model " + std::to_string(i + 1));
        }
      }
      for (int i = 0; i < kModels; ++i)
        report.epoch_nll[static_cast<std::size_t>(i)].push_back(total[static_cast<std::size_t>(i)] /
                                                                static_cast<double>(all.size()));
    }
    return report;
  }

 private:
  void refresh_normalization(const TransitionBatch& all) {
    Matrix x(state_dim_ + action_dim_, all.size());
    x << all.state, all.action;
    const Vector mean = x.rowwise().mean();
    const Vector std =
        ((x.colwise() - mean).array().square().rowwise().mean().sqrt()).max(kInputStdFloor).matrix();
    set_normalization(mean, std);
    const Matrix delta = all.next_state - all.state;
    const Vector dmean = delta.rowwise().mean();
    const Vector dstd =
        ((delta.colwise() - dmean).array().square().rowwise().mean().sqrt()).max(kInputStdFloor).matrix();
    set_delta_normalization(dmean, dstd);
  }

  Matrix next_state_mean(const Matrix& state, const Matrix& out) const {
    return state + ((out.topRows(state_dim_).array().colwise() * delta_std_.array()).colwise() +
                    delta_mean_.array())
                       .matrix();
  }

  Matrix standardized_delta(const Matrix& state, const Matrix& next_state) const {
    return (((next_state - state).colwise() - delta_mean_).array().colwise() / delta_std_.array()).matrix();
  }

  Index state_dim_ = 0;
  Index action_dim_ = 0;
  std::array<MlpNet, kModels> models_;
  std::array<AdamState, kModels> optimizers_;
  Vector input_mean_;
  Vector input_std_;
  Vector delta_mean_;
  Vector delta_std_;
};

// Action the policy takes without exploration noise: tanh of the mean.
inline Matrix deterministic_action(const MlpNet& policy, const Matrix& states) {
  const Matrix out = predict(policy, states);
  return out.topRows(out.rows() / 2).array().tanh().matrix();
}

// Largest l2 disagreement between the two models' predicted next-state means
// over `states`, with actions from the deterministic policy.
inline double discrepancy_max(const DynamicsEnsemble& ensemble, const Matrix& states, const MlpNet& policy) {
  if (states.cols() == 0) throw UsageError("discrepancy_max: no expert states");
  const Matrix action = deterministic_action(policy, states);
  const Matrix diff = ensemble.predict_mean(0, states, action) - ensemble.predict_mean(1, states, action);
  double best = 0.0;
  for (Index j = 0; j < diff.cols(); ++j) best = std::max(best, diff.col(j).norm());
  return best;
}

}  // namespace saceo
