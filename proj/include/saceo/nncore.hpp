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

// Dense multilayer perceptrons with hand-written reverse mode and Adam.
//
// All parameters of a net live in one flat vector; layers are views into it.
// Batched inputs are column-major: one sample per column.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "saceo/common.hpp"

namespace saceo {

enum class Activation { kLayerNormTanh, kRelu, kLinear };

inline constexpr double kLayerNormEpsilon = 1e-5;

class MlpNet {
 public:
  struct Layer {
    Index in = 0;
    Index out = 0;
    Activation activation = Activation::kLinear;
    Index weight = 0;  // offsets into the flat parameter vector
    Index bias = 0;
    Index gain = -1;   // layer-norm gain/shift, only for kLayerNormTanh
    Index shift = -1;
  };

  MlpNet() : id_(next_id()) {}

  // The first hidden layer is followed by layer norm + tanh, later hidden
  // layers by ReLU, the output layer is linear. No hidden layers gives a
  // single affine map.
  MlpNet(Index input_dim, std::vector<Index> hidden_sizes, Index output_dim)
      : hidden_(std::move(hidden_sizes)), id_(next_id()) {
    if (input_dim <= 0 || output_dim <= 0) throw ConfigError("MlpNet: dimensions must be positive");
    Index offset = 0;
    Index in = input_dim;
    for (std::size_t i = 0; i <= hidden_.size(); ++i) {
      const bool last = i == hidden_.size();
      Layer layer;
      layer.in = in;
      layer.out = last ? output_dim : hidden_[i];
      if (layer.out <= 0) throw ConfigError("MlpNet: hidden sizes must be positive");
      layer.activation = last ? Activation::kLinear : (i == 0 ? Activation::kLayerNormTanh : Activation::kRelu);
      layer.weight = offset;
      offset += layer.in * layer.out;
      layer.bias = offset;
      offset += layer.out;
      if (layer.activation == Activation::kLayerNormTanh) {
        layer.gain = offset;
        offset += layer.out;
        layer.shift = offset;
        offset += layer.out;
      }
      layers_.push_back(layer);
      in = layer.out;
    }
    params_ = Vector::Zero(offset);
    for (const Layer& layer : layers_)
      if (layer.gain >= 0) params_.segment(layer.gain, layer.out).setOnes();
  }

  MlpNet(const MlpNet& other)
      : layers_(other.layers_), hidden_(other.hidden_), params_(other.params_), id_(next_id()) {}
  MlpNet& operator=(const MlpNet& other) {
    if (this != &other) {
      layers_ = other.layers_;
      hidden_ = other.hidden_;
      params_ = other.params_;
      id_ = next_id();
      generation_ = 0;
    }
    return *this;
  }
  MlpNet(MlpNet&&) noexcept = default;
  MlpNet& operator=(MlpNet&&) noexcept = default;

  Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in; }
  Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out; }
  Index num_params() const { return params_.size(); }
  const std::vector<Index>& hidden_sizes() const { return hidden_; }
  std::span<const Layer> layers() const { return layers_; }

  const Vector& params() const { return params_; }
  // Any mutable access invalidates outstanding tapes.
  Vector& mutable_params() {
    ++generation_;
    return params_;
  }
  void set_params(const Vector& params) {
    if (params.size() != params_.size()) throw ConfigError("MlpNet::set_params: size mismatch");
    mutable_params() = params;
  }

  Eigen::Map<const Matrix> weight(std::size_t i) const {
    const Layer& l = layers_.at(i);
    return {params_.data() + l.weight, l.out, l.in};
  }
  Eigen::Map<Matrix> weight(std::size_t i) {
    const Layer& l = layers_.at(i);
    return {mutable_params().data() + l.weight, l.out, l.in};
  }
  Eigen::Map<const Vector> bias(std::size_t i) const {
    const Layer& l = layers_.at(i);
    return {params_.data() + l.bias, l.out};
  }
  Eigen::Map<Vector> bias(std::size_t i) {
    const Layer& l = layers_.at(i);
    return {mutable_params().data() + l.bias, l.out};
  }
  Eigen::Map<const Vector> layernorm_gain() const {
    const Layer& l = layers_.front();
    if (l.gain < 0) return {params_.data(), 0};
    return {params_.data() + l.gain, l.out};
  }
  Eigen::Map<const Vector> layernorm_bias() const {
    const Layer& l = layers_.front();
    if (l.shift < 0) return {params_.data(), 0};
    return {params_.data() + l.shift, l.out};
  }

  std::uint64_t id() const { return id_; }
  std::uint64_t generation() const { return generation_; }

  bool same_shape(const MlpNet& other) const {
    return hidden_ == other.hidden_ && input_dim() == other.input_dim() &&
           output_dim() == other.output_dim();
  }

 private:
  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
  }

  std::vector<Layer> layers_;
  std::vector<Index> hidden_;
  Vector params_;
  std::uint64_t id_ = 0;
  std::uint64_t generation_ = 0;
};

// Fan-in scaled uniform initialisation; biases zero, layer-norm gain one.
// The output layer is additionally scaled by `output_scale`.
inline void initialize(MlpNet& net, Rng& rng, double output_scale = 1.0) {
  Vector& p = net.mutable_params();
  p.setZero();
  const auto layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    if (i + 1 == layers.size()) bound *= output_scale;
    std::uniform_real_distribution<double> uniform(-bound, bound);
    for (Index k = 0; k < l.in * l.out; ++k) p[l.weight + k] = uniform(rng);
    if (l.gain >= 0) p.segment(l.gain, l.out).setOnes();
  }
}

// Activations cached by forward() plus the parameter-gradient accumulator
// that backward() adds into.
struct GradientTape {
  std::uint64_t net_id = 0;
  std::uint64_t generation = 0;
  Matrix input;
  std::vector<Matrix> outputs;  // post-activation output of every layer
  Matrix normalized;            // layer-norm xhat of the first layer
  RowVector inv_std;            // per-sample 1/sqrt(var + eps)
  Vector param_grad;            // same shape as MlpNet::params()

  void zero_grad() { param_grad.setZero(); }
};

namespace detail {

template <bool kRecord>
Matrix run_layers(const MlpNet& net, const Matrix& input, GradientTape* tape) {
  if (input.rows() != net.input_dim())
    throw ConfigError("forward: input has " + std::to_string(input.rows()) + " rows, net expects " +
                      std::to_string(net.input_dim()));
  const auto layers = net.layers();
  const Vector& p = net.params();
  Matrix x = input;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    Eigen::Map<const Matrix> w(p.data() + l.weight, l.out, l.in);
    Eigen::Map<const Vector> b(p.data() + l.bias, l.out);
    Matrix z = w * x;
    z.colwise() += b;
    switch (l.activation) {
      case Activation::kRelu:
        z = z.cwiseMax(0.0);
        break;
      case Activation::kLayerNormTanh: {
        Eigen::Map<const Vector> gain(p.data() + l.gain, l.out);
        Eigen::Map<const Vector> shift(p.data() + l.shift, l.out);
        const RowVector mean = z.colwise().mean();
        z.rowwise() -= mean;
        const RowVector inv_std =
            ((z.array().square().colwise().sum() / static_cast<double>(l.out)) + kLayerNormEpsilon)
                .rsqrt()
                .matrix();
        z.array().rowwise() *= inv_std.array();
        if constexpr (kRecord) {
          tape->normalized = z;
          tape->inv_std = inv_std;
        }
        z.array().colwise() *= gain.array();
        z.colwise() += shift;
        z = fast_tanh(z);
        break;
      }
      case Activation::kLinear:
        break;
    }
    if constexpr (kRecord) tape->outputs.push_back(z);
    x = std::move(z);
  }
  return x;
}

}  // namespace detail

struct ForwardPass {
  Matrix output;
  GradientTape tape;
};

inline ForwardPass forward(const MlpNet& net, const Matrix& input) {
  ForwardPass pass;
  pass.tape.net_id = net.id();
  pass.tape.generation = net.generation();
  pass.tape.input = input;
  pass.tape.outputs.reserve(net.layers().size());
  pass.output = detail::run_layers<true>(net, input, &pass.tape);
  pass.tape.param_grad = Vector::Zero(net.num_params());
  return pass;
}

// Forward without recording; same arithmetic as forward().
inline Matrix predict(const MlpNet& net, const Matrix& input) {
  return detail::run_layers<false>(net, input, nullptr);
}

// Adds the gradient of <output_grad, net(input)> w.r.t. the parameters into
// tape.param_grad and returns the gradient w.r.t. the input.
inline Matrix backward(const MlpNet& net, GradientTape& tape, const Matrix& output_grad) {
  if (tape.net_id != net.id() || tape.generation != net.generation())
    throw UsageError("backward: tape was recorded on a different or since-modified net");
  if (tape.outputs.size() != net.layers().size() || tape.param_grad.size() != net.num_params())
    throw UsageError("backward: tape does not match the net layout");
  if (output_grad.rows() != net.output_dim() || output_grad.cols() != tape.input.cols())
    throw ConfigError("backward: output gradient shape mismatch");

  const auto layers = net.layers();
  const Vector& p = net.params();
  Matrix d = output_grad;
  for (std::size_t k = layers.size(); k-- > 0;) {
    const auto& l = layers[k];
    const Matrix& out = tape.outputs[k];
    switch (l.activation) {
      case Activation::kRelu:
        d = (out.array() > 0.0).select(d, 0.0);
        break;
      case Activation::kLayerNormTanh: {
        Eigen::Map<const Vector> gain(p.data() + l.gain, l.out);
        d.array() *= 1.0 - out.array().square();
        tape.param_grad.segment(l.gain, l.out) += (d.array() * tape.normalized.array()).rowwise().sum().matrix();
        tape.param_grad.segment(l.shift, l.out) += d.rowwise().sum();
        Matrix dxhat = d.array().colwise() * gain.array();
        const double n = static_cast<double>(l.out);
        const RowVector sum_d = dxhat.colwise().sum();
        const RowVector sum_dx = (dxhat.array() * tape.normalized.array()).colwise().sum().matrix();
        Matrix dz = n * dxhat;
        dz.rowwise() -= sum_d;
        dz -= (tape.normalized.array().rowwise() * sum_dx.array()).matrix();
        dz.array().rowwise() *= (tape.inv_std.array() / n);
        d = std::move(dz);
        break;
      }
      case Activation::kLinear:
        break;
    }
    const Matrix& in = k == 0 ? tape.input : tape.outputs[k - 1];
    Eigen::Map<Matrix> dw(tape.param_grad.data() + l.weight, l.out, l.in);
    dw.noalias() += d * in.transpose();
    tape.param_grad.segment(l.bias, l.out) += d.rowwise().sum();
    Eigen::Map<const Matrix> w(p.data() + l.weight, l.out, l.in);
    Matrix dx = w.transpose() * d;
    d = std::move(dx);
  }
  return d;
}

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(Index num_params, double lr)
      : m(Vector::Zero(num_params)), v(Vector::Zero(num_params)), learning_rate(lr) {}
};

// One bias-corrected Adam step. Non-finite gradients leave params and state
// untouched and raise NumericalError.
inline void adam_step(Eigen::Ref<Vector> params, const Vector& grads, AdamState& state,
                      const std::string& what = "parameters") {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ConfigError("adam_step: shape mismatch for " + what);
  if (!grads.allFinite()) throw NumericalError("adam_step: non-finite gradient for " + what);
  state.step += 1;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= state.learning_rate * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + state.epsilon);
  if (!params.allFinite()) throw NumericalError("adam_step: non-finite parameters after update of " + what);
}

inline void adam_step(MlpNet& net, const Vector& grads, AdamState& state, const std::string& what = "net") {
  adam_step(net.mutable_params(), grads, state, what);
}

}  // namespace saceo
