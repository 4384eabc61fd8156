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

// Replay buffer, model-training buffer and the state-only expert dataset,
// plus the text format expert observations are stored in.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "saceo/common.hpp"

namespace saceo {

struct Transition {
  Vector state;
  Vector action;
  double reward = 0.0;
  Vector next_state;
};

// Column-batched transitions; `reward` is empty for model-buffer batches.
struct TransitionBatch {
  Matrix state;
  Matrix action;
  Vector reward;
  Matrix next_state;

  Index size() const { return state.cols(); }
};

// FIFO ring of transitions with uniform sampling with replacement.
// kWithReward = false drops the reward column (the model buffer).
template <bool kWithReward>
class TransitionRing {
 public:
  TransitionRing(Index state_dim, Index action_dim, Index capacity)
      : state_dim_(state_dim), action_dim_(action_dim), capacity_(capacity) {
    if (capacity <= 0) throw ConfigError("buffer capacity must be positive");
  }

  Index capacity() const { return capacity_; }
  Index size() const { return size_; }
  bool empty() const { return size_ == 0; }
  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }

  void add(const Vector& state, const Vector& action, double reward, const Vector& next_state) {
    if (state.size() != state_dim_ || next_state.size() != state_dim_ || action.size() != action_dim_)
      throw ConfigError("buffer: transition dimension mismatch");
    if (size_ < capacity_ && size_ == state_.cols()) grow();
    state_.col(head_) = state;
    action_.col(head_) = action;
    next_state_.col(head_) = next_state;
    if constexpr (kWithReward) reward_[head_] = reward;
    head_ = (head_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  void add(const Transition& t) { add(t.state, t.action, t.reward, t.next_state); }

  // i-th oldest transition still held.
  Transition at(Index i) const {
    if (i < 0 || i >= size_) throw UsageError("buffer: index out of range");
    const Index slot = physical(i);
    Transition t{state_.col(slot), action_.col(slot), 0.0, next_state_.col(slot)};
    if constexpr (kWithReward) t.reward = reward_[slot];
    return t;
  }

  TransitionBatch gather(const std::vector<Index>& logical) const {
    TransitionBatch b;
    const Index n = static_cast<Index>(logical.size());
    b.state.resize(state_dim_, n);
    b.action.resize(action_dim_, n);
    b.next_state.resize(state_dim_, n);
    if constexpr (kWithReward) b.reward.resize(n);
    for (Index j = 0; j < n; ++j) {
      const Index slot = physical(logical[j]);
      b.state.col(j) = state_.col(slot);
      b.action.col(j) = action_.col(slot);
      b.next_state.col(j) = next_state_.col(slot);
      if constexpr (kWithReward) b.reward[j] = reward_[slot];
    }
    return b;
  }

  TransitionBatch sample_batch(Index batch_size, Rng& rng) const {
    if (size_ == 0) throw UsageError("sample_batch: buffer is empty");
    std::uniform_int_distribution<Index> pick(0, size_ - 1);
    std::vector<Index> idx(static_cast<std::size_t>(batch_size));
    for (auto& i : idx) i = pick(rng);
    return gather(idx);
  }

  // Every held transition, oldest first.
  TransitionBatch contents() const {
    std::vector<Index> idx(static_cast<std::size_t>(size_));
    std::iota(idx.begin(), idx.end(), Index{0});
    return gather(idx);
  }

  // Raw ring state for checkpoints. Only filled slots are kept: until the
  // ring wraps they are the leading `size` columns.
  struct Storage {
    Matrix state, action, next_state;
    Vector reward;
    Index head = 0, size = 0;
  };
  Storage storage() const {
    return {state_.leftCols(size_), action_.leftCols(size_), next_state_.leftCols(size_),
            kWithReward ? Vector(reward_.head(size_)) : Vector(), head_, size_};
  }
  void restore(Storage s) {
    if (s.size > capacity_ || s.state.rows() != state_dim_ || s.action.rows() != action_dim_ ||
        s.state.cols() < s.size || s.action.cols() != s.state.cols() || s.next_state.cols() != s.state.cols())
      throw ConfigError("buffer: stored ring does not match this buffer");
    state_ = std::move(s.state);
    action_ = std::move(s.action);
    next_state_ = std::move(s.next_state);
    reward_ = std::move(s.reward);
    head_ = s.head;
    size_ = s.size;
  }

 private:
  Index physical(Index logical) const {
    const Index oldest = size_ < capacity_ ? 0 : head_;
    return (oldest + logical) % capacity_;
  }

  void grow() {
    const Index cols = std::min(capacity_, std::max<Index>(1024, state_.cols() * 2));
    state_.conservativeResize(state_dim_, cols);
    action_.conservativeResize(action_dim_, cols);
    next_state_.conservativeResize(state_dim_, cols);
    if constexpr (kWithReward) reward_.conservativeResize(cols);
  }

  Index state_dim_, action_dim_, capacity_;
  Matrix state_, action_, next_state_;
  Vector reward_;
  Index head_ = 0;
  Index size_ = 0;
};

using ReplayBuffer = TransitionRing<true>;
using ModelBuffer = TransitionRing<false>;

// Consecutive expert state pairs, one pair per column.
struct ExpertPairs {
  Matrix current;
  Matrix next;

  Index size() const { return current.cols(); }
};

// State-only expert trajectories. There is deliberately no way to attach
// actions or rewards.
class ExpertDataset {
 public:
  ExpertDataset() = default;
  explicit ExpertDataset(Index state_dim) : state_dim_(state_dim) {}

  Index state_dim() const { return state_dim_; }
  std::size_t num_trajectories() const { return trajectories_.size(); }
  const Matrix& trajectory(std::size_t i) const { return trajectories_.at(i); }

  // Columns are consecutive states.
  void add_trajectory(Matrix states) {
    if (states.rows() != state_dim_) throw ConfigError("expert trajectory dimension mismatch");
    pair_offsets_.push_back(num_pairs());
    trajectories_.push_back(std::move(states));
  }

  Index num_states() const {
    Index n = 0;
    for (const auto& t : trajectories_) n += t.cols();
    return n;
  }

  Index num_pairs() const {
    Index n = 0;
    for (const auto& t : trajectories_) n += std::max<Index>(t.cols() - 1, 0);
    return n;
  }

  Matrix all_states() const {
    Matrix out(state_dim_, num_states());
    Index c = 0;
    for (const auto& t : trajectories_) {
      out.middleCols(c, t.cols()) = t;
      c += t.cols();
    }
    return out;
  }

  // Pair number k (0 <= k < num_pairs()) in trajectory order.
  std::pair<std::size_t, Index> locate_pair(Index k) const {
    const auto it = std::upper_bound(pair_offsets_.begin(), pair_offsets_.end(), k);
    // Pairless trajectories share their offset with the next one, so the last
    // offset <= k always belongs to the trajectory holding pair k.
    const std::size_t traj = static_cast<std::size_t>(it - pair_offsets_.begin()) - 1;
    return {traj, k - pair_offsets_[traj]};
  }

  bool operator==(const ExpertDataset& other) const {
    if (state_dim_ != other.state_dim_ || trajectories_.size() != other.trajectories_.size()) return false;
    for (std::size_t i = 0; i < trajectories_.size(); ++i) {
      const auto& a = trajectories_[i];
      const auto& b = other.trajectories_[i];
      if (a.cols() != b.cols() || !(a.array() == b.array()).all()) return false;
    }
    return true;
  }

 private:
  Index state_dim_ = 0;
  std::vector<Matrix> trajectories_;
  std::vector<Index> pair_offsets_;
};

// `count` consecutive pairs drawn uniformly (with replacement) over every
// valid (t, t+1) position; pairs never straddle two trajectories.
inline ExpertPairs sample_expert_pairs(const ExpertDataset& data, Index count, Rng& rng) {
  const Index total = data.num_pairs();
  if (total == 0) throw UsageError("sample_expert_pairs: dataset has no consecutive state pairs");
  std::uniform_int_distribution<Index> pick(0, total - 1);
  ExpertPairs out{Matrix(data.state_dim(), count), Matrix(data.state_dim(), count)};
  for (Index j = 0; j < count; ++j) {
    const auto [traj, t] = data.locate_pair(pick(rng));
    out.current.col(j) = data.trajectory(traj).col(t);
    out.next.col(j) = data.trajectory(traj).col(t + 1);
  }
  return out;
}

// Random partition into halves of ceil(n/2) and floor(n/2) pairs.
inline std::pair<ExpertPairs, ExpertPairs> split_pairs(const ExpertPairs& pairs, Rng& rng) {
  const Index n = pairs.size();
  if (n == 0) throw UsageError("split_pairs: no pairs to split");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  const Index first = (n + 1) / 2;
  auto take = [&](Index from, Index len) {
    ExpertPairs part{Matrix(pairs.current.rows(), len), Matrix(pairs.next.rows(), len)};
    for (Index j = 0; j < len; ++j) {
      part.current.col(j) = pairs.current.col(order[static_cast<std::size_t>(from + j)]);
      part.next.col(j) = pairs.next.col(order[static_cast<std::size_t>(from + j)]);
    }
    return part;
  };
  return {take(0, first), take(first, n - first)};
}

// ---------------------------------------------------------------------------
// Expert file format, version 1:
//
//   SACEO-EXPERT v1 dim=<d>
//   TRAJ <length>
//   <d comma-separated doubles>     (length lines)
//   ...
//
// Lines starting with '#' are comments. Doubles are written in shortest
// round-trip form.

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

inline void save_expert_file(const ExpertDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write expert file " + path.string());
  out << "SACEO-EXPERT v1 dim=" << data.state_dim() << '\n';
  for (std::size_t i = 0; i < data.num_trajectories(); ++i) {
    const Matrix& traj = data.trajectory(i);
    out << "TRAJ " << traj.cols() << '\n';
    for (Index t = 0; t < traj.cols(); ++t) {
      for (Index k = 0; k < traj.rows(); ++k) {
        if (k) out << ',';
        out << format_double(traj(k, t));
      }
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing expert file " + path.string());
}

inline ExpertDataset parse_expert_text(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  Index dim = -1;
  ExpertDataset data;
  Matrix current;
  Index expected = -1;
  Index filled = 0;
  std::size_t traj_line = 0;

  auto close_trajectory = [&]() {
    if (expected < 0) return;
    if (filled != expected)
      throw ParseError(traj_line, "TRAJ declares " + std::to_string(expected) + " states but " +
                                      std::to_string(filled) + " follow");
    data.add_trajectory(std::move(current));
    expected = -1;
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (dim < 0) {
      constexpr std::string_view kMagic = "SACEO-EXPERT v1 dim=";
      if (line.rfind(kMagic, 0) != 0) throw ParseError(lineno, "expected header 'SACEO-EXPERT v1 dim=<d>'");
      double d = 0;
      if (!parse_double(std::string_view(line).substr(kMagic.size()), d) || d < 1 || d != static_cast<Index>(d))
        throw ParseError(lineno, "malformed dimension in header");
      dim = static_cast<Index>(d);
      data = ExpertDataset(dim);
      continue;
    }
    if (line.rfind("TRAJ", 0) == 0) {
      close_trajectory();
      double len = 0;
      if (!parse_double(std::string_view(line).substr(4), len) || len < 0 || len != static_cast<Index>(len))
        throw ParseError(lineno, "malformed TRAJ length");
      expected = static_cast<Index>(len);
      current = Matrix(dim, expected);
      filled = 0;
      traj_line = lineno;
      continue;
    }
    if (expected < 0) throw ParseError(lineno, "state row before any TRAJ line");
    if (filled >= expected) throw ParseError(lineno, "more state rows than TRAJ declares");
    std::string_view rest(line);
    Index k = 0;
    while (true) {
      const auto comma = rest.find(',');
      const std::string_view cell = rest.substr(0, comma);
      if (k >= dim) throw ParseError(lineno, "row has more than dim=" + std::to_string(dim) + " values");
      double v = 0;
      if (!parse_double(cell, v)) throw ParseError(lineno, "non-numeric cell '" + std::string(cell) + "'");
      current(k++, filled) = v;
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    if (k != dim)
      throw ParseError(lineno, "row has " + std::to_string(k) + " values, header says dim=" + std::to_string(dim));
    ++filled;
  }
  if (dim < 0) throw ParseError(lineno, "missing header");
  close_trajectory();
  return data;
}

inline ExpertDataset load_expert_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open expert file " + path.string());
  return parse_expert_text(in);
}

}  // namespace saceo
