#pragma once

#include "coadapt/agents.hpp"
#include "coadapt/qnet.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace coadapt {

// r = alpha / (||e||^2 + 0.5) - beta t_step - gamma effort - eta n_osc + rho success
// with e expressed in units of 1/error_scale metres (100: centimetres).
struct RewardWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 0.05;
  double eta = 0.1;
  double rho = 100.0;
  double error_scale = 100.0;

  void validate() const {
    for (double w : {alpha, beta, gamma, eta, rho})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigInvalid("reward weights must be finite and >= 0");
    if (!(error_scale > 0.0) || !std::isfinite(error_scale)) throw ConfigInvalid("reward error_scale must be > 0");
  }
};

struct RewardTerms {
  double accuracy = 0.0;
  double time = 0.0;
  double effort = 0.0;
  double osc = 0.0;
  double success = 0.0;
  double total = 0.0;
};

inline RewardTerms reward_terms(const Vec3& e, double t_step, double effort, int n_osc, bool success,
                                const RewardWeights& w) {
  RewardTerms r;
  r.accuracy = w.alpha / ((w.error_scale * e).squaredNorm() + 0.5);
  r.time = -w.beta * t_step;
  r.effort = -w.gamma * effort;
  r.osc = -w.eta * n_osc;
  r.success = success ? w.rho : 0.0;
  r.total = r.accuracy + r.time + r.effort + r.osc + r.success;
  return r;
}

inline double reward(const Vec3& e, double t_step, double effort, int n_osc, bool success, const RewardWeights& w) {
  return reward_terms(e, t_step, effort, n_osc, success, w).total;
}

// Agent_0 sees [x; x_g; one-hot(active model)], Agent_1 additionally the
// human's radius bit (0 = big, 1 = small).
inline constexpr int kObsDim = 3 + 3 + ModelIndex::kCount;
inline constexpr int kObsDimRobot = kObsDim + 1;
inline constexpr int kActions0 = ModelIndex::kHumanModels;
inline constexpr int kActions1 = ModelIndex::kRobotModels;

inline VecX encode_observation(const WorkspaceBox& box, const Vec3& x, const Vec3& x_goal, const ModelIndex& active) {
  VecX s = VecX::Zero(kObsDim);
  s.segment<3>(0) = box.normalize(x);
  s.segment<3>(3) = box.normalize(x_goal);
  s[6 + active.flat()] = 1.0;
  return s;
}

inline VecX robot_observation(const VecX& s, int action_0) {
  VecX r(kObsDimRobot);
  r.head(kObsDim) = s;
  r[kObsDim] = action_0 == 2 ? 1.0 : 0.0;
  return r;
}

struct Transition {
  VecX state;
  int action_0 = 1;  // 1..2
  int action_1 = 1;  // 1..8
  double reward = 0.0;
  VecX next_state;
  bool terminal = false;
};

// Fixed-capacity FIFO with uniform sampling.
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity = 50000) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigInvalid("learner.buffer_capacity must be > 0");
    data_.reserve(std::min<std::size_t>(capacity_, 4096));
  }

  void push(Transition t) {
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }

  // i-th oldest retained transition.
  const Transition& at(std::size_t i) const { return data_[(head_ + i) % data_.size()]; }

  template <class Rng>
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    std::uniform_int_distribution<std::size_t> u(0, data_.size() - 1);
    std::vector<std::size_t> idx(n);
    for (auto& i : idx) i = u(rng);
    return idx;
  }

  const Transition& raw(std::size_t i) const { return data_[i]; }

private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> data_;
};

struct LearnerConfig {
  int hidden = 64;
  std::size_t buffer_capacity = 50000;
  int batch = 64;
  double discount = 0.99;
  double lr = 1e-3;
  int target_period = 500;
  double eps_start = 1.0;
  double eps_end = 0.05;
  long long eps_decay_steps = 10000;
  double huber_delta = 1.0;

  void validate() const {
    if (hidden <= 0 || batch <= 0 || target_period <= 0) throw ConfigInvalid("learner sizes must be positive");
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigInvalid("learner.discount must be in [0, 1)");
    if (!(lr > 0.0)) throw ConfigInvalid("learner.lr must be > 0");
    if (!(eps_start >= 0.0 && eps_start <= 1.0 && eps_end >= 0.0 && eps_end <= 1.0))
      throw ConfigInvalid("learner exploration bounds must be in [0, 1]");
    if (eps_decay_steps < 0) throw ConfigInvalid("learner.eps_decay_steps must be >= 0");
    if (!(huber_delta > 0.0)) throw ConfigInvalid("learner.huber_delta must be > 0");
  }
};

// Linear decay from eps_start to eps_end over eps_decay_steps environment steps.
inline double epsilon_schedule(long long env_step, const LearnerConfig& c) {
  if (c.eps_decay_steps == 0 || env_step >= c.eps_decay_steps) return c.eps_end;
  const double f = static_cast<double>(env_step) / static_cast<double>(c.eps_decay_steps);
  return c.eps_start + f * (c.eps_end - c.eps_start);
}

// Lowest index wins ties.
inline int argmax_index(const VecX& v) {
  int best = 0;
  for (int k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

struct ActionPair {
  int action_0 = 1;
  int action_1 = 1;
  ModelIndex model() const { return {action_0, action_1}; }
};

struct TrainLosses {
  double agent_0 = 0.0;
  double agent_1 = 0.0;
};

// Two Q-functions on one shared replay buffer and a shared team reward.
class DualAgentLearner {
public:
  explicit DualAgentLearner(LearnerConfig cfg = {}, std::uint64_t seed = 0)
      : cfg_(cfg),
        q0_(QNetwork::make(kObsDim, cfg.hidden, kActions0)),
        q1_(QNetwork::make(kObsDimRobot, cfg.hidden, kActions1)),
        buffer_(cfg.buffer_capacity) {
    cfg_.validate();
    std::mt19937_64 init_rng(seed);
    q0_.init(init_rng);
    q1_.init(init_rng);
    sync_targets();
    opt0_ = Adam(q0_, {cfg_.lr});
    opt1_ = Adam(q1_, {cfg_.lr});
  }

  DualAgentLearner(LearnerConfig cfg, QNetwork q0, QNetwork q1)
      : cfg_(cfg), q0_(std::move(q0)), q1_(std::move(q1)), buffer_(cfg.buffer_capacity) {
    cfg_.validate();
    if (q0_.input_dim() != kObsDim || q0_.output_dim() != kActions0 || q1_.input_dim() != kObsDimRobot ||
        q1_.output_dim() != kActions1)
      throw FormatError("checkpoint network shapes do not match the observation/action layout");
    sync_targets();
    opt0_ = Adam(q0_, {cfg_.lr});
    opt1_ = Adam(q1_, {cfg_.lr});
  }

  static DualAgentLearner from_checkpoint(const std::string& path, LearnerConfig cfg = {}) {
    auto nets = load_checkpoint(path);
    if (nets.size() != 2) throw FormatError(path + ": expected 2 networks");
    return DualAgentLearner(cfg, std::move(nets[0]), std::move(nets[1]));
  }

  void save(const std::string& path) const { save_checkpoint(path, {&q0_, &q1_}); }

  const LearnerConfig& config() const { return cfg_; }
  const QNetwork& net0() const { return q0_; }
  const QNetwork& net1() const { return q1_; }
  QNetwork& net0() { return q0_; }
  QNetwork& net1() { return q1_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  long long updates() const { return updates_; }

  // Human agent first, then the robot agent conditioned on the human's choice.
  template <class Rng>
  ActionPair select_actions(const VecX& s, double eps_greedy, Rng& rng) const {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    ActionPair a;
    if (u01(rng) < eps_greedy) {
      a.action_0 = 1 + std::uniform_int_distribution<int>(0, kActions0 - 1)(rng);
    } else {
      a.action_0 = 1 + argmax_index(q0_.forward(s));
    }
    if (u01(rng) < eps_greedy) {
      a.action_1 = 1 + std::uniform_int_distribution<int>(0, kActions1 - 1)(rng);
    } else {
      a.action_1 = 1 + argmax_index(q1_.forward(robot_observation(s, a.action_0)));
    }
    return a;
  }

  ActionPair greedy(const VecX& s) const {
    ActionPair a;
    a.action_0 = 1 + argmax_index(q0_.forward(s));
    a.action_1 = 1 + argmax_index(q1_.forward(robot_observation(s, a.action_0)));
    return a;
  }

  void remember(Transition t) { buffer_.push(std::move(t)); }

  // One minibatch update of both agents; no-op until the buffer holds a batch.
  template <class Rng>
  TrainLosses train_step(Rng& rng) {
    TrainLosses out;
    if (buffer_.size() < static_cast<std::size_t>(cfg_.batch)) return out;
    const auto idx = buffer_.sample_indices(static_cast<std::size_t>(cfg_.batch), rng);
    const int B = cfg_.batch;

    MatX S0(kObsDim, B), S0n(kObsDim, B), S1(kObsDimRobot, B);
    VecX r(B), live(B);
    std::vector<int> a0(static_cast<std::size_t>(B)), a1(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) {
      const auto& t = buffer_.raw(idx[static_cast<std::size_t>(b)]);
      S0.col(b) = t.state;
      S0n.col(b) = t.terminal ? VecX(VecX::Zero(kObsDim)) : t.next_state;
      S1.col(b) = robot_observation(t.state, t.action_0);
      r[b] = t.reward;
      live[b] = t.terminal ? 0.0 : 1.0;
      a0[static_cast<std::size_t>(b)] = t.action_0 - 1;
      a1[static_cast<std::size_t>(b)] = t.action_1 - 1;
    }

    // Bootstrap targets from the target nets; Agent_1's next radius bit is
    // the target human agent's greedy choice.
    const MatX q0_next = t0_.forward_batch(S0n);
    MatX S1n(kObsDimRobot, B);
    VecX y0(B);
    for (int b = 0; b < B; ++b) {
      const int next_a0 = 1 + argmax_index(q0_next.col(b));
      y0[b] = r[b] + cfg_.discount * live[b] * q0_next.col(b).maxCoeff();
      S1n.col(b) = robot_observation(S0n.col(b), next_a0);
    }
    const MatX q1_next = t1_.forward_batch(S1n);
    VecX y1(B);
    for (int b = 0; b < B; ++b) y1[b] = r[b] + cfg_.discount * live[b] * q1_next.col(b).maxCoeff();

    out.agent_0 = fit(q0_, opt0_, S0, a0, y0);
    out.agent_1 = fit(q1_, opt1_, S1, a1, y1);

    if (++updates_ % cfg_.target_period == 0) sync_targets();
    return out;
  }

  void sync_targets() {
    t0_ = q0_;
    t1_ = q1_;
  }

private:
  // Huber (clipped-quadratic) TD loss on the taken actions, mean over the batch.
  double fit(QNetwork& net, Adam& opt, const MatX& S, const std::vector<int>& a, const VecX& y) {
    QNetwork::Cache cache;
    const MatX q = net.forward_batch(S, &cache);
    MatX d = MatX::Zero(q.rows(), q.cols());
    double loss = 0.0;
    const double k = cfg_.huber_delta;
    const double n = static_cast<double>(S.cols());
    for (Eigen::Index b = 0; b < S.cols(); ++b) {
      const double err = q(a[static_cast<std::size_t>(b)], b) - y[b];
      const double ae = std::abs(err);
      loss += ae <= k ? 0.5 * err * err : k * (ae - 0.5 * k);
      d(a[static_cast<std::size_t>(b)], b) = std::clamp(err, -k, k) / n;
    }
    opt.step(net, net.backward(cache, d));
    return loss / n;
  }

  LearnerConfig cfg_;
  QNetwork q0_, q1_, t0_, t1_;
  Adam opt0_, opt1_;
  ReplayBuffer buffer_;
  long long updates_ = 0;
};

}  // namespace coadapt
