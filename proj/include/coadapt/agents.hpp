#pragma once

#include "coadapt/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

namespace coadapt {

// Pairing (i, j) of the human admission-radius model i in {1, 2}
// (1 = big, 2 = small) with the robot step-magnitude combination j in 1..8.
// j = 1 + b_x + 2 b_y + 4 b_z where b_axis = 1 selects the big magnitude.
struct ModelIndex {
  int i = 1;
  int j = 1;

  static constexpr int kHumanModels = 2;
  static constexpr int kRobotModels = 8;
  static constexpr int kCount = kHumanModels * kRobotModels;

  bool valid() const { return i >= 1 && i <= kHumanModels && j >= 1 && j <= kRobotModels; }

  // Flat position 0..15 in the multi-model set.
  int flat() const { return (i - 1) * kRobotModels + (j - 1); }
  static ModelIndex from_flat(int k) { return {k / kRobotModels + 1, k % kRobotModels + 1}; }

  friend bool operator==(const ModelIndex&, const ModelIndex&) = default;
};

inline std::array<bool, 3> decode_robot_action(int j) {
  const int b = j - 1;
  return {(b & 1) != 0, (b & 2) != 0, (b & 4) != 0};
}

inline int encode_robot_action(const std::array<bool, 3>& big) {
  return 1 + (big[0] ? 1 : 0) + (big[1] ? 2 : 0) + (big[2] ? 4 : 0);
}

struct StepMagnitudes {
  Vec3 small = Vec3::Constant(0.01);
  Vec3 big = Vec3::Constant(0.04);

  void validate() const {
    for (int a = 0; a < 3; ++a)
      if (!(small[a] > 0.0 && small[a] < big[a]))
        throw ConfigInvalid("agents.step magnitudes must satisfy 0 < small < big on every axis");
  }
};

struct HumanProfile {
  double err_rate_big = 0.20;
  double err_rate_small = 0.10;
  double t_dec_big = 0.5;
  double t_dec_small = 1.0;

  double err_rate(int action_i) const { return action_i == 1 ? err_rate_big : err_rate_small; }
  double decision_time(int action_i) const { return action_i == 1 ? t_dec_big : t_dec_small; }

  void validate() const {
    for (double r : {err_rate_big, err_rate_small})
      if (!(r >= 0.0 && r < 0.5)) throw ConfigInvalid("agents.human error rates must lie in [0, 0.5)");
    if (!(t_dec_big > 0.0 && t_dec_big < t_dec_small))
      throw ConfigInvalid("agents.human decision times must satisfy 0 < t_dec_big < t_dec_small");
  }
};

struct StepCommand {
  int u_h = 1;
  double epsilon = 0.0;
  Vec3 deltas = Vec3::Zero();
  Vec3 delta_x = Vec3::Zero();
  double decision_time = 0.0;
  ModelIndex model;
};

struct HumanDecision {
  int u_h = 1;
  int intended = 1;
  double epsilon = 0.0;
  double decision_time = 0.0;
};

// Intended direction follows the primary-axis error (0 counts as +1); the
// communicated bit is flipped with the error rate of the chosen radius.
template <class Rng>
HumanDecision human_decide(const HumanProfile& profile, const Vec3& e, int action_i, double epsilon_big,
                           double epsilon_small, Rng& rng, int primary_axis = 0) {
  HumanDecision d;
  d.intended = e[primary_axis] < 0.0 ? -1 : 1;
  std::bernoulli_distribution flip(profile.err_rate(action_i));
  d.u_h = flip(rng) ? -d.intended : d.intended;
  d.epsilon = action_i == 1 ? epsilon_big : epsilon_small;
  d.decision_time = profile.decision_time(action_i);
  return d;
}

inline Vec3 robot_act(const StepMagnitudes& m, int action_j) {
  const auto big = decode_robot_action(action_j);
  Vec3 d;
  for (int a = 0; a < 3; ++a) d[a] = big[static_cast<std::size_t>(a)] ? m.big[a] : m.small[a];
  return d;
}

// Primary axis moves by u_h * delta; the other axes move towards the goal by
// sgn(e_axis) * delta, with sgn(0) = 0. Errors below dead_zone count as zero.
inline Vec3 compose_step(int u_h, const Vec3& deltas, const Vec3& e, int primary_axis = 0, double dead_zone = 0.0) {
  Vec3 dx;
  for (int a = 0; a < 3; ++a)
    dx[a] = a == primary_axis ? u_h * deltas[a] : sign_of(e[a], dead_zone) * deltas[a];
  return dx;
}

// Beta(1 + successes, 1 + failures) over success probability per model,
// plus the running mean episode reward.
struct ModelStats {
  double successes = 0.0;
  double failures = 0.0;
  double reward_sum = 0.0;
  int episodes = 0;

  double alpha() const { return 1.0 + successes; }
  double beta() const { return 1.0 + failures; }
  double posterior_mean() const { return alpha() / (alpha() + beta()); }
  double mean_reward() const { return episodes > 0 ? reward_sum / episodes : 0.0; }
};

struct EpisodeOutcome {
  ModelIndex model;
  bool success = false;
  double reward = 0.0;
};

class ModelPosterior {
public:
  static constexpr int kFormatVersion = 1;

  const ModelStats& stats(const ModelIndex& m) const { return stats_[static_cast<std::size_t>(m.flat())]; }

  void update(const EpisodeOutcome& o) {
    auto& s = stats_[static_cast<std::size_t>(o.model.flat())];
    (o.success ? s.successes : s.failures) += 1.0;
    s.reward_sum += o.reward;
    ++s.episodes;
  }

  // Best first: posterior mean success, then mean reward, then lower j, then lower i.
  std::array<ModelIndex, ModelIndex::kCount> ranking() const {
    std::array<int, ModelIndex::kCount> order;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      const auto& sa = stats_[static_cast<std::size_t>(a)];
      const auto& sb = stats_[static_cast<std::size_t>(b)];
      if (sa.posterior_mean() != sb.posterior_mean()) return sa.posterior_mean() > sb.posterior_mean();
      if (sa.mean_reward() != sb.mean_reward()) return sa.mean_reward() > sb.mean_reward();
      const auto ma = ModelIndex::from_flat(a), mb = ModelIndex::from_flat(b);
      if (ma.j != mb.j) return ma.j < mb.j;
      return ma.i < mb.i;
    });
    std::array<ModelIndex, ModelIndex::kCount> out;
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = ModelIndex::from_flat(order[k]);
    return out;
  }

  ModelIndex best() const { return ranking().front(); }

  // Thompson draw: the model whose sampled success probability is largest.
  template <class Rng>
  ModelIndex sample(Rng& rng) const {
    int best_k = 0;
    double best_v = -1.0;
    for (int k = 0; k < ModelIndex::kCount; ++k) {
      const auto& s = stats_[static_cast<std::size_t>(k)];
      std::gamma_distribution<double> ga(s.alpha(), 1.0), gb(s.beta(), 1.0);
      const double x = ga(rng), y = gb(rng);
      const double v = x / (x + y);
      if (v > best_v) {
        best_v = v;
        best_k = k;
      }
    }
    return ModelIndex::from_flat(best_k);
  }

  // Versioned CSV table: header line "# coadapt-posterior v1", then one row per model.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write posterior table: " + path);
    out << "# coadapt-posterior v" << kFormatVersion << "\n";
    out << "i,j,successes,failures,reward_sum,episodes\n";
    out.precision(17);
    for (int k = 0; k < ModelIndex::kCount; ++k) {
      const auto m = ModelIndex::from_flat(k);
      const auto& s = stats_[static_cast<std::size_t>(k)];
      out << m.i << ',' << m.j << ',' << s.successes << ',' << s.failures << ',' << s.reward_sum << ','
          << s.episodes << "\n";
    }
  }

  static ModelPosterior load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read posterior table: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "# coadapt-posterior v" + std::to_string(kFormatVersion))
      throw FormatError(path + ": unsupported posterior table version");
    std::getline(in, line);
    ModelPosterior p;
    int rows = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string f;
      std::array<double, 6> v{};
      for (auto& x : v) {
        if (!std::getline(ls, f, ',')) throw FormatError(path + ": short row");
        x = std::stod(f);
      }
      const ModelIndex m{static_cast<int>(v[0]), static_cast<int>(v[1])};
      if (!m.valid()) throw FormatError(path + ": model index out of range");
      auto& s = p.stats_[static_cast<std::size_t>(m.flat())];
      s.successes = v[2];
      s.failures = v[3];
      s.reward_sum = v[4];
      s.episodes = static_cast<int>(v[5]);
      ++rows;
    }
    if (rows != ModelIndex::kCount) throw FormatError(path + ": expected 16 rows");
    return p;
  }

private:
  std::array<ModelStats, ModelIndex::kCount> stats_{};
};

// Functional form used by the trainer and the session service.
inline ModelPosterior posterior_update(ModelPosterior p, const EpisodeOutcome& o) {
  p.update(o);
  return p;
}

}  // namespace coadapt
