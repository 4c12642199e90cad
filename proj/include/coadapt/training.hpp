#pragma once

#include "coadapt/sim_env.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace coadapt {

enum class RewardVariant { r1, r2 };

inline std::string to_string(RewardVariant v) { return v == RewardVariant::r1 ? "r1" : "r2"; }

inline RewardVariant reward_variant_from_string(const std::string& s) {
  if (s == "r1") return RewardVariant::r1;
  if (s == "r2") return RewardVariant::r2;
  throw ConfigInvalid("unknown reward variant '" + s + "' (expected r1 or r2)");
}

// Reward 1 drops the time penalty; Reward 2 keeps every term.
inline RewardWeights weights_for(RewardVariant v, RewardWeights base) {
  if (v == RewardVariant::r1) base.beta = 0.0;
  return base;
}

struct TrainingConfig {
  World world;
  EpisodeConfig env;
  LearnerConfig learner;
  RewardVariant variant = RewardVariant::r2;
  int episodes = 5000;
  std::uint64_t seed = 1;
  int eval_every = 50;
  int eval_episodes = 30;
  int checkpoint_every = 500;
  std::string out_dir;  // empty: nothing written

  void validate() const {
    world.validate();
    env.validate();
    learner.validate();
    if (episodes < 0) throw ConfigInvalid("train.episodes must be >= 0");
    if (eval_every <= 0 || eval_episodes < 0 || checkpoint_every <= 0)
      throw ConfigInvalid("train evaluation/checkpoint periods must be positive");
  }
};

struct EvalPoint {
  int episode = 0;  // training episodes completed
  double mean_return = 0.0;
  double success_rate = 0.0;
  double mean_total_time = 0.0;
  double mean_final_error = 0.0;
};

struct EpisodeLog {
  int episode = 0;
  double episode_return = 0.0;
  double mean_reward = 0.0;
  double td_loss = 0.0;
  double eps_greedy = 0.0;
  bool success = false;
  int steps = 0;
};

struct TrainingResult {
  std::vector<EpisodeLog> episodes;
  std::vector<EvalPoint> evals;
  ModelPosterior posterior;
  std::string final_checkpoint;
  std::string best_checkpoint;
  EvalPoint best_eval;
  QNetwork net0, net1;
};

// Episode seeds are disjoint between training and evaluation streams.
inline std::uint64_t training_seed(std::uint64_t base, int episode) {
  return base * 1000003ULL + static_cast<std::uint64_t>(episode);
}
inline std::uint64_t evaluation_seed(int k) { return 900000000ULL + static_cast<std::uint64_t>(k); }

inline Policy greedy_policy(const DualAgentLearner& learner) {
  Policy p;
  p.act = [&learner](const PolicyInput& in) { return learner.greedy(in.observation); };
  return p;
}

// Most frequently used model of an episode (lowest flat index on ties).
inline ModelIndex modal_model(const EpisodeTrace& tr, ModelIndex fallback) {
  std::array<int, ModelIndex::kCount> counts{};
  for (const auto& r : tr.records) ++counts[static_cast<std::size_t>(r.command.model.flat())];
  int best = -1;
  for (int k = 0; k < ModelIndex::kCount; ++k)
    if (counts[static_cast<std::size_t>(k)] > 0 && (best < 0 || counts[static_cast<std::size_t>(k)] > counts[static_cast<std::size_t>(best)]))
      best = k;
  return best < 0 ? fallback : ModelIndex::from_flat(best);
}

inline EvalPoint evaluate(const DualAgentLearner& learner, const World& w, EpisodeConfig env, int episodes,
                          int at_episode) {
  EvalPoint ev;
  ev.episode = at_episode;
  if (episodes == 0) return ev;
  env.controller = Controller::dammrl;
  Policy p = greedy_policy(learner);
  for (int k = 0; k < episodes; ++k) {
    env.seed = evaluation_seed(k);
    const auto tr = run_episode(w, env, p);
    ev.mean_return += tr.summary.total_reward;
    ev.success_rate += tr.summary.success ? 1.0 : 0.0;
    ev.mean_total_time += tr.summary.total_time;
    ev.mean_final_error += tr.summary.final_error;
  }
  const double n = episodes;
  ev.mean_return /= n;
  ev.success_rate /= n;
  ev.mean_total_time /= n;
  ev.mean_final_error /= n;
  return ev;
}

inline TrainingResult run_training(const TrainingConfig& cfg_in) {
  TrainingConfig cfg = cfg_in;
  cfg.world.weights = weights_for(cfg.variant, cfg.world.weights);
  cfg.env.fidelity = Fidelity::fast;
  cfg.env.controller = Controller::dammrl;
  cfg.validate();

  namespace fs = std::filesystem;
  const bool write = !cfg.out_dir.empty();
  std::ofstream metrics, evals;
  if (write) {
    fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
    metrics.open(fs::path(cfg.out_dir) / "metrics.csv");
    evals.open(fs::path(cfg.out_dir) / "eval.csv");
    if (!metrics || !evals) throw std::runtime_error("cannot write training logs in " + cfg.out_dir);
    metrics << "episode,mean_reward,td_loss,eps_greedy,episode_return,success,steps\n";
    evals << "episode,mean_return,success_rate,mean_total_time,mean_final_error\n";
    metrics.precision(10);
    evals.precision(10);
  }

  DualAgentLearner learner(cfg.learner, cfg.seed);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TrainingResult result;
  long long env_step = 0;

  auto checkpoint = [&](int episode) {
    if (!write) return;
    const auto path = fs::path(cfg.out_dir) / "checkpoints" / ("ep" + std::to_string(episode) + ".damm");
    learner.save(path.string());
    learner.save((fs::path(cfg.out_dir) / "checkpoints" / "latest.damm").string());
    result.final_checkpoint = (fs::path(cfg.out_dir) / "checkpoints" / "latest.damm").string();
  };
  // best.damm keeps the parameters with the highest evaluation return so far.
  auto log_eval = [&](int episode) {
    const auto ev = evaluate(learner, cfg.world, cfg.env, cfg.eval_episodes, episode);
    result.evals.push_back(ev);
    if (result.evals.size() == 1 || ev.mean_return >= result.best_eval.mean_return) {
      result.best_eval = ev;
      if (write) {
        result.best_checkpoint = (fs::path(cfg.out_dir) / "checkpoints" / "best.damm").string();
        learner.save(result.best_checkpoint);
      }
    }
    if (write)
      evals << ev.episode << ',' << ev.mean_return << ',' << ev.success_rate << ',' << ev.mean_total_time << ','
            << ev.mean_final_error << '\n';
  };

  log_eval(0);
  if (cfg.episodes == 0) checkpoint(0);

  double loss_sum = 0.0;
  int loss_n = 0;
  Policy policy;
  policy.act = [&](const PolicyInput& in) {
    return learner.select_actions(in.observation, epsilon_schedule(env_step, cfg.learner), rng);
  };
  policy.learn = [&](const Transition& t) {
    learner.remember(t);
    ++env_step;
    const auto l = learner.train_step(rng);
    loss_sum += 0.5 * (l.agent_0 + l.agent_1);
    ++loss_n;
  };

  for (int ep = 1; ep <= cfg.episodes; ++ep) {
    EpisodeConfig env = cfg.env;
    env.seed = training_seed(cfg.seed, ep);
    loss_sum = 0.0;
    loss_n = 0;
    const double eps_at_start = epsilon_schedule(env_step, cfg.learner);
    const auto tr = run_episode(cfg.world, env, policy);

    EpisodeLog log;
    log.episode = ep;
    log.episode_return = tr.summary.total_reward;
    log.steps = tr.summary.microstep_count;
    log.mean_reward = log.steps > 0 ? log.episode_return / log.steps : 0.0;
    log.td_loss = loss_n > 0 ? loss_sum / loss_n : 0.0;
    log.eps_greedy = eps_at_start;
    log.success = tr.summary.success;
    result.episodes.push_back(log);
    result.posterior.update({modal_model(tr, cfg.env.initial_model), tr.summary.success, tr.summary.total_reward});
    if (write)
      metrics << log.episode << ',' << log.mean_reward << ',' << log.td_loss << ',' << log.eps_greedy << ','
              << log.episode_return << ',' << (log.success ? 1 : 0) << ',' << log.steps << '\n';

    if (ep % cfg.eval_every == 0) log_eval(ep);
    if (ep % cfg.checkpoint_every == 0 || ep == cfg.episodes) checkpoint(ep);
  }
  if (write) result.posterior.save((fs::path(cfg.out_dir) / "posterior.csv").string());
  result.net0 = learner.net0();
  result.net1 = learner.net1();
  return result;
}

}  // namespace coadapt
