#pragma once

#include "coadapt/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <set>
#include <string>

namespace coadapt {

// Defaults for the training driver and the comparison harness.
struct ExperimentSettings {
  int train_episodes = 5000;
  int eval_every = 50;
  int eval_episodes = 30;
  int checkpoint_every = 500;
  int compare_episodes = 100;
  std::uint64_t seed_base = 1;
  int bootstrap_resamples = 1000;
  std::string out_dir = "runs";

  void validate() const {
    if (train_episodes < 0 || eval_every <= 0 || eval_episodes < 0 || checkpoint_every <= 0 || compare_episodes <= 0)
      throw ConfigInvalid("experiment counts must be positive");
    if (bootstrap_resamples <= 0) throw ConfigInvalid("experiment.bootstrap_resamples must be > 0");
  }
};

struct AppConfig {
  World world;
  EpisodeConfig env;
  LearnerConfig learner;
  ExperimentSettings experiment;

  void validate() const {
    world.validate();
    env.validate();
    learner.validate();
    experiment.validate();
  }
};

namespace cfgdetail {

using nlohmann::json;

inline void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigInvalid(section + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ConfigInvalid(section + ": unknown key '" + k + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigInvalid(section + "." + key + ": wrong type");
  }
}

template <int N>
void read_vec(const json& j, const char* key, Eigen::Matrix<double, N, 1>& out, const std::string& section) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != static_cast<std::size_t>(N))
    throw ConfigInvalid(section + "." + key + ": expected " + std::to_string(N) + " numbers");
  for (int k = 0; k < N; ++k) {
    if (!a[static_cast<std::size_t>(k)].is_number()) throw ConfigInvalid(section + "." + key + ": expected numbers");
    out[k] = a[static_cast<std::size_t>(k)].get<double>();
  }
}

inline void read_model(const json& j, const char* key, ModelIndex& out, const std::string& section) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 2 || !a[0].is_number_integer() || !a[1].is_number_integer())
    throw ConfigInvalid(section + "." + key + ": expected [i, j]");
  out = {a[0].get<int>(), a[1].get<int>()};
}

template <int N>
json vec(const Eigen::Matrix<double, N, 1>& v) {
  auto a = json::array();
  for (int k = 0; k < N; ++k) a.push_back(v[k]);
  return a;
}

inline void parse_robot(const json& j, World& w) {
  const std::string s = "robot";
  check_keys(j, s, {"joints", "q_min", "q_max", "vel_limit", "link_mass", "armature", "link_com", "gravity", "ik", "gains"});
  auto& r = w.robot;
  if (j.contains("joints")) {
    const auto& js = j.at("joints");
    if (!js.is_array() || js.size() != static_cast<std::size_t>(kDof))
      throw ConfigInvalid("robot.joints: expected exactly 6 joints");
    for (std::size_t k = 0; k < js.size(); ++k) {
      const std::string sj = s + ".joints[" + std::to_string(k) + "]";
      check_keys(js[k], sj, {"a", "d", "alpha", "theta_offset"});
      read(js[k], "a", r.joints[k].a, sj);
      read(js[k], "d", r.joints[k].d, sj);
      read(js[k], "alpha", r.joints[k].alpha, sj);
      read(js[k], "theta_offset", r.joints[k].theta_offset, sj);
    }
  }
  read_vec<kDof>(j, "q_min", r.q_min, s);
  read_vec<kDof>(j, "q_max", r.q_max, s);
  read_vec<kDof>(j, "vel_limit", r.vel_limit, s);
  read_vec<kDof>(j, "link_mass", r.link_mass, s);
  read_vec<kDof>(j, "armature", r.armature, s);
  read_vec<3>(j, "gravity", r.gravity, s);
  if (j.contains("link_com")) {
    const auto& c = j.at("link_com");
    if (!c.is_array() || c.size() != static_cast<std::size_t>(kDof))
      throw ConfigInvalid("robot.link_com: expected 6 offsets");
    for (std::size_t k = 0; k < c.size(); ++k) {
      json wrap = {{"c", c[k]}};
      read_vec<3>(wrap, "c", r.link_com[k], s + ".link_com");
    }
  }
  if (j.contains("ik")) {
    const auto& ik = j.at("ik");
    check_keys(ik, s + ".ik", {"tolerance", "damping", "max_iterations", "max_joint_step"});
    read(ik, "tolerance", w.ik.tolerance, s + ".ik");
    read(ik, "damping", w.ik.damping, s + ".ik");
    read(ik, "max_iterations", w.ik.max_iterations, s + ".ik");
    read(ik, "max_joint_step", w.ik.max_joint_step, s + ".ik");
    if (!(w.ik.tolerance > 0.0 && w.ik.damping >= 0.0 && w.ik.max_iterations > 0 && w.ik.max_joint_step > 0.0))
      throw ConfigInvalid("robot.ik: tolerance, max_iterations and max_joint_step must be positive");
  }
  if (j.contains("gains")) {
    const auto& g = j.at("gains");
    check_keys(g, s + ".gains", {"kp", "kd"});
    read_vec<kDof>(g, "kp", w.gains.kp, s + ".gains");
    read_vec<kDof>(g, "kd", w.gains.kd, s + ".gains");
  }
}

inline void parse_trigger(const json& j, TriggerConfig& t) {
  const std::string s = "trigger";
  check_keys(j, s, {"W", "epsilon_big", "epsilon_small", "epsilon_goal"});
  if (j.contains("W")) {
    const auto& W = j.at("W");
    if (!W.is_array() || W.size() != 3) throw ConfigInvalid("trigger.W: expected a 3x3 array");
    for (std::size_t r = 0; r < 3; ++r) {
      json wrap = {{"row", W[r]}};
      Vec3 row;
      read_vec<3>(wrap, "row", row, "trigger.W");
      t.W.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
  }
  read(j, "epsilon_big", t.epsilon_big, s);
  read(j, "epsilon_small", t.epsilon_small, s);
  read(j, "epsilon_goal", t.epsilon_goal, s);
}

inline void parse_agents(const json& j, World& w) {
  const std::string s = "agents";
  check_keys(j, s, {"magnitudes", "human"});
  if (j.contains("magnitudes")) {
    const auto& m = j.at("magnitudes");
    check_keys(m, s + ".magnitudes", {"small", "big"});
    read_vec<3>(m, "small", w.magnitudes.small, s + ".magnitudes");
    read_vec<3>(m, "big", w.magnitudes.big, s + ".magnitudes");
  }
  if (j.contains("human")) {
    const auto& h = j.at("human");
    check_keys(h, s + ".human", {"err_rate_big", "err_rate_small", "t_dec_big", "t_dec_small"});
    read(h, "err_rate_big", w.human.err_rate_big, s + ".human");
    read(h, "err_rate_small", w.human.err_rate_small, s + ".human");
    read(h, "t_dec_big", w.human.t_dec_big, s + ".human");
    read(h, "t_dec_small", w.human.t_dec_small, s + ".human");
  }
}

inline void parse_learner(const json& j, LearnerConfig& l, RewardWeights& rw) {
  const std::string s = "learner";
  check_keys(j, s, {"hidden", "buffer_capacity", "batch", "discount", "lr", "target_period", "eps_start", "eps_end",
                    "eps_decay_steps", "huber_delta", "reward"});
  read(j, "hidden", l.hidden, s);
  read(j, "buffer_capacity", l.buffer_capacity, s);
  read(j, "batch", l.batch, s);
  read(j, "discount", l.discount, s);
  read(j, "lr", l.lr, s);
  read(j, "target_period", l.target_period, s);
  read(j, "eps_start", l.eps_start, s);
  read(j, "eps_end", l.eps_end, s);
  read(j, "eps_decay_steps", l.eps_decay_steps, s);
  read(j, "huber_delta", l.huber_delta, s);
  if (j.contains("reward")) {
    const auto& r = j.at("reward");
    check_keys(r, s + ".reward", {"alpha", "beta", "gamma", "eta", "rho", "error_scale"});
    read(r, "alpha", rw.alpha, s + ".reward");
    read(r, "beta", rw.beta, s + ".reward");
    read(r, "gamma", rw.gamma, s + ".reward");
    read(r, "eta", rw.eta, s + ".reward");
    read(r, "rho", rw.rho, s + ".reward");
    read(r, "error_scale", rw.error_scale, s + ".reward");
  }
}

inline void parse_env(const json& j, EpisodeConfig& e) {
  const std::string s = "env";
  check_keys(j, s, {"box", "min_separation", "max_wall_time", "max_microsteps", "fidelity", "controller", "fixed_period",
                    "fixed_model", "initial_model", "trigger_timeout", "dt", "primary_axis", "home"});
  if (j.contains("box")) {
    const auto& b = j.at("box");
    check_keys(b, s + ".box", {"lo", "hi"});
    read_vec<3>(b, "lo", e.box.lo, s + ".box");
    read_vec<3>(b, "hi", e.box.hi, s + ".box");
  }
  read(j, "min_separation", e.min_separation, s);
  read(j, "max_wall_time", e.max_wall_time, s);
  read(j, "max_microsteps", e.max_microsteps, s);
  if (j.contains("fidelity")) e.fidelity = fidelity_from_string(j.at("fidelity").get<std::string>());
  if (j.contains("controller")) e.controller = controller_from_string(j.at("controller").get<std::string>());
  read(j, "fixed_period", e.fixed_period, s);
  read_model(j, "fixed_model", e.fixed_model, s);
  read_model(j, "initial_model", e.initial_model, s);
  read(j, "trigger_timeout", e.trigger_timeout, s);
  read(j, "dt", e.dt, s);
  read(j, "primary_axis", e.primary_axis, s);
  read_vec<kDof>(j, "home", e.home, s);
}

inline void parse_experiment(const json& j, ExperimentSettings& x) {
  const std::string s = "experiment";
  check_keys(j, s, {"train_episodes", "eval_every", "eval_episodes", "checkpoint_every", "compare_episodes", "seed_base",
                    "bootstrap_resamples", "out_dir"});
  read(j, "train_episodes", x.train_episodes, s);
  read(j, "eval_every", x.eval_every, s);
  read(j, "eval_episodes", x.eval_episodes, s);
  read(j, "checkpoint_every", x.checkpoint_every, s);
  read(j, "compare_episodes", x.compare_episodes, s);
  read(j, "seed_base", x.seed_base, s);
  read(j, "bootstrap_resamples", x.bootstrap_resamples, s);
  read(j, "out_dir", x.out_dir, s);
}

}  // namespace cfgdetail

// Missing keys keep their defaults; unknown keys are rejected.
inline AppConfig config_from_json(const nlohmann::json& j) {
  using namespace cfgdetail;
  check_keys(j, "config", {"robot", "trigger", "agents", "learner", "env", "experiment"});
  AppConfig c;
  try {
    if (j.contains("robot")) parse_robot(j.at("robot"), c.world);
    if (j.contains("trigger")) parse_trigger(j.at("trigger"), c.world.trigger);
    if (j.contains("agents")) parse_agents(j.at("agents"), c.world);
    if (j.contains("learner")) parse_learner(j.at("learner"), c.learner, c.world.weights);
    if (j.contains("env")) parse_env(j.at("env"), c.env);
    if (j.contains("experiment")) parse_experiment(j.at("experiment"), c.experiment);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json config_to_json(const AppConfig& c) {
  using cfgdetail::vec;
  using nlohmann::json;
  const auto& r = c.world.robot;
  json joints = json::array(), coms = json::array();
  for (int k = 0; k < kDof; ++k) {
    const auto& jt = r.joints[static_cast<std::size_t>(k)];
    joints.push_back({{"a", jt.a}, {"d", jt.d}, {"alpha", jt.alpha}, {"theta_offset", jt.theta_offset}});
    coms.push_back(vec<3>(r.link_com[static_cast<std::size_t>(k)]));
  }
  json W = json::array();
  for (int k = 0; k < 3; ++k) W.push_back(vec<3>(c.world.trigger.W.row(k).transpose()));
  const auto& rw = c.world.weights;
  const auto& l = c.learner;
  const auto& e = c.env;
  const auto& x = c.experiment;
  return {
      {"robot",
       {{"joints", joints},
        {"q_min", vec<kDof>(r.q_min)},
        {"q_max", vec<kDof>(r.q_max)},
        {"vel_limit", vec<kDof>(r.vel_limit)},
        {"link_mass", vec<kDof>(r.link_mass)},
        {"armature", vec<kDof>(r.armature)},
        {"link_com", coms},
        {"gravity", vec<3>(r.gravity)},
        {"ik",
         {{"tolerance", c.world.ik.tolerance},
          {"damping", c.world.ik.damping},
          {"max_iterations", c.world.ik.max_iterations},
          {"max_joint_step", c.world.ik.max_joint_step}}},
        {"gains", {{"kp", vec<kDof>(c.world.gains.kp)}, {"kd", vec<kDof>(c.world.gains.kd)}}}}},
      {"trigger",
       {{"W", W},
        {"epsilon_big", c.world.trigger.epsilon_big},
        {"epsilon_small", c.world.trigger.epsilon_small},
        {"epsilon_goal", c.world.trigger.epsilon_goal}}},
      {"agents",
       {{"magnitudes", {{"small", vec<3>(c.world.magnitudes.small)}, {"big", vec<3>(c.world.magnitudes.big)}}},
        {"human",
         {{"err_rate_big", c.world.human.err_rate_big},
          {"err_rate_small", c.world.human.err_rate_small},
          {"t_dec_big", c.world.human.t_dec_big},
          {"t_dec_small", c.world.human.t_dec_small}}}}},
      {"learner",
       {{"hidden", l.hidden},
        {"buffer_capacity", l.buffer_capacity},
        {"batch", l.batch},
        {"discount", l.discount},
        {"lr", l.lr},
        {"target_period", l.target_period},
        {"eps_start", l.eps_start},
        {"eps_end", l.eps_end},
        {"eps_decay_steps", l.eps_decay_steps},
        {"huber_delta", l.huber_delta},
        {"reward",
         {{"alpha", rw.alpha},
          {"beta", rw.beta},
          {"gamma", rw.gamma},
          {"eta", rw.eta},
          {"rho", rw.rho},
          {"error_scale", rw.error_scale}}}}},
      {"env",
       {{"box", {{"lo", vec<3>(e.box.lo)}, {"hi", vec<3>(e.box.hi)}}},
        {"min_separation", e.min_separation},
        {"max_wall_time", e.max_wall_time},
        {"max_microsteps", e.max_microsteps},
        {"fidelity", to_string(e.fidelity)},
        {"controller", to_string(e.controller)},
        {"fixed_period", e.fixed_period},
        {"fixed_model", {e.fixed_model.i, e.fixed_model.j}},
        {"initial_model", {e.initial_model.i, e.initial_model.j}},
        {"trigger_timeout", e.trigger_timeout},
        {"dt", e.dt},
        {"primary_axis", e.primary_axis},
        {"home", vec<kDof>(e.home)}}},
      {"experiment",
       {{"train_episodes", x.train_episodes},
        {"eval_every", x.eval_every},
        {"eval_episodes", x.eval_episodes},
        {"checkpoint_every", x.checkpoint_every},
        {"compare_episodes", x.compare_episodes},
        {"seed_base", x.seed_base},
        {"bootstrap_resamples", x.bootstrap_resamples},
        {"out_dir", x.out_dir}}}};
}

inline AppConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigInvalid(path + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const ConfigInvalid& e) {
    throw ConfigInvalid(path + ": " + e.what());
  }
}

// Explicit path, else $COADAPT_CONFIG, else built-in defaults.
inline AppConfig resolve_config(const std::string& explicit_path = {}) {
  if (!explicit_path.empty()) return load_config(explicit_path);
  if (const char* env = std::getenv("COADAPT_CONFIG"); env && *env) return load_config(env);
  AppConfig c;
  c.validate();
  return c;
}

}  // namespace coadapt
