#pragma once

#include "coadapt/agents.hpp"
#include "coadapt/dqn.hpp"
#include "coadapt/event_trigger.hpp"
#include "coadapt/execution.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace coadapt {

enum class Controller { fixed_frequency, event_fixed_model, dammrl };

inline std::string to_string(Controller c) {
  switch (c) {
    case Controller::fixed_frequency: return "fixed_frequency";
    case Controller::event_fixed_model: return "event_fixed_model";
    case Controller::dammrl: return "dammrl";
  }
  return "?";
}

inline Controller controller_from_string(const std::string& s) {
  if (s == "fixed_frequency") return Controller::fixed_frequency;
  if (s == "event_fixed_model") return Controller::event_fixed_model;
  if (s == "dammrl") return Controller::dammrl;
  throw ConfigInvalid("unknown controller '" + s + "'");
}

// Static description of the robot, gate, agents and reward shared by episodes.
struct World {
  RobotModel robot = default_robot();
  IkOptions ik;
  CtcGains<kDof> gains;
  TriggerConfig trigger;
  StepMagnitudes magnitudes;
  HumanProfile human;
  RewardWeights weights;

  void validate() const {
    robot.validate();
    trigger.validate();
    magnitudes.validate();
    human.validate();
    weights.validate();
  }
};

struct EpisodeConfig {
  WorkspaceBox box;
  double min_separation = 0.15;
  double max_wall_time = 60.0;
  int max_microsteps = 200;
  Fidelity fidelity = Fidelity::fast;
  Controller controller = Controller::event_fixed_model;
  double fixed_period = 0.2;
  ModelIndex fixed_model{1, 8};
  ModelIndex initial_model{1, 1};
  double trigger_timeout = 2.0;
  double dt = 1e-3;
  int primary_axis = 0;
  Vec6 home = (Vec6() << 0.0, 0.6, -1.2, 0.0, 0.6, 0.0).finished();
  std::uint64_t seed = 0;
  std::optional<Vec3> start;
  std::optional<Vec3> goal;

  void validate() const {
    box.validate();
    if (!(max_wall_time > 0.0) || max_microsteps <= 0) throw ConfigInvalid("env budgets must be positive");
    if (!(fixed_period > 0.0)) throw ConfigInvalid("env.fixed_period must be > 0");
    if (!(dt > 0.0 && dt <= 0.01)) throw ConfigInvalid("env.dt must be in (0, 0.01]");
    if (!(trigger_timeout > 0.0)) throw ConfigInvalid("env.trigger_timeout must be > 0");
    if (!(min_separation >= 0.0)) throw ConfigInvalid("env.min_separation must be >= 0");
    if (!fixed_model.valid() || !initial_model.valid()) throw ConfigInvalid("env model indices out of range");
    if (primary_axis < 0 || primary_axis > 2) throw ConfigInvalid("env.primary_axis must be 0, 1 or 2");
  }
};

struct StepRecord {
  int k = 0;
  double t = 0.0;  // episode clock at the end of the cycle
  Vec3 x = Vec3::Zero();
  Vec6 q = Vec6::Zero();
  Vec3 subgoal = Vec3::Zero();
  int subgoal_index = 0;
  StepCommand command;
  int intended = 1;
  bool ik_ok = true;
  double exec_time = 0.0;
  bool fired = false;
  double fire_time = 0.0;  // since command issue
  double fire_dist = 0.0;
  double fire_V = 0.0;
  double fire_V_prev = 0.0;
  RewardTerms reward;
  double effort = 0.0;
  int n_osc = 0;
  int osc_cum = 0;
  double jerk = 0.0;
  double error = 0.0;  // ||x_g - x||
};

struct EpisodeSummary {
  std::string controller;
  std::string fidelity;
  std::uint64_t seed = 0;
  Vec3 x_start = Vec3::Zero();
  Vec3 x_goal = Vec3::Zero();
  double epsilon_goal = 0.0;
  bool success = false;
  bool aborted = false;
  double total_time = 0.0;
  double final_error = 0.0;
  int osc_count = 0;
  double jerk_integral = 0.0;
  int microstep_count = 0;
  double total_reward = 0.0;
};

struct EpisodeTrace {
  std::vector<StepRecord> records;
  EpisodeSummary summary;
};

// Summary as implied by the records alone (plus the episode header fields).
inline EpisodeSummary recompute_summary(const EpisodeTrace& tr) {
  EpisodeSummary s = tr.summary;
  s.total_time = 0.0;
  s.jerk_integral = 0.0;
  s.total_reward = 0.0;
  s.osc_count = 0;
  for (const auto& r : tr.records) {
    s.total_time += r.command.decision_time + r.exec_time;
    s.jerk_integral += r.jerk;
    s.total_reward += r.reward.total;
    s.osc_count = r.osc_cum;
  }
  s.microstep_count = static_cast<int>(tr.records.size());
  s.final_error = tr.records.empty() ? (tr.summary.x_goal - tr.summary.x_start).norm() : tr.records.back().error;
  s.success = s.final_error <= s.epsilon_goal;
  return s;
}

struct PolicyInput {
  Vec3 x;
  Vec3 x_goal;
  ModelIndex active;
  VecX observation;
};

// Chooses (i, j) each decision cycle; learn receives the resulting transition.
struct Policy {
  std::function<ActionPair(const PolicyInput&)> act;
  std::function<void(const Transition&)> learn;

  static Policy fixed(ModelIndex m) {
    Policy p;
    p.act = [m](const PolicyInput&) { return ActionPair{m.i, m.j}; };
    return p;
  }
};

// Joint-space plant: the quintic itself in fast mode, the CTC-tracked rigid
// body in dynamic mode.
class Plant {
public:
  Plant(const World& w, const Vec6& q0, Fidelity mode, double dt)
      : world_(&w), mode_(mode), dt_(dt), sim_(w.robot, JointState<kDof>{q0, Vec6::Zero()}, w.gains, dt) {
    q_ = q0;
    qdot_ = Vec6::Zero();
    ref_ = QuinticReference<kDof>(q0, Vec6::Zero(), Vec6::Zero(), q0, kMinStepDuration);
    x_ = forward_kinematics(w.robot, q_);
  }

  double retarget(const Vec6& q_target) {
    if (mode_ == Fidelity::dynamic) return sim_.retarget(q_target);
    const double T = microstep_duration(world_->robot, q_, q_target);
    ref_ = QuinticReference<kDof>(q_, qdot_, Vec6::Zero(), q_target, T);
    ref_t_ = 0.0;
    return T;
  }

  // Advances by h (dt, or less to land exactly on a fast-mode endpoint).
  // Returns the effort increment.
  double step(double h) {
    double effort = 0.0;
    if (mode_ == Fidelity::dynamic) {
      const auto out = sim_.step();
      q_ = sim_.state().q;
      qdot_ = sim_.state().qdot;
      effort = out.tau.cwiseAbs().sum() * dt_;
    } else {
      ref_t_ += h;
      const auto s = ref_.at(ref_t_);
      effort = (s.q - q_).cwiseAbs().sum();
      q_ = s.q;
      qdot_ = s.qdot;
    }
    x_ = forward_kinematics(world_->robot, q_);
    return effort;
  }

  // Keeps the commanded target; dynamic mode integrates, fast mode is static.
  void hold(double duration, const std::function<void()>& on_sample) {
    if (mode_ == Fidelity::fast) return;
    const int n = static_cast<int>(std::llround(duration / dt_));
    for (int k = 0; k < n; ++k) {
      step(dt_);
      on_sample();
    }
  }

  const Vec6& q() const { return q_; }
  const Vec6& qdot() const { return qdot_; }
  const Vec3& x() const { return x_; }
  Fidelity mode() const { return mode_; }

private:
  const World* world_;
  Fidelity mode_;
  double dt_;
  JointSimulator<kDof> sim_;
  QuinticReference<kDof> ref_;
  double ref_t_ = 0.0;
  Vec6 q_, qdot_;
  Vec3 x_;
};

struct EpisodeStart {
  Vec3 x_start;
  Vec3 x_goal;
  Vec6 q0;
};

// Draws (or validates) start and goal; the start configuration is the IK
// solution from the home pose.
template <class Rng>
EpisodeStart prepare_episode(const World& w, const EpisodeConfig& cfg, Rng& rng) {
  auto reachable = [&](const Vec3& x) { return ik_solve(w.robot, cfg.home, x, w.ik); };
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto draw = [&]() {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = cfg.box.lo[a] + u01(rng) * (cfg.box.hi[a] - cfg.box.lo[a]);
    return p;
  };
  EpisodeStart st;
  if (cfg.start && cfg.goal) {
    st.x_start = *cfg.start;
    st.x_goal = *cfg.goal;
  } else {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw ConfigInvalid("env.box: cannot draw a start/goal pair with the required separation");
      st.x_start = cfg.start ? *cfg.start : draw();
      st.x_goal = cfg.goal ? *cfg.goal : draw();
      if ((st.x_goal - st.x_start).norm() >= cfg.min_separation && reachable(st.x_start).ok() &&
          reachable(st.x_goal).ok())
        break;
    }
  }
  const auto s = reachable(st.x_start);
  if (!s.ok()) throw ConfigInvalid("start position is unreachable");
  if (!reachable(st.x_goal).ok()) throw ConfigInvalid("goal position is unreachable");
  st.q0 = s.q;
  return st;
}

namespace detail {

// Per-episode bookkeeping shared by the event-gated and fixed-frequency loops.
struct EpisodeRun {
  const World& w;
  const EpisodeConfig& cfg;
  std::mt19937_64 rng;
  EpisodeStart start;
  Plant plant;
  TriggerState trig;
  JerkAccumulator jerk;
  EpisodeTrace trace;
  double clock = 0.0;
  double osc_epsilon = 0.0;
  double jerk_mark = 0.0;
  ModelIndex active;

  EpisodeRun(const World& w_, const EpisodeConfig& c, std::mt19937_64 r, EpisodeStart st)
      : w(w_), cfg(c), rng(std::move(r)), start(st), plant(w_, st.q0, c.fidelity, c.dt), jerk(c.dt),
        active(c.initial_model) {
    trig.subgoal = plant.x();
    osc_epsilon = w.trigger.epsilon_small;
    jerk.push(plant.x());
    trace.summary.controller = to_string(cfg.controller);
    trace.summary.fidelity = to_string(cfg.fidelity);
    trace.summary.seed = cfg.seed;
    trace.summary.x_start = plant.x();
    trace.summary.x_goal = start.x_goal;
    trace.summary.epsilon_goal = w.trigger.epsilon_goal;
  }

  Vec3 goal_error() const { return start.x_goal - plant.x(); }
  bool at_goal() const { return goal_error().norm() <= w.trigger.epsilon_goal; }

  void sample() {
    jerk.push(plant.x());
    trig = count_oscillation(trig, trig.subgoal - plant.x(), osc_epsilon);
  }

  bool budget_left() const {
    return clock < cfg.max_wall_time && static_cast<int>(trace.records.size()) < cfg.max_microsteps;
  }

  void finish() {
    auto& s = trace.summary;
    s = recompute_summary(trace);
  }
};

}  // namespace detail

// One event-gated reaching episode, advanced a decision cycle at a time.
// run_episode drives it with the simulated human; the live session drives it
// with commands from a real operator.
class EventEpisode {
public:
  using SampleFn = std::function<void()>;

  EventEpisode(const World& w, const EpisodeConfig& cfg) : EventEpisode(w, cfg, std::mt19937_64(cfg.seed)) {}
  EventEpisode(const EventEpisode&) = delete;
  EventEpisode& operator=(const EventEpisode&) = delete;

  bool done() const { return run_->at_goal() || !run_->budget_left(); }
  bool at_goal() const { return run_->at_goal(); }

  PolicyInput policy_input() const {
    return {run_->plant.x(), run_->start.x_goal, run_->active,
            encode_observation(run_->cfg.box, run_->plant.x(), run_->start.x_goal, run_->active)};
  }

  // Simulated human for the given radius choice, drawn from the episode stream.
  HumanDecision simulated_decision(int action_i) {
    return human_decide(run_->w.human, run_->goal_error(), action_i, run_->w.trigger.epsilon_big,
                        run_->w.trigger.epsilon_small, run_->rng, run_->cfg.primary_axis);
  }

  // Robot holds its current command (integrated in dynamic mode).
  void hold(double duration, const SampleFn& on_sample = {}) {
    const double dt = run_->cfg.dt;
    run_->plant.hold(duration, [&] {
      run_->sample();
      now_ += dt;
      if (on_sample) on_sample();
    });
    if (run_->plant.mode() == Fidelity::fast) now_ += duration;
  }

  // Steps (b)-(f) of one cycle; the decision time must already have been held.
  // Returns the appended record and the learner transition.
  std::pair<StepRecord, Transition> execute(const ActionPair& a, const HumanDecision& hd,
                                            const SampleFn& on_sample = {}) {
    auto& run = *run_;
    const World& w = run.w;
    const EpisodeConfig& cfg = run.cfg;
    const double dt = cfg.dt;
    const ModelIndex model = a.model();
    const VecX obs = encode_observation(cfg.box, run.plant.x(), run.start.x_goal, run.active);

    StepRecord rec;
    rec.k = static_cast<int>(run.trace.records.size());
    StepCommand cmd;
    cmd.u_h = hd.u_h;
    cmd.epsilon = hd.epsilon;
    cmd.decision_time = hd.decision_time;
    cmd.deltas = robot_act(w.magnitudes, model.j);
    cmd.delta_x = compose_step(cmd.u_h, cmd.deltas, run.goal_error(), cfg.primary_axis, kSignDeadZone);
    cmd.model = model;
    rec.command = cmd;
    rec.intended = hd.intended;

    const Vec3 subgoal = run.plant.x() + cmd.delta_x;
    run.trig = set_subgoal(run.trig, subgoal, run.plant.x(), w.trigger.W);
    run.osc_epsilon = cmd.epsilon;
    subgoal_ = subgoal;
    epsilon_ = cmd.epsilon;
    const int osc_before = run.trace.records.empty() ? 0 : run.trace.records.back().osc_cum;
    const double cycle_start = run.clock + cmd.decision_time;
    auto tick = [&](double t_rel) {
      now_ = cycle_start + t_rel;
      if (on_sample) on_sample();
    };

    // (d) IK from the current configuration
    const auto ik = ik_solve(w.robot, run.plant.q(), subgoal, w.ik);
    rec.ik_ok = ik.ok();
    double effort = 0.0;
    double exec = 0.0;
    if (!ik.ok()) {
      run.plant.retarget(run.plant.q());
      exec = kMinStepDuration;
      int k = 0;
      run.plant.hold(exec, [&] {
        run.sample();
        tick(++k * dt);
      });
    } else {
      // (e) execute; (f) gate each sample in dynamic mode, at the endpoint in fast mode
      const double T = run.plant.retarget(ik.q);
      auto gate = [&](double t_rel) {
        const double v_prev = run.trig.V_prev;
        const auto d = check_trigger(run.trig, run.plant.x(), cmd.epsilon, w.trigger.W);
        if (d.fired) {
          rec.fired = true;
          rec.fire_time = t_rel;
          rec.fire_dist = (subgoal - run.plant.x()).norm();
          rec.fire_V = lyapunov(subgoal - run.plant.x(), w.trigger.W);
          rec.fire_V_prev = v_prev;
        }
        run.trig = d.state;
      };
      if (cfg.fidelity == Fidelity::fast) {
        const int n = static_cast<int>(std::ceil(T / dt - 1e-9));
        double t = 0.0;
        for (int k = 1; k <= n; ++k) {
          const double h = std::min(dt, T - t);
          t = k == n ? T : t + h;
          effort += run.plant.step(h);
          run.sample();
          tick(t);
        }
        exec = T;
        gate(T);
      } else {
        const int n = static_cast<int>(std::ceil(T / dt - 1e-9));
        const int n_max = n + static_cast<int>(std::llround(cfg.trigger_timeout / dt));
        int k = 0;
        while (k < n_max) {
          ++k;
          effort += run.plant.step(dt);
          run.sample();
          if (run.trig.armed) gate(k * dt);
          tick(k * dt);
          if (k >= n && rec.fired) break;
        }
        exec = k * dt;
      }
    }
    rec.exec_time = exec;
    run.clock += cmd.decision_time + exec;
    now_ = run.clock;

    const double jerk_now = run.jerk.integral();
    rec.jerk = jerk_now - run.jerk_mark;
    run.jerk_mark = jerk_now;
    rec.t = run.clock;
    rec.x = run.plant.x();
    rec.q = run.plant.q();
    rec.subgoal = subgoal;
    rec.subgoal_index = run.trig.subgoal_index;
    rec.effort = effort;
    rec.osc_cum = run.trig.osc_count;
    rec.n_osc = rec.osc_cum - osc_before;
    rec.error = run.goal_error().norm();
    const bool success = rec.error <= w.trigger.epsilon_goal;
    rec.reward = reward_terms(run.goal_error(), cmd.decision_time + exec, effort, rec.n_osc, success, w.weights);
    run.trace.records.push_back(rec);
    run.active = model;

    Transition tr;
    tr.state = obs;
    tr.action_0 = a.action_0;
    tr.action_1 = a.action_1;
    tr.reward = rec.reward.total;
    tr.next_state = encode_observation(cfg.box, run.plant.x(), run.start.x_goal, run.active);
    tr.terminal = success;
    return {rec, tr};
  }

  EpisodeTrace finish(bool aborted = false) {
    run_->finish();
    run_->trace.summary.aborted = aborted;
    return run_->trace;
  }

  // Live view of the episode.
  double sim_time() const { return now_; }
  const Vec3& x() const { return run_->plant.x(); }
  const Vec3& x_goal() const { return run_->start.x_goal; }
  Vec3 goal_error() const { return run_->goal_error(); }
  const Vec3& subgoal() const { return subgoal_; }
  double epsilon() const { return epsilon_; }
  int osc_count() const { return run_->trig.osc_count; }
  ModelIndex active_model() const { return run_->active; }
  const EpisodeTrace& trace() const { return run_->trace; }
  const EpisodeConfig& config() const { return cfg_; }

private:
  EventEpisode(const World& w, const EpisodeConfig& cfg, std::mt19937_64 rng) : world_(w), cfg_(cfg) {
    world_.validate();
    cfg_.validate();
    if (cfg_.controller == Controller::fixed_frequency)
      throw ConfigInvalid("event-gated episodes cannot use the fixed_frequency controller");
    const auto st = prepare_episode(world_, cfg_, rng);
    run_ = std::make_unique<detail::EpisodeRun>(world_, cfg_, std::move(rng), st);
    subgoal_ = run_->plant.x();
    epsilon_ = world_.trigger.epsilon_small;
  }

  World world_;
  EpisodeConfig cfg_;
  std::unique_ptr<detail::EpisodeRun> run_;
  double now_ = 0.0;
  Vec3 subgoal_;
  double epsilon_ = 0.0;
};

// Event-gated reaching episode (fixed model or DAMMRL policy).
inline EpisodeTrace run_episode(const World& w, const EpisodeConfig& cfg, Policy& policy) {
  EventEpisode ep(w, cfg);
  while (!ep.done()) {
    const ActionPair a = policy.act(ep.policy_input());
    // (a) human decides while the robot holds
    const auto hd = ep.simulated_decision(a.action_0);
    ep.hold(hd.decision_time);
    const auto [rec, tr] = ep.execute(a, hd);
    if (policy.learn) policy.learn(tr);
  }
  return ep.finish();
}

// Timer-driven baseline: every fixed_period a new command is composed from the
// current (possibly moving) state and the controller is retargeted at once.
// The human refreshes its decision only after its decision time has elapsed.
inline EpisodeTrace run_fixed_frequency(const World& w, const EpisodeConfig& cfg) {
  w.validate();
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto st = prepare_episode(w, cfg, rng);
  detail::EpisodeRun run(w, cfg, std::move(rng), st);
  const double dt = cfg.dt;
  const double P = cfg.fixed_period;
  const ModelIndex model = cfg.fixed_model;
  const int samples_per_tick = std::max(1, static_cast<int>(std::llround(P / dt)));

  HumanDecision hd;
  double last_decision = -1.0;

  while (!run.at_goal() && run.budget_left()) {
    StepRecord rec;
    rec.k = static_cast<int>(run.trace.records.size());
    double charged_decision = 0.0;
    if (last_decision < 0.0 || run.clock - last_decision >= hd.decision_time - 1e-12) {
      hd = human_decide(w.human, run.goal_error(), model.i, w.trigger.epsilon_big, w.trigger.epsilon_small, run.rng,
                        cfg.primary_axis);
      if (last_decision < 0.0) {
        // the first command waits for the first decision
        charged_decision = hd.decision_time;
        run.plant.hold(hd.decision_time, [&] { run.sample(); });
        run.clock += hd.decision_time;
      }
      last_decision = run.clock;
    }

    StepCommand cmd;
    cmd.u_h = hd.u_h;
    cmd.epsilon = hd.epsilon;
    cmd.decision_time = charged_decision;
    cmd.deltas = robot_act(w.magnitudes, model.j);
    cmd.delta_x = compose_step(cmd.u_h, cmd.deltas, run.goal_error(), cfg.primary_axis, kSignDeadZone);
    cmd.model = model;
    rec.command = cmd;
    rec.intended = hd.intended;

    const Vec3 subgoal = run.plant.x() + cmd.delta_x;
    run.trig = set_subgoal(run.trig, subgoal, run.plant.x(), w.trigger.W);
    run.osc_epsilon = cmd.epsilon;
    const int osc_before = run.trace.records.empty() ? 0 : run.trace.records.back().osc_cum;

    const auto ik = ik_solve(w.robot, run.plant.q(), subgoal, w.ik);
    rec.ik_ok = ik.ok();
    run.plant.retarget(ik.ok() ? ik.q : run.plant.q());

    double effort = 0.0;
    for (int k = 1; k <= samples_per_tick; ++k) {
      effort += run.plant.step(dt);
      run.sample();
      if (run.trig.armed) {
        const double v_prev = run.trig.V_prev;
        const auto d = check_trigger(run.trig, run.plant.x(), cmd.epsilon, w.trigger.W);
        if (d.fired) {
          rec.fired = true;
          rec.fire_time = k * dt;
          rec.fire_dist = (subgoal - run.plant.x()).norm();
          rec.fire_V = lyapunov(subgoal - run.plant.x(), w.trigger.W);
          rec.fire_V_prev = v_prev;
        }
        run.trig = d.state;
      }
    }
    rec.exec_time = samples_per_tick * dt;
    // charged_decision was already added when the first decision was taken
    run.clock += rec.exec_time;

    const double jerk_now = run.jerk.integral();
    rec.jerk = jerk_now - run.jerk_mark;
    run.jerk_mark = jerk_now;
    rec.t = run.clock;
    rec.x = run.plant.x();
    rec.q = run.plant.q();
    rec.subgoal = subgoal;
    rec.subgoal_index = run.trig.subgoal_index;
    rec.effort = effort;
    rec.osc_cum = run.trig.osc_count;
    rec.n_osc = rec.osc_cum - osc_before;
    rec.error = run.goal_error().norm();
    const bool success = rec.error <= w.trigger.epsilon_goal;
    rec.reward = reward_terms(run.goal_error(), charged_decision + rec.exec_time, effort, rec.n_osc, success,
                              w.weights);
    run.trace.records.push_back(rec);
  }
  run.finish();
  return run.trace;
}

// Dispatches on the configured controller.
inline EpisodeTrace run_controller(const World& w, const EpisodeConfig& cfg, Policy& policy) {
  if (cfg.controller == Controller::fixed_frequency) return run_fixed_frequency(w, cfg);
  return run_episode(w, cfg, policy);
}

// ---- JSON-lines serialization ----

inline constexpr int kTraceSchemaVersion = 1;

namespace detail {
template <class V>
nlohmann::json vec_json(const V& v) {
  auto a = nlohmann::json::array();
  for (Eigen::Index k = 0; k < v.size(); ++k) a.push_back(v[k]);
  return a;
}
template <int N>
Eigen::Matrix<double, N, 1> json_vec(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) throw FormatError("expected array of length " + std::to_string(N));
  Eigen::Matrix<double, N, 1> v;
  for (int k = 0; k < N; ++k) v[k] = j.at(static_cast<std::size_t>(k)).get<double>();
  return v;
}
}  // namespace detail

inline nlohmann::json to_json(const StepRecord& r) {
  using detail::vec_json;
  nlohmann::json j;
  j["type"] = "step";
  j["k"] = r.k;
  j["t"] = r.t;
  j["x"] = vec_json(r.x);
  j["q"] = vec_json(r.q);
  j["subgoal"] = vec_json(r.subgoal);
  j["subgoal_index"] = r.subgoal_index;
  j["command"] = {{"u_h", r.command.u_h},
                  {"epsilon", r.command.epsilon},
                  {"deltas", vec_json(r.command.deltas)},
                  {"delta_x", vec_json(r.command.delta_x)},
                  {"decision_time", r.command.decision_time},
                  {"model", {r.command.model.i, r.command.model.j}}};
  j["intended"] = r.intended;
  j["ik_ok"] = r.ik_ok;
  j["exec_time"] = r.exec_time;
  j["fired"] = r.fired;
  j["trigger"] = {{"t", r.fire_time}, {"dist", r.fire_dist}, {"V", r.fire_V}, {"V_prev", r.fire_V_prev}};
  j["reward"] = {{"accuracy", r.reward.accuracy}, {"time", r.reward.time},   {"effort", r.reward.effort},
                 {"osc", r.reward.osc},           {"success", r.reward.success}, {"total", r.reward.total}};
  j["effort"] = r.effort;
  j["n_osc"] = r.n_osc;
  j["osc_cum"] = r.osc_cum;
  j["jerk"] = r.jerk;
  j["error"] = r.error;
  return j;
}

inline StepRecord step_from_json(const nlohmann::json& j) {
  using detail::json_vec;
  StepRecord r;
  r.k = j.at("k").get<int>();
  r.t = j.at("t").get<double>();
  r.x = json_vec<3>(j.at("x"));
  r.q = json_vec<6>(j.at("q"));
  r.subgoal = json_vec<3>(j.at("subgoal"));
  r.subgoal_index = j.at("subgoal_index").get<int>();
  const auto& c = j.at("command");
  r.command.u_h = c.at("u_h").get<int>();
  r.command.epsilon = c.at("epsilon").get<double>();
  r.command.deltas = json_vec<3>(c.at("deltas"));
  r.command.delta_x = json_vec<3>(c.at("delta_x"));
  r.command.decision_time = c.at("decision_time").get<double>();
  r.command.model = {c.at("model").at(0).get<int>(), c.at("model").at(1).get<int>()};
  r.intended = j.at("intended").get<int>();
  r.ik_ok = j.at("ik_ok").get<bool>();
  r.exec_time = j.at("exec_time").get<double>();
  r.fired = j.at("fired").get<bool>();
  const auto& tg = j.at("trigger");
  r.fire_time = tg.at("t").get<double>();
  r.fire_dist = tg.at("dist").get<double>();
  r.fire_V = tg.at("V").get<double>();
  r.fire_V_prev = tg.at("V_prev").get<double>();
  const auto& rw = j.at("reward");
  r.reward = {rw.at("accuracy").get<double>(), rw.at("time").get<double>(),    rw.at("effort").get<double>(),
              rw.at("osc").get<double>(),      rw.at("success").get<double>(), rw.at("total").get<double>()};
  r.effort = j.at("effort").get<double>();
  r.n_osc = j.at("n_osc").get<int>();
  r.osc_cum = j.at("osc_cum").get<int>();
  r.jerk = j.at("jerk").get<double>();
  r.error = j.at("error").get<double>();
  return r;
}

inline nlohmann::json to_json(const EpisodeSummary& s) {
  using detail::vec_json;
  return {{"type", "summary"},
          {"v", kTraceSchemaVersion},
          {"controller", s.controller},
          {"fidelity", s.fidelity},
          {"seed", s.seed},
          {"x_start", vec_json(s.x_start)},
          {"x_goal", vec_json(s.x_goal)},
          {"epsilon_goal", s.epsilon_goal},
          {"success", s.success},
          {"aborted", s.aborted},
          {"total_time", s.total_time},
          {"final_error", s.final_error},
          {"osc_count", s.osc_count},
          {"jerk_integral", s.jerk_integral},
          {"microstep_count", s.microstep_count},
          {"total_reward", s.total_reward}};
}

inline EpisodeSummary summary_from_json(const nlohmann::json& j) {
  using detail::json_vec;
  if (j.at("v").get<int>() != kTraceSchemaVersion) throw FormatError("unsupported trace schema version");
  EpisodeSummary s;
  s.controller = j.at("controller").get<std::string>();
  s.fidelity = j.at("fidelity").get<std::string>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.x_start = json_vec<3>(j.at("x_start"));
  s.x_goal = json_vec<3>(j.at("x_goal"));
  s.epsilon_goal = j.at("epsilon_goal").get<double>();
  s.success = j.at("success").get<bool>();
  s.aborted = j.at("aborted").get<bool>();
  s.total_time = j.at("total_time").get<double>();
  s.final_error = j.at("final_error").get<double>();
  s.osc_count = j.at("osc_count").get<int>();
  s.jerk_integral = j.at("jerk_integral").get<double>();
  s.microstep_count = j.at("microstep_count").get<int>();
  s.total_reward = j.at("total_reward").get<double>();
  return s;
}

inline std::string trace_to_jsonl(const EpisodeTrace& tr) {
  std::string out;
  for (const auto& r : tr.records) out += to_json(r).dump() + "\n";
  out += to_json(tr.summary).dump() + "\n";
  return out;
}

inline EpisodeTrace trace_from_jsonl(std::istream& in, const std::string& name = "trace") {
  EpisodeTrace tr;
  std::string line;
  bool have_summary = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (have_summary) throw FormatError(name + ":" + std::to_string(lineno) + ": data after summary line");
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (type == "step") {
        tr.records.push_back(step_from_json(j));
      } else if (type == "summary") {
        tr.summary = summary_from_json(j);
        have_summary = true;
      } else {
        throw FormatError("unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(name + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_summary) throw FormatError(name + ": missing summary line");
  return tr;
}

inline void write_trace(const std::string& path, const EpisodeTrace& tr) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << trace_to_jsonl(tr);
}

inline EpisodeTrace read_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read trace: " + path);
  return trace_from_jsonl(in, path);
}

}  // namespace coadapt
