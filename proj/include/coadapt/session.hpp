#pragma once

#include "coadapt/harness.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <istream>
#include <memory>
#include <mutex>
#include <thread>

namespace coadapt {

inline constexpr int kProtocolVersion = 1;

enum class Radius { big, small };

inline std::string to_string(Radius r) { return r == Radius::big ? "big" : "small"; }

struct HumanCommandMsg {
  int direction = 1;  // -1 or +1 along the primary axis
  Radius radius = Radius::big;
  double client_ts = 0.0;

  int action_i() const { return radius == Radius::big ? 1 : 2; }
  friend bool operator==(const HumanCommandMsg&, const HumanCommandMsg&) = default;
};

// Parses a client command frame; throws FormatError naming the bad field.
inline HumanCommandMsg parse_command(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("frame is not a JSON object");
  if (!j.contains("v") || !j.at("v").is_number_integer() || j.at("v").get<int>() != kProtocolVersion)
    throw FormatError("unsupported or missing protocol version 'v'");
  if (j.value("type", std::string()) != "command") throw FormatError("expected type 'command'");
  HumanCommandMsg m;
  if (!j.contains("direction") || !j.at("direction").is_number_integer()) throw FormatError("missing integer 'direction'");
  m.direction = j.at("direction").get<int>();
  if (m.direction != 1 && m.direction != -1) throw FormatError("'direction' must be -1 or +1");
  if (!j.contains("radius") || !j.at("radius").is_string()) throw FormatError("missing string 'radius'");
  const auto r = j.at("radius").get<std::string>();
  if (r == "big") m.radius = Radius::big;
  else if (r == "small") m.radius = Radius::small;
  else throw FormatError("'radius' must be 'big' or 'small'");
  if (j.contains("client_ts")) {
    if (!j.at("client_ts").is_number()) throw FormatError("'client_ts' must be a number");
    m.client_ts = j.at("client_ts").get<double>();
  }
  return m;
}

inline nlohmann::json command_to_json(const HumanCommandMsg& m) {
  return {{"v", kProtocolVersion}, {"type", "command"}, {"direction", m.direction}, {"radius", to_string(m.radius)},
          {"client_ts", m.client_ts}};
}

// At most one un-consumed command; a newer one replaces it.
class CommandMailbox {
public:
  // Returns true when an unread command was overwritten.
  bool put(const HumanCommandMsg& m) {
    std::lock_guard lock(mu_);
    const bool overwrote = slot_.has_value();
    slot_ = m;
    cv_.notify_all();
    return overwrote;
  }

  std::optional<HumanCommandMsg> take() {
    std::lock_guard lock(mu_);
    auto m = slot_;
    slot_.reset();
    return m;
  }

  bool pending() const {
    std::lock_guard lock(mu_);
    return slot_.has_value();
  }

private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<HumanCommandMsg> slot_;
};

// ---- pressure sensor adapter ----

struct PressureThresholds {
  double hi = 600.0;
  double lo = 400.0;
  Radius radius = Radius::big;

  void validate() const {
    if (!(lo < hi)) throw ConfigInvalid("pressure thresholds need lo < hi");
  }
};

// Hysteresis edge detector over newline-delimited integer samples.
class PressureAdapter {
public:
  explicit PressureAdapter(PressureThresholds t = {}) : t_(t) { t_.validate(); }

  std::optional<HumanCommandMsg> feed_sample(long long v) {
    if (!high_ && static_cast<double>(v) > t_.hi) {
      high_ = true;
      return HumanCommandMsg{+1, t_.radius, 0.0};
    }
    if (high_ && static_cast<double>(v) < t_.lo) {
      high_ = false;
      return HumanCommandMsg{-1, t_.radius, 0.0};
    }
    return std::nullopt;
  }

  std::optional<HumanCommandMsg> feed_line(const std::string& raw) {
    std::string line = raw;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    std::size_t b = line.find_first_not_of(" \t");
    if (b == std::string::npos) {
      ++skipped_;
      return std::nullopt;
    }
    line = line.substr(b);
    long long v = 0;
    std::size_t used = 0;
    try {
      v = std::stoll(line, &used);
    } catch (const std::logic_error&) {
      ++skipped_;
      return std::nullopt;
    }
    if (used != line.size()) {
      ++skipped_;
      return std::nullopt;
    }
    return feed_sample(v);
  }

  int skipped() const { return skipped_; }
  bool high() const { return high_; }

private:
  PressureThresholds t_;
  bool high_ = false;
  int skipped_ = 0;
};

struct PressureResult {
  std::vector<HumanCommandMsg> commands;
  int skipped = 0;
};

inline PressureResult pressure_commands(std::istream& in, PressureThresholds t = {}) {
  PressureAdapter a(t);
  PressureResult r;
  std::string line;
  while (std::getline(in, line))
    if (auto c = a.feed_line(line)) r.commands.push_back(*c);
  r.skipped = a.skipped();
  return r;
}

// ---- empirical human profile ----

struct EmpiricalProfile {
  HumanProfile profile;
  std::array<int, 2> commands{};  // big, small
  std::array<int, 2> errors{};
  std::array<Interval, 2> error_ci{};  // Wilson 95%
  double decision_frequency = 0.0;     // commands per second

  double error_rate(Radius r) const {
    const auto k = static_cast<std::size_t>(r == Radius::big ? 0 : 1);
    return commands[k] > 0 ? static_cast<double>(errors[k]) / commands[k] : 0.0;
  }
};

inline Interval wilson_interval(int k, int n, double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

inline constexpr int kMinCommandsPerRadius = 10;

// An error is a command pointing away from the goal on the primary axis.
inline EmpiricalProfile empirical_profile(const std::vector<EpisodeTrace>& sessions, const TriggerConfig& trig = {}) {
  EmpiricalProfile out;
  std::array<double, 2> t_sum{};
  double elapsed = 0.0;
  int total = 0;
  for (const auto& tr : sessions) {
    for (const auto& r : tr.records) {
      const std::size_t k = std::abs(r.command.epsilon - trig.epsilon_big) <= std::abs(r.command.epsilon - trig.epsilon_small) ? 0 : 1;
      ++out.commands[k];
      if (r.command.u_h != r.intended) ++out.errors[k];
      t_sum[k] += r.command.decision_time;
      ++total;
    }
    // commands are issued at (end of previous cycle + decision time)
    if (!tr.records.empty()) {
      const auto& last = tr.records.back();
      elapsed += last.t - last.exec_time;
    }
  }
  for (std::size_t k = 0; k < 2; ++k)
    if (out.commands[k] < kMinCommandsPerRadius)
      throw InsufficientData("empirical_profile: " + std::to_string(out.commands[k]) + " commands for the " +
                             (k == 0 ? "big" : "small") + " radius (need " + std::to_string(kMinCommandsPerRadius) +
                             ")");
  for (std::size_t k = 0; k < 2; ++k) out.error_ci[k] = wilson_interval(out.errors[k], out.commands[k]);
  out.profile.err_rate_big = out.error_rate(Radius::big);
  out.profile.err_rate_small = out.error_rate(Radius::small);
  out.profile.t_dec_big = t_sum[0] / out.commands[0];
  out.profile.t_dec_small = t_sum[1] / out.commands[1];
  out.decision_frequency = elapsed > 0.0 ? total / elapsed : 0.0;
  return out;
}

// ---- trace schema validation shared by offline and live traces ----

namespace detail {
// Dotted key paths of nested objects, e.g. "command.u_h".
inline void key_paths(const nlohmann::json& j, const std::string& prefix, std::set<std::string>& out) {
  for (const auto& [key, val] : j.items()) {
    const auto path = prefix.empty() ? key : prefix + "." + key;
    out.insert(path);
    if (val.is_object()) key_paths(val, path, out);
  }
}
inline std::set<std::string> key_paths(const nlohmann::json& j) {
  std::set<std::string> out;
  key_paths(j, "", out);
  return out;
}
}  // namespace detail

inline void validate_trace_jsonl(std::istream& in, const std::string& name = "trace") {
  static const auto step_keys = detail::key_paths(to_json(StepRecord{}));
  static const auto summary_keys = detail::key_paths(to_json(EpisodeSummary{}));
  std::string line;
  int lineno = 0;
  bool summary_seen = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = name + ":" + std::to_string(lineno);
    if (summary_seen) throw FormatError(where + ": content after the summary line");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw FormatError(where + ": not JSON");
    }
    if (!j.is_object()) throw FormatError(where + ": not a JSON object");
    const auto type = j.value("type", std::string());
    const auto keys = detail::key_paths(j);
    if (type == "summary") {
      if (keys != summary_keys) throw FormatError(where + ": keys differ from the summary schema");
      if (j.at("v") != kTraceSchemaVersion) throw FormatError(where + ": unsupported schema version");
      summary_seen = true;
    } else if (type == "step") {
      if (keys != step_keys) throw FormatError(where + ": keys differ from the step schema");
    } else {
      throw FormatError(where + ": unknown line type '" + type + "'");
    }
  }
  if (!summary_seen) throw FormatError(name + ": missing summary line");
}

inline void validate_trace(const EpisodeTrace& tr) {
  std::istringstream in(trace_to_jsonl(tr));
  validate_trace_jsonl(in);
}

// ---- live session ----

enum class SessionMode { awaiting_command, executing, finished };

inline std::string to_string(SessionMode m) {
  switch (m) {
    case SessionMode::awaiting_command: return "awaiting_command";
    case SessionMode::executing: return "executing";
    case SessionMode::finished: return "finished";
  }
  return "?";
}

struct Snapshot {
  std::string session;
  long long seq = 0;
  double sim_time = 0.0;
  Vec3 x = Vec3::Zero();
  Vec3 x_goal = Vec3::Zero();
  Vec3 e = Vec3::Zero();
  Vec3 subgoal = Vec3::Zero();
  double epsilon = 0.0;
  int n_osc = 0;
  SessionMode mode = SessionMode::awaiting_command;
};

inline nlohmann::json to_json(const Snapshot& s) {
  return {{"v", kProtocolVersion},
          {"type", "snapshot"},
          {"session", s.session},
          {"seq", s.seq},
          {"sim_time", s.sim_time},
          {"x", detail::vec_json(s.x)},
          {"x_g", detail::vec_json(s.x_goal)},
          {"e", detail::vec_json(s.e)},
          {"subgoal", detail::vec_json(s.subgoal)},
          {"epsilon", s.epsilon},
          {"n_osc", s.n_osc},
          {"mode", to_string(s.mode)}};
}

inline nlohmann::json notice_frame(const std::string& code, const std::string& message) {
  return {{"v", kProtocolVersion}, {"type", "notice"}, {"code", code}, {"message", message}};
}

inline nlohmann::json error_frame(const std::string& code, const std::string& message) {
  return {{"v", kProtocolVersion}, {"type", "error"}, {"code", code}, {"message", message}};
}

// Robot-side choice of the step-magnitude combination given the human's radius.
using RobotChooser = std::function<int(const PolicyInput&, int action_0)>;

inline RobotChooser fixed_robot(int j) {
  return [j](const PolicyInput&, int) { return j; };
}

inline RobotChooser dammrl_robot(std::shared_ptr<const DualAgentLearner> learner) {
  return [learner](const PolicyInput& in, int a0) {
    return 1 + argmax_index(learner->net1().forward(robot_observation(in.observation, a0)));
  };
}

struct SessionOptions {
  double time_scale = 1.0;        // wall seconds per simulated second; 0 runs unpaced
  double snapshot_period = 0.05;  // simulated seconds between snapshots
  double idle_tick = 0.01;        // hold granularity while awaiting a command
  bool charge_wait = true;        // waiting for the human counts toward total time
};

// Outbound frames, called from the session thread.
using FrameSink = std::function<void(const nlohmann::json&)>;

// Human-in-the-loop episode: the operator's command replaces the simulated
// human decision; everything else is the offline event-gated cycle.
class LiveSession {
public:
  LiveSession(std::string id, const World& w, EpisodeConfig cfg, RobotChooser robot, SessionOptions opt = {})
      : id_(std::move(id)), robot_(std::move(robot)), opt_(opt), cfg_(force_dynamic(std::move(cfg))),
        ep_(w, cfg_), trigger_(w.trigger) {
    if (opt_.snapshot_period <= 0.0 || opt_.snapshot_period > 0.05)
      throw ConfigInvalid("snapshot period must lie in (0, 0.05] s");
    if (opt_.idle_tick <= 0.0 || opt_.time_scale < 0.0) throw ConfigInvalid("invalid session pacing");
  }

  const std::string& id() const { return id_; }

  // Called from any thread. Returns true if an unread command was replaced.
  bool submit(const HumanCommandMsg& m) { return mailbox_.put(m); }

  void request_stop() { stop_ = true; }

  SessionMode mode() const { return mode_.load(); }

  std::shared_ptr<const Snapshot> latest_snapshot() const {
    std::lock_guard lock(snap_mu_);
    return snapshot_;
  }

  // Runs until the episode ends or stop is requested; returns the trace
  // (aborted when stopped early).
  EpisodeTrace run(const FrameSink& sink) {
    wall_origin_ = std::chrono::steady_clock::now();
    publish(sink, true);
    bool aborted = false;
    while (!ep_.done()) {
      mode_ = SessionMode::awaiting_command;
      publish(sink, true);
      double waited = 0.0;
      std::optional<HumanCommandMsg> cmd;
      while (!(cmd = mailbox_.take())) {
        if (stop_) break;
        ep_.hold(opt_.idle_tick, [&] { on_sample(sink); });
        waited += opt_.idle_tick;
        pace();
        publish(sink, false);
      }
      if (!cmd) {
        aborted = true;
        break;
      }
      mode_ = SessionMode::executing;
      publish(sink, true);
      const auto in = ep_.policy_input();
      ActionPair a;
      a.action_0 = cmd->action_i();
      a.action_1 = robot_(in, a.action_0);
      HumanDecision hd;
      hd.u_h = cmd->direction;
      hd.intended = ep_.goal_error()[cfg_.primary_axis] < 0.0 ? -1 : 1;
      hd.epsilon = cmd->radius == Radius::big ? trigger_big() : trigger_small();
      hd.decision_time = opt_.charge_wait ? waited : 0.0;
      const auto [rec, tr] = ep_.execute(a, hd, [&] { on_sample(sink); });
      if (sink) {
        auto echo = command_to_json(*cmd);
        echo["k"] = rec.k;
        echo["sim_time"] = rec.t;
        echo["decision_time"] = rec.command.decision_time;
        echo["model"] = {rec.command.model.i, rec.command.model.j};
        sink(echo);
      }
      ++consumed_;
      publish(sink, true);
      if (stop_) {
        aborted = !ep_.at_goal();
        break;
      }
    }
    mode_ = SessionMode::finished;
    auto trace = ep_.finish(aborted);
    trace.summary.controller = "live";
    publish(sink, true);
    return trace;
  }

  int consumed_commands() const { return consumed_; }

private:
  static EpisodeConfig force_dynamic(EpisodeConfig c) {
    c.fidelity = Fidelity::dynamic;
    c.controller = Controller::event_fixed_model;
    return c;
  }
  double trigger_big() const { return world_trigger().epsilon_big; }
  double trigger_small() const { return world_trigger().epsilon_small; }
  const TriggerConfig& world_trigger() const { return trigger_; }

  void on_sample(const FrameSink& sink) {
    if (mode_ == SessionMode::executing) pace();
    publish(sink, false);
  }

  // Sleeps until wall time catches up with simulated time.
  void pace() {
    if (opt_.time_scale <= 0.0) return;
    const auto target = wall_origin_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                           std::chrono::duration<double>(ep_.sim_time() * opt_.time_scale));
    if (target > std::chrono::steady_clock::now() + std::chrono::milliseconds(2)) std::this_thread::sleep_until(target);
  }

  void publish(const FrameSink& sink, bool force) {
    const double t = ep_.sim_time();
    if (!force && t < last_snapshot_ + opt_.snapshot_period - 1e-12) return;
    auto s = std::make_shared<Snapshot>();
    s->session = id_;
    s->seq = seq_++;
    s->sim_time = std::max(t, last_snapshot_);
    s->x = ep_.x();
    s->x_goal = ep_.x_goal();
    s->e = ep_.goal_error();
    s->subgoal = ep_.subgoal();
    s->epsilon = ep_.epsilon();
    s->n_osc = ep_.osc_count();
    s->mode = mode_;
    last_snapshot_ = s->sim_time;
    {
      std::lock_guard lock(snap_mu_);
      snapshot_ = s;
    }
    if (sink) sink(to_json(*s));
  }

  std::string id_;
  RobotChooser robot_;
  SessionOptions opt_;
  EpisodeConfig cfg_;
  EventEpisode ep_;
  TriggerConfig trigger_;
  CommandMailbox mailbox_;
  std::atomic<bool> stop_{false};
  std::atomic<SessionMode> mode_{SessionMode::awaiting_command};
  mutable std::mutex snap_mu_;
  std::shared_ptr<const Snapshot> snapshot_;
  double last_snapshot_ = -1.0;
  long long seq_ = 0;
  int consumed_ = 0;
  std::chrono::steady_clock::time_point wall_origin_;
};

}  // namespace coadapt
