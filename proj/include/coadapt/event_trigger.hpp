#pragma once

#include "coadapt/types.hpp"

#include <Eigen/Cholesky>

#include <limits>

namespace coadapt {

// Admission-sphere radii and the weight of the quadratic error energy.
struct TriggerConfig {
  Mat3 W = Mat3::Identity();
  double epsilon_big = 0.05;
  double epsilon_small = 0.02;
  double epsilon_goal = 0.01;

  void validate() const {
    if (!W.allFinite() || (W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw ConfigInvalid("trigger.W must be symmetric");
    if (W.llt().info() != Eigen::Success) throw ConfigInvalid("trigger.W must be positive definite");
    if (!(epsilon_small > 0.0)) throw ConfigInvalid("trigger.epsilon_small must be > 0");
    if (!(epsilon_small < epsilon_big)) throw ConfigInvalid("trigger.epsilon_small must be < epsilon_big");
    if (!(epsilon_goal > 0.0 && epsilon_goal <= epsilon_small))
      throw ConfigInvalid("trigger.epsilon_goal must be in (0, epsilon_small]");
  }
};

inline constexpr double kSignDeadZone = 1e-4;  // metres

struct TriggerState {
  Vec3 subgoal = Vec3::Zero();
  int subgoal_index = 0;
  double V_prev = std::numeric_limits<double>::infinity();
  int osc_count = 0;
  Eigen::Vector3i last_error_signs = Eigen::Vector3i::Zero();
  // A waypoint can fire once; re-armed when the next waypoint is set.
  bool armed = true;
};

// V = 1/2 e^T W e
inline double lyapunov(const Vec3& e, const Mat3& W) { return 0.5 * e.dot(W * e); }

// Installs the next waypoint x^(m). Signs and the oscillation count carry over.
inline TriggerState set_subgoal(TriggerState s, const Vec3& subgoal) {
  s.subgoal = subgoal;
  s.V_prev = std::numeric_limits<double>::infinity();
  s.armed = true;
  return s;
}

// Same, with the issuing position as the first energy sample.
inline TriggerState set_subgoal(TriggerState s, const Vec3& subgoal, const Vec3& x, const Mat3& W) {
  s = set_subgoal(s, subgoal);
  s.V_prev = lyapunov(subgoal - x, W);
  return s;
}

struct TriggerDecision {
  bool fired = false;
  TriggerState state;
};

// Fires when x is inside the admission sphere of the current waypoint and the
// error energy did not increase since the previous sample. On fire the
// waypoint index advances and V_prev resets; otherwise V_prev tracks V_k.
inline TriggerDecision check_trigger(TriggerState s, const Vec3& x, double epsilon, const Mat3& W) {
  const Vec3 e = s.subgoal - x;
  const double v = lyapunov(e, W);
  TriggerDecision out;
  out.fired = s.armed && e.norm() <= epsilon && v <= s.V_prev;
  if (out.fired) {
    ++s.subgoal_index;
    s.V_prev = std::numeric_limits<double>::infinity();
    s.armed = false;
  } else {
    s.V_prev = v;
  }
  out.state = s;
  return out;
}

// Counts per-axis sign reversals of the waypoint error e = x^(m) - x between
// consecutive samples, only while ||e|| <= 2 epsilon. Components inside the
// dead zone have sign 0 and never form a reversal.
inline TriggerState count_oscillation(TriggerState s, const Vec3& e, double epsilon) {
  const bool near = e.norm() <= 2.0 * epsilon;
  for (int a = 0; a < 3; ++a) {
    const int sg = sign_of(e[a], kSignDeadZone);
    if (near && sg * s.last_error_signs[a] == -1) ++s.osc_count;
    s.last_error_signs[a] = sg;
  }
  return s;
}

}  // namespace coadapt
