#pragma once

#include "coadapt/dynamics.hpp"

#include <algorithm>
#include <vector>

namespace coadapt {

// Per-joint quintic from (q0, v0, a0) to (q1, 0, 0) over [0, T].
template <int N>
class QuinticReference {
public:
  QuinticReference() = default;

  QuinticReference(const VecIn<N>& q0, const VecIn<N>& v0, const VecIn<N>& a0, const VecIn<N>& q1, double T)
      : duration_(T) {
    const double T2 = T * T, T3 = T2 * T, T4 = T3 * T, T5 = T4 * T;
    const VecN<N> h = q1 - q0;
    c_[0] = q0;
    c_[1] = v0;
    c_[2] = 0.5 * a0;
    c_[3] = (20.0 * h - 12.0 * v0 * T - 3.0 * a0 * T2) / (2.0 * T3);
    c_[4] = (-30.0 * h + 16.0 * v0 * T + 3.0 * a0 * T2) / (2.0 * T4);
    c_[5] = (12.0 * h - 6.0 * v0 * T - a0 * T2) / (2.0 * T5);
    end_ = q1;
  }

  double duration() const { return duration_; }
  const VecIn<N>& target() const { return end_; }

  struct Sample {
    VecN<N> q, qdot, qddot;
  };

  // Holds the end point after T.
  Sample at(double t) const {
    if (t >= duration_) return {end_, VecN<N>::Zero(), VecN<N>::Zero()};
    t = std::max(t, 0.0);
    Sample s;
    s.q = c_[0] + t * (c_[1] + t * (c_[2] + t * (c_[3] + t * (c_[4] + t * c_[5]))));
    s.qdot = c_[1] + t * (2.0 * c_[2] + t * (3.0 * c_[3] + t * (4.0 * c_[4] + t * 5.0 * c_[5])));
    s.qddot = 2.0 * c_[2] + t * (6.0 * c_[3] + t * (12.0 * c_[4] + t * 20.0 * c_[5]));
    return s;
  }

private:
  std::array<VecN<N>, 6> c_{};
  VecN<N> end_ = VecN<N>::Zero();
  double duration_ = 0.0;
};

inline constexpr double kMinStepDuration = 0.05;

// T = max_k |dq_k| / vel_limit_k, floored at 50 ms.
template <int N>
double microstep_duration(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& q_target) {
  const double t = ((q_target - q).cwiseAbs().array() / model.vel_limit.array()).maxCoeff();
  return std::max(t, kMinStepDuration);
}

template <int N>
struct JointState {
  VecN<N> q = VecN<N>::Zero();
  VecN<N> qdot = VecN<N>::Zero();
};

template <int N>
struct TrajectorySample {
  double t = 0.0;
  VecN<N> q;
  Vec3 x;
};

template <int N>
struct ExecutionResult {
  VecN<N> q_final;
  VecN<N> qdot_final;
  double duration = 0.0;
  std::vector<TrajectorySample<N>> trajectory;
  double effort = 0.0;
  double jerk_integral = 0.0;
};

struct ExecutionOptions {
  double dt = 1e-3;
  bool keep_trajectory = true;
};

// Integrated squared jerk of an end-effector path sampled every dt. Velocity
// by forward differences, jerk by second differences of the velocity.
class JerkAccumulator {
public:
  explicit JerkAccumulator(double dt) : dt_(dt) {}

  void push(const Vec3& x) {
    if (have_x_) {
      const Vec3 v = (x - last_x_) / dt_;
      if (n_v_ >= 2) {
        const Vec3 j = (v - 2.0 * v1_ + v2_) / (dt_ * dt_);
        integral_ += j.squaredNorm() * dt_;
      }
      v2_ = v1_;
      v1_ = v;
      ++n_v_;
    }
    last_x_ = x;
    have_x_ = true;
  }

  double integral() const { return integral_; }

private:
  double dt_;
  Vec3 last_x_ = Vec3::Zero(), v1_ = Vec3::Zero(), v2_ = Vec3::Zero();
  bool have_x_ = false;
  int n_v_ = 0;
  double integral_ = 0.0;
};

// Rigid-body plant tracked by computed-torque control, integrated by
// semi-implicit Euler. Owns its state; one instance per episode.
template <int N>
class JointSimulator {
public:
  JointSimulator(const SerialChain<N>& model, JointState<N> state, CtcGains<N> gains = {}, double dt = 1e-3)
      : model_(&model), state_(std::move(state)), gains_(gains), dt_(dt) {
    reference_ = QuinticReference<N>(state_.q, VecN<N>::Zero(), VecN<N>::Zero(), state_.q, kMinStepDuration);
  }

  const JointState<N>& state() const { return state_; }
  double time() const { return time_; }
  double dt() const { return dt_; }
  const QuinticReference<N>& reference() const { return reference_; }
  double reference_end_time() const { return ref_start_ + reference_.duration(); }

  // Replans from the current measured state to q_target; returns T.
  double retarget(const VecIn<N>& q_target) {
    const double T = microstep_duration(*model_, state_.q, q_target);
    reference_ = QuinticReference<N>(state_.q, state_.qdot, VecN<N>::Zero(), q_target, T);
    ref_start_ = time_;
    return T;
  }

  struct StepOutput {
    VecN<N> tau;
  };

  StepOutput step() {
    const auto ref = reference_.at(time_ + dt_ - ref_start_);
    const auto terms = extract_terms(*model_, state_.q, state_.qdot);
    const VecN<N> v = ref.qddot + gains_.kd.cwiseProduct(ref.qdot - state_.qdot) +
                      gains_.kp.cwiseProduct(ref.q - state_.q);
    const VecN<N> tau = terms.M * v + terms.Cqdot + terms.g;
    const VecN<N> qddot = terms.M.llt().solve(tau - terms.Cqdot - terms.g);
    state_.qdot += dt_ * qddot;
    state_.q += dt_ * state_.qdot;
    enforce_limits();
    time_ += dt_;
    return {tau};
  }

  // Unactuated step with an arbitrary torque; used for energy checks.
  void step_with_torque(const VecIn<N>& tau) {
    const VecN<N> qddot = forward_dynamics(*model_, state_.q, state_.qdot, tau);
    state_.qdot += dt_ * qddot;
    state_.q += dt_ * state_.qdot;
    enforce_limits();
    time_ += dt_;
  }

private:
  void enforce_limits() {
    for (int k = 0; k < N; ++k) {
      if (state_.q[k] < model_->q_min[k]) {
        state_.q[k] = model_->q_min[k];
        state_.qdot[k] = std::max(state_.qdot[k], 0.0);
      } else if (state_.q[k] > model_->q_max[k]) {
        state_.q[k] = model_->q_max[k];
        state_.qdot[k] = std::min(state_.qdot[k], 0.0);
      }
    }
  }

  const SerialChain<N>* model_;
  JointState<N> state_;
  CtcGains<N> gains_;
  double dt_;
  double time_ = 0.0;
  double ref_start_ = 0.0;
  QuinticReference<N> reference_;
};

// One commanded micro-step. fast: the quintic is taken as the executed path
// (zero tracking error), effort = sum |dq|. dynamic: the quintic is tracked
// by CTC on the integrated plant, effort = integral of ||tau||_1.
template <int N>
ExecutionResult<N> execute_microstep(const SerialChain<N>& model, const JointState<N>& state,
                                     const VecIn<N>& q_target, Fidelity mode, const CtcGains<N>& gains = {},
                                     const ExecutionOptions& opt = {}) {
  ExecutionResult<N> out;
  const double T = microstep_duration(model, state.q, q_target);
  out.duration = T;
  const int steps = static_cast<int>(std::ceil(T / opt.dt - 1e-9));
  JerkAccumulator jerk(opt.dt);

  auto record = [&](double t, const VecIn<N>& q) {
    const Vec3 x = forward_kinematics(model, q);
    jerk.push(x);
    if (opt.keep_trajectory) out.trajectory.push_back({t, q, x});
  };

  if (mode == Fidelity::fast) {
    const QuinticReference<N> ref(state.q, VecN<N>::Zero(), VecN<N>::Zero(), q_target, T);
    for (int k = 0; k <= steps; ++k) {
      const double t = std::min(k * opt.dt, T);
      record(t, ref.at(t).q);
    }
    out.q_final = q_target;
    out.qdot_final = VecN<N>::Zero();
    out.effort = (q_target - state.q).cwiseAbs().sum();
  } else {
    JointSimulator<N> sim(model, state, gains, opt.dt);
    sim.retarget(q_target);
    record(0.0, state.q);
    for (int k = 1; k <= steps; ++k) {
      const auto s = sim.step();
      out.effort += s.tau.cwiseAbs().sum() * opt.dt;
      record(sim.time(), sim.state().q);
    }
    out.q_final = sim.state().q;
    out.qdot_final = sim.state().qdot;
  }
  out.jerk_integral = jerk.integral();
  return out;
}

}  // namespace coadapt
