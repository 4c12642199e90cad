#pragma once

#include "coadapt/types.hpp"

#include <Eigen/Geometry>

#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace coadapt {

// Standard Denavit-Hartenberg link: T = Rz(theta) Tz(d) Tx(a) Rx(alpha),
// theta = q + theta_offset.
struct DhJoint {
  double a = 0.0;
  double d = 0.0;
  double alpha = 0.0;
  double theta_offset = 0.0;
};

// All-revolute serial chain with point-mass links. Each joint also carries
// a reflected rotor inertia (armature) acting directly on its own axis.
template <int N>
struct SerialChain {
  static constexpr int dof = N;

  std::array<DhJoint, N> joints{};
  VecN<N> q_min = VecN<N>::Constant(-std::numbers::pi);
  VecN<N> q_max = VecN<N>::Constant(std::numbers::pi);
  VecN<N> vel_limit = VecN<N>::Ones();
  VecN<N> link_mass = VecN<N>::Ones();
  VecN<N> armature = VecN<N>::Zero();
  // Centre of mass of link i expressed in frame i.
  std::array<Vec3, N> link_com{};
  Vec3 gravity{0.0, 0.0, -9.81};

  void validate() const {
    for (int i = 0; i < N; ++i) {
      const auto tag = "joint " + std::to_string(i + 1);
      if (!(q_min[i] < q_max[i])) throw ConfigInvalid(tag + ": joint limit min must be < max");
      if (!(link_mass[i] > 0.0)) throw ConfigInvalid(tag + ": link mass must be > 0");
      if (!(vel_limit[i] > 0.0)) throw ConfigInvalid(tag + ": velocity limit must be > 0");
      if (!(armature[i] >= 0.0)) throw ConfigInvalid(tag + ": armature must be >= 0");
      const auto& j = joints[static_cast<std::size_t>(i)];
      if (!std::isfinite(j.a) || !std::isfinite(j.d) || !std::isfinite(j.alpha) ||
          !std::isfinite(j.theta_offset))
        throw ConfigInvalid(tag + ": non-finite DH parameter");
    }
    if (!gravity.allFinite()) throw ConfigInvalid("gravity must be finite");
  }

  VecN<N> clamp(const VecIn<N>& q) const { return q.cwiseMax(q_min).cwiseMin(q_max); }

  bool within_limits(const VecIn<N>& q) const {
    return (q.array() >= q_min.array()).all() && (q.array() <= q_max.array()).all();
  }

  // Sum of link lengths; an upper bound on the distance from the base origin
  // to any reachable end-effector position.
  double reach() const {
    double r = 0.0;
    for (const auto& j : joints) r += std::hypot(j.a, j.d);
    return r;
  }
};

using RobotModel = SerialChain<kDof>;

// Centre of a link whose geometry spans from the origin of frame i-1 to the
// origin of frame i, expressed in frame i.
inline Vec3 mid_link_com(const DhJoint& j) {
  return -0.5 * Vec3(j.a, j.d * std::sin(j.alpha), j.d * std::cos(j.alpha));
}

// Anthropomorphic desk-scale arm used by every default configuration.
inline RobotModel default_robot() {
  constexpr double half_pi = std::numbers::pi / 2.0;
  RobotModel m;
  m.joints = {DhJoint{0.0, 0.15, half_pi, 0.0}, DhJoint{0.30, 0.0, 0.0, 0.0},
              DhJoint{0.25, 0.0, 0.0, 0.0},     DhJoint{0.0, 0.10, half_pi, 0.0},
              DhJoint{0.0, 0.0, -half_pi, 0.0}, DhJoint{0.0, 0.08, 0.0, 0.0}};
  m.q_min = Vec6::Constant(-2.9);
  m.q_max = Vec6::Constant(2.9);
  m.vel_limit = Vec6::Constant(1.0);
  m.link_mass << 2.0, 2.0, 1.5, 0.5, 0.5, 0.2;
  m.armature = Vec6::Constant(0.02);
  for (std::size_t i = 0; i < m.joints.size(); ++i) m.link_com[i] = mid_link_com(m.joints[i]);
  return m;
}

inline Eigen::Isometry3d dh_transform(const DhJoint& j, double q) {
  const double th = q + j.theta_offset;
  const double ct = std::cos(th), st = std::sin(th);
  const double ca = std::cos(j.alpha), sa = std::sin(j.alpha);
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  auto& m = t.matrix();
  m(0, 0) = ct;  m(0, 1) = -st * ca;  m(0, 2) = st * sa;   m(0, 3) = j.a * ct;
  m(1, 0) = st;  m(1, 1) = ct * ca;   m(1, 2) = -ct * sa;  m(1, 3) = j.a * st;
  m(2, 0) = 0.0; m(2, 1) = sa;        m(2, 2) = ca;        m(2, 3) = j.d;
  return t;
}

// Base-to-frame transforms T_0^0 (identity) .. T_0^N.
template <int N>
std::array<Eigen::Isometry3d, N + 1> frame_transforms(const SerialChain<N>& model, const VecIn<N>& q) {
  std::array<Eigen::Isometry3d, N + 1> out;
  out[0] = Eigen::Isometry3d::Identity();
  for (int i = 0; i < N; ++i)
    out[static_cast<std::size_t>(i) + 1] =
        out[static_cast<std::size_t>(i)] * dh_transform(model.joints[static_cast<std::size_t>(i)], q[i]);
  return out;
}

template <int N>
Vec3 forward_kinematics(const SerialChain<N>& model, const VecIn<N>& q) {
  Eigen::Isometry3d t = Eigen::Isometry3d::Identity();
  for (int i = 0; i < N; ++i) t = t * dh_transform(model.joints[static_cast<std::size_t>(i)], q[i]);
  return t.translation();
}

// Positional Jacobian dx/dq: column k is z_{k-1} x (p_e - p_{k-1}).
template <int N>
Jac<N> jacobian(const SerialChain<N>& model, const VecIn<N>& q) {
  const auto frames = frame_transforms(model, q);
  const Vec3 p_e = frames[N].translation();
  Jac<N> J;
  for (int k = 0; k < N; ++k) {
    const auto& f = frames[static_cast<std::size_t>(k)];
    J.col(k) = f.linear().col(2).cross(p_e - f.translation());
  }
  return J;
}

// Time derivative of J along qdot, by central directional difference.
template <int N>
Jac<N> jacobian_dot(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot) {
  constexpr double h = 1e-6;
  if (qdot.isZero(0.0)) return Jac<N>::Zero();
  return (jacobian(model, VecN<N>(q + h * qdot)) - jacobian(model, VecN<N>(q - h * qdot))) / (2.0 * h);
}

struct IkOptions {
  double tolerance = 1e-4;  // metres
  double damping = 1e-3;
  int max_iterations = 200;
  double max_joint_step = 0.5;  // rad per iteration
};

enum class IkStatus { converged, no_convergence };

template <int N>
struct IkResult {
  VecN<N> q;
  double residual = 0.0;
  int iterations = 0;
  IkStatus status = IkStatus::no_convergence;

  bool ok() const { return status == IkStatus::converged; }
};

// Damped least-squares position IK, warm-started at q_seed and clamped to the
// joint limits after every iteration. The returned q is always within limits;
// status is no_convergence when the residual still exceeds the tolerance.
template <int N>
IkResult<N> ik_solve(const SerialChain<N>& model, const VecIn<N>& q_seed, const Vec3& x_target,
                     const IkOptions& opt = {}) {
  IkResult<N> res;
  res.q = model.clamp(q_seed);
  const double lambda_sq = opt.damping * opt.damping;
  for (int it = 0;; ++it) {
    const Vec3 err = x_target - forward_kinematics(model, res.q);
    res.residual = err.norm();
    res.iterations = it;
    if (res.residual <= opt.tolerance) {
      res.status = IkStatus::converged;
      return res;
    }
    if (it >= opt.max_iterations || !std::isfinite(res.residual)) break;
    Jac<N> J = jacobian(model, res.q);
    VecN<N> dq;
    // joints pinned at a limit and pushed outward drop out of the solve
    for (int pass = 0; pass <= N; ++pass) {
      const Mat3 jjt = J * J.transpose() + lambda_sq * Mat3::Identity();
      dq = J.transpose() * jjt.ldlt().solve(err);
      bool pinned = false;
      for (int k = 0; k < N; ++k)
        if (J.col(k).squaredNorm() > 0.0 && ((res.q[k] >= model.q_max[k] && dq[k] > 0.0) ||
                                             (res.q[k] <= model.q_min[k] && dq[k] < 0.0))) {
          J.col(k).setZero();
          pinned = true;
        }
      if (!pinned) break;
    }
    const double biggest = dq.cwiseAbs().maxCoeff();
    if (biggest > opt.max_joint_step) dq *= opt.max_joint_step / biggest;
    res.q = model.clamp(res.q + dq);
  }
  res.status = IkStatus::no_convergence;
  return res;
}

}  // namespace coadapt
