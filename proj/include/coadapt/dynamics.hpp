#pragma once

#include "coadapt/kinematics.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace coadapt {

template <int N>
struct DynamicsTerms {
  MatN<N> M;      // inertia, kg m^2
  VecN<N> Cqdot;  // Coriolis and centrifugal torques
  VecN<N> g;      // gravity torques
};

// Recursive Newton-Euler for point-mass links. Gravity enters as an upward
// base acceleration; armature adds armature_k * qddot_k on joint k.
template <int N>
VecN<N> inverse_dynamics(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot,
                         const VecIn<N>& qddot) {
  const auto frames = frame_transforms(model, q);

  std::array<Vec3, N> com;        // link COM positions, base frame
  std::array<Vec3, N> com_accel;  // link COM linear accelerations
  Vec3 omega = Vec3::Zero();
  Vec3 omega_dot = Vec3::Zero();
  Vec3 origin_accel = -model.gravity;

  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const Vec3 z = frames[ui].linear().col(2);
    const Vec3 omega_prev = omega;
    omega = omega_prev + qdot[i] * z;
    omega_dot = omega_dot + qddot[i] * z + omega_prev.cross(qdot[i] * z);

    const Vec3 link = frames[ui + 1].translation() - frames[ui].translation();
    origin_accel += omega_dot.cross(link) + omega.cross(omega.cross(link));

    com[ui] = frames[ui + 1] * model.link_com[ui];
    const Vec3 r = com[ui] - frames[ui + 1].translation();
    com_accel[ui] = origin_accel + omega_dot.cross(r) + omega.cross(omega.cross(r));
  }

  VecN<N> tau;
  Vec3 force = Vec3::Zero();   // force exerted on link i+1 by link i
  Vec3 moment = Vec3::Zero();  // moment about origin of frame i
  for (int i = N - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    const Vec3 o_prev = frames[ui].translation();
    const Vec3 f_link = model.link_mass[i] * com_accel[ui];
    moment = moment + (frames[ui + 1].translation() - o_prev).cross(force) + (com[ui] - o_prev).cross(f_link);
    force += f_link;
    tau[i] = moment.dot(frames[ui].linear().col(2)) + model.armature[i] * qddot[i];
  }
  return tau;
}

template <int N>
VecN<N> gravity_torques(const SerialChain<N>& model, const VecIn<N>& q) {
  return inverse_dynamics(model, q, VecN<N>::Zero(), VecN<N>::Zero());
}

template <int N>
DynamicsTerms<N> extract_terms(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot) {
  DynamicsTerms<N> t;
  const VecN<N> zero = VecN<N>::Zero();
  t.g = inverse_dynamics(model, q, zero, zero);
  t.Cqdot = qdot.isZero(0.0) ? zero : VecN<N>(inverse_dynamics(model, q, qdot, zero) - t.g);
  for (int k = 0; k < N; ++k) t.M.col(k) = inverse_dynamics(model, q, zero, VecN<N>::Unit(k)) - t.g;
  return t;
}

// Potential energy of the point masses relative to the base origin.
template <int N>
double potential_energy(const SerialChain<N>& model, const VecIn<N>& q) {
  const auto frames = frame_transforms(model, q);
  double u = 0.0;
  for (int i = 0; i < N; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    u -= model.link_mass[i] * model.gravity.dot(frames[ui + 1] * model.link_com[ui]);
  }
  return u;
}

template <int N>
double kinetic_energy(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot) {
  const auto terms = extract_terms(model, q, VecN<N>::Zero());
  return 0.5 * qdot.dot(terms.M * qdot);
}

// qddot = M^-1 (tau - C qdot - g)
template <int N>
VecN<N> forward_dynamics(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot,
                         const VecIn<N>& tau) {
  const auto t = extract_terms(model, q, qdot);
  return t.M.llt().solve(tau - t.Cqdot - t.g);
}

template <int N>
Eigen::Matrix<double, N, 3> pseudo_inverse(const Jac<N>& J) {
  return J.completeOrthogonalDecomposition().pseudoInverse();
}

// qddot_d = J# (xddot_d - Jdot qdot) + (I - J# J) z
template <int N>
VecN<N> resolve_joint_accel(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot,
                            const Vec3& xddot_d, const VecIn<N>& z = VecN<N>::Zero()) {
  const Jac<N> J = jacobian(model, q);
  const Eigen::Matrix<double, N, 3> Jp = pseudo_inverse(J);
  const Vec3 bias = jacobian_dot(model, q, qdot) * qdot;
  return Jp * (xddot_d - bias) + (MatN<N>::Identity() - Jp * J) * z;
}

template <int N>
struct CtcGains {
  VecN<N> kp = VecN<N>::Constant(100.0);
  VecN<N> kd = VecN<N>::Constant(20.0);
};

// Computed-torque law: tau = M (qddot_ref + Kd edot + Kp e) + C qdot + g.
template <int N>
VecN<N> ctc_torque(const SerialChain<N>& model, const VecIn<N>& q, const VecIn<N>& qdot,
                   const VecIn<N>& q_ref, const VecIn<N>& qdot_ref, const VecIn<N>& qddot_ref,
                   const CtcGains<N>& gains) {
  const auto t = extract_terms(model, q, qdot);
  const VecN<N> v = qddot_ref + gains.kd.cwiseProduct(qdot_ref - qdot) + gains.kp.cwiseProduct(q_ref - q);
  return t.M * v + t.Cqdot + t.g;
}

}  // namespace coadapt
