#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <type_traits>
#include <string>

namespace coadapt {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

template <int N>
using VecN = Eigen::Matrix<double, N, 1>;

// Non-deduced parameter form, so Eigen expressions bind without casts.
template <int N>
using VecIn = std::type_identity_t<VecN<N>>;

template <int N>
using MatN = Eigen::Matrix<double, N, N>;

template <int N>
using Jac = Eigen::Matrix<double, 3, N>;

inline constexpr int kDof = 6;

using Vec6 = VecN<kDof>;
using Mat6 = MatN<kDof>;
using Mat36 = Jac<kDof>;

// Configuration that cannot describe a valid robot, trigger, agent or episode.
class ConfigInvalid : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class MissingCheckpoint : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class EmptyTraceSet : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class InsufficientData : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Malformed persisted data (checkpoint, trace, CSV).
class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Fidelity { fast, dynamic };

inline std::string to_string(Fidelity f) { return f == Fidelity::fast ? "fast" : "dynamic"; }

inline Fidelity fidelity_from_string(const std::string& s) {
  if (s == "fast") return Fidelity::fast;
  if (s == "dynamic") return Fidelity::dynamic;
  throw ConfigInvalid("unknown fidelity '" + s + "'");
}

// Sign with a symmetric dead zone; zero and values with |v| < dead_zone map to 0.
inline int sign_of(double v, double dead_zone = 0.0) {
  if (v == 0.0 || (v < dead_zone && v > -dead_zone)) return 0;
  return v > 0.0 ? 1 : -1;
}

// Axis-aligned sampling box for start and goal positions, metres.
struct WorkspaceBox {
  Vec3 lo{0.20, -0.20, 0.10};
  Vec3 hi{0.50, 0.20, 0.40};

  Vec3 centre() const { return 0.5 * (lo + hi); }
  Vec3 half_range() const { return 0.5 * (hi - lo); }
  bool contains(const Vec3& x) const { return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all(); }

  // Maps the box onto [-1, 1]^3, clamping outside points.
  Vec3 normalize(const Vec3& x) const {
    return ((2.0 * x - lo - hi).array() / (hi - lo).array()).cwiseMax(-1.0).cwiseMin(1.0);
  }

  void validate() const {
    if (!((hi.array() > lo.array()).all())) throw ConfigInvalid("env.box: hi must exceed lo on every axis");
  }
};

}  // namespace coadapt
