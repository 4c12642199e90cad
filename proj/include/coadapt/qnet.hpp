#pragma once

#include "coadapt/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace coadapt {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

struct DenseLayer {
  MatX W;  // out x in
  VecX b;
};

// Feed-forward ReLU network with a linear head.
class QNetwork {
public:
  QNetwork() = default;

  // dims = {input, hidden..., output}
  explicit QNetwork(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.size() < 2) throw ConfigInvalid("QNetwork needs at least input and output dims");
    for (int d : dims_)
      if (d <= 0) throw ConfigInvalid("QNetwork dims must be positive");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l)
      layers_.push_back({MatX::Zero(dims_[l + 1], dims_[l]), VecX::Zero(dims_[l + 1])});
  }

  static QNetwork make(int input, int hidden, int output) { return QNetwork({input, hidden, hidden, output}); }

  // He-uniform weights, zero biases.
  template <class Rng>
  void init(Rng& rng) {
    for (auto& L : layers_) {
      const double lim = std::sqrt(6.0 / static_cast<double>(L.W.cols()));
      std::uniform_real_distribution<double> u(-lim, lim);
      for (Eigen::Index c = 0; c < L.W.cols(); ++c)
        for (Eigen::Index r = 0; r < L.W.rows(); ++r) L.W(r, c) = u(rng);
      L.b.setZero();
    }
  }

  const std::vector<int>& dims() const { return dims_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  VecX forward(const VecX& x) const {
    check_input(x.size());
    VecX a = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      VecX z = layers_[l].W * a + layers_[l].b;
      a = l + 1 < layers_.size() ? VecX(z.cwiseMax(0.0)) : z;
    }
    return a;
  }

  struct Cache {
    std::vector<MatX> act;  // act[0] = input, act[l+1] = output of layer l
  };

  // Columns are samples.
  MatX forward_batch(const MatX& X, Cache* cache = nullptr) const {
    check_input(X.rows());
    MatX a = X;
    if (cache) cache->act.assign(1, X);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      MatX z = layers_[l].W * a;
      z.colwise() += layers_[l].b;
      a = l + 1 < layers_.size() ? MatX(z.cwiseMax(0.0)) : z;
      if (cache) cache->act.push_back(a);
    }
    return a;
  }

  // Back-propagates dL/d(output) through a cached forward pass.
  std::vector<DenseLayer> backward(const Cache& cache, const MatX& d_out) const {
    std::vector<DenseLayer> g(layers_.size());
    MatX delta = d_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      g[l].W = delta * cache.act[l].transpose();
      g[l].b = delta.rowwise().sum();
      if (l > 0) {
        delta = layers_[l].W.transpose() * delta;
        delta = delta.cwiseProduct(MatX((cache.act[l].array() > 0.0).cast<double>()));
      }
    }
    return g;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& L : layers_) n += static_cast<std::size_t>(L.W.size() + L.b.size());
    return n;
  }

  // Flat layout: per layer, W row-major then b.
  VecX flat_parameters() const { return flatten(layers_); }

  static VecX flatten(const std::vector<DenseLayer>& ls) {
    std::size_t n = 0;
    for (const auto& L : ls) n += static_cast<std::size_t>(L.W.size() + L.b.size());
    VecX out(static_cast<Eigen::Index>(n));
    Eigen::Index k = 0;
    for (const auto& L : ls) {
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) out[k++] = L.W(r, c);
      for (Eigen::Index r = 0; r < L.b.size(); ++r) out[k++] = L.b[r];
    }
    return out;
  }

  void set_flat_parameters(const VecX& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) throw FormatError("parameter count mismatch");
    Eigen::Index k = 0;
    for (auto& L : layers_) {
      for (Eigen::Index r = 0; r < L.W.rows(); ++r)
        for (Eigen::Index c = 0; c < L.W.cols(); ++c) L.W(r, c) = p[k++];
      for (Eigen::Index r = 0; r < L.b.size(); ++r) L.b[r] = p[k++];
    }
  }

  bool finite() const {
    for (const auto& L : layers_)
      if (!L.W.allFinite() || !L.b.allFinite()) return false;
    return true;
  }

  friend bool operator==(const QNetwork& a, const QNetwork& b) {
    if (a.dims_ != b.dims_) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l)
      if (a.layers_[l].W != b.layers_[l].W || a.layers_[l].b != b.layers_[l].b) return false;
    return true;
  }

private:
  void check_input(Eigen::Index n) const {
    if (n != input_dim())
      throw std::invalid_argument("QNetwork input has " + std::to_string(n) + " rows, expected " +
                                  std::to_string(input_dim()));
  }

  std::vector<int> dims_;
  std::vector<DenseLayer> layers_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam() = default;
  Adam(const QNetwork& net, AdamOptions opt) : opt_(opt) {
    for (const auto& L : net.layers()) {
      m_.push_back({MatX::Zero(L.W.rows(), L.W.cols()), VecX::Zero(L.b.size())});
      v_.push_back(m_.back());
    }
  }

  void step(QNetwork& net, const std::vector<DenseLayer>& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    auto& ls = net.layers();
    for (std::size_t l = 0; l < ls.size(); ++l) {
      update(ls[l].W, m_[l].W, v_[l].W, g[l].W, c1, c2);
      update(ls[l].b, m_[l].b, v_[l].b, g[l].b, c1, c2);
    }
  }

private:
  template <class P>
  void update(P& p, P& m, P& v, const P& g, double c1, double c2) const {
    m = opt_.beta1 * m + (1.0 - opt_.beta1) * g;
    v = opt_.beta2 * v + (1.0 - opt_.beta2) * g.cwiseProduct(g);
    p.array() -= opt_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt_.eps);
  }

  AdamOptions opt_;
  std::vector<DenseLayer> m_, v_;
  long long t_ = 0;
};

// Checkpoint blob: "DAMM", uint32 version, uint32 net count, then per net
// uint32 dim count, uint32 dims, float64 parameters (W row-major, then b).
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::ostream& o, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char*>(b), 4);
}
inline std::uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path + ": truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}
inline void put_f64(std::ostream& o, double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  for (int k = 0; k < 8; ++k) o.put(static_cast<char>((u >> (8 * k)) & 0xff));
}
inline double get_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(path + ": truncated checkpoint");
  std::uint64_t u = 0;
  for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(b[k]) << (8 * k);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<const QNetwork*>& nets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write("DAMM", 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(nets.size()));
  for (const auto* n : nets) {
    detail::put_u32(out, static_cast<std::uint32_t>(n->dims().size()));
    for (int d : n->dims()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    const VecX p = n->flat_parameters();
    for (Eigen::Index k = 0; k < p.size(); ++k) detail::put_f64(out, p[k]);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<QNetwork> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingCheckpoint("checkpoint not found: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DAMM", 4) != 0) throw FormatError(path + ": bad magic");
  if (detail::get_u32(in, path) != kCheckpointVersion) throw FormatError(path + ": unsupported version");
  const std::uint32_t count = detail::get_u32(in, path);
  if (count > 64) throw FormatError(path + ": implausible net count");
  std::vector<QNetwork> nets;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint32_t nd = detail::get_u32(in, path);
    if (nd < 2 || nd > 64) throw FormatError(path + ": implausible layer count");
    std::vector<int> dims;
    for (std::uint32_t d = 0; d < nd; ++d) dims.push_back(static_cast<int>(detail::get_u32(in, path)));
    QNetwork net(dims);
    VecX p(static_cast<Eigen::Index>(net.parameter_count()));
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = detail::get_f64(in, path);
    net.set_flat_parameters(p);
    nets.push_back(std::move(net));
  }
  return nets;
}

}  // namespace coadapt
