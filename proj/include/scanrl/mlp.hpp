#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "scanrl/geometry.hpp"
#include "scanrl/rng.hpp"

namespace scanrl {

// Two-layer ReLU trunk with a Gaussian policy head (mean + state
// independent log std) and a scalar value head. Doubles everywhere so the
// analytic gradients can be checked against finite differences tightly.
struct MlpDims {
  int n_in = 8;
  int h1 = 64;
  int h2 = 64;
  int n_act = 3;

  bool operator==(const MlpDims&) const = default;
};

namespace detail {

inline Eigen::MatrixXd orthogonal_matrix(int rows, int cols, double gain, Rng& rng) {
  const bool flip = rows < cols;
  const int m = flip ? cols : rows;
  const int n = flip ? rows : cols;
  Eigen::MatrixXd a(m, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) a(i, j) = rng.gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
  const Eigen::MatrixXd r = qr.matrixQR().topRows(n).triangularView<Eigen::Upper>();
  for (int j = 0; j < n; ++j) {
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  }
  Eigen::MatrixXd out = flip ? Eigen::MatrixXd(q.transpose()) : q;
  return gain * out;
}

}  // namespace detail

struct MlpParams {
  MlpDims dims;
  Eigen::MatrixXd W1, W2, Wp, Wv;
  Eigen::VectorXd b1, b2, bp, bv, log_std;

  static MlpParams zeros(const MlpDims& d) {
    MlpParams p;
    p.dims = d;
    p.W1 = Eigen::MatrixXd::Zero(d.h1, d.n_in);
    p.b1 = Eigen::VectorXd::Zero(d.h1);
    p.W2 = Eigen::MatrixXd::Zero(d.h2, d.h1);
    p.b2 = Eigen::VectorXd::Zero(d.h2);
    p.Wp = Eigen::MatrixXd::Zero(d.n_act, d.h2);
    p.bp = Eigen::VectorXd::Zero(d.n_act);
    p.Wv = Eigen::MatrixXd::Zero(1, d.h2);
    p.bv = Eigen::VectorXd::Zero(1);
    p.log_std = Eigen::VectorXd::Zero(d.n_act);
    return p;
  }

  // Orthogonal layer init: sqrt(2) gain on the trunk, small policy head,
  // unit value head, zero log std.
  static MlpParams init(const MlpDims& d, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x6d6c7031));
    MlpParams p = zeros(d);
    p.W1 = detail::orthogonal_matrix(d.h1, d.n_in, std::sqrt(2.0), rng);
    p.W2 = detail::orthogonal_matrix(d.h2, d.h1, std::sqrt(2.0), rng);
    p.Wp = detail::orthogonal_matrix(d.n_act, d.h2, 0.01, rng);
    p.Wv = detail::orthogonal_matrix(1, d.h2, 1.0, rng);
    return p;
  }

  int param_count() const {
    return static_cast<int>(W1.size() + b1.size() + W2.size() + b2.size() + Wp.size() +
                            bp.size() + Wv.size() + bv.size() + log_std.size());
  }

  Eigen::VectorXd to_flat() const {
    Eigen::VectorXd f(param_count());
    int at = 0;
    auto put = [&](const auto& m) {
      f.segment(at, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
      at += static_cast<int>(m.size());
    };
    put(W1), put(b1), put(W2), put(b2), put(Wp), put(bp), put(Wv), put(bv), put(log_std);
    return f;
  }

  static MlpParams from_flat(const MlpDims& d, const Eigen::VectorXd& f) {
    MlpParams p = zeros(d);
    if (f.size() != p.param_count()) throw Error("mlp: flat vector size mismatch");
    int at = 0;
    auto take = [&](auto& m) {
      Eigen::Map<Eigen::VectorXd>(m.data(), m.size()) = f.segment(at, m.size());
      at += static_cast<int>(m.size());
    };
    take(p.W1), take(p.b1), take(p.W2), take(p.b2), take(p.Wp), take(p.bp), take(p.Wv),
        take(p.bv), take(p.log_std);
    return p;
  }
};

// Gradient accumulator with the same shape as the parameters.
struct MlpGrads : MlpParams {
  explicit MlpGrads(const MlpDims& d) { static_cast<MlpParams&>(*this) = MlpParams::zeros(d); }
};

struct MlpForward {
  Eigen::VectorXd x, z1, a1, z2, a2, mu;
  double value = 0;
};

inline MlpForward mlp_forward(const MlpParams& p, const Eigen::VectorXd& obs) {
  if (obs.size() != p.dims.n_in) throw Error("mlp: observation size mismatch");
  if (!obs.allFinite()) throw Error("mlp: non-finite observation");
  MlpForward f;
  f.x = obs;
  f.z1 = p.W1 * obs + p.b1;
  f.a1 = f.z1.cwiseMax(0.0);
  f.z2 = p.W2 * f.a1 + p.b2;
  f.a2 = f.z2.cwiseMax(0.0);
  f.mu = p.Wp * f.a2 + p.bp;
  f.value = (p.Wv * f.a2 + p.bv)(0);
  return f;
}

struct PolicyHead {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
  double value = 0;
};

inline PolicyHead forward(const MlpParams& p, const Eigen::VectorXd& obs) {
  const MlpForward f = mlp_forward(p, obs);
  return PolicyHead{f.mu, p.log_std.array().exp(), f.value};
}

// Backprop of (dL/dmu, dL/dvalue) through the trunk into the accumulator.
inline void mlp_backward(const MlpParams& p, const MlpForward& f, const Eigen::VectorXd& dmu,
                         double dvalue, MlpGrads& g) {
  g.Wp += dmu * f.a2.transpose();
  g.bp += dmu;
  g.Wv += dvalue * f.a2.transpose();
  g.bv(0) += dvalue;
  Eigen::VectorXd da2 = p.Wp.transpose() * dmu + p.Wv.transpose() * Eigen::VectorXd::Constant(1, dvalue);
  Eigen::VectorXd dz2 = (f.z2.array() > 0.0).select(da2, 0.0);
  g.W2 += dz2 * f.a1.transpose();
  g.b2 += dz2;
  Eigen::VectorXd da1 = p.W2.transpose() * dz2;
  Eigen::VectorXd dz1 = (f.z1.array() > 0.0).select(da1, 0.0);
  g.W1 += dz1 * f.x.transpose();
  g.b1 += dz1;
}

inline constexpr double kLogSqrt2Pi = 0.9189385332046727417803297364056176;

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Log density of the tanh-squashed Gaussian at action tanh(a_raw), written
// in terms of the pre-squash sample. The Jacobian term uses
// log(1 - tanh(x)^2) = 2 (log 2 - x - softplus(-2x)) for stability.
inline double squashed_gaussian_logp(const Eigen::VectorXd& mu, const Eigen::VectorXd& log_std,
                                     const Eigen::VectorXd& a_raw) {
  double lp = 0;
  for (int i = 0; i < mu.size(); ++i) {
    const double sigma = std::exp(log_std[i]);
    const double z = (a_raw[i] - mu[i]) / sigma;
    lp += -0.5 * z * z - log_std[i] - kLogSqrt2Pi;
    lp -= 2.0 * (std::log(2.0) - a_raw[i] - softplus(-2.0 * a_raw[i]));
  }
  return lp;
}

inline double gaussian_entropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + 0.5 * log_std.size() * std::log(2.0 * kPi * std::exp(1.0));
}

struct ActionSample {
  Eigen::VectorXd action;  // tanh squashed, in (-1,1)
  Eigen::VectorXd a_raw;
  double logp = 0;
  double value = 0;
};

inline ActionSample sample_action(const MlpParams& p, const Eigen::VectorXd& obs, Rng& rng) {
  const MlpForward f = mlp_forward(p, obs);
  ActionSample s;
  s.a_raw.resize(p.dims.n_act);
  for (int i = 0; i < p.dims.n_act; ++i) {
    s.a_raw[i] = f.mu[i] + std::exp(p.log_std[i]) * rng.gaussian();
  }
  s.action = s.a_raw.array().tanh();
  s.logp = squashed_gaussian_logp(f.mu, p.log_std, s.a_raw);
  s.value = f.value;
  return s;
}

inline Eigen::VectorXd deterministic_action(const MlpParams& p, const Eigen::VectorXd& obs) {
  return mlp_forward(p, obs).mu.array().tanh();
}

}  // namespace scanrl
