#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "cornercert/errors.hpp"
#include "cornercert/network.hpp"

namespace cornercert {

inline constexpr int kPowerIterations = 1000;
inline constexpr double kPowerTol = 1e-9;

struct SpectralDecomp {
  double sigma = 0.0;
  Eigen::VectorXd u;  // left vector,  size = rows
  Eigen::VectorXd v;  // right vector, size = cols; sigma = u^T A v
};

// Power iteration on A^T A. Start vector is the normalized all-ones vector so
// repeated runs are bit-identical; canonical basis vectors are tried when the
// start lands in the null space.
inline SpectralDecomp spectral_norm_decomp(const Eigen::MatrixXd& a,
                                           int max_iters = kPowerIterations,
                                           double tol = kPowerTol) {
  if (a.size() == 0) throw ParameterError("spectral_norm: empty matrix");
  if (!a.allFinite()) throw ParameterError("spectral_norm: non-finite entries");
  SpectralDecomp d;
  d.u = Eigen::VectorXd::Zero(a.rows());
  d.v = Eigen::VectorXd::Zero(a.cols());
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.cols());
  v.normalize();
  if ((a * v).norm() == 0.0) {
    bool found = false;
    for (Eigen::Index k = 0; k < a.cols() && !found; ++k) {
      v = Eigen::VectorXd::Unit(a.cols(), k);
      found = (a * v).norm() > 0.0;
    }
    if (!found) return d;  // zero matrix
  }
  double sigma = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = a.transpose() * (a * v);
    const double wn = w.norm();
    if (wn == 0.0) break;
    v = w / wn;
    const double s = (a * v).norm();
    const bool converged = std::abs(s - sigma) <= tol * std::max(s, 1e-300);
    sigma = s;
    if (converged) break;
  }
  d.sigma = sigma;
  d.v = v;
  d.u = sigma > 0.0 ? Eigen::VectorXd((a * v) / sigma) : Eigen::VectorXd::Zero(a.rows());
  return d;
}

inline double spectral_norm(const Eigen::MatrixXd& a, int max_iters = kPowerIterations,
                            double tol = kPowerTol) {
  return spectral_norm_decomp(a, max_iters, tol).sigma;
}

/// Upper bounds K_ji on the Lipschitz constants of the class-pair differences
/// f_j - f_i, from the product of hidden-layer operator norms times the final
/// layer's per-pair column distance.
struct LipschitzBound {
  Eigen::MatrixXd pair_constants;  // K(j, i) = K(i, j) >= 0, zero diagonal
  std::string method = "layerwise_product";
  int power_iters = kPowerIterations;
  double tol = kPowerTol;

  double at(int j, int i) const { return pair_constants(j, i); }
  double scalar() const { return pair_constants.maxCoeff(); }
};

inline LipschitzBound pair_bounds(const Network& net, int max_iters = kPowerIterations,
                                  double tol = kPowerTol) {
  net.validate();
  for (const auto& layer : net.layers) {
    switch (layer.activation) {
      case Activation::MinMax:
      case Activation::ReLU:
      case Activation::Identity:
        break;
      default:
        throw UnsupportedError("pair_bounds requires 1-Lipschitz activations");
    }
  }
  double hidden_product = 1.0;
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
    hidden_product *= spectral_norm(net.layers[l].dense.weights, max_iters, tol);

  const Eigen::MatrixXd& last = net.layers.back().dense.weights;
  const int m = net.num_classes;
  LipschitzBound bound;
  bound.power_iters = max_iters;
  bound.tol = tol;
  bound.pair_constants = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < m; ++j)
    for (int i = j + 1; i < m; ++i) {
      const double k = hidden_product * (last.col(j) - last.col(i)).norm();
      bound.pair_constants(j, i) = k;
      bound.pair_constants(i, j) = k;
    }
  return bound;
}

/// Sampling estimate of the local Lipschitz constant of f_j - f_i over the
/// eps-ball at a point. `lower` is a valid lower bound for piecewise-linear
/// nets (the sup of the piecewise-constant gradient norm is attained on a
/// region); `upper` is the global layerwise bound. Not a certificate.
struct LocalLipschitzEstimate {
  Eigen::VectorXd point;
  double radius = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  long samples = 0;
};

inline constexpr std::uint64_t kLocalLipschitzSeed = 0x10ca1ULL;

namespace detail {

// Parameters t in (0, eps) along the ray x + t*d where the first layer's
// activation pattern changes. Only valid when that is the sole kinked layer.
inline std::vector<double> first_layer_kinks(const Network& net, const Eigen::VectorXd& x,
                                             const Eigen::VectorXd& d, double eps) {
  std::vector<double> ts;
  const auto& layer = net.layers.front();
  const Eigen::VectorXd h0 = layer.dense.weights.transpose() * x + layer.dense.bias;
  const Eigen::VectorXd s = layer.dense.weights.transpose() * d;
  auto push = [&](double t) {
    if (t > 0.0 && t < eps) ts.push_back(t);
  };
  if (layer.activation == Activation::MinMax) {
    for (Eigen::Index p = 0; p + 1 < h0.size(); p += 2) {
      const double denom = s[p] - s[p + 1];
      if (denom != 0.0) push((h0[p + 1] - h0[p]) / denom);
    }
  } else if (layer.activation == Activation::ReLU) {
    for (Eigen::Index u = 0; u < h0.size(); ++u)
      if (s[u] != 0.0) push(-h0[u] / s[u]);
  }
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  return ts;
}

}  // namespace detail

/// Estimate for an explicit class pair (j, i). The ball is probed along
/// `budget` seeded rays; with at most one hidden layer the gradient-norm sup
/// over each ray segment is computed exactly from the kink structure, so the
/// lower bound is nondecreasing in eps for nested balls under the same seed.
/// Deeper nets fall back to a geometric radius ladder per ray.
inline LocalLipschitzEstimate local_lipschitz_pair(const Network& net, const Eigen::VectorXd& x,
                                                   int class_j, int class_i, double eps,
                                                   int budget,
                                                   std::uint64_t seed = kLocalLipschitzSeed) {
  if (eps <= 0.0) throw ParameterError("local_lipschitz: eps must be positive");
  if (budget < 1) throw ParameterError("local_lipschitz: budget must be >= 1");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(net.num_classes);
  v[class_j] = 1.0;
  v[class_i] = -1.0;

  LocalLipschitzEstimate est;
  est.point = x;
  est.radius = eps;
  est.upper = pair_bounds(net).at(class_j, class_i);

  auto grad_norm = [&](const Eigen::VectorXd& p) {
    ++est.samples;
    return backprop(net, forward_trace(net, p), v).input.norm();
  };
  est.lower = grad_norm(x);

  std::mt19937_64 rng(seed);
  const int n = net.input_dim;
  const bool exact_rays = net.layers.size() <= 2;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double angle_offset = unif(rng) * 2.0 * std::numbers::pi;

  for (int k = 0; k < budget; ++k) {
    Eigen::VectorXd d(n);
    if (n == 2) {
      // Stratified angles with a seeded offset cover the disc evenly.
      const double th = angle_offset + 2.0 * std::numbers::pi * k / budget;
      d << std::cos(th), std::sin(th);
    } else {
      do {
        for (int c = 0; c < n; ++c) d[c] = gauss(rng);
      } while (d.norm() == 0.0);
      d.normalize();
    }
    if (exact_rays) {
      std::vector<double> ts = detail::first_layer_kinks(net, x, d, eps);
      double prev = 0.0;
      for (std::size_t s = 0; s <= ts.size(); ++s) {
        const double next = s < ts.size() ? ts[s] : eps;
        est.lower = std::max(est.lower, grad_norm(x + 0.5 * (prev + next) * d));
        prev = next;
      }
    } else {
      for (int lvl = 0; lvl < 12; ++lvl)
        est.lower = std::max(est.lower, grad_norm(x + eps * std::pow(2.0, -lvl) * d));
    }
  }
  return est;
}

/// Estimate for the pair that binds certification at x: the predicted class
/// against the runner-up.
inline LocalLipschitzEstimate local_lipschitz(const Network& net, const Eigen::VectorXd& x,
                                              double eps, int budget,
                                              std::uint64_t seed = kLocalLipschitzSeed) {
  Eigen::VectorXd f = forward(net, x);
  const int j = argmax_class(f);
  int runner = j == 0 ? 1 : 0;
  for (int i = 0; i < f.size(); ++i)
    if (i != j && f[i] > f[runner]) runner = i;
  return local_lipschitz_pair(net, x, j, runner, eps, budget, seed);
}

}  // namespace cornercert
