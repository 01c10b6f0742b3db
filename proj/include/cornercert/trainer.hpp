#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cornercert/certifier.hpp"
#include "cornercert/datagen.hpp"
#include "cornercert/errors.hpp"
#include "cornercert/lipschitz.hpp"
#include "cornercert/network.hpp"

namespace cornercert {

struct TrainConfig {
  int hidden_units = 2;  // must be even (MinMax pairing)
  int epochs = 64;
  int batch_size = 128;
  double lambda = 1.2;
  double eps_final = 0.5;
  double lr_initial = 1e-3;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_units < 2 || hidden_units % 2 != 0)
      throw ParameterError("hidden_units must be even and >= 2");
    if (epochs < 1 || batch_size < 1) throw ParameterError("epochs and batch_size must be >= 1");
    if (lambda <= 0.0 || eps_final <= 0.0 || lr_initial <= 0.0)
      throw ParameterError("schedule parameters must be positive");
  }
};

struct EpochStats {
  int epoch = 0;
  double eps = 0.0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double vra = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
};

/// Robustness radius ramp: logarithmic from eps_final/100 up to eps_final at
/// the halfway point, constant afterwards.
inline double eps_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw ParameterError("epoch out of range");
  const double half = cfg.epochs / 2.0;
  const double progress = std::min(1.0, epoch / half);
  const double eps_lo = cfg.eps_final / 100.0;
  return cfg.eps_final * std::pow(eps_lo / cfg.eps_final, 1.0 - progress);
}

/// Constant learning rate for the first half, linear decay to 0 afterwards.
inline double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch >= cfg.epochs) throw ParameterError("epoch out of range");
  const double half = cfg.epochs / 2.0;
  if (epoch < half) return cfg.lr_initial;
  return cfg.lr_initial * (1.0 - (epoch - half) / half);
}

/// Logits augmented with the certification threshold: appends
/// bot = max_{i != j} (f_i + eps*K_ji) for the predicted class j. The
/// augmented argmax stays at j exactly when global-Lipschitz certification
/// succeeds at eps.
inline Eigen::VectorXd gloro_logits(const Network& net, const LipschitzBound& bound,
                                    const Eigen::VectorXd& x, double eps) {
  if (eps < 0.0) throw ParameterError("gloro_logits: eps must be >= 0");
  const Eigen::VectorXd f = forward(net, x);
  const int j = argmax_class(f);
  double bot = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < f.size(); ++i)
    if (i != j) bot = std::max(bot, f[i] + eps * bound.at(j, i));
  Eigen::VectorXd out(f.size() + 1);
  out.head(f.size()) = f;
  out[f.size()] = bot;
  return out;
}

namespace detail {

inline Eigen::VectorXd stable_softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd shifted = z.array() - z.maxCoeff();
  Eigen::VectorXd e = shifted.array().exp();
  return e / e.sum();
}

inline double cross_entropy(const Eigen::VectorXd& z, int label) {
  const Eigen::VectorXd shifted = z.array() - z.maxCoeff();
  const double lse = std::log(shifted.array().exp().sum());
  return lse - shifted[label];
}

}  // namespace detail

/// GloRo-TRADES certified training of a 2-H-2 MinMax network on the corner
/// dataset with plain minibatch SGD. Per-sample loss is
/// CE(f(x), y) + lambda * CE([f(x); bot], y); the bound is recomputed every
/// batch and its gradient flows through both the last-layer column gap and
/// the hidden spectral norm (power-iteration vectors held fixed).
inline std::pair<Network, TrainReport> train_gloro(const CornerDataset& data,
                                                   const TrainConfig& cfg) {
  cfg.validate();
  if (data.points.empty() || data.points.size() != data.labels.size())
    throw ParameterError("train_gloro: invalid dataset");

  const int h = cfg.hidden_units;
  std::mt19937_64 rng(cfg.seed);

  Network net;
  net.input_dim = 2;
  net.num_classes = 2;
  auto glorot = [&](int rows, int cols) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Eigen::MatrixXd w(rows, cols);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) w(r, c) = dist(rng);
    return w;
  };
  net.layers.resize(2);
  net.layers[0].dense.weights = glorot(2, h);
  net.layers[0].dense.bias = Eigen::VectorXd::Zero(h);
  net.layers[0].activation = Activation::MinMax;
  net.layers[1].dense.weights = glorot(h, 2);
  net.layers[1].dense.bias = Eigen::VectorXd::Zero(2);
  net.layers[1].activation = Activation::Identity;
  net.validate();

  const std::size_t n = data.points.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  report.epochs.reserve(cfg.epochs);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eps = eps_schedule(epoch, cfg);
    const double lr = lr_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    long batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t end = std::min(n, start + cfg.batch_size);
      const double bsz = static_cast<double>(end - start);

      // Bound with gradient hooks, recomputed for the current weights.
      const SpectralDecomp sd = spectral_norm_decomp(net.layers[0].dense.weights);
      const Eigen::MatrixXd& w2 = net.layers[1].dense.weights;
      const Eigen::VectorXd col_gap = w2.col(1) - w2.col(0);
      const double gap_norm = col_gap.norm();
      const double k10 = sd.sigma * gap_norm;
      LipschitzBound bound;
      bound.pair_constants = Eigen::Matrix2d::Zero();
      bound.pair_constants(0, 1) = bound.pair_constants(1, 0) = k10;

      Eigen::MatrixXd dw1 = Eigen::MatrixXd::Zero(2, h);
      Eigen::VectorXd db1 = Eigen::VectorXd::Zero(h);
      Eigen::MatrixXd dw2 = Eigen::MatrixXd::Zero(h, 2);
      Eigen::VectorXd db2 = Eigen::VectorXd::Zero(2);
      double dk = 0.0;  // accumulated d(loss)/d(K_10)
      double batch_loss = 0.0;

      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const Eigen::VectorXd x = data.points[idx];
        const int y = data.labels[idx];

        const ForwardTrace trace = forward_trace(net, x);
        const Eigen::VectorXd& f = trace.logits;
        const int j = argmax_class(f);
        const int other = 1 - j;
        const double bot = f[other] + eps * k10;

        Eigen::VectorXd aug(3);
        aug << f[0], f[1], bot;
        batch_loss += detail::cross_entropy(f, y) + cfg.lambda * detail::cross_entropy(aug, y);

        // Upstream gradients: clean term, plus the robust term routed through
        // both the logits and the bot logit's (f_other, K) dependencies.
        const Eigen::VectorXd p_clean = detail::stable_softmax(f);
        const Eigen::VectorXd p_rob = detail::stable_softmax(aug);
        Eigen::VectorXd v = p_clean;
        v[y] -= 1.0;
        Eigen::VectorXd v_rob = p_rob.head(2);
        v_rob[y] -= 1.0;
        v_rob[other] += p_rob[2];
        v += cfg.lambda * v_rob;
        dk += cfg.lambda * p_rob[2] * eps;

        const Gradients g = backprop(net, trace, v, /*with_weight_grads=*/true);
        dw1 += g.weights[0];
        db1 += g.biases[0];
        dw2 += g.weights[1];
        db2 += g.biases[1];
      }

      batch_loss /= bsz;
      if (!std::isfinite(batch_loss))
        throw TrainingFailure("training loss diverged", epoch);
      epoch_loss += batch_loss;
      ++batches;

      dw1 /= bsz;
      db1 /= bsz;
      dw2 /= bsz;
      db2 /= bsz;
      dk /= bsz;

      // K = sigma(W1) * ||w2_1 - w2_0||: route dk into both factors.
      if (dk != 0.0) {
        dw1 += dk * gap_norm * (sd.u * sd.v.transpose());
        if (gap_norm > 0.0) {
          const Eigen::VectorXd unit_gap = col_gap / gap_norm;
          dw2.col(1) += dk * sd.sigma * unit_gap;
          dw2.col(0) -= dk * sd.sigma * unit_gap;
        }
      }

      net.layers[0].dense.weights -= lr * dw1;
      net.layers[0].dense.bias -= lr * db1;
      net.layers[1].dense.weights -= lr * dw2;
      net.layers[1].dense.bias -= lr * db2;
    }

    // End-of-epoch stats at the epoch's eps.
    const LipschitzBound eval_bound = pair_bounds(net);
    long correct = 0, verified = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Eigen::VectorXd x = data.points[i];
      const bool ok = predict(net, x) == data.labels[i];
      correct += ok;
      verified += ok && certify_global(net, eval_bound, x, eps).certified;
    }
    EpochStats stats;
    stats.epoch = epoch;
    stats.eps = eps;
    stats.lr = lr;
    stats.loss = epoch_loss / std::max(1L, batches);
    stats.accuracy = static_cast<double>(correct) / n;
    stats.vra = static_cast<double>(verified) / n;
    report.epochs.push_back(stats);
  }
  return {std::move(net), std::move(report)};
}

inline std::string train_report_to_csv(const TrainReport& report) {
  std::ostringstream out;
  out << "epoch,eps,lr,loss,accuracy,vra\n";
  for (const auto& e : report.epochs)
    out << e.epoch << ',' << format_double(e.eps) << ',' << format_double(e.lr) << ','
        << format_double(e.loss) << ',' << format_double(e.accuracy) << ','
        << format_double(e.vra) << '\n';
  return out.str();
}

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {{"hidden_units", cfg.hidden_units}, {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},     {"lambda", cfg.lambda},
          {"eps_final", cfg.eps_final},       {"lr_initial", cfg.lr_initial},
          {"seed", cfg.seed}};
}

}  // namespace cornercert
