#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cornercert/errors.hpp"

namespace cornercert {

enum class Activation { MinMax, ReLU, Identity };

inline std::string activation_name(Activation a) {
  switch (a) {
    case Activation::MinMax: return "minmax";
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
  }
  throw UnsupportedError("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
  if (s == "minmax") return Activation::MinMax;
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw UnsupportedError("unknown activation: " + s);
}

struct DenseLayer {
  Eigen::MatrixXd weights;  // rows = input dim, cols = output dim
  Eigen::VectorXd bias;     // size = output dim
};

struct Layer {
  DenseLayer dense;
  Activation activation = Activation::Identity;
};

/// Small dense network f : R^n -> R^m producing logits. Layers compute
/// a_out = act(W^T a_in + b). All arithmetic is 64-bit.
struct Network {
  std::vector<Layer> layers;
  int input_dim = 0;
  int num_classes = 0;

  void validate() const {
    if (layers.empty()) throw ParameterError("network has no layers");
    if (input_dim <= 0) throw ParameterError("input_dim must be positive");
    if (num_classes < 2) throw ParameterError("num_classes must be >= 2");
    Eigen::Index in = input_dim;
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& dense = layers[l].dense;
      if (dense.weights.rows() != in)
        throw ParameterError("layer " + std::to_string(l) + " expects input dim " +
                             std::to_string(dense.weights.rows()) + ", got " + std::to_string(in));
      if (dense.bias.size() != dense.weights.cols())
        throw ParameterError("layer " + std::to_string(l) + " bias size mismatch");
      if (!dense.weights.allFinite() || !dense.bias.allFinite())
        throw ParameterError("layer " + std::to_string(l) + " has non-finite entries");
      if (layers[l].activation == Activation::MinMax && dense.weights.cols() % 2 != 0)
        throw ParameterError("MinMax layer " + std::to_string(l) + " needs even width");
      in = dense.weights.cols();
    }
    if (layers.back().activation != Activation::Identity)
      throw ParameterError("last layer activation must be identity");
    if (in != num_classes)
      throw ParameterError("last layer width must equal num_classes");
  }
};

// MinMax sorts each consecutive disjoint pair (a2p, a2p+1) into (min, max).
// At exact ties the pair is kept in place, matching the smallest-index rule.
inline Eigen::VectorXd apply_activation(Activation act, const Eigen::VectorXd& z) {
  switch (act) {
    case Activation::Identity:
      return z;
    case Activation::ReLU:
      return z.cwiseMax(0.0);
    case Activation::MinMax: {
      Eigen::VectorXd out(z.size());
      for (Eigen::Index p = 0; p + 1 < z.size(); p += 2) {
        const double a = z[p], b = z[p + 1];
        out[p] = std::min(a, b);
        out[p + 1] = std::max(a, b);
      }
      return out;
    }
  }
  throw UnsupportedError("unknown activation");
}

// Gradient of the activation output w.r.t. its pre-activation, applied to an
// upstream gradient g. For MinMax this is a permutation (GNP); for ReLU a
// 0/1 mask with the subgradient 0 chosen at z == 0.
inline Eigen::VectorXd route_gradient(Activation act, const Eigen::VectorXd& z,
                                      const Eigen::VectorXd& g) {
  switch (act) {
    case Activation::Identity:
      return g;
    case Activation::ReLU: {
      Eigen::VectorXd out = g;
      for (Eigen::Index i = 0; i < z.size(); ++i)
        if (!(z[i] > 0.0)) out[i] = 0.0;
      return out;
    }
    case Activation::MinMax: {
      Eigen::VectorXd out(z.size());
      for (Eigen::Index p = 0; p + 1 < z.size(); p += 2) {
        if (z[p] <= z[p + 1]) {
          out[p] = g[p];
          out[p + 1] = g[p + 1];
        } else {
          out[p] = g[p + 1];
          out[p + 1] = g[p];
        }
      }
      return out;
    }
  }
  throw UnsupportedError("unknown activation");
}

struct ForwardTrace {
  std::vector<Eigen::VectorXd> inputs;   // inputs[l] = vector fed into layer l
  std::vector<Eigen::VectorXd> preacts;  // preacts[l] = W_l^T inputs[l] + b_l
  Eigen::VectorXd logits;
};

inline ForwardTrace forward_trace(const Network& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dim)
    throw InputShapeError("expected input of dim " + std::to_string(net.input_dim) +
                          ", got " + std::to_string(x.size()));
  ForwardTrace t;
  t.inputs.reserve(net.layers.size());
  t.preacts.reserve(net.layers.size());
  Eigen::VectorXd a = x;
  for (const auto& layer : net.layers) {
    t.inputs.push_back(a);
    Eigen::VectorXd z = layer.dense.weights.transpose() * a + layer.dense.bias;
    t.preacts.push_back(z);
    a = apply_activation(layer.activation, z);
  }
  t.logits = std::move(a);
  return t;
}

inline Eigen::VectorXd forward(const Network& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dim)
    throw InputShapeError("expected input of dim " + std::to_string(net.input_dim) +
                          ", got " + std::to_string(x.size()));
  Eigen::VectorXd a = x;
  for (const auto& layer : net.layers)
    a = apply_activation(layer.activation,
                         (layer.dense.weights.transpose() * a + layer.dense.bias).eval());
  return a;
}

// Argmax with ties broken toward the smallest class index.
inline int argmax_class(const Eigen::VectorXd& logits) {
  int best = 0;
  for (int i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return best;
}

inline int predict(const Network& net, const Eigen::VectorXd& x) {
  return argmax_class(forward(net, x));
}

/// Margin by which the predicted class beats the runner-up; 0 exactly on the
/// decision boundary.
inline double margin(const Network& net, const Eigen::VectorXd& x) {
  Eigen::VectorXd f = forward(net, x);
  int j = argmax_class(f);
  double best_other = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < f.size(); ++i)
    if (i != j) best_other = std::max(best_other, f[i]);
  return f[j] - best_other;
}

struct Gradients {
  Eigen::VectorXd input;                 // d(v . f)/dx
  std::vector<Eigen::MatrixXd> weights;  // per-layer d(v . f)/dW (optional)
  std::vector<Eigen::VectorXd> biases;
};

// Reverse-mode gradient of the scalar v . f(x). Exact away from activation
// kinks; at kinks the subgradient follows the tie rules in route_gradient.
inline Gradients backprop(const Network& net, const ForwardTrace& trace,
                          const Eigen::VectorXd& v, bool with_weight_grads = false) {
  Gradients g;
  if (with_weight_grads) {
    g.weights.resize(net.layers.size());
    g.biases.resize(net.layers.size());
  }
  Eigen::VectorXd up = v;
  for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
    Eigen::VectorXd pre = route_gradient(net.layers[l].activation, trace.preacts[l], up);
    if (with_weight_grads) {
      g.weights[l] = trace.inputs[l] * pre.transpose();
      g.biases[l] = pre;
    }
    up = net.layers[l].dense.weights * pre;
  }
  g.input = std::move(up);
  return g;
}

inline Eigen::VectorXd input_gradient(const Network& net, const Eigen::VectorXd& x,
                                      const Eigen::VectorXd& v) {
  if (v.size() != net.num_classes)
    throw InputShapeError("class weight vector must have num_classes entries");
  return backprop(net, forward_trace(net, x), v).input;
}

/// The 2-2-2 MinMax network computing f(x) = (0, max(x1, x2)), whose decision
/// boundary is the right-angle corner {max(x1, x2) = 0}.
inline Network make_minimal_corner_net() {
  Network net;
  net.input_dim = 2;
  net.num_classes = 2;
  Layer hidden;
  hidden.dense.weights = Eigen::Matrix2d::Identity();
  hidden.dense.bias = Eigen::Vector2d::Zero();
  hidden.activation = Activation::MinMax;
  Layer out;
  out.dense.weights = (Eigen::Matrix2d() << 0.0, 0.0, 0.0, 1.0).finished();
  out.dense.bias = Eigen::Vector2d::Zero();
  out.activation = Activation::Identity;
  net.layers = {hidden, out};
  net.validate();
  return net;
}

// --- JSON serialization (shared format: weights row-major, rows = input dim) ---

inline nlohmann::json network_to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : net.layers) {
    nlohmann::json w = nlohmann::json::array();
    for (Eigen::Index r = 0; r < layer.dense.weights.rows(); ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (Eigen::Index c = 0; c < layer.dense.weights.cols(); ++c)
        row.push_back(layer.dense.weights(r, c));
      w.push_back(std::move(row));
    }
    nlohmann::json b = nlohmann::json::array();
    for (Eigen::Index i = 0; i < layer.dense.bias.size(); ++i)
      b.push_back(layer.dense.bias[i]);
    layers.push_back({{"weights", std::move(w)},
                      {"bias", std::move(b)},
                      {"activation", activation_name(layer.activation)}});
  }
  return {{"input_dim", net.input_dim},
          {"num_classes", net.num_classes},
          {"layers", std::move(layers)}};
}

inline Network network_from_json(const nlohmann::json& j) {
  Network net;
  net.input_dim = j.at("input_dim").get<int>();
  net.num_classes = j.at("num_classes").get<int>();
  for (const auto& jl : j.at("layers")) {
    Layer layer;
    const auto& w = jl.at("weights");
    const std::size_t rows = w.size();
    const std::size_t cols = rows ? w.at(0).size() : 0;
    layer.dense.weights.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
      if (w.at(r).size() != cols) throw ParameterError("ragged weight matrix");
      for (std::size_t c = 0; c < cols; ++c)
        layer.dense.weights(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            w.at(r).at(c).get<double>();
    }
    const auto& b = jl.at("bias");
    layer.dense.bias.resize(static_cast<Eigen::Index>(b.size()));
    for (std::size_t i = 0; i < b.size(); ++i)
      layer.dense.bias[static_cast<Eigen::Index>(i)] = b.at(i).get<double>();
    layer.activation = activation_from_name(jl.at("activation").get<std::string>());
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

inline void save_network(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << network_to_json(net).dump(2) << "\n";
}

inline Network load_network(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  nlohmann::json j;
  try {
    in >> j;
    return network_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid network file ") + path + ": " + e.what(), 0);
  }
}

}  // namespace cornercert
