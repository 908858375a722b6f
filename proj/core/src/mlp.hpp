#pragma once

// Batched MLP forward/backward shared by the encoder and the training loops.

#include "vibus/encoder.hpp"

#include <random>
#include <vector>

namespace vibus::detail {

struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer, rows = points
  std::vector<Eigen::MatrixXd> masks;   // scaled dropout mask per hidden layer (empty when off)
  std::vector<Eigen::MatrixXd> relu_on; // 1 where the hidden pre-activation was positive
  Eigen::MatrixXd output;
};

using LayerGrads = std::vector<DenseLayer>;

inline LayerGrads zeros_like(const std::vector<DenseLayer>& layers) {
  LayerGrads g(layers.size());
  for (std::size_t i = 0; i < layers.size(); ++i) {
    g[i].weight = Eigen::MatrixXd::Zero(layers[i].weight.rows(), layers[i].weight.cols());
    g[i].bias = Eigen::VectorXd::Zero(layers[i].bias.size());
  }
  return g;
}

inline void accumulate(LayerGrads& into, const LayerGrads& g) {
  for (std::size_t i = 0; i < into.size(); ++i) {
    into[i].weight += g[i].weight;
    into[i].bias += g[i].bias;
  }
}

/// Runs `layers` on x (rows = points). Layers [0, hidden_count) get ReLU and,
/// when dropout_rate > 0 and dropout_on, an inverted dropout mask.
inline ForwardCache mlp_forward(const std::vector<DenseLayer>& layers, std::size_t hidden_count,
                                const Eigen::MatrixXd& x, double dropout_rate, bool dropout_on,
                                std::uint64_t seed) {
  ForwardCache cache;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(1.0 - dropout_rate);
  const bool use_dropout = dropout_on && dropout_rate > 0.0;
  const double scale = use_dropout ? 1.0 / (1.0 - dropout_rate) : 1.0;

  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd pre = (h * layers[l].weight.transpose()).rowwise() + layers[l].bias.transpose();
    if (l < hidden_count) {
      Eigen::MatrixXd on = (pre.array() > 0.0).cast<double>();
      h = pre.cwiseMax(0.0);
      cache.relu_on.push_back(std::move(on));
      if (use_dropout) {
        Eigen::MatrixXd mask(h.rows(), h.cols());
        for (Eigen::Index i = 0; i < mask.rows(); ++i)
          for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = keep(rng) ? scale : 0.0;
        h = h.cwiseProduct(mask);
        cache.masks.push_back(std::move(mask));
      } else {
        cache.masks.emplace_back();
      }
    } else {
      h = std::move(pre);
    }
  }
  cache.output = h;
  return cache;
}

/// Gradients of the layers given d(loss)/d(output).
inline LayerGrads mlp_backward(const std::vector<DenseLayer>& layers, std::size_t hidden_count,
                               const ForwardCache& cache, const Eigen::MatrixXd& grad_output) {
  LayerGrads grads(layers.size());
  Eigen::MatrixXd g = grad_output;
  for (std::size_t l = layers.size(); l-- > 0;) {
    if (l < hidden_count) {
      if (cache.masks[l].size() > 0) g = g.cwiseProduct(cache.masks[l]);
      g = g.cwiseProduct(cache.relu_on[l]);
    }
    grads[l].weight = g.transpose() * cache.inputs[l];
    grads[l].bias = g.colwise().sum().transpose();
    if (l > 0) g = g * layers[l].weight;
  }
  return grads;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, std::span<const std::size_t> rows);

}  // namespace vibus::detail
