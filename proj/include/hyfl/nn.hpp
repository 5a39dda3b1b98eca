/*
 * Copyright 2026 The HyFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/rng.hpp"

namespace hyfl {

inline double sigmoid(double z) {
  // Numerically stable on both tails.
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

enum class Activation { Linear, ReLU, Sigmoid };

struct DenseLayer {
  Matrix weight;               // out_dim x in_dim
  std::vector<double> bias;    // out_dim
  Activation activation = Activation::Linear;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

/// Plain fully-connected stack. Layers own their activations; adjacent
/// dimensions must chain.
struct DenseNet {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t output_dim() const { return layers.back().out_dim(); }

  void validate() const {
    if (layers.empty()) throw ValidationError("dense net needs at least one layer");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.out_dim())
        throw ValidationError("bias length does not match layer output");
      if (i > 0 && layers[i - 1].out_dim() != l.in_dim())
        throw ValidationError("adjacent layer dimensions do not chain");
      if (!l.weight.all_finite()) throw ValidationError("non-finite weight");
      for (double b : l.bias)
        if (!std::isfinite(b)) throw ValidationError("non-finite bias");
    }
  }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.data().size() + l.bias.size();
    return n;
  }
};

/// Builds a stack from a dims chain, ReLU on hidden layers and the given
/// output activation. Weights ~ N(0, sqrt(2 / fan_in)), biases zero.
inline DenseNet make_dense_net(std::span<const std::size_t> dims, Activation output,
                               Rng& rng) {
  if (dims.size() < 2) throw ValidationError("need at least input and output dims");
  DenseNet net;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight = Matrix(dims[i + 1], dims[i]);
    l.bias.assign(dims[i + 1], 0.0);
    l.activation = (i + 2 < dims.size()) ? Activation::ReLU : output;
    const double scale = std::sqrt(2.0 / static_cast<double>(dims[i]));
    for (double& w : l.weight.data()) w = rng.normal(0.0, scale);
    net.layers.push_back(std::move(l));
  }
  return net;
}

/// Per-layer pre- and post-activation values kept for backprop.
struct ForwardTrace {
  std::vector<std::vector<double>> pre;   // z = Wx + b per layer
  std::vector<std::vector<double>> post;  // a = act(z) per layer
};

inline std::vector<double> nn_forward(const DenseNet& net, std::span<const double> x,
                                      ForwardTrace* trace = nullptr) {
  if (x.size() != net.input_dim()) throw ValidationError("input dimension mismatch");
  std::vector<double> cur(x.begin(), x.end());
  if (trace) {
    trace->pre.clear();
    trace->post.clear();
  }
  for (const auto& l : net.layers) {
    std::vector<double> z(l.out_dim());
    for (std::size_t o = 0; o < l.out_dim(); ++o)
      z[o] = l.bias[o] + dot(l.weight.row(o), cur);
    std::vector<double> a(z.size());
    for (std::size_t o = 0; o < z.size(); ++o) {
      switch (l.activation) {
        case Activation::Linear: a[o] = z[o]; break;
        case Activation::ReLU: a[o] = z[o] > 0.0 ? z[o] : 0.0; break;
        case Activation::Sigmoid: a[o] = sigmoid(z[o]); break;
      }
    }
    if (trace) {
      trace->pre.push_back(z);
      trace->post.push_back(a);
    }
    cur = std::move(a);
  }
  return cur;
}

/// Gradients of a scalar loss with respect to every parameter, same
/// flattened layout as nn_flatten.
struct NetGrad {
  std::vector<Matrix> d_weight;
  std::vector<std::vector<double>> d_bias;

  explicit NetGrad(const DenseNet& net) {
    for (const auto& l : net.layers) {
      d_weight.emplace_back(l.out_dim(), l.in_dim());
      d_bias.emplace_back(l.out_dim(), 0.0);
    }
  }

  void scale(double f) {
    for (auto& m : d_weight)
      for (double& v : m.data()) v *= f;
    for (auto& b : d_bias)
      for (double& v : b) v *= f;
  }
};

/// Backpropagates dL/d(output) through the trace; accumulates parameter
/// gradients into grad and returns dL/d(input).
inline std::vector<double> nn_backward(const DenseNet& net, std::span<const double> x,
                                       const ForwardTrace& trace,
                                       std::span<const double> d_out, NetGrad& grad) {
  std::vector<double> delta(d_out.begin(), d_out.end());
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const auto& l = net.layers[li];
    const auto& z = trace.pre[li];
    const auto& a = trace.post[li];
    // delta currently holds dL/da for this layer; convert to dL/dz.
    for (std::size_t o = 0; o < delta.size(); ++o) {
      switch (l.activation) {
        case Activation::Linear: break;
        case Activation::ReLU: delta[o] = z[o] > 0.0 ? delta[o] : 0.0; break;
        case Activation::Sigmoid: delta[o] *= a[o] * (1.0 - a[o]); break;
      }
    }
    std::span<const double> input =
        li == 0 ? x : std::span<const double>(trace.post[li - 1]);
    for (std::size_t o = 0; o < l.out_dim(); ++o) {
      grad.d_bias[li][o] += delta[o];
      for (std::size_t i = 0; i < l.in_dim(); ++i)
        grad.d_weight[li](o, i) += delta[o] * input[i];
    }
    std::vector<double> prev(l.in_dim(), 0.0);
    for (std::size_t i = 0; i < l.in_dim(); ++i)
      for (std::size_t o = 0; o < l.out_dim(); ++o)
        prev[i] += l.weight(o, i) * delta[o];
    delta = std::move(prev);
  }
  return delta;
}

inline void nn_flatten(const DenseNet& net, std::vector<double>& out) {
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
}

inline std::size_t nn_unflatten(DenseNet& net, std::span<const double> flat,
                                std::size_t offset = 0) {
  for (auto& l : net.layers) {
    for (double& w : l.weight.data()) w = flat[offset++];
    for (double& b : l.bias) b = flat[offset++];
  }
  return offset;
}

inline void grad_flatten(const NetGrad& g, std::vector<double>& out) {
  for (std::size_t li = 0; li < g.d_weight.size(); ++li) {
    out.insert(out.end(), g.d_weight[li].data().begin(), g.d_weight[li].data().end());
    out.insert(out.end(), g.d_bias[li].begin(), g.d_bias[li].end());
  }
}

inline void nn_apply_step(DenseNet& net, const NetGrad& grad, double step) {
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& l = net.layers[li];
    for (std::size_t i = 0; i < l.weight.data().size(); ++i)
      l.weight.data()[i] -= step * grad.d_weight[li].data()[i];
    for (std::size_t i = 0; i < l.bias.size(); ++i)
      l.bias[i] -= step * grad.d_bias[li][i];
  }
}

}  // namespace hyfl
