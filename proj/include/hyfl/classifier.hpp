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

#include <json.hpp>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/gbdt.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/nn.hpp"
#include "hyfl/rng.hpp"
#include "hyfl/train.hpp"

namespace hyfl {

enum class ClassifierKind { Gbdt, LogReg, LinearSvm, Mlp };

inline std::string to_string(ClassifierKind k) {
  switch (k) {
    case ClassifierKind::Gbdt: return "gbdt";
    case ClassifierKind::LogReg: return "logreg";
    case ClassifierKind::LinearSvm: return "svm";
    case ClassifierKind::Mlp: return "mlp";
  }
  throw ValidationError("unknown classifier kind");
}

inline ClassifierKind classifier_kind_from(const std::string& s) {
  if (s == "gbdt") return ClassifierKind::Gbdt;
  if (s == "logreg") return ClassifierKind::LogReg;
  if (s == "svm") return ClassifierKind::LinearSvm;
  if (s == "mlp") return ClassifierKind::Mlp;
  throw ValidationError("unknown classifier kind: " + s);
}

struct ClassifierOptions {
  GbdtOptions gbdt;
  std::vector<std::size_t> mlp_hidden{32, 16};
  double svm_margin_scale = 2.0;  // score = sigmoid(scale * margin)
};

/// The transaction-side predictor. All kinds share the [0,1] score contract;
/// the linear SVM maps its margin through a fixed sigmoid.
struct Classifier {
  ClassifierKind kind = ClassifierKind::Gbdt;
  GbdtModel gbdt;
  DenseNet net;  // LogReg / LinearSvm / Mlp (linear output layer)
  double svm_margin_scale = 2.0;

  std::size_t n_features() const {
    return kind == ClassifierKind::Gbdt ? gbdt.n_features : net.input_dim();
  }
};

namespace detail {

enum class GdLoss { LogLoss, Hinge };

// Weighted mean loss over a batch and parameter gradients. The network's
// last layer is linear; sigmoid (for log-loss scoring) is applied outside.
inline double gd_loss_and_grad(const DenseNet& net, const Matrix& rows,
                               std::span<const int> labels,
                               std::span<const double> weights,
                               std::span<const std::size_t> batch, GdLoss loss_kind,
                               NetGrad* grad) {
  double num = 0.0, den = 0.0;
  ForwardTrace trace;
  for (std::size_t idx : batch) {
    const double w = weights[idx];
    den += w;
    if (w == 0.0) continue;
    auto z = nn_forward(net, rows.row(idx), &trace);
    const double margin = z[0];
    const int y = labels[idx];
    double d_margin = 0.0;
    if (loss_kind == GdLoss::LogLoss) {
      const double softplus = margin > 0.0 ? margin + std::log1p(std::exp(-margin))
                                           : std::log1p(std::exp(margin));
      num += w * (softplus - static_cast<double>(y) * margin);
      d_margin = w * (sigmoid(margin) - static_cast<double>(y));
    } else {
      const double s = y == 1 ? 1.0 : -1.0;
      const double slack = 1.0 - s * margin;
      if (slack > 0.0) {
        num += w * slack;
        d_margin = -w * s;
      }
    }
    if (grad && d_margin != 0.0) {
      const double d_out[1] = {d_margin};
      nn_backward(net, rows.row(idx), trace, d_out, *grad);
    }
  }
  if (grad && den > 0.0) grad->scale(1.0 / den);
  return den > 0.0 ? num / den : 0.0;
}

inline double gd_full_loss(const DenseNet& net, const Matrix& rows,
                           std::span<const int> labels, std::span<const double> weights,
                           GdLoss loss_kind) {
  std::vector<std::size_t> all(rows.rows());
  std::iota(all.begin(), all.end(), 0);
  return gd_loss_and_grad(net, rows, labels, weights, all, loss_kind, nullptr);
}

// Mini-batch gradient descent with the same epoch-level retreat rule as the
// autoencoder trainer (an epoch that raises the full training loss is rolled
// back and retried at half the base rate) plus a budget-relative epoch decay
// down to lr/11 by the last epoch, which anneals the constant-rate noise
// floor so the convex models actually reach their optimum.
inline void gd_train(DenseNet& net, const Matrix& rows, std::span<const int> labels,
                     std::span<const double> weights, GdLoss loss_kind,
                     const TrainSpec& spec) {
  const std::size_t n = rows.rows();
  const double decay = 10.0 / static_cast<double>(spec.epochs);
  double base_lr = spec.learning_rate;
  double last_loss = gd_full_loss(net, rows, labels, weights, loss_kind);
  std::vector<std::size_t> order(n);
  for (std::size_t e = 0; e < spec.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(spec.seed, "gd_epoch", e));
    shuffle_rng.shuffle(order);
    const DenseNet snapshot = net;
    for (int attempt = 0; attempt < 60; ++attempt) {
      const double lr = base_lr / (1.0 + decay * static_cast<double>(e));
      for (std::size_t start = 0; start < n; start += spec.batch_size) {
        const std::size_t len = std::min(spec.batch_size, n - start);
        std::span<const std::size_t> batch(order.data() + start, len);
        NetGrad grad(net);
        gd_loss_and_grad(net, rows, labels, weights, batch, loss_kind, &grad);
        nn_apply_step(net, grad, lr);
      }
      const double loss = gd_full_loss(net, rows, labels, weights, loss_kind);
      if (loss <= last_loss) {
        last_loss = loss;
        break;
      }
      net = snapshot;
      base_lr *= 0.5;
      if (attempt == 59) last_loss = gd_full_loss(net, rows, labels, weights, loss_kind);
    }
  }
}

}  // namespace detail

/// Trains the classifier named by `kind` on labeled rows with per-row
/// weights. Deterministic under spec.seed.
inline Classifier classifier_train(const Matrix& rows, std::span<const int> labels,
                                   std::span<const double> weights, ClassifierKind kind,
                                   const TrainSpec& spec,
                                   const ClassifierOptions& options = {}) {
  spec.validate();
  const std::size_t n = rows.rows();
  if (n == 0 || labels.size() != n || weights.size() != n)
    throw ValidationError("rows/labels/weights length mismatch");
  if (!rows.all_finite()) throw ValidationError("non-finite features");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == n)
    throw ValidationError("training needs at least one row of each class");

  Classifier model;
  model.kind = kind;
  model.svm_margin_scale = options.svm_margin_scale;
  switch (kind) {
    case ClassifierKind::Gbdt: {
      GbdtOptions opt = options.gbdt;
      opt.rounds = spec.epochs;
      model.gbdt = gbdt_train(rows, labels, weights, opt);
      break;
    }
    case ClassifierKind::LogReg:
    case ClassifierKind::LinearSvm: {
      Rng rng(derive_seed(spec.seed, "linear_init"));
      const std::size_t dims[] = {rows.cols(), 1};
      model.net = make_dense_net(dims, Activation::Linear, rng);
      // A zero start keeps the degenerate cases well-defined.
      for (auto& l : model.net.layers)
        for (double& w : l.weight.data()) w = 0.0;
      detail::gd_train(model.net, rows, labels, weights,
                       kind == ClassifierKind::LogReg ? detail::GdLoss::LogLoss
                                                      : detail::GdLoss::Hinge,
                       spec);
      break;
    }
    case ClassifierKind::Mlp: {
      Rng rng(derive_seed(spec.seed, "mlp_init"));
      std::vector<std::size_t> dims{rows.cols()};
      dims.insert(dims.end(), options.mlp_hidden.begin(), options.mlp_hidden.end());
      dims.push_back(1);
      model.net = make_dense_net(dims, Activation::Linear, rng);
      detail::gd_train(model.net, rows, labels, weights, detail::GdLoss::LogLoss, spec);
      break;
    }
  }
  return model;
}

/// Score in [0,1]. Pure.
inline double classifier_predict(const Classifier& model, std::span<const double> x) {
  switch (model.kind) {
    case ClassifierKind::Gbdt:
      return model.gbdt.predict(x);
    case ClassifierKind::LogReg:
    case ClassifierKind::Mlp:
      return sigmoid(nn_forward(model.net, x)[0]);
    case ClassifierKind::LinearSvm:
      return sigmoid(model.svm_margin_scale * nn_forward(model.net, x)[0]);
  }
  throw ValidationError("unknown classifier kind");
}

inline std::vector<double> classifier_predict_many(const Classifier& model,
                                                   const Matrix& rows) {
  std::vector<double> out(rows.rows());
  for (std::size_t r = 0; r < rows.rows(); ++r)
    out[r] = classifier_predict(model, rows.row(r));
  return out;
}

// ---------------------------------------------------------------------------
// Versioned JSON serialization, portable across implementations.

inline nlohmann::json dense_net_to_json(const DenseNet& net) {
  nlohmann::json j;
  j["dims"] = nlohmann::json::array();
  j["dims"].push_back(net.input_dim());
  for (const auto& l : net.layers) j["dims"].push_back(l.out_dim());
  std::vector<double> flat;
  nn_flatten(net, flat);
  j["weights"] = flat;
  std::vector<std::string> acts;
  for (const auto& l : net.layers)
    acts.push_back(l.activation == Activation::ReLU
                       ? "relu"
                       : (l.activation == Activation::Sigmoid ? "sigmoid" : "linear"));
  j["activations"] = acts;
  return j;
}

inline DenseNet dense_net_from_json(const nlohmann::json& j) {
  DenseNet net;
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  const auto acts = j.at("activations").get<std::vector<std::string>>();
  if (dims.size() < 2 || acts.size() + 1 != dims.size())
    throw IoError("model JSON: bad dims/activations");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    l.weight = Matrix(dims[i + 1], dims[i]);
    l.bias.assign(dims[i + 1], 0.0);
    l.activation = acts[i] == "relu"
                       ? Activation::ReLU
                       : (acts[i] == "sigmoid" ? Activation::Sigmoid : Activation::Linear);
    net.layers.push_back(std::move(l));
  }
  const auto flat = j.at("weights").get<std::vector<double>>();
  if (flat.size() != net.param_count()) throw IoError("model JSON: weight count mismatch");
  nn_unflatten(net, flat);
  net.validate();
  return net;
}

inline nlohmann::json classifier_to_json(const Classifier& model) {
  nlohmann::json j;
  j["format"] = "hyfl-model";
  j["version"] = 1;
  j["kind"] = to_string(model.kind);
  if (model.kind == ClassifierKind::Gbdt) {
    j["base_score"] = model.gbdt.base_score;
    j["n_features"] = model.gbdt.n_features;
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : model.gbdt.trees) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& nd : t.nodes)
        nodes.push_back({{"feature", nd.feature},
                         {"threshold", nd.threshold},
                         {"left", nd.left},
                         {"right", nd.right},
                         {"value", nd.value}});
      trees.push_back({{"nodes", nodes}});
    }
    j["trees"] = trees;
  } else {
    j["net"] = dense_net_to_json(model.net);
    if (model.kind == ClassifierKind::LinearSvm)
      j["svm_margin_scale"] = model.svm_margin_scale;
  }
  return j;
}

inline Classifier classifier_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "hyfl-model" || j.value("version", 0) != 1)
    throw IoError("unsupported model document");
  Classifier model;
  model.kind = classifier_kind_from(j.at("kind").get<std::string>());
  if (model.kind == ClassifierKind::Gbdt) {
    model.gbdt.base_score = j.at("base_score").get<double>();
    model.gbdt.n_features = j.at("n_features").get<std::size_t>();
    for (const auto& tj : j.at("trees")) {
      Tree t;
      for (const auto& nj : tj.at("nodes")) {
        TreeNode nd;
        nd.feature = nj.at("feature").get<int>();
        nd.threshold = nj.at("threshold").get<double>();
        nd.left = nj.at("left").get<int>();
        nd.right = nj.at("right").get<int>();
        nd.value = nj.at("value").get<double>();
        t.nodes.push_back(nd);
      }
      if (t.nodes.empty()) throw IoError("model JSON: empty tree");
      model.gbdt.trees.push_back(std::move(t));
    }
  } else {
    model.net = dense_net_from_json(j.at("net"));
    if (model.kind == ClassifierKind::LinearSvm)
      model.svm_margin_scale = j.value("svm_margin_scale", 2.0);
  }
  return model;
}

}  // namespace hyfl
