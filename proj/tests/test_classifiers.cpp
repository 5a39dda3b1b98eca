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
#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <vector>

#include "hyfl/classifier.hpp"

using namespace hyfl;

namespace {

// Linearly separable toy set: positives at x1 > 1, negatives at x1 < -1.
void separable_set(Matrix& rows, std::vector<int>& labels, std::size_t n_side) {
  Rng rng(42);
  rows = Matrix(2 * n_side, 2);
  labels.assign(2 * n_side, 0);
  for (std::size_t i = 0; i < n_side; ++i) {
    rows(i, 0) = 1.0 + rng.uniform();
    rows(i, 1) = rng.normal();
    labels[i] = 1;
    rows(n_side + i, 0) = -1.0 - rng.uniform();
    rows(n_side + i, 1) = rng.normal();
  }
}

double train_accuracy(const Classifier& model, const Matrix& rows,
                      const std::vector<int>& labels) {
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const double s = classifier_predict(model, rows.row(r));
    hits += (s >= 0.5 ? 1 : 0) == labels[r];
  }
  return static_cast<double>(hits) / static_cast<double>(rows.rows());
}

std::vector<double> unit_weights(std::size_t n) { return std::vector<double>(n, 1.0); }

}  // namespace

TEST_CASE("every classifier kind separates the toy set", "[classifiers]") {
  Matrix rows;
  std::vector<int> labels;
  separable_set(rows, labels, 60);
  auto weights = unit_weights(labels.size());
  for (auto kind : {ClassifierKind::Gbdt, ClassifierKind::LogReg,
                    ClassifierKind::LinearSvm, ClassifierKind::Mlp}) {
    TrainSpec spec;
    spec.epochs = kind == ClassifierKind::Gbdt ? 20 : 200;
    spec.learning_rate = kind == ClassifierKind::Gbdt ? 0.3 : 0.1;
    spec.batch_size = 32;
    spec.seed = 5;
    auto model = classifier_train(rows, labels, weights, kind, spec);
    INFO("kind=" << to_string(kind));
    REQUIRE(train_accuracy(model, rows, labels) == 1.0);
  }
}

TEST_CASE("logreg with zero weight on negatives still favors positives", "[classifiers]") {
  Matrix rows;
  std::vector<int> labels;
  separable_set(rows, labels, 20);
  std::vector<double> weights(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) weights[i] = labels[i] == 1 ? 1.0 : 0.0;
  TrainSpec spec;
  spec.epochs = 50;
  spec.learning_rate = 0.1;
  spec.seed = 5;
  auto model = classifier_train(rows, labels, weights, ClassifierKind::LogReg, spec);
  for (std::size_t r = 0; r < rows.rows(); ++r)
    if (labels[r] == 1) REQUIRE(classifier_predict(model, rows.row(r)) >= 0.5);
}

TEST_CASE("gbdt depth-1 picks the single informative feature", "[classifiers]") {
  Rng rng(13);
  Matrix rows(80, 5);
  std::vector<int> labels(80);
  for (std::size_t r = 0; r < 80; ++r) {
    for (std::size_t c = 0; c < 5; ++c) rows(r, c) = rng.normal();
    labels[r] = r < 40 ? 1 : 0;
    rows(r, 3) = labels[r] == 1 ? 2.0 + rng.uniform() : -2.0 - rng.uniform();
  }
  TrainSpec spec;
  spec.epochs = 1;
  ClassifierOptions opt;
  opt.gbdt.max_depth = 1;
  auto model =
      classifier_train(rows, labels, unit_weights(80), ClassifierKind::Gbdt, spec, opt);
  REQUIRE(model.gbdt.trees.size() == 1);
  REQUIRE(model.gbdt.trees[0].nodes[0].feature == 3);
}

TEST_CASE("gbdt with zero rounds scores 0.5 everywhere", "[classifiers]") {
  Classifier model;
  model.kind = ClassifierKind::Gbdt;
  model.gbdt.n_features = 3;
  std::vector<double> x{1.0, -2.0, 0.5};
  REQUIRE(classifier_predict(model, x) == 0.5);
}

TEST_CASE("logreg with zero weights scores 0.5 everywhere", "[classifiers]") {
  Classifier model;
  model.kind = ClassifierKind::LogReg;
  DenseLayer l;
  l.weight = Matrix(1, 4);
  l.bias.assign(1, 0.0);
  model.net.layers.push_back(l);
  std::vector<double> x{3.0, -1.0, 2.0, 7.0};
  REQUIRE(classifier_predict(model, x) == 0.5);
}

TEST_CASE("logreg score is monotone in the linear score", "[classifiers]") {
  Classifier model;
  model.kind = ClassifierKind::LogReg;
  DenseLayer l;
  l.weight = Matrix(1, 2);
  l.weight(0, 0) = 1.5;
  l.weight(0, 1) = -0.5;
  l.bias.assign(1, 0.1);
  model.net.layers.push_back(l);
  double prev = -1.0;
  for (double t = -3.0; t <= 3.0; t += 0.5) {
    std::vector<double> x{t, 2.0 * t};  // x.w = 0.5 t, increasing in t
    const double s = classifier_predict(model, x);
    REQUIRE(s > prev);
    prev = s;
  }
}

TEST_CASE("gbdt boosting rounds never raise weighted training logloss", "[classifiers]") {
  Rng rng(31);
  const std::size_t n = 200;
  Matrix rows(n, 4);
  std::vector<int> labels(n);
  std::vector<double> weights(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 4; ++c) rows(r, c) = rng.normal();
    labels[r] = rows(r, 1) + 0.3 * rng.normal() > 0 ? 1 : 0;
    weights[r] = 0.25 + rng.uniform();
  }
  GbdtOptions opt;
  opt.rounds = 30;
  opt.learning_rate = 1.0;  // the extreme allowed rate
  auto model = gbdt_train(rows, labels, weights, opt);

  std::vector<double> logits(n, model.base_score);
  double prev = weighted_logloss(logits, labels, weights);
  for (const auto& tree : model.trees) {
    for (std::size_t r = 0; r < n; ++r) logits[r] += tree.eval(rows.row(r));
    const double cur = weighted_logloss(logits, labels, weights);
    REQUIRE(cur <= prev + 1e-12);
    prev = cur;
  }
}

TEST_CASE("integer weights behave like duplicated rows", "[classifiers]") {
  Rng rng(77);
  const std::size_t n = 50;
  Matrix rows(n, 3);
  std::vector<int> labels(n);
  std::vector<double> weights(n, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < 3; ++c) rows(r, c) = rng.normal();
    labels[r] = rows(r, 0) > 0 ? 1 : 0;
  }
  weights[7] = 3.0;
  weights[21] = 2.0;

  Matrix dup(n + 3, 3);
  std::vector<int> dup_labels(n + 3);
  std::vector<double> dup_weights(n + 3, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    std::copy(rows.row(r).begin(), rows.row(r).end(), dup.row(r).begin());
    dup_labels[r] = labels[r];
  }
  std::size_t at = n;
  for (std::size_t r : {std::size_t{7}, std::size_t{7}, std::size_t{21}}) {
    std::copy(rows.row(r).begin(), rows.row(r).end(), dup.row(at).begin());
    dup_labels[at++] = labels[r];
  }

  GbdtOptions opt;
  opt.rounds = 10;
  auto a = gbdt_train(rows, labels, weights, opt);
  auto b = gbdt_train(dup, dup_labels, dup_weights, opt);
  REQUIRE(a.trees.size() == b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    REQUIRE(a.trees[t].nodes.size() == b.trees[t].nodes.size());
    for (std::size_t k = 0; k < a.trees[t].nodes.size(); ++k) {
      const auto& na = a.trees[t].nodes[k];
      const auto& nb = b.trees[t].nodes[k];
      REQUIRE(na.feature == nb.feature);
      REQUIRE_THAT(na.threshold, Catch::Matchers::WithinAbs(nb.threshold, 1e-12));
      REQUIRE_THAT(na.value, Catch::Matchers::WithinAbs(nb.value, 1e-12));
    }
  }

  // Full-batch gradient descent: the first-epoch trajectory must agree too.
  TrainSpec spec;
  spec.epochs = 5;
  spec.learning_rate = 0.05;
  spec.batch_size = 1 << 20;  // full batch
  spec.seed = 9;
  auto lr_a = classifier_train(rows, labels, weights, ClassifierKind::LogReg, spec);
  auto lr_b = classifier_train(dup, dup_labels, dup_weights, ClassifierKind::LogReg, spec);
  std::vector<double> fa, fb;
  nn_flatten(lr_a.net, fa);
  nn_flatten(lr_b.net, fb);
  for (std::size_t i = 0; i < fa.size(); ++i)
    REQUIRE_THAT(fa[i], Catch::Matchers::WithinAbs(fb[i], 1e-12));
}

TEST_CASE("gd losses match central finite differences", "[classifiers]") {
  Rng rng(123);
  const std::size_t n = 6, dim = 4;
  Matrix rows(n, dim);
  std::vector<int> labels(n);
  std::vector<double> weights(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dim; ++c) rows(r, c) = rng.normal();
    labels[r] = rng.uniform() < 0.5 ? 0 : 1;
    weights[r] = 0.5 + rng.uniform();
  }
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);

  auto check = [&](DenseNet net, detail::GdLoss loss_kind) {
    NetGrad grads(net);
    detail::gd_loss_and_grad(net, rows, labels, weights, all, loss_kind, &grads);
    std::vector<double> analytic;
    grad_flatten(grads, analytic);
    std::vector<double> flat;
    nn_flatten(net, flat);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < flat.size(); ++i) {
      const double keep = flat[i];
      const double step = 1e-5;
      flat[i] = keep + step;
      nn_unflatten(net, flat);
      const double up =
          detail::gd_loss_and_grad(net, rows, labels, weights, all, loss_kind, nullptr);
      flat[i] = keep - step;
      nn_unflatten(net, flat);
      const double down =
          detail::gd_loss_and_grad(net, rows, labels, weights, all, loss_kind, nullptr);
      flat[i] = keep;
      nn_unflatten(net, flat);
      const double numeric = (up - down) / (2.0 * step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    REQUIRE(max_rel < 1e-4);
  };

  Rng init(5);
  const std::size_t lin_dims[] = {dim, 1};
  check(make_dense_net(lin_dims, Activation::Linear, init), detail::GdLoss::LogLoss);
  check(make_dense_net(lin_dims, Activation::Linear, init), detail::GdLoss::Hinge);
  const std::size_t mlp_dims[] = {dim, 5, 3, 1};
  check(make_dense_net(mlp_dims, Activation::Linear, init), detail::GdLoss::LogLoss);
}

TEST_CASE("classifier JSON round trip preserves predictions", "[classifiers]") {
  Matrix rows;
  std::vector<int> labels;
  separable_set(rows, labels, 30);
  auto weights = unit_weights(labels.size());
  for (auto kind : {ClassifierKind::Gbdt, ClassifierKind::LogReg,
                    ClassifierKind::LinearSvm, ClassifierKind::Mlp}) {
    TrainSpec spec;
    spec.epochs = kind == ClassifierKind::Gbdt ? 5 : 40;
    spec.seed = 3;
    auto model = classifier_train(rows, labels, weights, kind, spec);
    auto clone = classifier_from_json(classifier_to_json(model));
    for (std::size_t r = 0; r < rows.rows(); ++r)
      REQUIRE(classifier_predict(model, rows.row(r)) ==
              classifier_predict(clone, rows.row(r)));
  }
}

TEST_CASE("classifier_train rejects degenerate inputs", "[classifiers]") {
  Matrix rows(4, 2);
  std::vector<int> ones{1, 1, 1, 1};
  TrainSpec spec;
  REQUIRE_THROWS_AS(
      classifier_train(rows, ones, unit_weights(4), ClassifierKind::Gbdt, spec),
      ValidationError);
  std::vector<int> mixed{1, 0, 1, 0};
  Matrix bad = rows;
  bad(2, 1) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(
      classifier_train(bad, mixed, unit_weights(4), ClassifierKind::Mlp, spec),
      ValidationError);
}
