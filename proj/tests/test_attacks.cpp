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

#include "hyfl/attacks.hpp"
#include "hyfl/data.hpp"

using namespace hyfl;

namespace {

Matrix random_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, dim);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("inversion: starting at the truth scores cosine 1", "[attacks]") {
  auto model = make_autoencoder(13, 8, 4, 3);
  Matrix truth = random_rows(1, 13, 21);
  auto g = detail::ae_param_gradient(model, truth);

  InversionProblem problem;
  problem.target = model;
  problem.observed_gradient = g;
  problem.steps = 0;
  problem.init = truth;
  auto result = gradient_inversion(problem);
  REQUIRE_THAT(result.final_cosine, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("inversion: the best-so-far trace never decreases", "[attacks]") {
  auto model = make_autoencoder(13, 8, 4, 5);
  Matrix truth = random_rows(1, 13, 22);
  InversionProblem problem;
  problem.target = model;
  problem.observed_gradient = detail::ae_param_gradient(model, truth);
  problem.steps = 120;
  problem.seed = 9;
  auto result = gradient_inversion(problem);
  for (std::size_t i = 1; i < result.cosine_trace.size(); ++i)
    REQUIRE(result.cosine_trace[i] >= result.cosine_trace[i - 1]);
  REQUIRE(result.final_cosine >= -1.0);
  REQUIRE(result.final_cosine <= 1.0);
}

TEST_CASE("inversion: single-sample gradient matching converges", "[attacks]") {
  auto model = make_autoencoder(13, 8, 4, 7);
  Matrix truth = random_rows(1, 13, 23);
  InversionProblem problem;
  problem.target = model;
  problem.observed_gradient = detail::ae_param_gradient(model, truth);
  problem.steps = 2000;
  problem.seed = 11;
  auto result = gradient_inversion(problem);
  REQUIRE(result.final_cosine > 0.99);
  // Input-space agreement with the true sample.
  REQUIRE(cosine_similarity(result.recovered.row(0), truth.row(0)) > 0.9);
}

TEST_CASE("inversion: rejects a zero observed gradient", "[attacks]") {
  auto model = make_autoencoder(13, 8, 4, 3);
  InversionProblem problem;
  problem.target = model;
  problem.observed_gradient.assign(model.param_count(), 0.0);
  REQUIRE_THROWS_AS(gradient_inversion(problem), ValidationError);
}

namespace {

// A deliberately overfit target: wide MLP, long training, tiny train set.
struct MembershipFixture {
  Matrix member_rows, nonmember_rows, attacker_rows;
  std::vector<int> member_labels, nonmember_labels, attacker_labels;
  Classifier target;
};

MembershipFixture make_overfit_target(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t dim = 6;
  auto draw = [&](Matrix& rows, std::vector<int>& labels, std::size_t n) {
    rows = Matrix(n, dim);
    labels.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < dim; ++c) rows(r, c) = rng.normal();
      // Weak true signal plus noise: plenty of room to memorize.
      labels[r] = rows(r, 0) + 1.5 * rng.normal() > 0 ? 1 : 0;
    }
  };
  MembershipFixture fx;
  draw(fx.member_rows, fx.member_labels, 60);
  draw(fx.nonmember_rows, fx.nonmember_labels, 60);
  draw(fx.attacker_rows, fx.attacker_labels, 120);

  TrainSpec spec;
  spec.epochs = 800;
  spec.learning_rate = 0.3;
  spec.batch_size = 16;
  spec.seed = derive_seed(seed, "target");
  ClassifierOptions options;
  options.mlp_hidden = {64, 32};
  const std::vector<double> w(fx.member_rows.rows(), 1.0);
  fx.target = classifier_train(fx.member_rows, fx.member_labels, w, ClassifierKind::Mlp,
                               spec, options);
  return fx;
}

}  // namespace

TEST_CASE("membership: an overfit target is detectable", "[attacks]") {
  auto fx = make_overfit_target(31);
  MembershipProblem problem;
  problem.target = &fx.target;
  problem.member_rows = fx.member_rows;
  problem.member_labels = fx.member_labels;
  problem.nonmember_rows = fx.nonmember_rows;
  problem.nonmember_labels = fx.nonmember_labels;
  problem.attacker_rows = fx.attacker_rows;
  problem.attacker_labels = fx.attacker_labels;
  problem.shadow.kind = ClassifierKind::Mlp;
  problem.shadow.spec.epochs = 800;
  problem.shadow.spec.learning_rate = 0.3;
  problem.shadow.spec.batch_size = 16;
  problem.shadow.options.mlp_hidden = {64, 32};
  problem.seed = 5;
  auto report = membership_inference(problem);
  REQUIRE(report.metrics.at("auc") > 0.6);
}

TEST_CASE("membership: a constant target gives chance-level AUC", "[attacks]") {
  auto fx = make_overfit_target(37);
  Classifier constant;
  constant.kind = ClassifierKind::LogReg;
  DenseLayer l;
  l.weight = Matrix(1, 6);
  l.bias.assign(1, 0.0);
  constant.net.layers.push_back(l);

  MembershipProblem problem;
  problem.target = &constant;
  problem.member_rows = fx.member_rows;
  problem.member_labels = fx.member_labels;
  problem.nonmember_rows = fx.nonmember_rows;
  problem.nonmember_labels = fx.nonmember_labels;
  problem.attacker_rows = fx.attacker_rows;
  problem.attacker_labels = fx.attacker_labels;
  problem.shadow.spec.epochs = 100;
  problem.seed = 5;
  auto report = membership_inference(problem);
  REQUIRE(report.metrics.at("auc") > 0.45);
  REQUIRE(report.metrics.at("auc") < 0.55);
}

TEST_CASE("membership: swapping member/non-member flips the AUC", "[attacks]") {
  auto fx = make_overfit_target(41);
  MembershipProblem problem;
  problem.target = &fx.target;
  problem.member_rows = fx.member_rows;
  problem.member_labels = fx.member_labels;
  problem.nonmember_rows = fx.nonmember_rows;
  problem.nonmember_labels = fx.nonmember_labels;
  problem.attacker_rows = fx.attacker_rows;
  problem.attacker_labels = fx.attacker_labels;
  problem.shadow.spec.epochs = 200;
  problem.seed = 6;
  auto straight = membership_inference(problem);

  std::swap(problem.member_rows, problem.nonmember_rows);
  std::swap(problem.member_labels, problem.nonmember_labels);
  auto flipped = membership_inference(problem);
  REQUIRE_THAT(straight.metrics.at("auc") + flipped.metrics.at("auc"),
               Catch::Matchers::WithinAbs(1.0, 1e-9));
}

TEST_CASE("membership: tiny attacker datasets are rejected", "[attacks]") {
  auto fx = make_overfit_target(43);
  MembershipProblem problem;
  problem.target = &fx.target;
  problem.member_rows = fx.member_rows;
  problem.member_labels = fx.member_labels;
  problem.nonmember_rows = fx.nonmember_rows;
  problem.nonmember_labels = fx.nonmember_labels;
  problem.attacker_rows = Matrix(6, 6);
  problem.attacker_labels = {1, 1, 1, 0, 0, 0};
  REQUIRE_THROWS_AS(membership_inference(problem), ValidationError);
}

TEST_CASE("attribute: empty missing set is the identity", "[attacks]") {
  Classifier model;
  model.kind = ClassifierKind::LogReg;
  DenseLayer l;
  l.weight = Matrix(1, 3);
  l.weight(0, 0) = 1.0;
  l.bias.assign(1, 0.0);
  model.net.layers.push_back(l);

  AttributeProblem problem;
  problem.model = &model;
  problem.partial_row = {0.5, -0.25, 2.0};
  auto result = attribute_inference(problem);
  REQUIRE(result.completed == problem.partial_row);
}

TEST_CASE("attribute: logreg drives the missing coordinate to the right bound",
          "[attacks]") {
  Classifier model;
  model.kind = ClassifierKind::LogReg;
  DenseLayer l;
  l.weight = Matrix(1, 3);
  l.weight(0, 0) = 0.3;
  l.weight(0, 1) = -1.2;  // the missing coordinate, negative weight
  l.weight(0, 2) = 0.7;
  l.bias.assign(1, 0.0);
  model.net.layers.push_back(l);

  AttributeProblem problem;
  problem.model = &model;
  problem.partial_row = {1.0, 0.0, -0.5};
  problem.missing = {1};
  problem.label = 1;
  problem.steps = 6000;
  problem.step_size = 0.2;
  problem.seed = 3;
  auto result = attribute_inference(problem);
  // Label 1 with w_1 < 0: the loss is monotone in the coordinate, so the
  // completion is driven down to the lower box bound (the optimizer creeps
  // along the flattening logistic tail, hence the loose tolerance). Known
  // coordinates are untouched.
  REQUIRE(result.completed[1] < -4.8);
  REQUIRE(result.completed[0] == 1.0);
  REQUIRE(result.completed[2] == -0.5);
}

TEST_CASE("attribute: tree targets fall back to grid search", "[attacks]") {
  Rng rng(17);
  Matrix rows(200, 3);
  std::vector<int> labels(200);
  for (std::size_t r = 0; r < 200; ++r) {
    for (std::size_t c = 0; c < 3; ++c) rows(r, c) = rng.uniform(-4.0, 4.0);
    labels[r] = rows(r, 1) > 1.0 ? 1 : 0;  // coordinate 1 carries the signal
  }
  TrainSpec spec;
  spec.epochs = 20;
  const std::vector<double> w(200, 1.0);
  auto model = classifier_train(rows, labels, w, ClassifierKind::Gbdt, spec);

  AttributeProblem problem;
  problem.model = &model;
  problem.partial_row = {0.0, 0.0, 0.0};
  problem.missing = {1};
  problem.label = 1;
  auto result = attribute_inference(problem);
  REQUIRE(result.completed[1] > 1.0);  // recovered the crime-side region
  REQUIRE(result.completed[0] == 0.0);
}

TEST_CASE("leakage: identity embeddings leak flags, noise does not", "[attacks]") {
  Rng rng(23);
  const std::size_t n_aux = 600, n_leak = 1000;
  auto flags = [&](std::size_t n) {
    std::vector<int> out(n);
    for (auto& f : out) f = static_cast<int>(rng.below(12));
    return out;
  };
  auto aux_flags = flags(n_aux);
  auto leaked_flags = flags(n_leak);

  auto identity_embed = [&](const std::vector<int>& fs) {
    Matrix m(fs.size(), kAccountFeatureDim);
    for (std::size_t r = 0; r < fs.size(); ++r) {
      auto e = encode_flag(fs[r]);
      std::copy(e.begin(), e.end(), m.row(r).begin());
    }
    return m;
  };

  LeakageProblem leaky;
  leaky.aux_embeddings = identity_embed(aux_flags);
  leaky.aux_flags = aux_flags;
  leaky.leaked_embeddings = identity_embed(leaked_flags);
  leaky.leaked_flags = leaked_flags;
  leaky.epochs = 600;
  auto report = feature_leakage_probe(leaky);
  REQUIRE(report.metrics.at("accuracy") > 0.95);

  LeakageProblem noise = leaky;
  noise.aux_embeddings = random_rows(n_aux, kAccountFeatureDim, 71);
  noise.leaked_embeddings = random_rows(n_leak, kAccountFeatureDim, 72);
  auto control = feature_leakage_probe(noise);
  REQUIRE(control.metrics.at("accuracy") >= 0.0);
  REQUIRE(control.metrics.at("accuracy") <= 1.0);
  REQUIRE(std::abs(control.metrics.at("accuracy") - 1.0 / 12.0) < 0.1);
}

TEST_CASE("leakage: auxiliary set must cover its classes", "[attacks]") {
  LeakageProblem problem;
  problem.aux_embeddings = Matrix(2, 4);
  problem.aux_flags = {0, 1, 2};  // length mismatch
  problem.leaked_embeddings = Matrix(1, 4);
  problem.leaked_flags = {0};
  REQUIRE_THROWS_AS(feature_leakage_probe(problem), ValidationError);
}

TEST_CASE("attack reports serialize with ranges intact", "[attacks]") {
  AttackReport r;
  r.kind = "membership";
  r.metrics["auc"] = 0.73;
  r.seed = 9;
  auto j = attack_report_to_json(r);
  REQUIRE(j["format"] == "hyfl-attack");
  REQUIRE(j["metrics"]["auc"] == 0.73);
}
