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

#include "hyfl/autoencoder.hpp"

using namespace hyfl;

namespace {

Matrix random_rows(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, dim);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

// The loss is not differentiable at ReLU kinks, where central differences
// are invalid. Instances are resampled until every pre-activation clears a
// margin much wider than the FD step.
bool clears_kinks(const Autoencoder& model, const Matrix& rows, double margin) {
  ForwardTrace enc, dec;
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto latent = nn_forward(model.encoder, rows.row(r), &enc);
    nn_forward(model.decoder, latent, &dec);
    for (const auto* trace : {&enc, &dec})
      for (const auto& z : trace->pre)
        for (double v : z)
          if (std::abs(v) < margin) return false;
  }
  return true;
}

// Central finite differences of the summed reconstruction loss over every
// parameter; the independent oracle for the analytic gradients.
std::vector<double> fd_gradient(Autoencoder model, const Matrix& rows, double step) {
  std::vector<double> flat = model.flatten();
  std::vector<double> grad(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double keep = flat[i];
    flat[i] = keep + step;
    model.unflatten(flat);
    const double up = ae_loss(model, rows);
    flat[i] = keep - step;
    model.unflatten(flat);
    const double down = ae_loss(model, rows);
    flat[i] = keep;
    grad[i] = (up - down) / (2.0 * step);
  }
  model.unflatten(flat);
  return grad;
}

}  // namespace

TEST_CASE("ae: analytic gradient matches central differences", "[autoencoder]") {
  std::uint64_t seed = 100;
  for (int trial = 0; trial < 5; ++trial) {
    Autoencoder model;
    Matrix rows;
    do {
      ++seed;
      model = make_autoencoder(6, 5, 3, seed);
      rows = random_rows(3, 6, seed + 1000);
    } while (!clears_kinks(model, rows, 1e-3));
    std::vector<std::size_t> all(rows.rows());
    std::iota(all.begin(), all.end(), 0);
    AeGradients grads(model);
    ae_loss_and_grad(model, rows, all, &grads);
    std::vector<double> analytic;
    grad_flatten(grads.encoder, analytic);
    grad_flatten(grads.decoder, analytic);
    auto numeric = fd_gradient(model, rows, 1e-5);
    double max_rel = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic[i] - numeric[i]) / denom);
    }
    REQUIRE(max_rel < 1e-4);
  }
}

TEST_CASE("ae: zero epochs returns init unchanged", "[autoencoder]") {
  auto model = make_autoencoder(13, 8, 4, 3);
  auto rows = random_rows(10, 13, 4);
  TrainSpec spec;
  spec.epochs = 0;
  auto result = ae_train_local(rows, model, spec);
  REQUIRE(result.model.flatten() == model.flatten());
}

TEST_CASE("ae: a constant dataset is compressed to negligible error", "[autoencoder]") {
  Rng rng(9);
  std::vector<double> row(13);
  for (double& v : row) v = rng.uniform(-1.0, 1.0);
  Matrix rows(64, 13);
  for (std::size_t r = 0; r < rows.rows(); ++r)
    std::copy(row.begin(), row.end(), rows.row(r).begin());

  TrainSpec spec;
  spec.epochs = 400;
  spec.learning_rate = 0.05;
  spec.batch_size = 16;
  spec.seed = 17;
  auto result = ae_train_local(rows, make_autoencoder(13, 8, 4, 3), spec);
  REQUIRE(ae_reconstruction_mse(result.model, rows) < 1e-3);
}

TEST_CASE("ae: per-epoch loss is non-increasing", "[autoencoder]") {
  auto rows = random_rows(50, 13, 21);
  auto model = make_autoencoder(13, 8, 4, 5);
  TrainSpec spec;
  spec.epochs = 1;
  spec.learning_rate = 0.2;  // deliberately past the stable range
  spec.batch_size = 8;
  spec.seed = 2;
  double prev = ae_loss(model, rows);
  ResumeState resume;
  for (std::size_t e = 0; e < 25; ++e) {
    auto result = ae_train_local(rows, model, spec, e == 0 ? nullptr : &resume);
    model = result.model;
    resume = result.resume;
    const double loss = ae_loss(model, rows);
    REQUIRE(loss <= prev);
    prev = loss;
  }
}

TEST_CASE("ae: split training equals one continuous run", "[autoencoder]") {
  auto rows = random_rows(40, 13, 33);
  auto init = make_autoencoder(13, 8, 4, 6);

  TrainSpec full;
  full.epochs = 12;
  full.learning_rate = 0.02;
  full.batch_size = 8;
  full.seed = 77;
  auto continuous = ae_train_local(rows, init, full);

  TrainSpec part = full;
  part.epochs = 3;
  Autoencoder model = init;
  ResumeState resume;
  for (int round = 0; round < 4; ++round) {
    auto result = ae_train_local(rows, model, part, round == 0 ? nullptr : &resume);
    model = result.model;
    resume = result.resume;
  }
  REQUIRE(model.flatten() == continuous.model.flatten());
}

TEST_CASE("ae_encode: identity encoder passes inputs through", "[autoencoder]") {
  Autoencoder ae;
  ae.latent_dim = 4;
  DenseLayer enc;
  enc.weight = Matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) enc.weight(i, i) = 1.0;
  enc.bias.assign(4, 0.0);
  enc.activation = Activation::Linear;
  ae.encoder.layers.push_back(enc);
  ae.decoder.layers.push_back(enc);

  std::vector<double> x{0.5, -1.0, 2.0, 0.0};
  REQUIRE(ae_encode(ae, x) == x);
}

TEST_CASE("ae_encode: pure and shape-correct", "[autoencoder]") {
  auto model = make_autoencoder(13, 8, 4, 8);
  auto rows = random_rows(1, 13, 9);
  auto a = ae_encode(model, rows.row(0));
  auto b = ae_encode(model, rows.row(0));
  REQUIRE(a == b);
  REQUIRE(a.size() == 4);
}

TEST_CASE("ae_encode: rejects dimension mismatch", "[autoencoder]") {
  auto model = make_autoencoder(13, 8, 4, 8);
  std::vector<double> x(7, 0.0);
  REQUIRE_THROWS_AS(ae_encode(model, x), ValidationError);
}

TEST_CASE("ae_train_local: rejects bad shards", "[autoencoder]") {
  auto model = make_autoencoder(13, 8, 4, 1);
  TrainSpec spec;
  REQUIRE_THROWS_AS(ae_train_local(Matrix(0, 13), model, spec), ValidationError);
  Matrix bad(2, 13);
  bad(1, 3) = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(ae_train_local(bad, model, spec), ValidationError);
}
