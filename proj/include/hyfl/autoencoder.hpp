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

#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "hyfl/matrix.hpp"
#include "hyfl/nn.hpp"
#include "hyfl/rng.hpp"
#include "hyfl/train.hpp"

namespace hyfl {

/// Encoder/decoder pair trained on squared reconstruction error. The
/// embedding sent across node boundaries is the encoder output alone.
struct Autoencoder {
  DenseNet encoder;
  DenseNet decoder;
  std::size_t latent_dim = 0;

  void validate() const {
    encoder.validate();
    decoder.validate();
    if (encoder.output_dim() != latent_dim || decoder.input_dim() != latent_dim)
      throw ValidationError("latent dimension does not match encoder/decoder");
    if (decoder.output_dim() != encoder.input_dim())
      throw ValidationError("decoder output must match encoder input");
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    nn_flatten(encoder, out);
    nn_flatten(decoder, out);
    return out;
  }

  void unflatten(std::span<const double> flat) {
    std::size_t off = nn_unflatten(encoder, flat, 0);
    off = nn_unflatten(decoder, flat, off);
    if (off != flat.size()) throw ValidationError("parameter vector length mismatch");
  }

  std::size_t param_count() const {
    return encoder.param_count() + decoder.param_count();
  }
};

/// Default stack: input -> hidden (ReLU) -> latent -> hidden (ReLU) -> input,
/// linear at the latent and reconstruction layers.
inline Autoencoder make_autoencoder(std::size_t input_dim = 13, std::size_t hidden = 8,
                                    std::size_t latent = 4, std::uint64_t seed = 1) {
  Rng rng(derive_seed(seed, "ae_init"));
  Autoencoder ae;
  const std::size_t enc_dims[] = {input_dim, hidden, latent};
  const std::size_t dec_dims[] = {latent, hidden, input_dim};
  ae.encoder = make_dense_net(enc_dims, Activation::Linear, rng);
  ae.decoder = make_dense_net(dec_dims, Activation::Linear, rng);
  ae.latent_dim = latent;
  return ae;
}

/// h(x): embedding of one input row. Pure.
inline std::vector<double> ae_encode(const Autoencoder& model, std::span<const double> x) {
  return nn_forward(model.encoder, x);
}

inline Matrix ae_encode_matrix(const Autoencoder& model, const Matrix& rows) {
  Matrix out(rows.rows(), model.latent_dim);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    auto e = ae_encode(model, rows.row(r));
    std::copy(e.begin(), e.end(), out.row(r).begin());
  }
  return out;
}

struct AeGradients {
  NetGrad encoder;
  NetGrad decoder;
  explicit AeGradients(const Autoencoder& m) : encoder(m.encoder), decoder(m.decoder) {}
};

/// Summed squared reconstruction error over the given rows, with parameter
/// gradients accumulated into grad (if non-null). Returns the loss.
inline double ae_loss_and_grad(const Autoencoder& model, const Matrix& rows,
                               std::span<const std::size_t> subset,
                               AeGradients* grad = nullptr) {
  double loss = 0.0;
  ForwardTrace enc_trace, dec_trace;
  for (std::size_t idx : subset) {
    auto x = rows.row(idx);
    auto latent = nn_forward(model.encoder, x, &enc_trace);
    auto recon = nn_forward(model.decoder, latent, &dec_trace);
    std::vector<double> d_out(recon.size());
    for (std::size_t i = 0; i < recon.size(); ++i) {
      const double diff = recon[i] - x[i];
      loss += diff * diff;
      d_out[i] = 2.0 * diff;
    }
    if (grad) {
      auto d_latent = nn_backward(model.decoder, latent, dec_trace, d_out, grad->decoder);
      nn_backward(model.encoder, x, enc_trace, d_latent, grad->encoder);
    }
  }
  return loss;
}

inline double ae_loss(const Autoencoder& model, const Matrix& rows) {
  std::vector<std::size_t> all(rows.rows());
  std::iota(all.begin(), all.end(), 0);
  return ae_loss_and_grad(model, rows, all, nullptr);
}

/// Mean per-row, per-coordinate reconstruction error.
inline double ae_reconstruction_mse(const Autoencoder& model, const Matrix& rows) {
  return ae_loss(model, rows) /
         (static_cast<double>(rows.rows()) * static_cast<double>(rows.cols()));
}

struct AeTrainResult {
  Autoencoder model;
  ResumeState resume;  // carried across aggregation rounds
};

/// Mini-batch SGD on the reconstruction loss. The shuffle for epoch e is
/// derived from (spec.seed, e) with e numbered globally, so training E
/// epochs in one call or split across calls with matching resume state
/// produces identical parameters. After each epoch the full-shard loss is
/// evaluated; an epoch that increases it is rolled back and retried at half
/// the learning rate, which keeps the per-epoch loss sequence non-increasing.
inline AeTrainResult ae_train_local(const Matrix& shard_features, const Autoencoder& init,
                                    const TrainSpec& spec,
                                    const ResumeState* resume = nullptr) {
  spec.validate();
  init.validate();
  if (shard_features.rows() == 0) throw ValidationError("empty shard");
  if (!shard_features.all_finite()) throw ValidationError("non-finite features");
  if (shard_features.cols() != init.encoder.input_dim())
    throw ValidationError("feature dimension does not match encoder input");

  AeTrainResult out{init, {}};
  double lr = (resume && resume->learning_rate > 0.0) ? resume->learning_rate
                                                      : spec.learning_rate;
  const std::size_t first_epoch = resume ? resume->next_epoch : 0;
  double last_loss = (resume && resume->has_last_loss)
                         ? resume->last_loss
                         : ae_loss(out.model, shard_features);

  const std::size_t n = shard_features.rows();
  std::vector<std::size_t> order(n);
  for (std::size_t e = first_epoch; e < first_epoch + spec.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(spec.seed, "ae_epoch", e));
    shuffle_rng.shuffle(order);

    const Autoencoder snapshot = out.model;
    for (int attempt = 0; attempt < 60; ++attempt) {
      for (std::size_t start = 0; start < n; start += spec.batch_size) {
        const std::size_t len = std::min(spec.batch_size, n - start);
        std::span<const std::size_t> batch(order.data() + start, len);
        AeGradients grad(out.model);
        ae_loss_and_grad(out.model, shard_features, batch, &grad);
        const double step = lr / static_cast<double>(len);
        nn_apply_step(out.model.encoder, grad.encoder, step);
        nn_apply_step(out.model.decoder, grad.decoder, step);
      }
      const double loss = ae_loss(out.model, shard_features);
      if (loss <= last_loss) {
        last_loss = loss;
        break;
      }
      out.model = snapshot;  // roll back and retry at half rate
      lr *= 0.5;
      if (attempt == 59) last_loss = ae_loss(out.model, shard_features);
    }
  }
  out.resume.next_epoch = first_epoch + spec.epochs;
  out.resume.learning_rate = lr;
  out.resume.last_loss = last_loss;
  out.resume.has_last_loss = true;
  return out;
}

}  // namespace hyfl
