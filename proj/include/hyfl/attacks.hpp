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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hyfl/autoencoder.hpp"
#include "hyfl/classifier.hpp"
#include "hyfl/data.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/metrics.hpp"
#include "hyfl/rng.hpp"

namespace hyfl {

/// Adaptive-moment ascent/descent, written out in full since the red-team
/// harness must not depend on the training stack it attacks.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t dim, double step_size)
      : step_size_(step_size), m_(dim, 0.0), v_(dim, 0.0) {}

  void step(std::span<double> x, std::span<const double> grad, bool maximize) {
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = maximize ? -grad[i] : grad[i];
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      x[i] -= step_size_ * (m_[i] / bias1) / (std::sqrt(v_[i] / bias2) + eps);
    }
  }

 private:
  double step_size_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

struct AttackReport {
  std::string kind;
  std::map<std::string, double> metrics;
  nlohmann::json config_echo = nlohmann::json::object();
  std::uint64_t seed = 0;
};

inline nlohmann::json attack_report_to_json(const AttackReport& r) {
  nlohmann::json j;
  j["format"] = "hyfl-attack";
  j["version"] = 1;
  j["kind"] = r.kind;
  j["metrics"] = r.metrics;
  j["config"] = r.config_echo;
  j["seed"] = r.seed;
  return j;
}

// ---------------------------------------------------------------------------
// Gradient inversion: recover inputs whose reconstruction-loss gradient
// matches an observed update, by cosine similarity.

struct InversionProblem {
  Autoencoder target;                      // fixed parameters
  std::vector<double> observed_gradient;   // flattened, same layout as flatten()
  std::size_t batch_size = 1;
  std::size_t steps = 2000;
  double step_size = 0.05;
  double l2_prior = 0.0;  // optional pull toward the origin; 0 = plain objective
  std::uint64_t seed = 1;
  std::optional<Matrix> init;  // seeded random start when absent
};

struct InversionResult {
  Matrix recovered;
  std::vector<double> cosine_trace;  // best-so-far, non-decreasing
  double final_cosine = -1.0;
};

namespace detail {

inline std::vector<double> ae_param_gradient(const Autoencoder& model, const Matrix& batch) {
  AeGradients grads(model);
  std::vector<std::size_t> all(batch.rows());
  std::iota(all.begin(), all.end(), 0);
  ae_loss_and_grad(model, batch, all, &grads);
  std::vector<double> flat;
  grad_flatten(grads.encoder, flat);
  grad_flatten(grads.decoder, flat);
  return flat;
}

}  // namespace detail

/// Cosine between the reconstruction-loss gradient at a candidate batch and
/// the observed gradient. The objective every inversion step maximizes.
inline double inversion_objective(const Autoencoder& target, const Matrix& candidate,
                                  std::span<const double> observed) {
  const auto g = detail::ae_param_gradient(target, candidate);
  const double norm_g = l2_norm(g);
  const double norm_o = l2_norm(observed);
  if (norm_g == 0.0 || norm_o == 0.0) return 0.0;
  return dot(g, observed) / (norm_g * norm_o);
}

inline InversionResult gradient_inversion(const InversionProblem& problem) {
  const std::size_t dim = problem.target.encoder.input_dim();
  if (problem.observed_gradient.size() != problem.target.param_count())
    throw ValidationError("observed gradient length does not match the model");
  if (l2_norm(problem.observed_gradient) == 0.0)
    throw ValidationError("observed gradient is zero");

  Matrix x(problem.batch_size, dim);
  if (problem.init) {
    if (problem.init->rows() != problem.batch_size || problem.init->cols() != dim)
      throw ValidationError("init shape mismatch");
    x = *problem.init;
  } else {
    Rng rng(derive_seed(problem.seed, "inversion_init"));
    for (double& v : x.data()) v = rng.normal();
  }

  auto objective = [&](const Matrix& candidate) {
    double obj = inversion_objective(problem.target, candidate, problem.observed_gradient);
    if (problem.l2_prior > 0.0) {
      double sq = 0.0;
      for (double v : candidate.data()) sq += v * v;
      obj -= problem.l2_prior * sq;
    }
    if (!std::isfinite(obj)) throw ValidationError("non-finite inversion objective");
    return obj;
  };

  InversionResult out;
  out.recovered = x;
  double best = objective(x);
  out.cosine_trace.push_back(best);

  AdamOptimizer adam(x.data().size(), problem.step_size);
  std::vector<double> grad(x.data().size());
  Matrix probe = x;
  for (std::size_t step = 0; step < problem.steps; ++step) {
    // The objective differentiates the gradient-matching surface; central
    // differences over the (small) candidate batch keep this exact enough
    // for the ascent while the analytic inner gradient does the heavy work.
    const double h = 1e-5;
    probe = x;
    for (std::size_t i = 0; i < x.data().size(); ++i) {
      const double keep = probe.data()[i];
      probe.data()[i] = keep + h;
      const double up = objective(probe);
      probe.data()[i] = keep - h;
      const double down = objective(probe);
      probe.data()[i] = keep;
      grad[i] = (up - down) / (2.0 * h);
    }
    adam.step(x.data(), grad, /*maximize=*/true);
    const double obj = objective(x);
    if (obj > best) {
      best = obj;
      out.recovered = x;
    }
    out.cosine_trace.push_back(best);
  }
  out.final_cosine = best;
  return out;
}

// ---------------------------------------------------------------------------
// Membership inference with shadow models.

struct ShadowSpec {
  ClassifierKind kind = ClassifierKind::Mlp;
  TrainSpec spec;
  ClassifierOptions options;
};

struct MembershipProblem {
  const Classifier* target = nullptr;
  Matrix member_rows;  // rows the target trained on
  std::vector<int> member_labels;
  Matrix nonmember_rows;
  std::vector<int> nonmember_labels;
  Matrix attacker_rows;  // disjoint from both evaluation sets
  std::vector<int> attacker_labels;
  ShadowSpec shadow;
  std::uint64_t seed = 1;
};

namespace detail {

// Score-derived attack features: confidence, error and per-row log-loss.
inline std::vector<double> membership_features(double score, int label) {
  const double eps = 1e-12;
  const double p = std::clamp(score, eps, 1.0 - eps);
  const double ll = label == 1 ? -std::log(p) : -std::log(1.0 - p);
  return {score, std::abs(score - static_cast<double>(label)), ll};
}

}  // namespace detail

/// Trains one shadow model on half the attacker data, labels score-features
/// as member/non-member, fits a logistic attack classifier and reports its
/// ROC AUC against the real target's member and non-member rows.
inline AttackReport membership_inference(const MembershipProblem& problem) {
  if (problem.target == nullptr) throw ValidationError("missing target model");
  const std::size_t n = problem.attacker_rows.rows();
  std::size_t pos = 0;
  for (int y : problem.attacker_labels) pos += static_cast<std::size_t>(y);
  if (pos < 4 || n - pos < 4)
    throw ValidationError("attacker dataset too small for the shadow split");

  // Deterministic half split, stratified by class.
  Rng rng(derive_seed(problem.seed, "shadow_split"));
  std::vector<std::size_t> pos_idx, neg_idx;
  for (std::size_t i = 0; i < n; ++i)
    (problem.attacker_labels[i] == 1 ? pos_idx : neg_idx).push_back(i);
  rng.shuffle(pos_idx);
  rng.shuffle(neg_idx);
  std::vector<std::size_t> shadow_in, shadow_out;
  for (std::size_t i = 0; i < pos_idx.size(); ++i)
    (i < pos_idx.size() / 2 ? shadow_in : shadow_out).push_back(pos_idx[i]);
  for (std::size_t i = 0; i < neg_idx.size(); ++i)
    (i < neg_idx.size() / 2 ? shadow_in : shadow_out).push_back(neg_idx[i]);
  std::sort(shadow_in.begin(), shadow_in.end());
  std::sort(shadow_out.begin(), shadow_out.end());

  auto subset = [&](const std::vector<std::size_t>& idx, Matrix& rows,
                    std::vector<int>& labels) {
    rows = Matrix(idx.size(), problem.attacker_rows.cols());
    labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::copy(problem.attacker_rows.row(idx[r]).begin(),
                problem.attacker_rows.row(idx[r]).end(), rows.row(r).begin());
      labels[r] = problem.attacker_labels[idx[r]];
    }
  };
  Matrix in_rows, out_rows;
  std::vector<int> in_labels, out_labels;
  subset(shadow_in, in_rows, in_labels);
  subset(shadow_out, out_rows, out_labels);

  TrainSpec shadow_spec = problem.shadow.spec;
  shadow_spec.seed = derive_seed(problem.seed, "shadow_train");
  const std::vector<double> in_weights(in_rows.rows(), 1.0);
  const Classifier shadow = classifier_train(in_rows, in_labels, in_weights,
                                             problem.shadow.kind, shadow_spec,
                                             problem.shadow.options);

  // Attack training set: shadow members vs shadow non-members.
  Matrix attack_rows(in_rows.rows() + out_rows.rows(), 3);
  std::vector<int> attack_labels(attack_rows.rows());
  std::size_t at = 0;
  for (std::size_t r = 0; r < in_rows.rows(); ++r, ++at) {
    auto f = detail::membership_features(classifier_predict(shadow, in_rows.row(r)),
                                         in_labels[r]);
    std::copy(f.begin(), f.end(), attack_rows.row(at).begin());
    attack_labels[at] = 1;
  }
  for (std::size_t r = 0; r < out_rows.rows(); ++r, ++at) {
    auto f = detail::membership_features(classifier_predict(shadow, out_rows.row(r)),
                                         out_labels[r]);
    std::copy(f.begin(), f.end(), attack_rows.row(at).begin());
    attack_labels[at] = 0;
  }
  TrainSpec attack_spec;
  attack_spec.epochs = 200;
  attack_spec.learning_rate = 0.1;
  attack_spec.batch_size = 64;
  attack_spec.seed = derive_seed(problem.seed, "attack_clf");
  const std::vector<double> attack_weights(attack_rows.rows(), 1.0);
  const Classifier attack = classifier_train(attack_rows, attack_labels, attack_weights,
                                             ClassifierKind::LogReg, attack_spec);

  // Evaluate on the real target.
  std::vector<double> scores;
  std::vector<int> labels;
  for (std::size_t r = 0; r < problem.member_rows.rows(); ++r) {
    auto f = detail::membership_features(
        classifier_predict(*problem.target, problem.member_rows.row(r)),
        problem.member_labels[r]);
    scores.push_back(classifier_predict(attack, f));
    labels.push_back(1);
  }
  for (std::size_t r = 0; r < problem.nonmember_rows.rows(); ++r) {
    auto f = detail::membership_features(
        classifier_predict(*problem.target, problem.nonmember_rows.row(r)),
        problem.nonmember_labels[r]);
    scores.push_back(classifier_predict(attack, f));
    labels.push_back(0);
  }

  AttackReport report;
  report.kind = "membership";
  report.seed = problem.seed;
  report.metrics["auc"] = roc_auc(scores, labels);
  report.config_echo["shadow_kind"] = to_string(problem.shadow.kind);
  report.config_echo["attacker_rows"] = n;
  return report;
}

// ---------------------------------------------------------------------------
// Attribute inference: complete missing coordinates against the model loss.

struct AttributeProblem {
  const Classifier* model = nullptr;
  std::vector<double> partial_row;     // placeholders at the missing indices
  std::vector<std::size_t> missing;
  int label = 1;
  std::size_t steps = 400;
  double step_size = 0.05;
  double box_lo = -5.0;
  double box_hi = 5.0;
  std::uint64_t seed = 1;
};

struct AttributeResult {
  std::vector<double> completed;
  double final_loss = 0.0;
};

namespace detail {

inline double clf_row_loss(const Classifier& model, std::span<const double> x, int label) {
  const double eps = 1e-12;
  const double p = std::clamp(classifier_predict(model, x), eps, 1.0 - eps);
  return label == 1 ? -std::log(p) : -std::log(1.0 - p);
}

// dLoss/dx for the gradient-trained kinds; the margin derivative feeds the
// network's input-gradient path.
inline std::vector<double> clf_input_gradient(const Classifier& model,
                                              std::span<const double> x, int label) {
  ForwardTrace trace;
  const double margin = nn_forward(model.net, x, &trace)[0];
  double d_margin = 0.0;
  switch (model.kind) {
    case ClassifierKind::LogReg:
    case ClassifierKind::Mlp:
      d_margin = sigmoid(margin) - static_cast<double>(label);
      break;
    case ClassifierKind::LinearSvm: {
      const double s = label == 1 ? 1.0 : -1.0;
      d_margin = (1.0 - s * margin) > 0.0 ? -s : 0.0;
      break;
    }
    case ClassifierKind::Gbdt:
      throw ValidationError("no gradient path for trees");
  }
  NetGrad sink(model.net);
  const double d_out[1] = {d_margin};
  return nn_backward(model.net, x, trace, d_out, sink);
}

}  // namespace detail

/// Optimizes only the missing coordinates toward minimum model loss at the
/// known label. Known coordinates are never touched. Differentiable models
/// use projected Adam descent; tree ensembles fall back to coordinate grid
/// search over the box.
inline AttributeResult attribute_inference(const AttributeProblem& problem) {
  if (problem.model == nullptr) throw ValidationError("missing model");
  const Classifier& model = *problem.model;
  if (problem.partial_row.size() != model.n_features())
    throw ValidationError("row dimension mismatch");
  for (std::size_t idx : problem.missing)
    if (idx >= problem.partial_row.size())
      throw ValidationError("missing index out of range");

  AttributeResult out;
  out.completed = problem.partial_row;
  if (problem.missing.empty()) {
    out.final_loss = detail::clf_row_loss(model, out.completed, problem.label);
    return out;
  }

  if (model.kind == ClassifierKind::Gbdt) {
    // Coordinate grid search, several sweeps.
    constexpr int kGrid = 33;
    for (int sweep = 0; sweep < 3; ++sweep) {
      for (std::size_t idx : problem.missing) {
        double best_v = out.completed[idx];
        double best_loss = detail::clf_row_loss(model, out.completed, problem.label);
        for (int g = 0; g < kGrid; ++g) {
          const double v = problem.box_lo + (problem.box_hi - problem.box_lo) *
                                                static_cast<double>(g) / (kGrid - 1);
          out.completed[idx] = v;
          const double loss = detail::clf_row_loss(model, out.completed, problem.label);
          if (loss < best_loss) {
            best_loss = loss;
            best_v = v;
          }
        }
        out.completed[idx] = best_v;
      }
    }
  } else {
    Rng rng(derive_seed(problem.seed, "attribute_init"));
    for (std::size_t idx : problem.missing)
      out.completed[idx] = rng.uniform(problem.box_lo, problem.box_hi);
    AdamOptimizer adam(problem.missing.size(), problem.step_size);
    std::vector<double> sub_grad(problem.missing.size());
    std::vector<double> sub(problem.missing.size());
    for (std::size_t step = 0; step < problem.steps; ++step) {
      const auto full_grad = detail::clf_input_gradient(model, out.completed, problem.label);
      for (std::size_t k = 0; k < problem.missing.size(); ++k) {
        sub_grad[k] = full_grad[problem.missing[k]];
        sub[k] = out.completed[problem.missing[k]];
      }
      adam.step(sub, sub_grad, /*maximize=*/false);
      for (std::size_t k = 0; k < problem.missing.size(); ++k)
        out.completed[problem.missing[k]] =
            std::clamp(sub[k], problem.box_lo, problem.box_hi);
    }
  }
  out.final_loss = detail::clf_row_loss(model, out.completed, problem.label);
  return out;
}

// ---------------------------------------------------------------------------
// Feature-leakage probe: how much account status survives the encoder.

struct LeakageProblem {
  Matrix leaked_embeddings;  // what the attacker intercepted
  std::vector<int> leaked_flags;
  Matrix aux_embeddings;  // small labeled auxiliary set
  std::vector<int> aux_flags;
  std::size_t epochs = 300;
  double learning_rate = 0.5;
  std::uint64_t seed = 1;
};

namespace detail {

/// Multinomial logistic regression over the 12 flag classes; the probe's
/// own model, independent of the defended stack.
class SoftmaxProbe {
 public:
  SoftmaxProbe(std::size_t dim, std::size_t classes)
      : dim_(dim), classes_(classes), w_(classes * dim, 0.0), b_(classes, 0.0) {}

  std::vector<double> logits(std::span<const double> x) const {
    std::vector<double> z(classes_, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
      double s = b_[c];
      for (std::size_t d = 0; d < dim_; ++d) s += w_[c * dim_ + d] * x[d];
      z[c] = s;
    }
    return z;
  }

  int predict(std::span<const double> x) const {
    const auto z = logits(x);
    return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
  }

  void fit(const Matrix& rows, std::span<const int> labels, std::size_t epochs,
           double lr) {
    const double n = static_cast<double>(rows.rows());
    std::vector<double> gw(w_.size()), gb(b_.size());
    for (std::size_t e = 0; e < epochs; ++e) {
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      for (std::size_t r = 0; r < rows.rows(); ++r) {
        auto z = logits(rows.row(r));
        const double zmax = *std::max_element(z.begin(), z.end());
        double sum = 0.0;
        for (double& v : z) {
          v = std::exp(v - zmax);
          sum += v;
        }
        for (std::size_t c = 0; c < classes_; ++c) {
          const double p = z[c] / sum;
          const double d = p - (static_cast<int>(c) == labels[r] ? 1.0 : 0.0);
          gb[c] += d;
          for (std::size_t dcol = 0; dcol < dim_; ++dcol)
            gw[c * dim_ + dcol] += d * rows(r, dcol);
        }
      }
      for (std::size_t i = 0; i < w_.size(); ++i) w_[i] -= lr * gw[i] / n;
      for (std::size_t i = 0; i < b_.size(); ++i) b_[i] -= lr * gb[i] / n;
    }
  }

 private:
  std::size_t dim_, classes_;
  std::vector<double> w_, b_;
};

}  // namespace detail

/// Fits a flag classifier on the auxiliary (embedding, flag) pairs and
/// reports recovery accuracy on the leaked embeddings against the 1/12
/// chance baseline.
inline AttackReport feature_leakage_probe(const LeakageProblem& problem) {
  const std::size_t classes = static_cast<std::size_t>(kMaxFlag) + 1;
  if (problem.aux_embeddings.rows() != problem.aux_flags.size() ||
      problem.leaked_embeddings.rows() != problem.leaked_flags.size())
    throw ValidationError("rows and flags differ in length");
  std::set<int> present(problem.aux_flags.begin(), problem.aux_flags.end());
  if (problem.aux_embeddings.rows() < present.size())
    throw ValidationError("auxiliary set smaller than the flag classes present");

  detail::SoftmaxProbe probe(problem.aux_embeddings.cols(), classes);
  probe.fit(problem.aux_embeddings, problem.aux_flags, problem.epochs,
            problem.learning_rate);

  std::size_t hits = 0;
  for (std::size_t r = 0; r < problem.leaked_embeddings.rows(); ++r)
    hits += probe.predict(problem.leaked_embeddings.row(r)) == problem.leaked_flags[r];

  AttackReport report;
  report.kind = "leakage";
  report.seed = problem.seed;
  report.metrics["accuracy"] =
      static_cast<double>(hits) / static_cast<double>(problem.leaked_embeddings.rows());
  report.metrics["chance"] = 1.0 / static_cast<double>(classes);
  report.config_echo["aux_rows"] = problem.aux_embeddings.rows();
  report.config_echo["leaked_rows"] = problem.leaked_embeddings.rows();
  return report;
}

}  // namespace hyfl
