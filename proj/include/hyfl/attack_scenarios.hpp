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

#include "hyfl/attacks.hpp"
#include "hyfl/experiment.hpp"

namespace hyfl {

// Canned red-team scenarios binding each attack to its risk surface:
// inversion to account-client model updates, membership and attribute
// inference to the transaction-side classifier, the leakage probe to
// embedding-reply plaintexts.

/// Single-sample inversion of an encoder update. noise_variance perturbs the
/// observed update (the masking/noise defense direction).
inline AttackReport run_inversion_scenario(std::uint64_t seed, double noise_variance,
                                           std::size_t steps) {
  const auto model = make_autoencoder(kAccountFeatureDim, 8, 4,
                                      derive_seed(seed, "inv_model"));
  Rng rng(derive_seed(seed, "inv_truth"));
  Matrix truth(1, kAccountFeatureDim);
  for (double& v : truth.data()) v = rng.normal();

  auto observed = detail::ae_param_gradient(model, truth);
  if (noise_variance > 0.0) {
    Rng noise(derive_seed(seed, "inv_noise"));
    const double sd = std::sqrt(noise_variance);
    for (double& v : observed) v += sd * noise.normal();
  }

  InversionProblem problem;
  problem.target = model;
  problem.observed_gradient = std::move(observed);
  problem.steps = steps;
  problem.seed = derive_seed(seed, "inv_attack");
  const auto result = gradient_inversion(problem);

  AttackReport report;
  report.kind = "inversion";
  report.seed = seed;
  report.metrics["cosine_objective"] = result.final_cosine;
  report.metrics["input_cosine"] =
      cosine_similarity(result.recovered.row(0), truth.row(0));
  report.config_echo["steps"] = steps;
  report.config_echo["noise_variance"] = noise_variance;
  return report;
}

namespace detail {

struct MembershipScenarioData {
  Matrix member_rows, nonmember_rows, attacker_rows;
  std::vector<int> member_labels, nonmember_labels, attacker_labels;
};

/// Joined-feature rows from a small centralized pipeline, split into
/// disjoint member/non-member/attacker pools.
inline MembershipScenarioData membership_pools(std::uint64_t seed, double noise_variance) {
  GenConfig data;
  data.n_train = 1600;
  data.positive_rate = 0.3;
  data.n_accounts = 400;
  data.seed = derive_seed(seed, "mi_data");
  const Dataset ds = generate(data);

  FederationSettings settings;
  settings.schedule = {10, 1};
  settings.ae_spec.seed = derive_seed(seed, "mi_ae");
  settings.seed = derive_seed(seed, "mi_fed");

  auto shards = shard_accounts(ds, 1, derive_seed(settings.seed, "shard"));
  const auto init = make_autoencoder(kAccountFeatureDim, settings.ae_hidden,
                                     settings.latent_dim,
                                     derive_seed(settings.seed, "ae_init"));
  TrainSpec ae_spec = settings.ae_spec;
  ae_spec.epochs = settings.schedule.total_epochs();
  ae_spec.seed = ae_client_seed(settings.ae_spec.seed, 1);
  const auto ae = ae_train_local(encode_shard(shards[0]), init, ae_spec).model;

  Matrix joined = centralized_join(ds, ae, ds.train_idx);
  auto [normalized, stats] = normalize_standard(joined);
  NoiseSpec noise{noise_variance, derive_seed(seed, "mi_noise")};
  const Matrix rows = add_gaussian_noise(normalized, noise);

  MembershipScenarioData out;
  const std::size_t n_member = 200, n_nonmember = 200, n_attacker = 600;
  auto take = [&](std::size_t from, std::size_t count, Matrix& m, std::vector<int>& y) {
    m = Matrix(count, rows.cols());
    y.resize(count);
    for (std::size_t r = 0; r < count; ++r) {
      std::copy(rows.row(from + r).begin(), rows.row(from + r).end(), m.row(r).begin());
      y[r] = ds.transactions[ds.train_idx[from + r]].label;
    }
  };
  take(0, n_member, out.member_rows, out.member_labels);
  take(n_member, n_nonmember, out.nonmember_rows, out.nonmember_labels);
  take(n_member + n_nonmember, n_attacker, out.attacker_rows, out.attacker_labels);
  return out;
}

}  // namespace detail

/// Membership inference against a deliberately overfit transaction-side MLP.
/// noise_variance applies the training-noise defense to both the target and
/// the attacker's shadow pipeline.
inline AttackReport run_membership_scenario(std::uint64_t seed, double noise_variance) {
  auto pools = detail::membership_pools(seed, noise_variance);

  TrainSpec spec;
  spec.epochs = 600;
  spec.learning_rate = 0.3;
  spec.batch_size = 16;
  spec.seed = derive_seed(seed, "mi_target");
  ClassifierOptions options;
  options.mlp_hidden = {64, 32};
  const std::vector<double> weights(pools.member_rows.rows(), 1.0);
  const Classifier target = classifier_train(pools.member_rows, pools.member_labels,
                                             weights, ClassifierKind::Mlp, spec, options);

  MembershipProblem problem;
  problem.target = &target;
  problem.member_rows = std::move(pools.member_rows);
  problem.member_labels = std::move(pools.member_labels);
  problem.nonmember_rows = std::move(pools.nonmember_rows);
  problem.nonmember_labels = std::move(pools.nonmember_labels);
  problem.attacker_rows = std::move(pools.attacker_rows);
  problem.attacker_labels = std::move(pools.attacker_labels);
  problem.shadow.kind = ClassifierKind::Mlp;
  problem.shadow.spec = spec;
  problem.shadow.options = options;
  problem.seed = derive_seed(seed, "mi_attack");

  auto report = membership_inference(problem);
  report.seed = seed;
  report.config_echo["noise_variance"] = noise_variance;
  return report;
}

/// Attribute inference against a transaction-side logistic model: one joined
/// coordinate is hidden and recovered against the model loss.
inline AttackReport run_attribute_scenario(std::uint64_t seed) {
  GenConfig data;
  data.n_train = 2000;
  data.positive_rate = 0.2;
  data.n_accounts = 300;
  data.seed = derive_seed(seed, "ai_data");
  const Dataset ds = generate(data);

  FederationSettings settings;
  settings.schedule = {10, 1};
  settings.ae_spec.seed = derive_seed(seed, "ai_ae");
  settings.seed = derive_seed(seed, "ai_fed");
  TrainPhaseConfig phase;
  phase.classifier = ClassifierKind::LogReg;
  phase.clf_spec.epochs = 60;
  phase.clf_spec.learning_rate = 0.1;
  phase.clf_spec.seed = derive_seed(seed, "ai_clf");
  const auto artifacts = run_centralized_pipeline(ds, ds.train_idx, settings, phase);

  const Matrix joined = centralized_join(ds, artifacts.ae, ds.test_idx);
  const Matrix normalized = apply_normalization(joined, artifacts.stats);
  // Pick the first crime-labeled test row and hide the amount coordinate.
  std::size_t probe = 0;
  for (std::size_t r = 0; r < ds.test_idx.size(); ++r)
    if (ds.transactions[ds.test_idx[r]].label == 1) {
      probe = r;
      break;
    }
  const std::size_t hidden = 2 * settings.latent_dim;  // first tx feature
  std::vector<double> truth(normalized.row(probe).begin(), normalized.row(probe).end());

  AttributeProblem problem;
  problem.model = &artifacts.model;
  problem.partial_row = truth;
  problem.partial_row[hidden] = 0.0;
  problem.missing = {hidden};
  problem.label = 1;
  problem.steps = 2000;
  problem.step_size = 0.1;
  problem.seed = derive_seed(seed, "ai_attack");
  const auto result = attribute_inference(problem);

  AttackReport report;
  report.kind = "attribute";
  report.seed = seed;
  report.metrics["final_loss"] = result.final_loss;
  report.metrics["abs_error"] = std::abs(result.completed[hidden] - truth[hidden]);
  report.metrics["recovered"] = result.completed[hidden];
  report.metrics["truth"] = truth[hidden];
  report.config_echo["hidden_index"] = hidden;
  return report;
}

/// Leakage probe over real embedding-reply plaintexts: the attacker holds a
/// labeled auxiliary slice and recovers flags for the rest.
inline AttackReport run_leakage_scenario(std::uint64_t seed) {
  GenConfig data;
  data.n_train = 500;
  data.positive_rate = 0.05;
  data.n_accounts = 1500;
  data.seed = derive_seed(seed, "fl_data");
  const Dataset ds = generate(data);

  FederationSettings settings;
  settings.m_clients = 3;
  settings.schedule = {10, 2};
  settings.ae_spec.seed = derive_seed(seed, "fl_ae");
  settings.seed = derive_seed(seed, "fl_fed");
  InProcessBus bus(settings.seed);
  const Autoencoder ae = run_feature_learning(bus, ds, settings);

  Matrix embeddings(ds.accounts.size(), settings.latent_dim);
  std::vector<int> flags(ds.accounts.size());
  std::size_t r = 0;
  for (const auto& [id, rec] : ds.accounts) {
    const auto e = ae_encode(ae, encode_flag(rec.flag));
    std::copy(e.begin(), e.end(), embeddings.row(r).begin());
    flags[r] = rec.flag;
    ++r;
  }
  // Deterministic shuffle, then a labeled auxiliary third vs leaked rest.
  std::vector<std::size_t> order(flags.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "fl_split"));
  rng.shuffle(order);
  const std::size_t n_aux = flags.size() / 3;
  LeakageProblem problem;
  problem.aux_embeddings = Matrix(n_aux, settings.latent_dim);
  problem.aux_flags.resize(n_aux);
  problem.leaked_embeddings = Matrix(flags.size() - n_aux, settings.latent_dim);
  problem.leaked_flags.resize(flags.size() - n_aux);
  for (std::size_t i = 0; i < flags.size(); ++i) {
    const std::size_t src = order[i];
    if (i < n_aux) {
      std::copy(embeddings.row(src).begin(), embeddings.row(src).end(),
                problem.aux_embeddings.row(i).begin());
      problem.aux_flags[i] = flags[src];
    } else {
      std::copy(embeddings.row(src).begin(), embeddings.row(src).end(),
                problem.leaked_embeddings.row(i - n_aux).begin());
      problem.leaked_flags[i - n_aux] = flags[src];
    }
  }
  problem.seed = seed;
  auto report = feature_leakage_probe(problem);
  report.seed = seed;
  report.config_echo["accounts"] = ds.accounts.size();
  return report;
}

/// The attacks preset: every scenario once, plus the noise-defense contrast
/// for the two attacks it mitigates.
inline std::vector<AttackReport> run_attacks_bundle(std::uint64_t seed,
                                                    std::size_t inversion_steps = 2000) {
  std::vector<AttackReport> out;
  out.push_back(run_inversion_scenario(seed, 0.0, inversion_steps));
  out.back().config_echo["defense"] = "off";
  out.push_back(run_inversion_scenario(seed, 0.1, inversion_steps));
  out.back().config_echo["defense"] = "noise_0.1";
  out.push_back(run_membership_scenario(seed, 0.0));
  out.back().config_echo["defense"] = "off";
  out.push_back(run_membership_scenario(seed, 0.1));
  out.back().config_echo["defense"] = "noise_0.1";
  out.push_back(run_attribute_scenario(seed));
  out.push_back(run_leakage_scenario(seed));
  return out;
}

inline void write_attacks_csv(const std::vector<AttackReport>& reports,
                              const std::filesystem::path& path) {
  std::ofstream csv(path);
  if (!csv) throw IoError("cannot write " + path.string());
  csv << "attack,defense,metric,value\n";
  for (const auto& r : reports) {
    const std::string defense = r.config_echo.value("defense", "off");
    for (const auto& [metric, value] : r.metrics)
      csv << r.kind << ',' << defense << ',' << metric << ',' << detail::csv_num(value)
          << '\n';
  }
}

}  // namespace hyfl
