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

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hyfl/attacks.hpp"
#include "hyfl/federation.hpp"
#include "hyfl/metrics.hpp"

namespace hyfl {

enum class SettingMode { Centralized, Federated };

/// Declarative description of one end-to-end run: data, topology, schedule,
/// model, defenses, sampling and seed.
struct ExperimentConfig {
  GenConfig data;
  SettingMode mode = SettingMode::Federated;
  std::size_t m_clients = 10;
  RoundSchedule schedule{5, 10};
  std::size_t ae_hidden = 8;
  std::size_t latent_dim = 4;
  double ae_learning_rate = 0.01;
  std::size_t ae_batch_size = 256;
  ClassifierKind classifier = ClassifierKind::Gbdt;
  TrainSpec clf_spec;
  ClassifierOptions clf_options;
  double noise_variance = 0.0;
  bool secure = false;  // masked aggregation + sealed embeddings
  Sampling sampling = Sampling::None;
  RouteMode route = RouteMode::ServerRouted;
  double data_fraction = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    data.validate();
    schedule.validate();
    clf_spec.validate();
    if (!(data_fraction > 0.0 && data_fraction <= 1.0))
      throw ValidationError("data_fraction must lie in (0,1]");
    if (noise_variance < 0.0) throw ValidationError("noise variance must be >= 0");
  }
};

inline std::string to_string(Sampling s) {
  switch (s) {
    case Sampling::None: return "none";
    case Sampling::RandomUnder: return "under";
    case Sampling::RandomOver: return "over";
    case Sampling::Smote: return "smote";
    case Sampling::Reweight: return "reweight";
  }
  throw ValidationError("unknown sampling");
}

inline Sampling sampling_from(const std::string& s) {
  if (s == "none") return Sampling::None;
  if (s == "under") return Sampling::RandomUnder;
  if (s == "over") return Sampling::RandomOver;
  if (s == "smote") return Sampling::Smote;
  if (s == "reweight") return Sampling::Reweight;
  throw ValidationError("unknown sampling: " + s);
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["data"] = {{"n_train", c.data.n_train},
               {"positive_rate", c.data.positive_rate},
               {"n_accounts", c.data.n_accounts},
               {"flag_crime_correlation", c.data.flag_crime_correlation},
               {"seed", c.data.seed}};
  j["mode"] = c.mode == SettingMode::Centralized ? "centralized" : "federated";
  j["clients"] = c.m_clients;
  j["schedule"] = {{"interval", c.schedule.interval}, {"rounds", c.schedule.rounds}};
  j["ae_hidden"] = c.ae_hidden;
  j["latent_dim"] = c.latent_dim;
  j["ae"] = {{"learning_rate", c.ae_learning_rate}, {"batch_size", c.ae_batch_size}};
  j["classifier"] = to_string(c.classifier);
  j["train"] = {{"epochs", c.clf_spec.epochs},
                {"learning_rate", c.clf_spec.learning_rate},
                {"batch_size", c.clf_spec.batch_size}};
  j["gbdt"] = {{"max_depth", c.clf_options.gbdt.max_depth},
               {"lambda", c.clf_options.gbdt.lambda},
               {"learning_rate", c.clf_options.gbdt.learning_rate}};
  j["mlp_hidden"] = c.clf_options.mlp_hidden;
  j["noise_variance"] = c.noise_variance;
  j["secure"] = c.secure;
  j["sampling"] = to_string(c.sampling);
  j["route"] = c.route == RouteMode::P2P ? "p2p" : "server";
  j["fraction"] = c.data_fraction;
  j["seed"] = c.seed;
  return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.data.n_train = d.value("n_train", c.data.n_train);
    c.data.positive_rate = d.value("positive_rate", c.data.positive_rate);
    c.data.n_accounts = d.value("n_accounts", c.data.n_accounts);
    c.data.flag_crime_correlation =
        d.value("flag_crime_correlation", c.data.flag_crime_correlation);
    c.data.seed = d.value("seed", c.data.seed);
  }
  if (j.contains("mode"))
    c.mode = j.at("mode") == "centralized" ? SettingMode::Centralized
                                           : SettingMode::Federated;
  c.m_clients = j.value("clients", c.m_clients);
  if (j.contains("schedule")) {
    c.schedule.interval = j.at("schedule").value("interval", c.schedule.interval);
    c.schedule.rounds = j.at("schedule").value("rounds", c.schedule.rounds);
  }
  c.ae_hidden = j.value("ae_hidden", c.ae_hidden);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  if (j.contains("ae")) {
    c.ae_learning_rate = j.at("ae").value("learning_rate", c.ae_learning_rate);
    c.ae_batch_size = j.at("ae").value("batch_size", c.ae_batch_size);
  }
  if (j.contains("classifier"))
    c.classifier = classifier_kind_from(j.at("classifier").get<std::string>());
  if (j.contains("train")) {
    c.clf_spec.epochs = j.at("train").value("epochs", c.clf_spec.epochs);
    c.clf_spec.learning_rate = j.at("train").value("learning_rate", c.clf_spec.learning_rate);
    c.clf_spec.batch_size = j.at("train").value("batch_size", c.clf_spec.batch_size);
  }
  if (j.contains("gbdt")) {
    c.clf_options.gbdt.max_depth = j.at("gbdt").value("max_depth", c.clf_options.gbdt.max_depth);
    c.clf_options.gbdt.lambda = j.at("gbdt").value("lambda", c.clf_options.gbdt.lambda);
    c.clf_options.gbdt.learning_rate =
        j.at("gbdt").value("learning_rate", c.clf_options.gbdt.learning_rate);
  }
  if (j.contains("mlp_hidden"))
    c.clf_options.mlp_hidden = j.at("mlp_hidden").get<std::vector<std::size_t>>();
  c.noise_variance = j.value("noise_variance", c.noise_variance);
  c.secure = j.value("secure", c.secure);
  if (j.contains("sampling")) c.sampling = sampling_from(j.at("sampling").get<std::string>());
  if (j.contains("route")) c.route = j.at("route") == "p2p" ? RouteMode::P2P : RouteMode::ServerRouted;
  c.data_fraction = j.value("fraction", c.data_fraction);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Stable identifier for result aggregation: hash of the canonical config.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::size_t h = std::hash<std::string>{}(config_to_json(c).dump());
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016zx", h);
  return buf;
}

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double aucpr = 0.0;
  std::optional<NoiseMetrics> privacy;  // set when noise_variance > 0
  double runtime_seconds = 0.0;
  nlohmann::json config_echo;
};

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["f1"] = r.f1;
  j["aucpr"] = r.aucpr;
  if (r.privacy) {
    j["privacy"] = {{"avg_l2", r.privacy->avg_l2},
                    {"avg_cos", r.privacy->avg_cos},
                    {"skipped_rows", r.privacy->skipped_rows}};
  }
  j["runtime_seconds"] = r.runtime_seconds;
  j["config"] = r.config_echo;
  return j;
}

struct ExperimentResult {
  MetricsReport report;
  std::vector<double> test_scores;
  std::vector<int> test_labels;
  nlohmann::json model_json;
};

/// End-to-end run: generate, shard, federated (or local) feature learning,
/// join, rebalance, noise, train, score the test split. Deterministic under
/// the config. An external transport may be supplied (e.g. TCP); the default
/// is a seeded in-process bus.
inline ExperimentResult run_experiment(const ExperimentConfig& config,
                                       Transport* external_transport = nullptr,
                                       const std::filesystem::path* dump_transcript = nullptr) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const Dataset ds = generate(config.data);
  const auto train_idx = subsample_train(ds, config.data_fraction,
                                         derive_seed(config.seed, "fraction"));

  FederationSettings settings;
  settings.m_clients = config.m_clients;
  settings.schedule = config.schedule;
  settings.ae_hidden = config.ae_hidden;
  settings.latent_dim = config.latent_dim;
  settings.ae_spec.learning_rate = config.ae_learning_rate;
  settings.ae_spec.batch_size = config.ae_batch_size;
  settings.ae_spec.seed = derive_seed(config.seed, "ae_base");
  settings.secure = config.secure;
  settings.route = config.route;
  settings.seed = config.seed;

  TrainPhaseConfig train;
  train.classifier = config.classifier;
  train.clf_spec = config.clf_spec;
  train.clf_spec.seed = derive_seed(config.seed, "clf");
  train.clf_options = config.clf_options;
  train.sampling = config.sampling;
  train.noise_variance = config.noise_variance;

  ExperimentResult out;
  for (std::size_t i : ds.test_idx)
    out.test_labels.push_back(ds.transactions[i].label);

  if (config.mode == SettingMode::Centralized) {
    const auto artifacts = run_centralized_pipeline(ds, train_idx, settings, train);
    out.test_scores = centralized_score(artifacts, ds, ds.test_idx);
    out.model_json = classifier_to_json(artifacts.model);
    if (config.noise_variance > 0.0) out.report.privacy = artifacts.train_noise;
  } else {
    std::unique_ptr<InProcessBus> owned;
    Transport* transport = external_transport;
    if (transport == nullptr) {
      owned = std::make_unique<InProcessBus>(config.seed);
      transport = owned.get();
    }
    {
      FederatedRun run(*transport, ds, train_idx, settings);
      run.setup();
      run.run_feature_learning();
      run.run_training_phase(train);

      std::vector<std::uint64_t> test_ids;
      for (std::size_t i : ds.test_idx) test_ids.push_back(ds.transactions[i].tx_id);
      const auto reply = run.predict(test_ids);
      if (!reply.row_errors.empty())
        throw ProtocolError("inference failed for " +
                            std::to_string(reply.row_errors.size()) + " rows");
      for (std::uint64_t id : test_ids) out.test_scores.push_back(reply.scores.at(id));
      out.model_json = classifier_to_json(run.tx_client().model());
      if (config.noise_variance > 0.0)
        out.report.privacy = run.tx_client().train_noise_metrics();
      if (dump_transcript != nullptr)
        transport->transcript().dump_jsonl(*dump_transcript);
    }
  }

  const auto m = prf1(out.test_scores, out.test_labels);
  out.report.precision = m.precision;
  out.report.recall = m.recall;
  out.report.f1 = m.f1;
  out.report.aucpr = aucpr(out.test_scores, out.test_labels);
  out.report.config_echo = config_to_json(config);
  out.report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// ---------------------------------------------------------------------------
// Presets: the experiment grids behind the reported tables and the noise
// sweep, at desk scale.

struct PresetRow {
  std::string label;
  ExperimentConfig config;
};

/// Base config shared by the preset grids.
inline ExperimentConfig preset_base(std::uint64_t seed, std::size_t n_train) {
  ExperimentConfig c;
  c.data.n_train = n_train;
  c.data.positive_rate = 0.01;
  c.data.n_accounts = std::max<std::size_t>(n_train / 5, 200);
  c.data.seed = derive_seed(seed, "data");
  c.mode = SettingMode::Federated;
  c.m_clients = 10;
  c.schedule = {5, 10};
  c.classifier = ClassifierKind::Gbdt;
  c.clf_spec.epochs = 50;
  c.clf_spec.learning_rate = 0.01;
  c.clf_spec.batch_size = 256;
  c.seed = seed;
  return c;
}

inline std::vector<std::string> preset_names() {
  return {"table1", "table2", "table3", "table4", "table5", "fig4", "attacks"};
}

inline std::vector<PresetRow> build_preset(const std::string& name, std::uint64_t seed,
                                           std::size_t n_train) {
  std::vector<PresetRow> rows;
  const ExperimentConfig base = preset_base(seed, n_train);
  if (name == "table1") {
    for (const char* setting : {"centralized", "vanilla", "hyfl"}) {
      for (auto kind : {ClassifierKind::Gbdt, ClassifierKind::LinearSvm,
                        ClassifierKind::LogReg, ClassifierKind::Mlp}) {
        ExperimentConfig c = base;
        c.classifier = kind;
        if (std::string(setting) == "centralized") c.mode = SettingMode::Centralized;
        if (std::string(setting) == "hyfl") {
          c.secure = true;
          c.noise_variance = 0.01;
        }
        rows.push_back({std::string(setting) + "/" + to_string(kind), c});
      }
    }
  } else if (name == "table2") {
    for (auto s : {Sampling::RandomUnder, Sampling::RandomOver, Sampling::Smote,
                   Sampling::Reweight}) {
      ExperimentConfig c = base;
      c.sampling = s;
      rows.push_back({to_string(s), c});
    }
  } else if (name == "table3") {
    for (auto [i, r] : std::vector<std::pair<std::size_t, std::size_t>>{
             {1, 50}, {5, 10}, {10, 5}, {50, 1}}) {
      ExperimentConfig c = base;
      c.m_clients = 100;
      c.schedule = {i, r};
      rows.push_back({"I" + std::to_string(i) + "-R" + std::to_string(r), c});
    }
  } else if (name == "table4") {
    for (std::size_t m : {1ull, 10ull, 50ull, 100ull, 200ull}) {
      ExperimentConfig c = base;
      c.m_clients = m;
      rows.push_back({std::to_string(m), c});
    }
  } else if (name == "table5") {
    for (double f : {1.0, 0.5, 0.1, 0.01, 0.002}) {
      ExperimentConfig c = base;
      c.data_fraction = f;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%g", f);
      rows.push_back({buf, c});
    }
  } else if (name == "fig4") {
    for (double v : {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 0.5}) {
      ExperimentConfig c = base;
      c.secure = true;
      c.noise_variance = v;
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%g", v);
      rows.push_back({buf, c});
    }
  } else if (name != "attacks") {
    throw ValidationError("unknown preset: " + name);
  }
  return rows;
}

namespace detail {
inline std::string csv_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}
}  // namespace detail

struct PresetOutcome {
  std::vector<std::pair<std::string, MetricsReport>> reports;
  std::filesystem::path csv_path;
};

/// Runs every grid point of a preset and writes one CSV per preset with the
/// same row/column layout as the corresponding reported table.
inline PresetOutcome run_preset(const std::string& name, std::uint64_t seed,
                                std::size_t n_train, const std::filesystem::path& out_dir,
                                const std::function<void(const std::string&)>& log = {}) {
  std::filesystem::create_directories(out_dir);
  PresetOutcome out;
  out.csv_path = out_dir / (name + ".csv");

  if (name == "attacks") {
    // Red-team bundle; see the attack runners in the CLI for the scenarios.
    throw ValidationError("the attacks preset is driven by the CLI attack runners");
  }

  auto rows = build_preset(name, seed, n_train);
  std::ofstream csv(out.csv_path);
  if (!csv) throw IoError("cannot write " + out.csv_path.string());
  if (name == "fig4")
    csv << "variance,aucpr,avg_l2,avg_cos\n";
  else if (name == "table1")
    csv << "setting,classifier,precision,recall,f1,aucpr\n";
  else if (name == "table2")
    csv << "sampling,precision,recall,f1,aucpr\n";
  else if (name == "table3")
    csv << "schedule,precision,recall,f1,aucpr\n";
  else if (name == "table4")
    csv << "clients,precision,recall,f1,aucpr\n";
  else
    csv << "fraction,precision,recall,f1,aucpr\n";

  for (const auto& row : rows) {
    if (log) log("running " + name + " point " + row.label);
    auto result = run_experiment(row.config);
    const auto& r = result.report;
    if (name == "fig4") {
      const double l2 = r.privacy ? r.privacy->avg_l2 : 0.0;
      const double cos = r.privacy ? r.privacy->avg_cos : 1.0;
      csv << row.label << ',' << detail::csv_num(r.aucpr) << ','
          << detail::csv_num(l2) << ',' << detail::csv_num(cos) << '\n';
    } else if (name == "table1") {
      const auto slash = row.label.find('/');
      csv << row.label.substr(0, slash) << ',' << row.label.substr(slash + 1) << ','
          << detail::csv_num(r.precision) << ',' << detail::csv_num(r.recall) << ','
          << detail::csv_num(r.f1) << ',' << detail::csv_num(r.aucpr) << '\n';
    } else {
      csv << row.label << ',' << detail::csv_num(r.precision) << ','
          << detail::csv_num(r.recall) << ',' << detail::csv_num(r.f1) << ','
          << detail::csv_num(r.aucpr) << '\n';
    }
    out.reports.emplace_back(row.label, r);
  }
  return out;
}

/// Appends one result row to results.csv (header written when absent).
inline void append_results_csv(const std::filesystem::path& path,
                               const ExperimentConfig& c, const MetricsReport& r) {
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream csv(path, std::ios::app);
  if (!csv) throw IoError("cannot write " + path.string());
  if (fresh)
    csv << "config_hash,seed,mode,classifier,clients,interval,rounds,noise_variance,"
           "sampling,route,fraction,secure,precision,recall,f1,aucpr,avg_l2,avg_cos,"
           "runtime_s\n";
  csv << config_hash(c) << ',' << c.seed << ','
      << (c.mode == SettingMode::Centralized ? "centralized" : "federated") << ','
      << to_string(c.classifier) << ',' << c.m_clients << ',' << c.schedule.interval
      << ',' << c.schedule.rounds << ',' << detail::csv_num(c.noise_variance) << ','
      << to_string(c.sampling) << ',' << (c.route == RouteMode::P2P ? "p2p" : "server")
      << ',' << detail::csv_num(c.data_fraction) << ',' << (c.secure ? 1 : 0) << ','
      << detail::csv_num(r.precision) << ',' << detail::csv_num(r.recall) << ','
      << detail::csv_num(r.f1) << ',' << detail::csv_num(r.aucpr) << ','
      << (r.privacy ? detail::csv_num(r.privacy->avg_l2) : "") << ','
      << (r.privacy ? detail::csv_num(r.privacy->avg_cos) : "") << ','
      << detail::csv_num(r.runtime_seconds) << '\n';
}

}  // namespace hyfl
