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
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "hyfl/attack_scenarios.hpp"
#include "hyfl/experiment.hpp"

namespace fs = std::filesystem;
using namespace hyfl;

namespace {

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_gen_data(const GenConfig& config, const fs::path& out_dir) {
  const Dataset ds = generate(config);
  export_csv(ds, out_dir);
  std::size_t positives = 0;
  for (const auto& tx : ds.transactions) positives += static_cast<std::size_t>(tx.label);
  std::cout << "wrote " << (out_dir / "transactions.csv") << " ("
            << ds.transactions.size() << " rows, " << positives << " positive) and "
            << (out_dir / "accounts.csv") << " (" << ds.accounts.size() << " accounts)\n";
  return 0;
}

int cmd_run(const ExperimentConfig& config, const fs::path& out_dir, bool use_tcp,
            bool dump_transcript) {
  fs::create_directories(out_dir);
  const fs::path transcript_path = out_dir / "transcript.jsonl";
  std::unique_ptr<TcpTransport> tcp;
  if (use_tcp) tcp = std::make_unique<TcpTransport>();

  const auto result =
      run_experiment(config, tcp.get(), dump_transcript ? &transcript_path : nullptr);
  if (tcp) tcp->shutdown();

  write_json(out_dir / "metrics.json", report_to_json(result.report));
  write_json(out_dir / "model.json", result.model_json);
  append_results_csv(out_dir / "results.csv", config, result.report);

  const auto& r = result.report;
  std::cout << "aucpr=" << r.aucpr << " precision=" << r.precision
            << " recall=" << r.recall << " f1=" << r.f1;
  if (r.privacy)
    std::cout << " avg_l2=" << r.privacy->avg_l2 << " avg_cos=" << r.privacy->avg_cos;
  std::cout << " runtime_s=" << r.runtime_seconds << '\n';
  std::cout << "results in " << out_dir << '\n';
  return 0;
}

int cmd_preset(const std::string& name, std::uint64_t seed, std::size_t n_train,
               const fs::path& out_dir) {
  if (name == "attacks") {
    fs::create_directories(out_dir);
    const auto reports = run_attacks_bundle(seed);
    write_attacks_csv(reports, out_dir / "attacks.csv");
    nlohmann::json bundle = nlohmann::json::array();
    for (const auto& r : reports) bundle.push_back(attack_report_to_json(r));
    write_json(out_dir / "attacks.json", bundle);
    std::cout << "wrote " << (out_dir / "attacks.csv") << '\n';
    return 0;
  }
  const auto outcome = run_preset(name, seed, n_train, out_dir,
                                  [](const std::string& line) {
                                    std::cout << line << '\n';
                                  });
  for (const auto& [label, report] : outcome.reports)
    std::cout << name << "[" << label << "] aucpr=" << report.aucpr << '\n';
  std::cout << "wrote " << outcome.csv_path << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid federated learning sandbox for financial-crime detection"};
  app.require_subcommand(1);

  // ---- gen-data ----
  GenConfig gen;
  std::string gen_out = "data";
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic dataset as CSV");
  gen_cmd->add_option("--n-train", gen.n_train, "training rows");
  gen_cmd->add_option("--positive-rate", gen.positive_rate, "crime prevalence");
  gen_cmd->add_option("--accounts", gen.n_accounts, "number of accounts");
  gen_cmd->add_option("--correlation", gen.flag_crime_correlation,
                      "flag/crime co-occurrence strength");
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen_out, "output directory");

  // ---- run ----
  std::string run_config_path;
  std::string run_out = "out";
  bool run_tcp = false, run_dump = false, run_centralized = false, run_secure = false;
  std::uint64_t run_seed = 0;
  double run_noise = 0.0, run_fraction = 0.0;
  std::size_t run_clients = 0, run_interval = 0, run_rounds = 0, run_ntrain = 0;
  std::string run_classifier, run_sampling, run_route;
  auto* run_cmd = app.add_subcommand("run", "run one experiment");
  run_cmd->add_option("--config", run_config_path, "experiment config JSON");
  auto* o_seed = run_cmd->add_option("--seed", run_seed, "experiment seed");
  auto* o_noise = run_cmd->add_option("--noise-var", run_noise, "training noise variance");
  auto* o_clients = run_cmd->add_option("--clients", run_clients, "account clients");
  auto* o_interval = run_cmd->add_option("--interval", run_interval, "epochs per round (I)");
  auto* o_rounds = run_cmd->add_option("--rounds", run_rounds, "aggregation rounds (R)");
  auto* o_classifier =
      run_cmd->add_option("--classifier", run_classifier, "gbdt|logreg|svm|mlp");
  auto* o_sampling =
      run_cmd->add_option("--sampling", run_sampling, "none|under|over|smote|reweight");
  auto* o_route = run_cmd->add_option("--route", run_route, "server|p2p");
  auto* o_fraction = run_cmd->add_option("--fraction", run_fraction, "training data fraction");
  auto* o_ntrain = run_cmd->add_option("--n-train", run_ntrain, "training rows");
  auto* o_central = run_cmd->add_flag("--centralized", run_centralized,
                                      "single-node baseline instead of federation");
  auto* o_secure = run_cmd->add_flag("--secure", run_secure,
                                     "masked aggregation + sealed embeddings");
  run_cmd->add_flag("--tcp", run_tcp, "run the protocol over loopback TCP");
  run_cmd->add_flag("--dump-transcript", run_dump, "write transcript.jsonl");
  run_cmd->add_option("--out", run_out, "output directory");

  // ---- preset ----
  std::string preset_name;
  std::string preset_out = "out";
  std::uint64_t preset_seed = 1;
  std::size_t preset_ntrain = 100000;
  auto* preset_cmd = app.add_subcommand("preset", "run a named experiment grid");
  preset_cmd->add_option("name", preset_name, "preset name")
      ->required()
      ->check(CLI::IsMember(preset_names()));
  preset_cmd->add_option("--seed", preset_seed, "base seed");
  preset_cmd->add_option("--n-train", preset_ntrain, "training rows per run");
  preset_cmd->add_option("--out", preset_out, "output directory");

  // ---- attack ----
  auto* attack_cmd = app.add_subcommand("attack", "run a red-team scenario");
  attack_cmd->require_subcommand(1);
  std::uint64_t atk_seed = 1;
  double atk_noise = 0.0;
  std::size_t atk_steps = 2000;
  std::string atk_out = "out";
  struct Sub {
    CLI::App* cmd;
    std::string name;
  };
  std::vector<Sub> subs;
  for (const char* name : {"inversion", "membership", "attribute", "leakage"}) {
    auto* sub = attack_cmd->add_subcommand(name);
    sub->add_option("--seed", atk_seed, "scenario seed");
    if (std::string(name) == "inversion" || std::string(name) == "membership")
      sub->add_option("--noise-var", atk_noise, "defense noise variance");
    if (std::string(name) == "inversion")
      sub->add_option("--steps", atk_steps, "optimizer steps");
    sub->add_option("--out", atk_out, "output directory");
    subs.push_back({sub, name});
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, gen_out);

    if (run_cmd->parsed()) {
      ExperimentConfig config;
      if (!run_config_path.empty()) {
        std::ifstream in(run_config_path);
        if (!in) throw IoError("cannot read " + run_config_path);
        config = config_from_json(nlohmann::json::parse(in));
      }
      // Flags override config fields.
      if (o_seed->count()) {
        config.seed = run_seed;
        config.data.seed = derive_seed(run_seed, "data");
      }
      if (o_noise->count()) config.noise_variance = run_noise;
      if (o_clients->count()) config.m_clients = run_clients;
      if (o_interval->count()) config.schedule.interval = run_interval;
      if (o_rounds->count()) config.schedule.rounds = run_rounds;
      if (o_classifier->count()) config.classifier = classifier_kind_from(run_classifier);
      if (o_sampling->count()) config.sampling = sampling_from(run_sampling);
      if (o_route->count())
        config.route = run_route == "p2p" ? RouteMode::P2P : RouteMode::ServerRouted;
      if (o_fraction->count()) config.data_fraction = run_fraction;
      if (o_ntrain->count()) config.data.n_train = run_ntrain;
      if (o_central->count()) config.mode = SettingMode::Centralized;
      if (o_secure->count()) config.secure = run_secure;
      return cmd_run(config, run_out, run_tcp, run_dump);
    }

    if (preset_cmd->parsed())
      return cmd_preset(preset_name, preset_seed, preset_ntrain, preset_out);

    if (attack_cmd->parsed()) {
      AttackReport report;
      for (const auto& [cmd, name] : subs) {
        if (!cmd->parsed()) continue;
        if (name == "inversion")
          report = run_inversion_scenario(atk_seed, atk_noise, atk_steps);
        else if (name == "membership")
          report = run_membership_scenario(atk_seed, atk_noise);
        else if (name == "attribute")
          report = run_attribute_scenario(atk_seed);
        else
          report = run_leakage_scenario(atk_seed);
      }
      fs::create_directories(atk_out);
      const fs::path path = fs::path(atk_out) / (report.kind + ".json");
      write_json(path, attack_report_to_json(report));
      std::cout << attack_report_to_json(report).dump(2) << '\n';
      std::cout << "wrote " << path << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
