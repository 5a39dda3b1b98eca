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

#include <set>

#include "hyfl/federation.hpp"

using namespace hyfl;

namespace {

GenConfig tiny_data() {
  GenConfig c;
  c.n_train = 400;
  c.positive_rate = 0.05;
  c.n_accounts = 60;
  c.seed = 21;
  return c;
}

FederationSettings tiny_settings() {
  FederationSettings s;
  s.m_clients = 3;
  s.schedule = {2, 2};
  s.ae_spec.learning_rate = 0.02;
  s.ae_spec.batch_size = 16;
  s.ae_spec.seed = derive_seed(77, "ae_base");
  s.seed = 77;
  return s;
}

TrainPhaseConfig tiny_train() {
  TrainPhaseConfig t;
  t.classifier = ClassifierKind::LogReg;
  t.clf_spec.epochs = 10;
  t.clf_spec.learning_rate = 0.1;
  t.clf_spec.seed = derive_seed(77, "clf");
  return t;
}

}  // namespace

TEST_CASE("aggregate: mean-of-one, symmetry, worked example", "[federation]") {
  REQUIRE(aggregate({{1.5, -2.0}}) == std::vector<double>{1.5, -2.0});
  REQUIRE(aggregate({{2.0, -4.0}, {-2.0, 4.0}}) == std::vector<double>{0.0, 0.0});
  REQUIRE(aggregate({{1, 2, 3}, {3, 2, 1}}) == std::vector<double>{2, 2, 2});
  REQUIRE_THROWS_AS(aggregate({}), ValidationError);
  REQUIRE_THROWS_AS(aggregate({{1.0}, {1.0, 2.0}}), ValidationError);
}

TEST_CASE("aggregate: permutation invariant bit-for-bit", "[federation]") {
  Rng rng(5);
  std::vector<std::vector<double>> updates(7, std::vector<double>(23));
  for (auto& u : updates)
    for (double& v : u) v = rng.normal() * std::exp(rng.normal());
  auto base = aggregate(updates);
  for (int shuffle = 0; shuffle < 5; ++shuffle) {
    rng.shuffle(updates);
    REQUIRE(aggregate(updates) == base);
  }
}

TEST_CASE("feature learning: single client equals local training bit-for-bit",
          "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();
  settings.m_clients = 1;
  settings.secure = false;  // plaintext aggregation: mean of one is exact

  InProcessBus bus(settings.seed);
  auto global = run_feature_learning(bus, ds, settings);

  auto shards = shard_accounts(ds, 1, derive_seed(settings.seed, "shard"));
  const auto init = make_autoencoder(kAccountFeatureDim, settings.ae_hidden,
                                     settings.latent_dim,
                                     derive_seed(settings.seed, "ae_init"));
  TrainSpec spec = settings.ae_spec;
  spec.epochs = settings.schedule.total_epochs();
  spec.seed = ae_client_seed(settings.ae_spec.seed, 1);
  auto local = ae_train_local(encode_shard(shards[0]), init, spec);
  REQUIRE(global.flatten() == local.model.flatten());
}

TEST_CASE("feature learning: identical shards make aggregation a fixed point",
          "[federation]") {
  // Three clients with byte-identical shards and full-batch training: all
  // updates coincide, so the aggregated model equals any single update.
  GenConfig cfg = tiny_data();
  cfg.n_accounts = 30;
  auto ds = generate(cfg);
  // Duplicate one shard's flags across all accounts so shards are identical
  // after sorting by id: give every account the same flag value.
  for (auto& [id, rec] : ds.accounts) rec.flag = 4;

  auto settings = tiny_settings();
  settings.m_clients = 3;
  settings.secure = false;
  settings.ae_spec.batch_size = 1 << 20;  // full batch
  settings.with_tx_client = false;
  InProcessBus bus(settings.seed);

  ServerNode server(bus, settings);
  std::vector<std::unique_ptr<AccountClientNode>> clients;
  auto shards = shard_accounts(ds, 3, derive_seed(settings.seed, "shard"));
  for (auto& shard : shards)
    clients.push_back(std::make_unique<AccountClientNode>(bus, settings, shard.client_id,
                                                          std::move(shard)));
  for (auto& c : clients) c->start();
  bus.run_until_idle();
  const auto init = make_autoencoder(kAccountFeatureDim, settings.ae_hidden,
                                     settings.latent_dim,
                                     derive_seed(settings.seed, "ae_init"));
  server.start_feature_learning(init.flatten());
  bus.run_until_idle();
  REQUIRE(server.feature_learning_done());

  auto global = server.global_params();
  auto single = clients[0]->current_model().flatten();
  REQUIRE(global.size() == single.size());
  for (std::size_t i = 0; i < global.size(); ++i)
    REQUIRE_THAT(global[i], Catch::Matchers::WithinAbs(single[i], 1e-9));
}

TEST_CASE("feature learning: the I/R split matters on heterogeneous shards",
          "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();
  settings.secure = false;

  settings.schedule = {1, 4};
  InProcessBus bus1(settings.seed);
  auto frequent = run_feature_learning(bus1, ds, settings);

  settings.schedule = {4, 1};
  InProcessBus bus2(settings.seed);
  auto oneshot = run_feature_learning(bus2, ds, settings);

  const auto a = frequent.flatten();
  const auto b = oneshot.flatten();
  double dist = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dist += (a[i] - b[i]) * (a[i] - b[i]);
  REQUIRE(std::sqrt(dist) > 0.0);
}

TEST_CASE("secure aggregation path tracks the plaintext path", "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();

  settings.secure = false;
  InProcessBus bus1(settings.seed);
  auto plain = run_feature_learning(bus1, ds, settings);

  settings.secure = true;
  InProcessBus bus2(settings.seed);
  auto masked = run_feature_learning(bus2, ds, settings);

  const auto a = plain.flatten();
  const auto b = masked.flatten();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE_THAT(b[i], Catch::Matchers::WithinAbs(a[i], 1e-4));  // quantization only
}

TEST_CASE("weighted mean option reweights by shard size", "[federation]") {
  // Two clients, shard sizes 2 and 1. Weighted mean of constant updates
  // lands at (2a + b) / 3 rather than (a + b) / 2. Autoencoder training with
  // zero epochs keeps each client's params equal to the broadcast init, so
  // this exercises only the aggregation arithmetic... interval must be >= 1,
  // so instead compare weighted against unweighted on real updates.
  auto cfg = tiny_data();
  cfg.n_accounts = 9;
  auto ds = generate(cfg);
  auto settings = tiny_settings();
  settings.m_clients = 2;
  settings.schedule = {1, 1};
  settings.secure = false;

  InProcessBus bus1(settings.seed);
  auto unweighted = run_feature_learning(bus1, ds, settings);

  settings.weighted_mean = true;
  InProcessBus bus2(settings.seed);
  auto weighted = run_feature_learning(bus2, ds, settings);

  // 9 accounts over 2 clients: shard sizes 5 and 4, so the two means differ.
  REQUIRE(unweighted.flatten() != weighted.flatten());

  // And the masked weighted path agrees with the plaintext weighted path.
  settings.secure = true;
  InProcessBus bus3(settings.seed);
  auto masked_weighted = run_feature_learning(bus3, ds, settings);
  const auto a = weighted.flatten();
  const auto b = masked_weighted.flatten();
  for (std::size_t i = 0; i < a.size(); ++i)
    REQUIRE_THAT(b[i], Catch::Matchers::WithinAbs(a[i], 1e-4));
}

TEST_CASE("full run: join layout, dedup and pass-through", "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();
  InProcessBus bus(settings.seed);
  FederatedRun run(bus, ds, ds.train_idx, settings);
  run.setup();
  run.run_feature_learning();
  auto joined = run.run_training_phase(tiny_train());

  REQUIRE(joined.rows.cols() == 2 * settings.latent_dim + kTxFeatureCount);
  REQUIRE(joined.row_errors.empty());
  REQUIRE(joined.tx_ids.size() == ds.train_idx.size());

  // Transaction feature block passes through bit-exactly.
  for (std::size_t r = 0; r < joined.tx_ids.size(); ++r) {
    const auto& tx = ds.transactions[joined.tx_ids[r]];
    for (std::size_t c = 0; c < kTxFeatureCount; ++c)
      REQUIRE(joined.rows(r, 2 * settings.latent_dim + c) == tx.features[c]);
  }

  // Every embedding query lists each account exactly once.
  std::size_t queries = 0;
  for (const auto& e : bus.transcript().snapshot()) {
    if (e.frame.type != MsgType::EmbeddingQuery) continue;
    ++queries;
    const auto msg = std::get<EmbeddingQueryMsg>(from_frame(e.frame));
    std::set<std::uint64_t> seen(msg.account_ids.begin(), msg.account_ids.end());
    REQUIRE(seen.size() == msg.account_ids.size());
  }
  REQUIRE(queries > 0);
}

TEST_CASE("full run: inference matches training-side scores and is pure",
          "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();
  settings.secure = true;
  InProcessBus bus(settings.seed);
  FederatedRun run(bus, ds, ds.train_idx, settings);
  run.setup();
  run.run_feature_learning();
  auto joined = run.run_training_phase(tiny_train());

  // Scoring a training row end to end equals scoring its joined row.
  const std::uint64_t probe = joined.tx_ids[5];
  auto expected_all = run.tx_client().score_joined(joined.rows);

  auto reply = run.predict(std::vector<std::uint64_t>{probe});
  REQUIRE(reply.row_errors.empty());
  REQUIRE_THAT(reply.scores.at(probe),
               Catch::Matchers::WithinAbs(expected_all[5], 1e-12));

  auto reply2 = run.predict(std::vector<std::uint64_t>{probe});
  REQUIRE(reply2.scores.at(probe) == reply.scores.at(probe));
}

TEST_CASE("full run: losing an account client surfaces per-row errors",
          "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();
  InProcessBus bus(settings.seed);
  FederatedRun run(bus, ds, ds.train_idx, settings);
  run.setup();
  run.run_feature_learning();
  run.run_training_phase(tiny_train());

  run.kill_account_client(1);

  std::vector<std::uint64_t> test_ids;
  for (std::size_t i : ds.test_idx) test_ids.push_back(ds.transactions[i].tx_id);
  auto reply = run.predict(test_ids);
  REQUIRE(!reply.row_errors.empty());  // rows touching the dead client's shard
  REQUIRE(!reply.scores.empty());      // other rows still scored
  for (const auto& [id, err] : reply.row_errors)
    REQUIRE(err.find("unknown account") != std::string::npos);
}

TEST_CASE("role isolation holds in both routing modes", "[federation]") {
  auto ds = generate(tiny_data());
  for (auto route : {RouteMode::ServerRouted, RouteMode::P2P}) {
    auto settings = tiny_settings();
    settings.route = route;
    settings.secure = true;
    InProcessBus bus(settings.seed);
    FederatedRun run(bus, ds, ds.train_idx, settings);
    run.setup();
    run.run_feature_learning();
    run.run_training_phase(tiny_train());
    std::vector<std::uint64_t> test_ids;
    for (std::size_t i : ds.test_idx) test_ids.push_back(ds.transactions[i].tx_id);
    run.predict(test_ids);

    auto report = scan_role_isolation(bus.transcript().snapshot());
    for (const auto& v : report.violations) INFO(v);
    REQUIRE(report.clean());
  }
}

TEST_CASE("p2p: no embedding traffic through the server, same classifier",
          "[federation]") {
  auto ds = generate(tiny_data());
  nlohmann::json models[2];
  int slot = 0;
  for (auto route : {RouteMode::ServerRouted, RouteMode::P2P}) {
    auto settings = tiny_settings();
    settings.route = route;
    InProcessBus bus(settings.seed);
    FederatedRun run(bus, ds, ds.train_idx, settings);
    run.setup();
    run.run_feature_learning();
    run.run_training_phase(tiny_train());
    models[slot++] = classifier_to_json(run.tx_client().model());

    if (route == RouteMode::P2P) {
      for (const auto& e : bus.transcript().snapshot()) {
        const bool embedding_frame = e.frame.type == MsgType::EmbeddingQuery ||
                                     e.frame.type == MsgType::EmbeddingReply;
        if (embedding_frame) REQUIRE(e.receiver != kServerId);
      }
    } else {
      // Every reply reaching tx pairs with an earlier query nonce from tx.
      std::set<std::uint64_t> outstanding;
      for (const auto& e : bus.transcript().snapshot()) {
        if (e.frame.type == MsgType::EmbeddingQuery && e.sender == kTxId)
          outstanding.insert(std::get<EmbeddingQueryMsg>(from_frame(e.frame)).nonce);
        if (e.frame.type == MsgType::EmbeddingReply && e.receiver == kTxId)
          REQUIRE(outstanding.count(
                      std::get<EmbeddingReplyMsg>(from_frame(e.frame)).nonce) == 1);
      }
    }
  }
  REQUIRE(models[0] == models[1]);
}

TEST_CASE("transcripts are reproducible under the seed", "[federation]") {
  auto ds = generate(tiny_data());
  auto run_once = [&]() {
    auto settings = tiny_settings();
    InProcessBus bus(settings.seed);
    FederatedRun run(bus, ds, ds.train_idx, settings);
    run.setup();
    run.run_feature_learning();
    run.run_training_phase(tiny_train());
    std::string out;
    for (const auto& e : bus.transcript().snapshot()) {
      out += std::to_string(e.ts) + e.sender + e.receiver;
      out += static_cast<char>(e.frame.type);
      out += e.frame.payload;
    }
    return out;
  };
  REQUIRE(run_once() == run_once());
}

TEST_CASE("normalization stats are independent of test rows", "[federation]") {
  auto ds = generate(tiny_data());
  auto settings = tiny_settings();

  InProcessBus bus1(settings.seed);
  FederatedRun run1(bus1, ds, ds.train_idx, settings);
  run1.setup();
  run1.run_feature_learning();
  run1.run_training_phase(tiny_train());
  auto stats1 = run1.tx_client().normalization();

  // Perturb every test-row feature; train statistics must not move.
  auto perturbed = ds;
  for (std::size_t i : perturbed.test_idx)
    for (auto& f : perturbed.transactions[i].features) f += 1000.0;
  InProcessBus bus2(settings.seed);
  FederatedRun run2(bus2, perturbed, perturbed.train_idx, settings);
  run2.setup();
  run2.run_feature_learning();
  run2.run_training_phase(tiny_train());
  auto stats2 = run2.tx_client().normalization();

  REQUIRE(stats1.mean == stats2.mean);
  REQUIRE(stats1.stddev == stats2.stddev);
}
