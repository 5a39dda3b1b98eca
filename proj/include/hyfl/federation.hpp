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

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hyfl/autoencoder.hpp"
#include "hyfl/classifier.hpp"
#include "hyfl/data.hpp"
#include "hyfl/messages.hpp"
#include "hyfl/privacy.hpp"
#include "hyfl/transport.hpp"

namespace hyfl {

/// I local epochs per communication round, R rounds; I*R total local epochs.
struct RoundSchedule {
  std::size_t interval = 50;  // I
  std::size_t rounds = 1;     // R

  std::size_t total_epochs() const { return interval * rounds; }
  void validate() const {
    if (interval < 1 || rounds < 1)
      throw ValidationError("schedule needs interval >= 1 and rounds >= 1");
  }
};

inline std::string ac_node_id(int client_id) { return "ac" + std::to_string(client_id); }
inline constexpr const char* kServerId = "server";
inline constexpr const char* kTxId = "tx";
inline constexpr const char* kHarnessId = "harness";

// Seed derivations shared by the federated and centralized pipelines, so a
// single-client federation replays the centralized computation exactly.
inline std::uint64_t ae_client_seed(std::uint64_t seed, int client_id) {
  return derive_seed(seed, "ae", static_cast<std::uint64_t>(client_id));
}
inline std::uint64_t node_key_seed(std::uint64_t seed, const std::string& node_id) {
  return derive_seed(seed, "key", node_id);
}

struct FederationSettings {
  std::size_t m_clients = 10;
  RoundSchedule schedule{5, 10};
  std::size_t ae_hidden = 8;
  std::size_t latent_dim = 4;
  TrainSpec ae_spec;            // epochs ignored (schedule governs); seed is the base
  bool secure = true;           // masked aggregation + sealed embeddings
  bool weighted_mean = false;   // shard-size weighted aggregation
  RouteMode route = RouteMode::ServerRouted;
  bool with_tx_client = true;
  std::uint64_t seed = 1;
  std::chrono::milliseconds timeout{120000};

  void validate() const {
    if (m_clients < 1) throw ValidationError("need at least one account client");
    schedule.validate();
    ae_spec.validate();
  }
};

namespace detail {

inline std::string u64s_to_base64(std::span<const std::uint64_t> words) {
  std::vector<std::uint8_t> bytes(words.size() * 8);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::uint64_t w = words[i];
    for (int b = 0; b < 8; ++b)
      bytes[i * 8 + static_cast<std::size_t>(b)] =
          static_cast<std::uint8_t>(w >> (8 * b));  // little-endian
  }
  return to_base64(bytes);
}

inline std::vector<std::uint64_t> base64_to_u64s(const std::string& text) {
  const auto bytes = from_base64(text);
  if (bytes.size() % 8 != 0) throw ProtocolError("masked vector not 8-byte aligned");
  std::vector<std::uint64_t> words(bytes.size() / 8);
  for (std::size_t i = 0; i < words.size(); ++i) {
    std::uint64_t w = 0;
    for (int b = 7; b >= 0; --b)
      w = (w << 8) | bytes[i * 8 + static_cast<std::size_t>(b)];
    words[i] = w;
  }
  return words;
}

}  // namespace detail

/// Elementwise arithmetic mean of parameter vectors. Per-coordinate values
/// are summed in sorted order, so any permutation of the updates produces a
/// bit-identical result.
inline std::vector<double> aggregate(const std::vector<std::vector<double>>& updates) {
  if (updates.empty()) throw ValidationError("aggregate needs at least one update");
  const std::size_t dim = updates.front().size();
  for (const auto& u : updates)
    if (u.size() != dim) throw ValidationError("update length mismatch");
  std::vector<double> mean(dim, 0.0);
  std::vector<double> column(updates.size());
  for (std::size_t c = 0; c < dim; ++c) {
    for (std::size_t u = 0; u < updates.size(); ++u) column[u] = updates[u][c];
    std::sort(column.begin(), column.end());
    double sum = 0.0;
    for (double v : column) sum += v;
    mean[c] = sum / static_cast<double>(updates.size());
  }
  return mean;
}

// ---------------------------------------------------------------------------
// Server node

class ServerNode {
 public:
  ServerNode(Transport& transport, FederationSettings settings)
      : transport_(transport), settings_(std::move(settings)) {
    keys_.self = make_keypair(node_key_seed(settings_.seed, kServerId));
    transport_.register_node(kServerId,
                             [this](const std::string& from, const Frame& f) {
                               on_frame(from, f);
                             });
  }

  bool directory_sent() const {
    std::lock_guard lock(mu_);
    return directory_sent_;
  }

  bool feature_learning_done() const {
    std::lock_guard lock(mu_);
    return learning_done_;
  }

  std::vector<double> global_params() const {
    std::lock_guard lock(mu_);
    return global_params_;
  }

  /// Broadcasts the initial model and opens round 0.
  void start_feature_learning(std::vector<double> init_params) {
    std::lock_guard lock(mu_);
    if (!directory_sent_) throw ProtocolError("key exchange is not finished");
    global_params_ = std::move(init_params);
    round_ = 0;
    learning_done_ = false;
    broadcast_model(false);
  }

  /// Deregisters a client and re-broadcasts the directory; used for
  /// fault-injection between phases.
  void drop_client(const std::string& node_id) {
    std::lock_guard lock(mu_);
    account_nodes_.erase(node_id);
    pubs_.erase(node_id);
    send_directory();
  }

 private:
  void on_frame(const std::string& from, const Frame& frame) {
    const auto msg = from_frame(frame);
    std::lock_guard lock(mu_);
    if (const auto* reg = std::get_if<RegisterMsg>(&msg)) {
      if (reg->role == "account")
        account_nodes_.insert(reg->node_id);
      else if (reg->role == "transaction")
        tx_node_ = reg->node_id;
      maybe_send_directory();
    } else if (const auto* kx = std::get_if<KeyExchangeMsg>(&msg)) {
      if (!kx->is_directory) {
        pubs_[kx->node_id] = kx->pub;
        maybe_send_directory();
      }
    } else if (const auto* update = std::get_if<ModelUpdateMsg>(&msg)) {
      handle_update(*update);
    } else if (std::get_if<EmbeddingQueryMsg>(&msg)) {
      // Routed mode: fan the query out to every account client.
      for (const auto& ac : account_nodes_) transport_.send(kServerId, ac, frame);
    } else if (std::get_if<EmbeddingReplyMsg>(&msg)) {
      transport_.send(kServerId, tx_node_, frame);
    } else {
      transport_.send(kServerId, from,
                      to_frame(ErrorMsg{"unexpected frame at server: " +
                                        std::string(msg_type_name(frame.type))}));
    }
  }

  void maybe_send_directory() {
    if (directory_sent_) return;
    const bool clients_ready =
        account_nodes_.size() == settings_.m_clients &&
        (!settings_.with_tx_client || !tx_node_.empty());
    std::size_t expected_pubs = account_nodes_.size() + (tx_node_.empty() ? 0 : 1);
    if (!clients_ready || pubs_.size() != expected_pubs) return;
    directory_sent_ = true;
    send_directory();
  }

  void send_directory() {
    KeyExchangeMsg dir;
    dir.is_directory = true;
    dir.directory = pubs_;
    dir.directory[kServerId] = to_base64(keys_.self.pk);
    for (const auto& ac : account_nodes_) dir.clients.push_back(ac);
    if (!tx_node_.empty()) dir.clients.push_back(tx_node_);
    const Frame f = to_frame(dir);
    for (const auto& ac : account_nodes_) transport_.send(kServerId, ac, f);
    if (!tx_node_.empty()) transport_.send(kServerId, tx_node_, f);
  }

  void handle_update(const ModelUpdateMsg& update) {
    if (learning_done_) throw ProtocolError("update after feature learning finished");
    if (update.round != round_)
      throw ProtocolError("update for round " + std::to_string(update.round) +
                          " during round " + std::to_string(round_));
    if (!pending_.empty() && update.masked != pending_.front().masked)
      throw ProtocolError("mixed masked and plaintext updates");
    pending_.push_back(update);
    if (pending_.size() < account_nodes_.size()) return;

    // Full round: aggregate and broadcast.
    std::sort(pending_.begin(), pending_.end(),
              [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    const double denom =
        settings_.weighted_mean
            ? [&] {
                double total = 0.0;
                for (const auto& u : pending_) total += static_cast<double>(u.n_rows);
                return total;
              }()
            : static_cast<double>(pending_.size());
    if (pending_.front().masked) {
      std::vector<MaskedUpdate> masked;
      for (const auto& u : pending_) {
        MaskedUpdate m;
        m.client_id = u.client_id;
        m.round = u.round;
        m.values = detail::base64_to_u64s(u.masked_params);
        masked.push_back(std::move(m));
      }
      auto sum = unmask_sum(masked);
      for (double& v : sum) v /= denom;
      global_params_ = std::move(sum);
    } else {
      // Weighted updates arrive pre-multiplied by shard size; aggregate()
      // divides by M, so rescale to the weighted denominator.
      std::vector<std::vector<double>> updates;
      for (auto& u : pending_) updates.push_back(std::move(u.params));
      global_params_ = aggregate(updates);
      if (settings_.weighted_mean) {
        const double m = static_cast<double>(updates.size());
        for (double& v : global_params_) v = v * m / denom;
      }
    }
    pending_.clear();
    ++round_;
    const bool last = round_ >= settings_.schedule.rounds;
    broadcast_model(last);
    if (last) learning_done_ = true;
  }

  void broadcast_model(bool final_round) {
    GlobalModelMsg msg;
    msg.round = round_;
    msg.params = global_params_;
    msg.final_round = final_round;
    const Frame f = to_frame(msg);
    for (const auto& ac : account_nodes_) transport_.send(kServerId, ac, f);
  }

  Transport& transport_;
  FederationSettings settings_;
  KeyMaterial keys_;
  mutable std::mutex mu_;
  std::set<std::string> account_nodes_;
  std::string tx_node_;
  std::map<std::string, std::string> pubs_;
  bool directory_sent_ = false;
  std::uint64_t round_ = 0;
  std::vector<ModelUpdateMsg> pending_;
  std::vector<double> global_params_;
  bool learning_done_ = false;
};

// ---------------------------------------------------------------------------
// Account client node

class AccountClientNode {
 public:
  AccountClientNode(Transport& transport, FederationSettings settings, int client_id,
                    AccountShard shard)
      : transport_(transport),
        settings_(std::move(settings)),
        client_id_(client_id),
        node_id_(ac_node_id(client_id)),
        shard_(std::move(shard)),
        features_(encode_shard(shard_)),
        model_(make_autoencoder(kAccountFeatureDim, settings_.ae_hidden,
                                settings_.latent_dim, 0)) {
    keys_.self = make_keypair(node_key_seed(settings_.seed, node_id_));
    for (const auto& rec : shard_.records) flag_by_id_[rec.account_id] = rec.flag;
    transport_.register_node(node_id_,
                             [this](const std::string& from, const Frame& f) {
                               on_frame(from, f);
                             });
  }

  void start() {
    transport_.send(node_id_, kServerId, to_frame(RegisterMsg{node_id_, "account"}));
    KeyExchangeMsg kx;
    kx.node_id = node_id_;
    kx.pub = to_base64(keys_.self.pk);
    transport_.send(node_id_, kServerId, to_frame(kx));
  }

  bool ready() const {
    std::lock_guard lock(mu_);
    return ready_;
  }

  bool has_directory() const {
    std::lock_guard lock(mu_);
    return have_directory_;
  }

  const std::string& node_id() const { return node_id_; }
  int client_id() const { return client_id_; }
  std::size_t shard_size() const { return shard_.records.size(); }

  /// The installed global model; raw parameters never leave the node except
  /// through the masked/plain ModelUpdate path.
  Autoencoder current_model() const {
    std::lock_guard lock(mu_);
    return model_;
  }

 private:
  void on_frame(const std::string& from, const Frame& frame) {
    const auto msg = from_frame(frame);
    std::lock_guard lock(mu_);
    if (const auto* kx = std::get_if<KeyExchangeMsg>(&msg)) {
      if (kx->is_directory) install_directory(*kx);
    } else if (const auto* gm = std::get_if<GlobalModelMsg>(&msg)) {
      handle_global_model(*gm);
    } else if (const auto* q = std::get_if<EmbeddingQueryMsg>(&msg)) {
      handle_query(from, *q);
    } else {
      transport_.send(node_id_, from,
                      to_frame(ErrorMsg{"unexpected frame at account client"}));
    }
  }

  void install_directory(const KeyExchangeMsg& dir) {
    have_directory_ = true;
    keys_.session_keys.clear();
    keys_.mask_seeds.clear();
    for (const auto& [node, pub_b64] : dir.directory) {
      if (node == node_id_ || node == kServerId) continue;
      const auto pub_bytes = from_base64(pub_b64);
      PublicKey pub{};
      if (pub_bytes.size() != pub.size()) throw CryptoError("bad public key length");
      std::copy(pub_bytes.begin(), pub_bytes.end(), pub.begin());
      if (node == kTxId) {
        keys_.session_keys[node] = derive_session_key(keys_.self.sk, keys_.self.pk, pub);
        seal_cipher_ = SessionCipher(keys_.session_keys[node],
                                     derive_seed(0, "emb", node_id_));
      } else if (node.rfind("ac", 0) == 0) {
        const int peer = std::stoi(node.substr(2));
        keys_.mask_seeds[peer] = derive_mask_seed(keys_.self.sk, keys_.self.pk, pub);
      }
    }
  }

  void handle_global_model(const GlobalModelMsg& gm) {
    model_.unflatten(gm.params);
    if (gm.final_round) {
      ready_ = true;
      return;
    }
    TrainSpec spec = settings_.ae_spec;
    spec.epochs = settings_.schedule.interval;
    spec.seed = ae_client_seed(settings_.ae_spec.seed, client_id_);
    auto result = ae_train_local(features_, model_, spec,
                                 resume_.next_epoch > 0 ? &resume_ : nullptr);
    model_ = result.model;
    resume_ = result.resume;
    resume_.has_last_loss = false;  // re-derived from the next global model

    ModelUpdateMsg update;
    update.client_id = client_id_;
    update.round = gm.round;
    update.n_rows = features_.rows();
    auto flat = model_.flatten();
    if (settings_.weighted_mean)
      for (double& v : flat) v *= static_cast<double>(features_.rows());
    if (settings_.secure) {
      update.masked = true;
      auto masked = mask_update(flat, client_id_, keys_.mask_seeds, gm.round);
      update.masked_params = detail::u64s_to_base64(masked.values);
    } else {
      update.params = std::move(flat);
    }
    transport_.send(node_id_, kServerId, to_frame(update));
  }

  void handle_query(const std::string& from, const EmbeddingQueryMsg& query) {
    if (!ready_) throw ProtocolError("embedding query before feature learning finished");
    EmbeddingReplyMsg reply;
    reply.nonce = query.nonce;
    reply.client_id = client_id_;
    std::map<std::uint64_t, std::vector<double>> found;
    for (std::uint64_t id : query.account_ids) {
      auto it = flag_by_id_.find(id);
      if (it == flag_by_id_.end()) continue;
      found[id] = ae_encode(model_, encode_flag(it->second));
    }
    if (settings_.secure) {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& [id, emb] : found) j[std::to_string(id)] = emb;
      const std::string plain = canonical_json(j);
      reply.is_sealed = true;
      reply.sealed = to_base64(seal_cipher_.seal(
          {reinterpret_cast<const std::uint8_t*>(plain.data()), plain.size()}));
    } else {
      reply.embeddings = std::move(found);
    }
    // Replies retrace the query path: via the server when it forwarded.
    transport_.send(node_id_, from, to_frame(reply));
  }

  Transport& transport_;
  FederationSettings settings_;
  int client_id_;
  std::string node_id_;
  AccountShard shard_;
  Matrix features_;
  mutable std::mutex mu_;
  Autoencoder model_;
  ResumeState resume_;
  KeyMaterial keys_;
  SessionCipher seal_cipher_;
  std::map<std::uint64_t, int> flag_by_id_;
  bool ready_ = false;
  bool have_directory_ = false;
};

// ---------------------------------------------------------------------------
// Transaction client node

struct JoinResult {
  Matrix rows;                     // [sender emb | receiver emb | tx features]
  std::vector<int> labels;
  std::vector<std::uint64_t> tx_ids;            // rows kept, in request order
  std::map<std::uint64_t, std::string> row_errors;  // excluded rows
};

class TxClientNode {
 public:
  TxClientNode(Transport& transport, FederationSettings settings,
               std::vector<TransactionRecord> transactions)
      : transport_(transport), settings_(std::move(settings)) {
    keys_.self = make_keypair(node_key_seed(settings_.seed, kTxId));
    for (auto& tx : transactions) tx_by_id_.emplace(tx.tx_id, std::move(tx));
    transport_.register_node(kTxId, [this](const std::string& from, const Frame& f) {
      on_frame(from, f);
    });
  }

  void start() {
    transport_.send(kTxId, kServerId, to_frame(RegisterMsg{kTxId, "transaction"}));
    KeyExchangeMsg kx;
    kx.node_id = kTxId;
    kx.pub = to_base64(keys_.self.pk);
    transport_.send(kTxId, kServerId, to_frame(kx));
  }

  bool has_directory() const {
    std::lock_guard lock(mu_);
    return have_directory_;
  }

  /// Sends one deduplicated embedding query for the accounts referenced by
  /// the given transactions. Returns the query nonce.
  std::uint64_t request_embeddings(std::span<const std::uint64_t> tx_ids) {
    std::lock_guard lock(mu_);
    return request_embeddings_locked(tx_ids);
  }

  bool query_complete(std::uint64_t nonce) const {
    std::lock_guard lock(mu_);
    auto it = queries_.find(nonce);
    return it != queries_.end() && it->second.replies_seen >= expected_replies_;
  }

  /// Joins embeddings with local transaction features. Rows whose accounts
  /// no client answered for are excluded and reported.
  JoinResult build_joined(std::span<const std::uint64_t> tx_ids, std::uint64_t nonce) const {
    std::lock_guard lock(mu_);
    auto it = queries_.find(nonce);
    if (it == queries_.end()) throw ProtocolError("unknown query nonce");
    return join_locked(tx_ids, it->second.embeddings);
  }

  /// Normalization + noise + classifier training on the (already
  /// rebalanced) joined matrix. Stats and model stay on this node.
  void train_classifier(const Matrix& joined, std::span<const int> labels,
                        std::span<const double> weights, double noise_variance,
                        ClassifierKind kind, const TrainSpec& spec,
                        const ClassifierOptions& options) {
    std::lock_guard lock(mu_);
    auto [normalized, stats] = normalize_standard(joined);
    stats_ = std::move(stats);
    NoiseSpec noise{noise_variance, derive_seed(settings_.seed, "train_noise")};
    const Matrix noisy = add_gaussian_noise(normalized, noise);
    train_noise_metrics_ = noise_metrics(normalized, noisy);
    model_ = classifier_train(noisy, labels, weights, kind, spec, options);
    has_model_ = true;
  }

  bool has_model() const {
    std::lock_guard lock(mu_);
    return has_model_;
  }

  const Classifier& model() const {
    std::lock_guard lock(mu_);
    if (!has_model_) throw ProtocolError("classifier not trained yet");
    return model_;
  }

  const NormStats& normalization() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

  NoiseMetrics train_noise_metrics() const {
    std::lock_guard lock(mu_);
    return train_noise_metrics_;
  }

  /// Scores already-joined rows with the stored train statistics. No noise
  /// at inference.
  std::vector<double> score_joined(const Matrix& joined) const {
    std::lock_guard lock(mu_);
    if (!has_model_) throw ProtocolError("classifier not trained yet");
    const Matrix normalized = apply_normalization(joined, stats_);
    return classifier_predict_many(model_, normalized);
  }

 private:
  struct QueryState {
    std::map<std::uint64_t, std::vector<double>> embeddings;
    std::size_t replies_seen = 0;
  };

  struct PendingPredict {
    std::string reply_to;
    PredictRequestMsg request;
  };

  void on_frame(const std::string& from, const Frame& frame) {
    const auto msg = from_frame(frame);
    std::lock_guard lock(mu_);
    if (const auto* kx = std::get_if<KeyExchangeMsg>(&msg)) {
      if (kx->is_directory) install_directory(*kx);
    } else if (const auto* reply = std::get_if<EmbeddingReplyMsg>(&msg)) {
      handle_reply(*reply);
    } else if (const auto* req = std::get_if<PredictRequestMsg>(&msg)) {
      handle_predict(from, *req);
    } else if (std::get_if<ModelUpdateMsg>(&msg) || std::get_if<GlobalModelMsg>(&msg)) {
      // This node must never hold encoder parameters.
      transport_.send(kTxId, from,
                      to_frame(ErrorMsg{"transaction client rejects model traffic"}));
    }
  }

  void install_directory(const KeyExchangeMsg& dir) {
    have_directory_ = true;
    expected_replies_ = 0;
    keys_.session_keys.clear();
    open_ciphers_.clear();
    for (const auto& [node, pub_b64] : dir.directory) {
      if (node.rfind("ac", 0) != 0) continue;
      const auto pub_bytes = from_base64(pub_b64);
      PublicKey pub{};
      if (pub_bytes.size() != pub.size()) throw CryptoError("bad public key length");
      std::copy(pub_bytes.begin(), pub_bytes.end(), pub.begin());
      keys_.session_keys[node] = derive_session_key(keys_.self.sk, keys_.self.pk, pub);
      open_ciphers_[node] = SessionCipher(keys_.session_keys[node], 0);
      ++expected_replies_;
    }
  }

  std::uint64_t request_embeddings_locked(std::span<const std::uint64_t> tx_ids) {
    if (!have_directory_) throw ProtocolError("no key directory yet");
    EmbeddingQueryMsg query;
    query.nonce = next_nonce_++;
    query.reply_to = kTxId;
    std::set<std::uint64_t> accounts;
    for (std::uint64_t id : tx_ids) {
      auto it = tx_by_id_.find(id);
      if (it == tx_by_id_.end()) continue;
      accounts.insert(it->second.sender_account);
      accounts.insert(it->second.receiver_account);
    }
    query.account_ids.assign(accounts.begin(), accounts.end());
    queries_[query.nonce] = {};
    const Frame f = to_frame(query);
    if (settings_.route == RouteMode::P2P) {
      for (const auto& [node, key] : keys_.session_keys) transport_.send(kTxId, node, f);
    } else {
      transport_.send(kTxId, kServerId, f);
    }
    return query.nonce;
  }

  void handle_reply(const EmbeddingReplyMsg& reply) {
    auto it = queries_.find(reply.nonce);
    if (it == queries_.end()) throw ProtocolError("reply for unknown nonce");
    auto& state = it->second;
    ++state.replies_seen;
    const std::string node = ac_node_id(reply.client_id);
    if (reply.is_sealed) {
      auto cipher = open_ciphers_.find(node);
      if (cipher == open_ciphers_.end()) throw CryptoError("no session with " + node);
      const auto plain = cipher->second.open(from_base64(reply.sealed));
      const auto j = nlohmann::json::parse(
          std::string(reinterpret_cast<const char*>(plain.data()), plain.size()));
      for (auto entry = j.begin(); entry != j.end(); ++entry)
        state.embeddings[std::stoull(entry.key())] =
            entry.value().get<std::vector<double>>();
    } else {
      for (const auto& [id, emb] : reply.embeddings) state.embeddings[id] = emb;
    }
    // A completed query may unblock a pending inference request.
    auto pending = pending_predicts_.find(reply.nonce);
    if (pending != pending_predicts_.end() && state.replies_seen >= expected_replies_) {
      finish_predict(pending->second, state);
      pending_predicts_.erase(pending);
    }
  }

  void handle_predict(const std::string& from, const PredictRequestMsg& req) {
    std::vector<std::uint64_t> known;
    PredictReplyMsg early;
    early.request_id = req.request_id;
    if (!has_model_) {
      for (std::uint64_t id : req.tx_ids) early.row_errors[id] = "classifier not trained";
      transport_.send(kTxId, from, to_frame(early));
      return;
    }
    for (std::uint64_t id : req.tx_ids)
      if (tx_by_id_.count(id)) known.push_back(id);
    const std::uint64_t nonce = request_embeddings_locked(known);
    pending_predicts_[nonce] = {from, req};
  }

  void finish_predict(const PendingPredict& pending, const QueryState& state) {
    PredictReplyMsg out;
    out.request_id = pending.request.request_id;
    auto joined = join_locked(pending.request.tx_ids, state.embeddings);
    if (!joined.tx_ids.empty()) {
      const Matrix normalized = apply_normalization(joined.rows, stats_);
      const auto scores = classifier_predict_many(model_, normalized);
      for (std::size_t r = 0; r < joined.tx_ids.size(); ++r)
        out.scores[joined.tx_ids[r]] = scores[r];
    }
    out.row_errors = joined.row_errors;
    transport_.send(kTxId, pending.reply_to, to_frame(out));
  }

  JoinResult join_locked(std::span<const std::uint64_t> tx_ids,
                         const std::map<std::uint64_t, std::vector<double>>& embeddings) const {
    JoinResult out;
    const std::size_t latent = settings_.latent_dim;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < tx_ids.size(); ++i) {
      auto it = tx_by_id_.find(tx_ids[i]);
      if (it == tx_by_id_.end()) {
        out.row_errors[tx_ids[i]] = "unknown transaction";
        continue;
      }
      const auto& tx = it->second;
      const bool have_sender = embeddings.count(tx.sender_account) > 0;
      const bool have_receiver = embeddings.count(tx.receiver_account) > 0;
      if (!have_sender || !have_receiver) {
        out.row_errors[tx_ids[i]] =
            "unknown account " + std::to_string(have_sender ? tx.receiver_account
                                                            : tx.sender_account);
        continue;
      }
      keep.push_back(i);
    }
    out.rows = Matrix(keep.size(), 2 * latent + kTxFeatureCount);
    for (std::size_t r = 0; r < keep.size(); ++r) {
      const auto& tx = tx_by_id_.at(tx_ids[keep[r]]);
      const auto& se = embeddings.at(tx.sender_account);
      const auto& re = embeddings.at(tx.receiver_account);
      auto row = out.rows.row(r);
      std::copy(se.begin(), se.end(), row.begin());
      std::copy(re.begin(), re.end(), row.begin() + static_cast<std::ptrdiff_t>(latent));
      std::copy(tx.features.begin(), tx.features.end(),
                row.begin() + static_cast<std::ptrdiff_t>(2 * latent));
      out.labels.push_back(tx.label);
      out.tx_ids.push_back(tx_ids[keep[r]]);
    }
    return out;
  }

  Transport& transport_;
  FederationSettings settings_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, TransactionRecord> tx_by_id_;
  KeyMaterial keys_;
  std::map<std::string, SessionCipher> open_ciphers_;
  std::map<std::uint64_t, QueryState> queries_;
  std::map<std::uint64_t, PendingPredict> pending_predicts_;
  std::size_t expected_replies_ = 0;
  std::uint64_t next_nonce_ = 1;
  Classifier model_;
  bool has_model_ = false;
  NormStats stats_;
  NoiseMetrics train_noise_metrics_;
  bool have_directory_ = false;
};

// ---------------------------------------------------------------------------
// Orchestration

struct TrainPhaseConfig {
  ClassifierKind classifier = ClassifierKind::Gbdt;
  TrainSpec clf_spec;
  ClassifierOptions clf_options;
  Sampling sampling = Sampling::None;
  double noise_variance = 0.0;
};

/// Drives the three training-stage phases and the inference loop over a
/// transport. The harness participates as an extra node that issues predict
/// requests and collects replies.
class FederatedRun {
 public:
  FederatedRun(Transport& transport, const Dataset& dataset,
               std::span<const std::size_t> train_idx, FederationSettings settings)
      : transport_(transport), settings_(settings) {
    settings_.validate();
    server_ = std::make_unique<ServerNode>(transport_, settings_);
    auto shards =
        shard_accounts(dataset, settings_.m_clients, derive_seed(settings_.seed, "shard"));
    for (auto& shard : shards)
      accounts_.push_back(std::make_unique<AccountClientNode>(
          transport_, settings_, shard.client_id, std::move(shard)));
    tx_ = std::make_unique<TxClientNode>(transport_, settings_, dataset.transactions);
    transport_.register_node(kHarnessId,
                             [this](const std::string& from, const Frame& f) {
                               on_harness_frame(from, f);
                             });
    for (std::size_t i : train_idx)
      train_tx_ids_.push_back(dataset.transactions[i].tx_id);
  }

  ~FederatedRun() {
    // Deregister before the nodes are destroyed; on TCP this joins the
    // reader threads that could still dispatch into them.
    for (const char* id : {kHarnessId, kTxId}) {
      try {
        transport_.remove_node(id);
      } catch (...) {
      }
    }
    for (const auto& ac : accounts_) {
      try {
        transport_.remove_node(ac->node_id());
      } catch (...) {
      }
    }
    try {
      transport_.remove_node(kServerId);
    } catch (...) {
    }
  }

  /// Registration and key exchange.
  void setup() {
    for (auto& ac : accounts_) ac->start();
    tx_->start();
    expect([&] {
      if (!tx_->has_directory()) return false;
      for (const auto& ac : accounts_)
        if (!ac->has_directory()) return false;
      return true;
    }, "key exchange");
  }

  /// Phase 1: R rounds of local training and aggregation.
  void run_feature_learning() {
    const auto init = make_autoencoder(kAccountFeatureDim, settings_.ae_hidden,
                                       settings_.latent_dim,
                                       derive_seed(settings_.seed, "ae_init"));
    server_->start_feature_learning(init.flatten());
    expect([&] {
      if (!server_->feature_learning_done()) return false;
      for (const auto& ac : accounts_)
        if (!ac->ready()) return false;
      return true;
    }, "feature learning");
  }

  /// Phases 2+3: embedding extraction, join, rebalance, noise, training.
  /// Returns the joined pre-noise training matrix for inspection.
  JoinResult run_training_phase(const TrainPhaseConfig& train) {
    const std::uint64_t nonce = tx_->request_embeddings(train_tx_ids_);
    expect([&] { return tx_->query_complete(nonce); }, "embedding extraction");
    JoinResult joined = tx_->build_joined(train_tx_ids_, nonce);
    if (joined.tx_ids.empty()) throw ProtocolError("no joinable training rows");
    auto balanced = rebalance(joined.rows, joined.labels, train.sampling,
                              derive_seed(settings_.seed, "rebalance"));
    tx_->train_classifier(balanced.rows, balanced.labels, balanced.weights,
                          train.noise_variance, train.classifier, train.clf_spec,
                          train.clf_options);
    return joined;
  }

  /// Inference through the protocol: PredictRequest in, PredictReply out.
  PredictReplyMsg predict(std::span<const std::uint64_t> tx_ids) {
    PredictRequestMsg req;
    req.request_id = next_request_++;
    req.tx_ids.assign(tx_ids.begin(), tx_ids.end());
    {
      std::lock_guard lock(harness_mu_);
      replies_.erase(req.request_id);
    }
    transport_.send(kHarnessId, kTxId, to_frame(req));
    const std::uint64_t want = req.request_id;
    expect([&] {
      std::lock_guard lock(harness_mu_);
      return replies_.count(want) > 0;
    }, "inference");
    std::lock_guard lock(harness_mu_);
    return replies_.at(want);
  }

  ServerNode& server() { return *server_; }
  TxClientNode& tx_client() { return *tx_; }
  AccountClientNode& account_client(std::size_t idx) { return *accounts_.at(idx); }
  std::size_t account_clients() const { return accounts_.size(); }
  const std::vector<std::uint64_t>& train_tx_ids() const { return train_tx_ids_; }

  /// Removes an account client from the federation (fault injection).
  void kill_account_client(std::size_t idx) {
    auto& node = accounts_.at(idx);
    transport_.remove_node(node->node_id());
    server_->drop_client(node->node_id());
    expect([&] {
      for (std::size_t i = 0; i < accounts_.size(); ++i)
        if (i != idx && !accounts_[i]->has_directory()) return false;
      return tx_->has_directory();
    }, "directory update");
  }

 private:
  void on_harness_frame(const std::string&, const Frame& frame) {
    const auto msg = from_frame(frame);
    if (const auto* reply = std::get_if<PredictReplyMsg>(&msg)) {
      std::lock_guard lock(harness_mu_);
      replies_[reply->request_id] = *reply;
    }
  }

  void expect(const std::function<bool()>& pred, const std::string& phase) {
    if (!transport_.await(pred, settings_.timeout))
      throw ProtocolError("protocol aborted during " + phase +
                          ": a client failed to report in time");
  }

  Transport& transport_;
  FederationSettings settings_;
  std::unique_ptr<ServerNode> server_;
  std::vector<std::unique_ptr<AccountClientNode>> accounts_;
  std::unique_ptr<TxClientNode> tx_;
  std::vector<std::uint64_t> train_tx_ids_;
  std::mutex harness_mu_;
  std::map<std::uint64_t, PredictReplyMsg> replies_;
  std::uint64_t next_request_ = 1;
};

/// Runs only the horizontal feature-learning phase over a transport and
/// returns the aggregated global autoencoder.
inline Autoencoder run_feature_learning(Transport& transport,
                                        const Dataset& dataset,
                                        FederationSettings settings) {
  settings.with_tx_client = false;
  settings.validate();
  ServerNode server(transport, settings);
  std::vector<std::unique_ptr<AccountClientNode>> accounts;
  auto shards =
      shard_accounts(dataset, settings.m_clients, derive_seed(settings.seed, "shard"));
  for (auto& shard : shards)
    accounts.push_back(std::make_unique<AccountClientNode>(
        transport, settings, shard.client_id, std::move(shard)));
  for (auto& ac : accounts) ac->start();
  if (!transport.await([&] {
        for (const auto& ac : accounts)
          if (!ac->has_directory()) return false;
        return true;
      }, settings.timeout))
    throw ProtocolError("protocol aborted during key exchange");
  const auto init = make_autoencoder(kAccountFeatureDim, settings.ae_hidden,
                                     settings.latent_dim,
                                     derive_seed(settings.seed, "ae_init"));
  server.start_feature_learning(init.flatten());
  const bool done =
      transport.await([&] { return server.feature_learning_done(); }, settings.timeout);
  Autoencoder global = init;
  if (done) global.unflatten(server.global_params());
  for (const auto& ac : accounts) transport.remove_node(ac->node_id());
  transport.remove_node(kServerId);
  if (!done) throw ProtocolError("protocol aborted during feature learning");
  return global;
}

// ---------------------------------------------------------------------------
// Centralized reference pipeline: the same computation with every node
// collapsed into one process and no transport.

struct CentralizedArtifacts {
  Autoencoder ae;
  Classifier model;
  NormStats stats;
  Matrix joined_train;  // pre-noise
  std::vector<int> train_labels;
  NoiseMetrics train_noise;
};

inline Matrix centralized_join(const Dataset& dataset, const Autoencoder& ae,
                               std::span<const std::size_t> idx) {
  const std::size_t latent = ae.latent_dim;
  Matrix out(idx.size(), 2 * latent + kTxFeatureCount);
  std::map<std::uint64_t, std::vector<double>> cache;
  auto embed = [&](std::uint64_t account, int flag) -> const std::vector<double>& {
    auto it = cache.find(account);
    if (it == cache.end())
      it = cache.emplace(account, ae_encode(ae, encode_flag(flag))).first;
    return it->second;
  };
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& tx = dataset.transactions[idx[r]];
    const auto& se = embed(tx.sender_account, dataset.accounts.at(tx.sender_account).flag);
    const auto& re =
        embed(tx.receiver_account, dataset.accounts.at(tx.receiver_account).flag);
    auto row = out.row(r);
    std::copy(se.begin(), se.end(), row.begin());
    std::copy(re.begin(), re.end(), row.begin() + static_cast<std::ptrdiff_t>(latent));
    std::copy(tx.features.begin(), tx.features.end(),
              row.begin() + static_cast<std::ptrdiff_t>(2 * latent));
  }
  return out;
}

inline CentralizedArtifacts run_centralized_pipeline(const Dataset& dataset,
                                                     std::span<const std::size_t> train_idx,
                                                     const FederationSettings& settings,
                                                     const TrainPhaseConfig& train) {
  CentralizedArtifacts out;
  auto shards = shard_accounts(dataset, 1, derive_seed(settings.seed, "shard"));
  const Matrix features = encode_shard(shards[0]);
  const auto init = make_autoencoder(kAccountFeatureDim, settings.ae_hidden,
                                     settings.latent_dim,
                                     derive_seed(settings.seed, "ae_init"));
  TrainSpec spec = settings.ae_spec;
  spec.epochs = settings.schedule.total_epochs();
  spec.seed = ae_client_seed(settings.ae_spec.seed, 1);
  out.ae = ae_train_local(features, init, spec).model;

  out.joined_train = centralized_join(dataset, out.ae, train_idx);
  out.train_labels.resize(train_idx.size());
  for (std::size_t r = 0; r < train_idx.size(); ++r)
    out.train_labels[r] = dataset.transactions[train_idx[r]].label;

  auto balanced = rebalance(out.joined_train, out.train_labels, train.sampling,
                            derive_seed(settings.seed, "rebalance"));
  auto [normalized, stats] = normalize_standard(balanced.rows);
  out.stats = std::move(stats);
  NoiseSpec noise{train.noise_variance, derive_seed(settings.seed, "train_noise")};
  const Matrix noisy = add_gaussian_noise(normalized, noise);
  out.train_noise = noise_metrics(normalized, noisy);
  out.model = classifier_train(noisy, balanced.labels, balanced.weights, train.classifier,
                               train.clf_spec, train.clf_options);
  return out;
}

inline std::vector<double> centralized_score(const CentralizedArtifacts& artifacts,
                                             const Dataset& dataset,
                                             std::span<const std::size_t> idx) {
  const Matrix joined = centralized_join(dataset, artifacts.ae, idx);
  const Matrix normalized = apply_normalization(joined, artifacts.stats);
  return classifier_predict_many(artifacts.model, normalized);
}

// ---------------------------------------------------------------------------
// Role-isolation scanner

struct IsolationReport {
  std::vector<std::string> violations;
  bool clean() const { return violations.empty(); }
};

namespace detail {
inline bool json_contains_key(const nlohmann::json& j, const std::string& key) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == key) return true;
      if (json_contains_key(it.value(), key)) return true;
    }
  } else if (j.is_array()) {
    for (const auto& v : j)
      if (json_contains_key(v, key)) return true;
  }
  return false;
}
}  // namespace detail

/// Scans a transcript for the three structural leaks the protocol must
/// prevent: raw flags leaving an account client, encoder parameters reaching
/// the transaction client, and plaintext embeddings or transaction features
/// reaching the server.
inline IsolationReport scan_role_isolation(const std::vector<TranscriptEntry>& entries) {
  IsolationReport report;
  auto flag_violation = [&](const TranscriptEntry& e, const std::string& what) {
    report.violations.push_back("ts=" + std::to_string(e.ts) + " " + e.sender + "->" +
                                e.receiver + " [" + msg_type_name(e.frame.type) + "]: " +
                                what);
  };
  for (const auto& e : entries) {
    const auto payload = nlohmann::json::parse(e.frame.payload);
    if (e.sender.rfind("ac", 0) == 0) {
      if (detail::json_contains_key(payload, "flag") ||
          detail::json_contains_key(payload, "flags"))
        flag_violation(e, "raw account flag leaves an account client");
    }
    if (e.receiver == kTxId) {
      if (e.frame.type == MsgType::ModelUpdate || e.frame.type == MsgType::GlobalModel)
        flag_violation(e, "model traffic addressed to the transaction client");
      if (detail::json_contains_key(payload, "params") ||
          detail::json_contains_key(payload, "masked_params"))
        flag_violation(e, "encoder parameters addressed to the transaction client");
    }
    if (e.receiver == kServerId) {
      if (detail::json_contains_key(payload, "embeddings"))
        flag_violation(e, "plaintext embeddings at the server");
      if (detail::json_contains_key(payload, "features"))
        flag_violation(e, "transaction features at the server");
    }
  }
  return report;
}

}  // namespace hyfl
