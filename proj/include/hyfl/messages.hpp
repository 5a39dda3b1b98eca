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

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/frame.hpp"

namespace hyfl {

// Typed views over the frame payloads. Field names are load-bearing: the
// role-isolation scanner keys off "flag"/"params"/"embeddings"/"features",
// so plaintext secrets are only ever stored under those names.

struct RegisterMsg {
  std::string node_id;
  std::string role;  // "account" | "transaction"
};

struct KeyExchangeMsg {
  // Either a single announcement (node_id + pub) or the server's directory
  // broadcast (clients + directory).
  std::string node_id;
  std::string pub;  // base64 public key
  std::vector<std::string> clients;
  std::map<std::string, std::string> directory;  // node id -> base64 pub
  bool is_directory = false;
};

struct ModelUpdateMsg {
  int client_id = 0;
  std::uint64_t round = 0;
  std::uint64_t n_rows = 0;  // shard size, used by the weighted-mean option
  bool masked = false;
  std::vector<double> params;        // plaintext path
  std::string masked_params;         // base64 little-endian u64 words
};

struct GlobalModelMsg {
  std::uint64_t round = 0;
  std::vector<double> params;
  bool final_round = false;
};

struct EmbeddingQueryMsg {
  std::uint64_t nonce = 0;
  std::vector<std::uint64_t> account_ids;  // deduplicated, ascending
  std::string reply_to;
};

struct EmbeddingReplyMsg {
  std::uint64_t nonce = 0;
  int client_id = 0;
  bool is_sealed = false;
  std::string sealed;                                   // base64 AEAD blob
  std::map<std::uint64_t, std::vector<double>> embeddings;  // plaintext path
};

struct PredictRequestMsg {
  std::uint64_t request_id = 0;
  std::vector<std::uint64_t> tx_ids;
};

struct PredictReplyMsg {
  std::uint64_t request_id = 0;
  std::map<std::uint64_t, double> scores;
  std::map<std::uint64_t, std::string> row_errors;
};

struct ErrorMsg {
  std::string message;
};

using ProtocolMessage =
    std::variant<RegisterMsg, KeyExchangeMsg, ModelUpdateMsg, GlobalModelMsg,
                 EmbeddingQueryMsg, EmbeddingReplyMsg, PredictRequestMsg,
                 PredictReplyMsg, ErrorMsg>;

namespace detail {
template <typename K, typename V>
nlohmann::json map_to_json(const std::map<K, V>& m) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

template <typename V>
std::map<std::uint64_t, V> map_from_json(const nlohmann::json& j) {
  std::map<std::uint64_t, V> out;
  for (auto it = j.begin(); it != j.end(); ++it)
    out[std::stoull(it.key())] = it.value().get<V>();
  return out;
}
}  // namespace detail

inline Frame to_frame(const ProtocolMessage& msg) {
  nlohmann::json j;
  MsgType type = MsgType::Error;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, RegisterMsg>) {
          type = MsgType::Register;
          j["node_id"] = m.node_id;
          j["role"] = m.role;
        } else if constexpr (std::is_same_v<T, KeyExchangeMsg>) {
          type = MsgType::KeyExchange;
          if (m.is_directory) {
            j["clients"] = m.clients;
            j["directory"] = m.directory;
          } else {
            j["node_id"] = m.node_id;
            j["pub"] = m.pub;
          }
        } else if constexpr (std::is_same_v<T, ModelUpdateMsg>) {
          type = MsgType::ModelUpdate;
          j["client_id"] = m.client_id;
          j["round"] = m.round;
          j["n_rows"] = m.n_rows;
          if (m.masked)
            j["masked_params"] = m.masked_params;
          else
            j["params"] = m.params;
        } else if constexpr (std::is_same_v<T, GlobalModelMsg>) {
          type = MsgType::GlobalModel;
          j["round"] = m.round;
          j["params"] = m.params;
          j["final"] = m.final_round;
        } else if constexpr (std::is_same_v<T, EmbeddingQueryMsg>) {
          type = MsgType::EmbeddingQuery;
          j["nonce"] = m.nonce;
          j["account_ids"] = m.account_ids;
          j["reply_to"] = m.reply_to;
        } else if constexpr (std::is_same_v<T, EmbeddingReplyMsg>) {
          type = MsgType::EmbeddingReply;
          j["nonce"] = m.nonce;
          j["client_id"] = m.client_id;
          if (m.is_sealed)
            j["sealed"] = m.sealed;
          else
            j["embeddings"] = detail::map_to_json(m.embeddings);
        } else if constexpr (std::is_same_v<T, PredictRequestMsg>) {
          type = MsgType::PredictRequest;
          j["request_id"] = m.request_id;
          j["tx_ids"] = m.tx_ids;
        } else if constexpr (std::is_same_v<T, PredictReplyMsg>) {
          type = MsgType::PredictReply;
          j["request_id"] = m.request_id;
          j["scores"] = detail::map_to_json(m.scores);
          j["errors"] = detail::map_to_json(m.row_errors);
        } else if constexpr (std::is_same_v<T, ErrorMsg>) {
          type = MsgType::Error;
          j["message"] = m.message;
        }
      },
      msg);
  return Frame{type, canonical_json(j)};
}

inline ProtocolMessage from_frame(const Frame& frame) {
  const nlohmann::json j = nlohmann::json::parse(frame.payload);
  try {
    switch (frame.type) {
      case MsgType::Register: {
        RegisterMsg m;
        m.node_id = j.at("node_id").get<std::string>();
        m.role = j.at("role").get<std::string>();
        return m;
      }
      case MsgType::KeyExchange: {
        KeyExchangeMsg m;
        if (j.contains("directory")) {
          m.is_directory = true;
          m.clients = j.at("clients").get<std::vector<std::string>>();
          m.directory = j.at("directory").get<std::map<std::string, std::string>>();
        } else {
          m.node_id = j.at("node_id").get<std::string>();
          m.pub = j.at("pub").get<std::string>();
        }
        return m;
      }
      case MsgType::ModelUpdate: {
        ModelUpdateMsg m;
        m.client_id = j.at("client_id").get<int>();
        m.round = j.at("round").get<std::uint64_t>();
        m.n_rows = j.at("n_rows").get<std::uint64_t>();
        if (j.contains("masked_params")) {
          m.masked = true;
          m.masked_params = j.at("masked_params").get<std::string>();
        } else {
          m.params = j.at("params").get<std::vector<double>>();
        }
        return m;
      }
      case MsgType::GlobalModel: {
        GlobalModelMsg m;
        m.round = j.at("round").get<std::uint64_t>();
        m.params = j.at("params").get<std::vector<double>>();
        m.final_round = j.at("final").get<bool>();
        return m;
      }
      case MsgType::EmbeddingQuery: {
        EmbeddingQueryMsg m;
        m.nonce = j.at("nonce").get<std::uint64_t>();
        m.account_ids = j.at("account_ids").get<std::vector<std::uint64_t>>();
        m.reply_to = j.at("reply_to").get<std::string>();
        return m;
      }
      case MsgType::EmbeddingReply: {
        EmbeddingReplyMsg m;
        m.nonce = j.at("nonce").get<std::uint64_t>();
        m.client_id = j.at("client_id").get<int>();
        if (j.contains("sealed")) {
          m.is_sealed = true;
          m.sealed = j.at("sealed").get<std::string>();
        } else {
          m.embeddings = detail::map_from_json<std::vector<double>>(j.at("embeddings"));
        }
        return m;
      }
      case MsgType::PredictRequest: {
        PredictRequestMsg m;
        m.request_id = j.at("request_id").get<std::uint64_t>();
        m.tx_ids = j.at("tx_ids").get<std::vector<std::uint64_t>>();
        return m;
      }
      case MsgType::PredictReply: {
        PredictReplyMsg m;
        m.request_id = j.at("request_id").get<std::uint64_t>();
        m.scores = detail::map_from_json<double>(j.at("scores"));
        m.row_errors = detail::map_from_json<std::string>(j.at("errors"));
        return m;
      }
      case MsgType::Error: {
        ErrorMsg m;
        m.message = j.at("message").get<std::string>();
        return m;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(std::string("malformed payload: ") + e.what());
  }
  throw ProtocolError("unknown frame type");
}

}  // namespace hyfl
