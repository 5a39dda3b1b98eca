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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hyfl/errors.hpp"

namespace hyfl {

/// Wire format: 4-byte big-endian payload length, 1-byte message type,
/// then the payload. Payloads are canonical JSON (UTF-8, lexicographically
/// sorted keys, no insignificant whitespace); binary fields ride inside as
/// base64 strings.
enum class MsgType : std::uint8_t {
  Register = 0x01,
  KeyExchange = 0x02,
  ModelUpdate = 0x03,
  GlobalModel = 0x04,
  EmbeddingQuery = 0x05,
  EmbeddingReply = 0x06,
  PredictRequest = 0x07,
  PredictReply = 0x08,
  Error = 0x7F,
};

inline bool is_known_msg_type(std::uint8_t t) {
  switch (static_cast<MsgType>(t)) {
    case MsgType::Register:
    case MsgType::KeyExchange:
    case MsgType::ModelUpdate:
    case MsgType::GlobalModel:
    case MsgType::EmbeddingQuery:
    case MsgType::EmbeddingReply:
    case MsgType::PredictRequest:
    case MsgType::PredictReply:
    case MsgType::Error:
      return true;
  }
  return false;
}

inline const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::Register: return "Register";
    case MsgType::KeyExchange: return "KeyExchange";
    case MsgType::ModelUpdate: return "ModelUpdate";
    case MsgType::GlobalModel: return "GlobalModel";
    case MsgType::EmbeddingQuery: return "EmbeddingQuery";
    case MsgType::EmbeddingReply: return "EmbeddingReply";
    case MsgType::PredictRequest: return "PredictRequest";
    case MsgType::PredictReply: return "PredictReply";
    case MsgType::Error: return "Error";
  }
  return "Unknown";
}

inline constexpr std::size_t kMaxFramePayload = 64ull * 1024 * 1024;

struct Frame {
  MsgType type = MsgType::Error;
  std::string payload;  // canonical JSON text

  bool operator==(const Frame&) const = default;
};

/// Canonical JSON text: nlohmann keeps object keys sorted; dump() emits no
/// insignificant whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

inline std::vector<std::uint8_t> encode_frame(const Frame& frame) {
  if (frame.payload.size() > kMaxFramePayload)
    throw ValidationError("frame payload exceeds 64 MiB");
  std::vector<std::uint8_t> out(4 + 1 + frame.payload.size());
  const auto len = static_cast<std::uint32_t>(frame.payload.size());
  out[0] = static_cast<std::uint8_t>(len >> 24);
  out[1] = static_cast<std::uint8_t>(len >> 16);
  out[2] = static_cast<std::uint8_t>(len >> 8);
  out[3] = static_cast<std::uint8_t>(len);
  out[4] = static_cast<std::uint8_t>(frame.type);
  std::copy(frame.payload.begin(), frame.payload.end(), out.begin() + 5);
  return out;
}

struct FrameDecodeResult {
  std::optional<Frame> frame;
  std::string error;
};

/// Decodes one complete frame. Never throws on malformed input; the error
/// field reports what was wrong.
inline FrameDecodeResult decode_frame(std::span<const std::uint8_t> bytes) {
  FrameDecodeResult out;
  if (bytes.size() < 5) {
    out.error = "frame shorter than header";
    return out;
  }
  const std::uint32_t len = (static_cast<std::uint32_t>(bytes[0]) << 24) |
                            (static_cast<std::uint32_t>(bytes[1]) << 16) |
                            (static_cast<std::uint32_t>(bytes[2]) << 8) |
                            static_cast<std::uint32_t>(bytes[3]);
  if (len > kMaxFramePayload) {
    out.error = "length field exceeds 64 MiB cap";
    return out;
  }
  if (bytes.size() != 5ull + len) {
    out.error = "length field does not match payload size";
    return out;
  }
  if (!is_known_msg_type(bytes[4])) {
    out.error = "unknown message type";
    return out;
  }
  std::string payload(reinterpret_cast<const char*>(bytes.data() + 5), len);
  if (!nlohmann::json::accept(payload)) {
    out.error = "payload is not valid JSON";
    return out;
  }
  out.frame = Frame{static_cast<MsgType>(bytes[4]), std::move(payload)};
  return out;
}

}  // namespace hyfl
