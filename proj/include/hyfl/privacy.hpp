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

#include <sodium.h>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/rng.hpp"

namespace hyfl {

inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw CryptoError("libsodium failed to initialize");
}

// ---------------------------------------------------------------------------
// Standard normalization

struct NormStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population; 0 marks a constant column
};

/// Per-column (x - mean) / stddev with population stddev. Constant columns
/// are centered only. Returns the stats for reuse on inference rows.
inline std::pair<Matrix, NormStats> normalize_standard(const Matrix& m) {
  if (m.rows() < 2) throw ValidationError("normalization needs at least 2 rows");
  if (!m.all_finite()) throw ValidationError("non-finite values");
  NormStats stats;
  stats.mean.assign(m.cols(), 0.0);
  stats.stddev.assign(m.cols(), 0.0);
  const double n = static_cast<double>(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) stats.mean[c] += m(r, c);
  for (double& v : stats.mean) v /= n;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double d = m(r, c) - stats.mean[c];
      stats.stddev[c] += d * d;
    }
  for (double& v : stats.stddev) v = std::sqrt(v / n);

  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double centered = m(r, c) - stats.mean[c];
      out(r, c) = stats.stddev[c] > 0.0 ? centered / stats.stddev[c] : centered;
    }
  return {std::move(out), std::move(stats)};
}

/// Applies previously computed stats (the train-time ones) to new rows.
inline Matrix apply_normalization(const Matrix& m, const NormStats& stats) {
  if (m.cols() != stats.mean.size()) throw ValidationError("stats dimension mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) {
      const double centered = m(r, c) - stats.mean[c];
      out(r, c) = stats.stddev[c] > 0.0 ? centered / stats.stddev[c] : centered;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian noise injection

struct NoiseSpec {
  double variance = 0.0;  // mean is fixed at zero
  std::uint64_t seed = 1;

  void validate() const {
    if (!(variance >= 0.0)) throw ValidationError("noise variance must be >= 0");
  }
};

/// Adds N(0, variance) i.i.d. per entry, one derived stream per row so the
/// noise field is stable under row-parallel evaluation. variance = 0 returns
/// the input bit-for-bit.
inline Matrix add_gaussian_noise(const Matrix& m, const NoiseSpec& spec) {
  spec.validate();
  if (!m.all_finite()) throw ValidationError("non-finite values");
  if (spec.variance == 0.0) return m;
  const double sd = std::sqrt(spec.variance);
  Matrix out = m;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    Rng rng(derive_seed(spec.seed, "noise_row", static_cast<std::uint64_t>(r)));
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) += sd * rng.normal();
  }
  return out;
}

struct NoiseMetrics {
  double avg_l2 = 0.0;
  double avg_cos = 0.0;
  std::size_t skipped_rows = 0;  // zero rows where cosine is undefined
};

/// Mean per-row L2 distortion and cosine similarity between original and
/// noisy rows. Rows where either side is a zero vector are skipped for the
/// cosine average and counted.
inline NoiseMetrics noise_metrics(const Matrix& original, const Matrix& noisy) {
  if (original.rows() != noisy.rows() || original.cols() != noisy.cols())
    throw ValidationError("shape mismatch");
  if (original.rows() == 0) throw ValidationError("empty matrix");
  NoiseMetrics out;
  double cos_sum = 0.0;
  std::size_t cos_rows = 0;
  for (std::size_t r = 0; r < original.rows(); ++r) {
    double d2 = 0.0;
    for (std::size_t c = 0; c < original.cols(); ++c) {
      const double d = noisy(r, c) - original(r, c);
      d2 += d * d;
    }
    out.avg_l2 += std::sqrt(d2);
    const double na = l2_norm(original.row(r));
    const double nb = l2_norm(noisy.row(r));
    if (na > 0.0 && nb > 0.0) {
      cos_sum += dot(original.row(r), noisy.row(r)) / (na * nb);
      ++cos_rows;
    } else {
      ++out.skipped_rows;
    }
  }
  out.avg_l2 /= static_cast<double>(original.rows());
  out.avg_cos = cos_rows > 0 ? cos_sum / static_cast<double>(cos_rows) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Pairwise-masked aggregation over fixed-point integers.
//
// Parameters are quantized at scale 2^20 into two's-complement 64-bit words
// (little-endian when serialized). Each pair of clients derives a common
// mask stream; the lower id adds it, the higher id subtracts it, so the sum
// over a full round cancels every mask and the server learns only the sum.

inline constexpr int kFixedPointBits = 20;
inline constexpr double kFixedPointScale = 1048576.0;  // 2^20

inline std::uint64_t quantize_param(double v) {
  if (!std::isfinite(v)) throw ValidationError("non-finite parameter");
  return static_cast<std::uint64_t>(static_cast<std::int64_t>(std::llround(v * kFixedPointScale)));
}

inline double dequantize_param(std::uint64_t q) {
  return static_cast<double>(static_cast<std::int64_t>(q)) / kFixedPointScale;
}

struct MaskedUpdate {
  int client_id = 0;
  std::uint64_t round = 0;
  std::vector<std::uint64_t> values;
};

/// Quantizes and masks one client's parameter vector for the given round.
/// mask_seeds maps peer client id -> the pairwise seed both ends share.
inline MaskedUpdate mask_update(std::span<const double> params, int client_id,
                                const std::map<int, std::uint64_t>& mask_seeds,
                                std::uint64_t round) {
  MaskedUpdate out;
  out.client_id = client_id;
  out.round = round;
  out.values.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) out.values[i] = quantize_param(params[i]);
  for (const auto& [peer, seed] : mask_seeds) {
    if (peer == client_id)
      throw ValidationError("mask seed listed for the client itself");
    Rng prg(derive_seed(seed, "pairmask", round));
    for (auto& v : out.values) {
      const std::uint64_t m = prg.next_u64();
      v = client_id < peer ? v + m : v - m;  // mod 2^64
    }
  }
  return out;
}

/// Sums masked updates of a full round and rescales to real values. The
/// result is the SUM of the quantized parameter vectors; divide by the
/// client count for the aggregation mean. Aborts when updates are missing,
/// duplicated or inconsistent, since masks only cancel over the full set.
inline std::vector<double> unmask_sum(std::span<const MaskedUpdate> updates) {
  if (updates.empty()) throw ValidationError("no updates to unmask");
  const std::size_t dim = updates.front().values.size();
  const std::uint64_t round = updates.front().round;
  std::set<int> seen;
  std::vector<std::uint64_t> acc(dim, 0);
  for (const auto& u : updates) {
    if (u.values.size() != dim) throw ProtocolError("update length mismatch");
    if (u.round != round) throw ProtocolError("updates from different rounds");
    if (!seen.insert(u.client_id).second)
      throw ProtocolError("duplicate update from client");
    for (std::size_t i = 0; i < dim; ++i) acc[i] += u.values[i];
  }
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = dequantize_param(acc[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Key material and authenticated encryption.

inline constexpr std::size_t kNonceBytes = 24;  // XChaCha20-Poly1305
inline constexpr std::size_t kTagBytes = 16;
inline constexpr std::size_t kKeyBytes = 32;

using PublicKey = std::array<std::uint8_t, 32>;
using SecretKey = std::array<std::uint8_t, 32>;
using SymmetricKey = std::array<std::uint8_t, kKeyBytes>;

struct KeyPair {
  PublicKey pk{};
  SecretKey sk{};
};

/// X25519 keypair derived deterministically from a 64-bit seed (the seed is
/// stretched by the library's seeded keypair generator).
inline KeyPair make_keypair(std::uint64_t seed) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_box_SEEDBYTES> seed_bytes{};
  std::uint64_t st = derive_seed(seed, "keypair");
  for (std::size_t i = 0; i < seed_bytes.size(); i += 8) {
    const std::uint64_t w = splitmix64(st);
    std::memcpy(seed_bytes.data() + i, &w, 8);
  }
  KeyPair kp;
  crypto_box_seed_keypair(kp.pk.data(), kp.sk.data(), seed_bytes.data());
  return kp;
}

namespace detail {
inline void kdf(const std::uint8_t* dh, const PublicKey& a, const PublicKey& b,
                std::string_view label, std::uint8_t* out, std::size_t out_len) {
  // Order the public keys so both ends derive the same secret.
  const PublicKey& lo = a < b ? a : b;
  const PublicKey& hi = a < b ? b : a;
  std::vector<std::uint8_t> input;
  input.insert(input.end(), dh, dh + crypto_scalarmult_BYTES);
  input.insert(input.end(), lo.begin(), lo.end());
  input.insert(input.end(), hi.begin(), hi.end());
  input.insert(input.end(), label.begin(), label.end());
  crypto_generichash(out, out_len, input.data(), input.size(), nullptr, 0);
}
}  // namespace detail

/// Symmetric session key shared by the two ends of a Diffie-Hellman pair.
inline SymmetricKey derive_session_key(const SecretKey& own_sk, const PublicKey& own_pk,
                                       const PublicKey& peer_pk) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_scalarmult_BYTES> dh{};
  if (crypto_scalarmult(dh.data(), own_sk.data(), peer_pk.data()) != 0)
    throw CryptoError("key agreement failed");
  SymmetricKey key{};
  detail::kdf(dh.data(), own_pk, peer_pk, "session", key.data(), key.size());
  return key;
}

/// Pairwise mask seed for the aggregation masking, shared by two account
/// clients that never talk directly; both derive it from the key directory.
inline std::uint64_t derive_mask_seed(const SecretKey& own_sk, const PublicKey& own_pk,
                                      const PublicKey& peer_pk) {
  ensure_sodium();
  std::array<std::uint8_t, crypto_scalarmult_BYTES> dh{};
  if (crypto_scalarmult(dh.data(), own_sk.data(), peer_pk.data()) != 0)
    throw CryptoError("key agreement failed");
  std::uint64_t seed = 0;
  detail::kdf(dh.data(), own_pk, peer_pk, "mask",
              reinterpret_cast<std::uint8_t*>(&seed), sizeof(seed));
  return seed;
}

/// Authenticated encryption of an embedding payload (or any byte string).
/// Layout: nonce (24 bytes) || auth tag (16 bytes) || ciphertext.
inline std::vector<std::uint8_t> seal_bytes(std::span<const std::uint8_t> plaintext,
                                            const SymmetricKey& key,
                                            std::span<const std::uint8_t> nonce) {
  ensure_sodium();
  if (nonce.size() != kNonceBytes) throw ValidationError("nonce must be 24 bytes");
  std::vector<std::uint8_t> out(kNonceBytes + kTagBytes + plaintext.size());
  std::copy(nonce.begin(), nonce.end(), out.begin());
  unsigned long long tag_len = 0;
  if (crypto_aead_xchacha20poly1305_ietf_encrypt_detached(
          out.data() + kNonceBytes + kTagBytes, out.data() + kNonceBytes, &tag_len,
          plaintext.data(), plaintext.size(), nullptr, 0, nullptr, nonce.data(),
          key.data()) != 0)
    throw CryptoError("encryption failed");
  return out;
}

/// Opens a sealed blob; throws CryptoError on any integrity failure.
inline std::vector<std::uint8_t> open_bytes(std::span<const std::uint8_t> sealed,
                                            const SymmetricKey& key) {
  ensure_sodium();
  if (sealed.size() < kNonceBytes + kTagBytes)
    throw CryptoError("sealed blob too short");
  const std::size_t ct_len = sealed.size() - kNonceBytes - kTagBytes;
  std::vector<std::uint8_t> plain(ct_len);
  if (crypto_aead_xchacha20poly1305_ietf_decrypt_detached(
          plain.data(), nullptr, sealed.data() + kNonceBytes + kTagBytes, ct_len,
          sealed.data() + kNonceBytes, nullptr, 0, sealed.data(), key.data()) != 0)
    throw CryptoError("authentication failed");
  return plain;
}

/// Per-direction cipher: counter nonces on the sending side, replay
/// rejection on the receiving side. Key material is fixed at construction
/// and never serialized.
class SessionCipher {
 public:
  SessionCipher() = default;
  SessionCipher(SymmetricKey key, std::uint64_t direction_tag)
      : key_(key), direction_tag_(direction_tag) {}

  std::vector<std::uint8_t> seal(std::span<const std::uint8_t> plaintext) {
    std::array<std::uint8_t, kNonceBytes> nonce{};
    std::memcpy(nonce.data(), &direction_tag_, 8);
    const std::uint64_t ctr = counter_++;
    std::memcpy(nonce.data() + 8, &ctr, 8);
    return seal_bytes(plaintext, key_, nonce);
  }

  std::vector<std::uint8_t> open(std::span<const std::uint8_t> sealed) {
    if (sealed.size() < kNonceBytes) throw CryptoError("sealed blob too short");
    std::array<std::uint8_t, kNonceBytes> nonce{};
    std::copy(sealed.begin(), sealed.begin() + kNonceBytes, nonce.begin());
    if (!seen_nonces_.insert(nonce).second) throw CryptoError("nonce reuse rejected");
    return open_bytes(sealed, key_);
  }

 private:
  SymmetricKey key_{};
  std::uint64_t direction_tag_ = 0;
  std::uint64_t counter_ = 0;
  std::set<std::array<std::uint8_t, kNonceBytes>> seen_nonces_;
};

/// All secrets a node holds after the handshake. Never serialized into
/// protocol messages.
struct KeyMaterial {
  KeyPair self;
  std::map<std::string, SymmetricKey> session_keys;   // peer node id -> key
  std::map<int, std::uint64_t> mask_seeds;            // peer client id -> seed
};

// Base64 helpers for ciphertext fields inside JSON payloads.

inline std::string to_base64(std::span<const std::uint8_t> bytes) {
  ensure_sodium();
  std::string out(sodium_base64_encoded_len(bytes.size(), sodium_base64_VARIANT_ORIGINAL),
                  '\0');
  sodium_bin2base64(out.data(), out.size(), bytes.data(), bytes.size(),
                    sodium_base64_VARIANT_ORIGINAL);
  out.resize(std::strlen(out.c_str()));
  return out;
}

inline std::vector<std::uint8_t> from_base64(const std::string& text) {
  ensure_sodium();
  std::vector<std::uint8_t> out(text.size());
  std::size_t actual = 0;
  if (sodium_base642bin(out.data(), out.size(), text.data(), text.size(), nullptr,
                        &actual, nullptr, sodium_base64_VARIANT_ORIGINAL) != 0)
    throw IoError("invalid base64");
  out.resize(actual);
  return out;
}

}  // namespace hyfl
