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

#include <vector>

#include "hyfl/privacy.hpp"

using namespace hyfl;

TEST_CASE("normalize_standard: worked column example", "[privacy]") {
  Matrix m(3, 1);
  m(0, 0) = 1;
  m(1, 0) = 2;
  m(2, 0) = 3;
  auto [out, stats] = normalize_standard(m);
  REQUIRE_THAT(stats.mean[0], Catch::Matchers::WithinAbs(2.0, 1e-15));
  REQUIRE_THAT(stats.stddev[0], Catch::Matchers::WithinAbs(0.816496580927726, 1e-12));
  REQUIRE_THAT(out(0, 0), Catch::Matchers::WithinAbs(-1.224744871391589, 1e-12));
  REQUIRE_THAT(out(1, 0), Catch::Matchers::WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(out(2, 0), Catch::Matchers::WithinAbs(1.224744871391589, 1e-12));
}

TEST_CASE("normalize_standard: idempotent on standardized data", "[privacy]") {
  Rng rng(5);
  Matrix m(200, 3);
  for (double& v : m.data()) v = rng.normal();
  auto [once, s1] = normalize_standard(m);
  auto [twice, s2] = normalize_standard(once);
  for (std::size_t i = 0; i < once.data().size(); ++i)
    REQUIRE_THAT(twice.data()[i], Catch::Matchers::WithinAbs(once.data()[i], 1e-12));
}

TEST_CASE("normalize_standard: constant columns center to zero", "[privacy]") {
  Matrix m(4, 2);
  for (std::size_t r = 0; r < 4; ++r) {
    m(r, 0) = 7.5;
    m(r, 1) = static_cast<double>(r);
  }
  auto [out, stats] = normalize_standard(m);
  REQUIRE(stats.stddev[0] == 0.0);
  for (std::size_t r = 0; r < 4; ++r) REQUIRE(out(r, 0) == 0.0);
}

TEST_CASE("apply_normalization reuses train statistics", "[privacy]") {
  Matrix train(3, 1);
  train(0, 0) = 1;
  train(1, 0) = 2;
  train(2, 0) = 3;
  auto [_, stats] = normalize_standard(train);
  Matrix test(1, 1);
  test(0, 0) = 4.0;
  auto out = apply_normalization(test, stats);
  REQUIRE_THAT(out(0, 0), Catch::Matchers::WithinAbs(2.0 / 0.816496580927726, 1e-12));
}

TEST_CASE("add_gaussian_noise: zero variance is the identity", "[privacy]") {
  Rng rng(8);
  Matrix m(20, 4);
  for (double& v : m.data()) v = rng.normal();
  auto out = add_gaussian_noise(m, NoiseSpec{0.0, 99});
  REQUIRE(out == m);
}

TEST_CASE("add_gaussian_noise: empirical moments match the spec", "[privacy]") {
  // 10^6 entries at variance 0.01: sample variance within [0.0097, 0.0103]
  // and sample mean within +-0.0005 (3-sigma style bounds).
  Matrix m(1000, 1000);
  NoiseSpec spec{0.01, 12345};
  auto out = add_gaussian_noise(m, spec);
  double mean = 0.0;
  for (double v : out.data()) mean += v;
  mean /= static_cast<double>(out.data().size());
  double var = 0.0;
  for (double v : out.data()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(out.data().size());
  REQUIRE(std::abs(mean) < 0.0005);
  REQUIRE(var > 0.0097);
  REQUIRE(var < 0.0103);
}

TEST_CASE("add_gaussian_noise: deterministic under seed", "[privacy]") {
  Matrix m(5, 5, 1.0);
  NoiseSpec spec{0.5, 7};
  REQUIRE(add_gaussian_noise(m, spec) == add_gaussian_noise(m, spec));
}

TEST_CASE("noise_metrics: identity and scaling", "[privacy]") {
  Matrix a(2, 2);
  a(0, 0) = 3;
  a(0, 1) = 4;
  a(1, 0) = 1;
  a(1, 1) = 0;
  auto same = noise_metrics(a, a);
  REQUIRE(same.avg_l2 == 0.0);
  REQUIRE_THAT(same.avg_cos, Catch::Matchers::WithinAbs(1.0, 1e-15));

  Matrix doubled = a;
  for (double& v : doubled.data()) v *= 2.0;
  auto scaled = noise_metrics(a, doubled);
  REQUIRE_THAT(scaled.avg_cos, Catch::Matchers::WithinAbs(1.0, 1e-15));
  REQUIRE_THAT(scaled.avg_l2, Catch::Matchers::WithinAbs((5.0 + 1.0) / 2.0, 1e-15));
}

TEST_CASE("noise_metrics: worked row example", "[privacy]") {
  Matrix orig(1, 2), noisy(1, 2);
  orig(0, 0) = 3;
  orig(0, 1) = 4;
  noisy(0, 0) = 0;
  noisy(0, 1) = 4;
  auto m = noise_metrics(orig, noisy);
  REQUIRE_THAT(m.avg_l2, Catch::Matchers::WithinAbs(3.0, 1e-15));
  REQUIRE_THAT(m.avg_cos, Catch::Matchers::WithinAbs(0.8, 1e-15));
}

TEST_CASE("noise_metrics: zero rows are skipped and counted", "[privacy]") {
  Matrix orig(2, 2), noisy(2, 2);
  noisy(0, 0) = 1;  // first original row is zero
  orig(1, 0) = 1;
  noisy(1, 0) = 1;
  auto m = noise_metrics(orig, noisy);
  REQUIRE(m.skipped_rows == 1);
  REQUIRE_THAT(m.avg_cos, Catch::Matchers::WithinAbs(1.0, 1e-15));
}

namespace {
std::map<int, std::uint64_t> pair_seeds_for(int self, const std::vector<int>& clients,
                                            std::uint64_t base) {
  // Symmetric seed for each unordered pair, as derived from key exchange.
  std::map<int, std::uint64_t> seeds;
  for (int other : clients) {
    if (other == self) continue;
    const int lo = std::min(self, other), hi = std::max(self, other);
    seeds[other] = derive_seed(base, "pair", static_cast<std::uint64_t>(lo),
                               static_cast<std::uint64_t>(hi));
  }
  return seeds;
}
}  // namespace

TEST_CASE("masking: single client degenerates to quantization", "[privacy]") {
  std::vector<double> params{0.5, -1.25, 3.0};
  auto masked = mask_update(params, 1, {}, 0);
  auto sum = unmask_sum(std::vector<MaskedUpdate>{masked});
  for (std::size_t i = 0; i < params.size(); ++i)
    REQUIRE_THAT(sum[i], Catch::Matchers::WithinAbs(params[i], 1.0 / kFixedPointScale));
}

TEST_CASE("masking: full-round sum equals the plaintext mean", "[privacy]") {
  Rng rng(2024);
  const std::vector<int> clients{1, 2, 3};
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 17;
    std::vector<std::vector<double>> params(clients.size(), std::vector<double>(dim));
    for (auto& p : params)
      for (double& v : p) v = rng.uniform(-50.0, 50.0);
    std::vector<MaskedUpdate> updates;
    for (std::size_t c = 0; c < clients.size(); ++c)
      updates.push_back(mask_update(params[c], clients[c],
                                    pair_seeds_for(clients[c], clients, 99),
                                    static_cast<std::uint64_t>(trial)));
    auto sum = unmask_sum(updates);
    for (std::size_t i = 0; i < dim; ++i) {
      double plain = 0.0;
      for (const auto& p : params) plain += p[i];
      REQUIRE_THAT(sum[i] / 3.0, Catch::Matchers::WithinAbs(plain / 3.0, 1e-5));
    }
  }
}

TEST_CASE("masking: a dropped client leaves residual masks", "[privacy]") {
  const std::vector<int> clients{1, 2, 3};
  const std::size_t dim = 64;
  std::vector<double> zeros(dim, 0.0);
  std::vector<MaskedUpdate> updates;
  for (int c : {1, 2})
    updates.push_back(mask_update(zeros, c, pair_seeds_for(c, clients, 99), 5));
  auto sum = unmask_sum(updates);
  // Masks toward client 3 do not cancel; the sum must be far from zero
  // somewhere (each residual coordinate is uniform over the modulus).
  double max_abs = 0.0;
  for (double v : sum) max_abs = std::max(max_abs, std::abs(v));
  REQUIRE(max_abs > 1.0);
}

TEST_CASE("masking: a single masked update shows no coordinate bias", "[privacy]") {
  const std::vector<int> clients{1, 2};
  const std::size_t dim = 8;
  std::vector<double> params(dim, 1.0);
  const int trials = 1000;
  std::vector<double> mean(dim, 0.0);
  for (int t = 0; t < trials; ++t) {
    auto u = mask_update(params, 1, pair_seeds_for(1, clients, 4242),
                         static_cast<std::uint64_t>(t));
    for (std::size_t i = 0; i < dim; ++i)
      mean[i] += static_cast<double>(u.values[i]) * 0x1.0p-64;
  }
  // Mean of U(0,1) over 1000 draws: sigma = 1/sqrt(12*1000) ~ 0.00913.
  for (std::size_t i = 0; i < dim; ++i)
    REQUIRE(std::abs(mean[i] / trials - 0.5) < 4.0 * 0.00913);
}

TEST_CASE("masking: unmask_sum validates the round", "[privacy]") {
  std::vector<double> params{1.0};
  auto a = mask_update(params, 1, {}, 0);
  auto b = mask_update(params, 1, {}, 0);
  REQUIRE_THROWS_AS(unmask_sum(std::vector<MaskedUpdate>{a, b}), ProtocolError);
  auto c = mask_update(params, 2, {}, 1);
  REQUIRE_THROWS_AS(unmask_sum(std::vector<MaskedUpdate>{a, c}), ProtocolError);
}

TEST_CASE("aead: round trip and tamper rejection", "[privacy]") {
  auto alice = make_keypair(1);
  auto bob = make_keypair(2);
  auto k1 = derive_session_key(alice.sk, alice.pk, bob.pk);
  auto k2 = derive_session_key(bob.sk, bob.pk, alice.pk);
  REQUIRE(k1 == k2);

  std::vector<std::uint8_t> msg{1, 2, 3, 4, 5, 200, 0, 77};
  std::array<std::uint8_t, kNonceBytes> nonce{};
  nonce[0] = 9;
  auto sealed = seal_bytes(msg, k1, nonce);
  REQUIRE(sealed.size() == kNonceBytes + kTagBytes + msg.size());
  REQUIRE(open_bytes(sealed, k2) == msg);

  for (std::size_t bit = 0; bit < sealed.size() * 8; bit += 37) {
    auto tampered = sealed;
    tampered[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    REQUIRE_THROWS_AS(open_bytes(tampered, k2), CryptoError);
  }
}

TEST_CASE("session cipher: fresh nonces and replay rejection", "[privacy]") {
  auto alice = make_keypair(3);
  auto bob = make_keypair(4);
  auto key = derive_session_key(alice.sk, alice.pk, bob.pk);
  SessionCipher tx(key, 7), rx(key, 7);
  std::vector<std::uint8_t> msg{42, 42, 42};
  auto s1 = tx.seal(msg);
  auto s2 = tx.seal(msg);
  REQUIRE(s1 != s2);  // distinct nonces, distinct ciphertexts
  REQUIRE(rx.open(s1) == msg);
  REQUIRE(rx.open(s2) == msg);
  REQUIRE_THROWS_AS(rx.open(s1), CryptoError);  // replay
}

TEST_CASE("mask seeds agree across the pair", "[privacy]") {
  auto a = make_keypair(10);
  auto b = make_keypair(11);
  REQUIRE(derive_mask_seed(a.sk, a.pk, b.pk) == derive_mask_seed(b.sk, b.pk, a.pk));
  auto c = make_keypair(12);
  REQUIRE(derive_mask_seed(a.sk, a.pk, b.pk) != derive_mask_seed(a.sk, a.pk, c.pk));
}

TEST_CASE("base64 round trip", "[privacy]") {
  std::vector<std::uint8_t> data{0, 1, 2, 255, 254, 77, 0, 9};
  REQUIRE(from_base64(to_base64(data)) == data);
  REQUIRE_THROWS_AS(from_base64("!!not base64!!"), IoError);
}
