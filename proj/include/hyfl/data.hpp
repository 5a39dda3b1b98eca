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
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/rng.hpp"

namespace hyfl {

inline constexpr std::size_t kTxFeatureCount = 7;
inline constexpr int kMaxFlag = 11;
inline constexpr int kHighFlagThreshold = 8;
// flag/11 scalar plus a 12-way one-hot.
inline constexpr std::size_t kAccountFeatureDim = 13;

struct TransactionRecord {
  std::uint64_t tx_id = 0;
  std::array<double, kTxFeatureCount> features{};
  std::uint64_t sender_account = 0;
  std::uint64_t receiver_account = 0;
  int label = 0;  // 0 benign, 1 crime

  bool operator==(const TransactionRecord&) const = default;
};

struct AccountRecord {
  std::uint64_t account_id = 0;
  int flag = 0;  // status code in [0, 11]

  bool operator==(const AccountRecord&) const = default;
};

struct Dataset {
  std::vector<TransactionRecord> transactions;
  std::map<std::uint64_t, AccountRecord> accounts;
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;

  bool operator==(const Dataset&) const = default;
};

struct AccountShard {
  int client_id = 0;  // in [1, M]
  std::vector<AccountRecord> records;
};

struct GenConfig {
  std::size_t n_train = 100000;
  double positive_rate = 0.01;
  std::size_t n_accounts = 20000;
  double flag_crime_correlation = 0.8;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_train < 1) throw ValidationError("n_train must be >= 1");
    if (n_accounts < 2)
      throw ValidationError("n_accounts must be >= 2 to draw sender != receiver");
    if (!(positive_rate > 0.0 && positive_rate < 1.0))
      throw ValidationError("positive_rate must lie in (0,1)");
    if (!(flag_crime_correlation >= 0.0 && flag_crime_correlation <= 1.0))
      throw ValidationError("flag_crime_correlation must lie in [0,1]");
  }
};

namespace detail {

// Flag marginal: skewed toward low codes, ~7% of accounts at 8-11.
inline int draw_flag(Rng& rng) {
  static constexpr double w[12] = {30, 20, 14, 10, 7, 5, 4, 3, 2.5, 2, 1.5, 1};
  static constexpr double total = 100.0;
  double u = rng.uniform() * total;
  for (int f = 0; f < 12; ++f) {
    if (u < w[f]) return f;
    u -= w[f];
  }
  return kMaxFlag;
}

inline double lognormal(Rng& rng, double mu, double sigma) {
  return std::exp(rng.normal(mu, sigma));
}

// The upstream risk score (f7) carries a mean shift for crime rows; its
// measurement noise also shows up in the raw sensor reading (f5), which has
// no class shift of its own. Both columns together are worth more than f7
// alone to a model that can subtract them.
inline void fill_risk_pair(Rng& rng, std::array<double, kTxFeatureCount>& f,
                           double shift) {
  const double noise = rng.normal(0.0, 1.0);
  f[6] = shift + noise;
  f[4] = 0.9 * noise + rng.normal(0.0, 0.436);
}

// Benign transactions: amount and per-currency average agree up to noise,
// moderate frequency, neutral risk score.
inline std::array<double, kTxFeatureCount> benign_features(Rng& rng) {
  std::array<double, kTxFeatureCount> f{};
  f[0] = lognormal(rng, 6.0, 0.95);              // amount
  f[1] = lognormal(rng, 2.0, 0.6);               // frequency
  f[2] = f[0] * std::exp(rng.normal(0.0, 0.6));  // currency average amount
  f[3] = rng.uniform(0.0, 24.0);                 // hour
  f[5] = lognormal(rng, 4.0, 1.0);               // account age
  fill_risk_pair(rng, f, 0.0);
  return f;
}

// Crime transactions come in three modes: repeated just-below-threshold
// amounts at elevated frequency, single large transfers far above the
// currency average, and a disguised share drawn straight from the benign
// generator (indistinguishable in transaction features; only the account
// side can flag it). Signal is carried by feature interactions with heavy
// overlap against benign tails, not by any single monotone shift.
inline std::array<double, kTxFeatureCount> crime_features(Rng& rng) {
  const double mode = rng.uniform();
  std::array<double, kTxFeatureCount> f{};
  if (mode < 0.35) {
    // disguised: clean transaction features, only the risk score shifts
    f = benign_features(rng);
  } else if (mode < 0.675) {
    // structuring: amount band under a reporting threshold, busier sender
    f[0] = rng.normal(5000.0, 1500.0);
    f[1] = lognormal(rng, 2.8, 0.55);
    f[2] = f[0] * std::exp(rng.normal(0.0, 0.6));
    f[3] = rng.uniform(0.0, 24.0);
    f[5] = lognormal(rng, 3.1, 1.0);
  } else {
    // big grab: large against the currency average, infrequent, night-skewed
    f[0] = lognormal(rng, 7.6, 0.9);
    f[1] = lognormal(rng, 1.4, 0.6);
    f[2] = f[0] * std::exp(-(0.8 + std::abs(rng.normal(0.0, 0.6))));
    f[3] = rng.uniform() < 0.5 ? rng.uniform(0.0, 6.0) : rng.uniform(0.0, 24.0);
    f[5] = lognormal(rng, 3.1, 1.0);
  }
  // Every crime row shifts the risk score, disguised ones included.
  fill_risk_pair(rng, f, 0.9);
  return f;
}

// Exact positive count, randomly placed.
inline std::vector<int> make_labels(std::size_t n, double rate, Rng& rng) {
  const auto n_pos = static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
  std::vector<int> labels(n, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(std::min(n_pos, n)), 1);
  rng.shuffle(labels);
  return labels;
}

}  // namespace detail

/// Generates a synthetic transactions-plus-accounts dataset. Deterministic
/// under the config seed; test split is ceil(n_train / 4) rows.
inline Dataset generate(const GenConfig& config) {
  config.validate();
  Dataset ds;
  Rng acc_rng(derive_seed(config.seed, "accounts"));
  std::vector<std::uint64_t> high_flag_pool;
  for (std::uint64_t id = 0; id < config.n_accounts; ++id) {
    AccountRecord rec{id, detail::draw_flag(acc_rng)};
    if (rec.flag >= kHighFlagThreshold) high_flag_pool.push_back(id);
    ds.accounts.emplace(id, rec);
  }

  const std::size_t n_test = (config.n_train + 3) / 4;
  Rng tx_rng(derive_seed(config.seed, "transactions"));
  Rng label_rng(derive_seed(config.seed, "labels"));
  auto train_labels = detail::make_labels(config.n_train, config.positive_rate, label_rng);
  auto test_labels = detail::make_labels(n_test, config.positive_rate, label_rng);

  std::uint64_t next_tx = 0;
  auto emit = [&](int label) {
    TransactionRecord tx;
    tx.tx_id = next_tx++;
    tx.label = label;
    tx.features = label ? detail::crime_features(tx_rng) : detail::benign_features(tx_rng);
    tx.sender_account = tx_rng.below(config.n_accounts);
    // The pool draw must have a candidate other than the sender.
    const bool use_pool = label == 1 && !high_flag_pool.empty() &&
                          tx_rng.uniform() < config.flag_crime_correlation &&
                          !(high_flag_pool.size() == 1 &&
                            high_flag_pool.front() == tx.sender_account);
    do {
      tx.receiver_account = use_pool
                                ? high_flag_pool[tx_rng.below(high_flag_pool.size())]
                                : tx_rng.below(config.n_accounts);
    } while (tx.receiver_account == tx.sender_account);
    ds.transactions.push_back(tx);
  };

  for (int label : train_labels) emit(label);
  for (int label : test_labels) emit(label);
  ds.train_idx.resize(config.n_train);
  std::iota(ds.train_idx.begin(), ds.train_idx.end(), 0);
  ds.test_idx.resize(n_test);
  std::iota(ds.test_idx.begin(), ds.test_idx.end(), config.n_train);
  return ds;
}

/// Splits the account book into m disjoint shards with sizes differing by at
/// most one. Deterministic under the seed.
inline std::vector<AccountShard> shard_accounts(const Dataset& dataset, std::size_t m,
                                                std::uint64_t seed) {
  if (m < 1 || m > dataset.accounts.size())
    throw ValidationError("shard count must lie in [1, account count]");
  std::vector<AccountRecord> pool;
  pool.reserve(dataset.accounts.size());
  for (const auto& [id, rec] : dataset.accounts) pool.push_back(rec);
  Rng rng(derive_seed(seed, "shards"));
  rng.shuffle(pool);

  std::vector<AccountShard> shards(m);
  const std::size_t base = pool.size() / m;
  const std::size_t extra = pool.size() % m;
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < m; ++s) {
    const std::size_t take = base + (s < extra ? 1 : 0);
    shards[s].client_id = static_cast<int>(s + 1);
    shards[s].records.assign(pool.begin() + static_cast<std::ptrdiff_t>(cursor),
                             pool.begin() + static_cast<std::ptrdiff_t>(cursor + take));
    cursor += take;
  }
  return shards;
}

/// 13-dim encoding of an account flag: normalized scalar plus one-hot.
inline std::vector<double> encode_flag(int flag) {
  if (flag < 0 || flag > kMaxFlag) throw ValidationError("flag out of range [0,11]");
  std::vector<double> out(kAccountFeatureDim, 0.0);
  out[0] = static_cast<double>(flag) / static_cast<double>(kMaxFlag);
  out[1 + static_cast<std::size_t>(flag)] = 1.0;
  return out;
}

/// Encodes a shard's records (ordered by account id) into a feature matrix
/// for autoencoder training.
inline Matrix encode_shard(const AccountShard& shard) {
  std::vector<AccountRecord> ordered = shard.records;
  std::sort(ordered.begin(), ordered.end(),
            [](const AccountRecord& a, const AccountRecord& b) {
              return a.account_id < b.account_id;
            });
  Matrix out(ordered.size(), kAccountFeatureDim);
  for (std::size_t r = 0; r < ordered.size(); ++r) {
    auto enc = encode_flag(ordered[r].flag);
    std::copy(enc.begin(), enc.end(), out.row(r).begin());
  }
  return out;
}

enum class Sampling { None, RandomUnder, RandomOver, Smote, Reweight };

struct RebalanceResult {
  Matrix rows;
  std::vector<int> labels;
  std::vector<double> weights;
};

/// Class-imbalance handling on a labeled feature matrix.
///  - RandomUnder: drop negatives at random until classes match.
///  - RandomOver: append positives sampled with replacement until classes match.
///  - Smote: append synthetic positives interpolated toward one of the k=5
///    nearest positive neighbours (Euclidean over the trailing
///    min(cols, 7) columns, i.e. the transaction block of a joined row).
///  - Reweight: rows untouched, positive weight = #neg / #pos.
inline RebalanceResult rebalance(const Matrix& rows, std::span<const int> labels,
                                 Sampling method, std::uint64_t seed) {
  if (rows.rows() != labels.size())
    throw ValidationError("rows and labels differ in length");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw ValidationError("rebalance needs both classes present");

  RebalanceResult out;
  Rng rng(derive_seed(seed, "rebalance"));

  auto copy_subset = [&](const std::vector<std::size_t>& keep) {
    out.rows = Matrix(keep.size(), rows.cols());
    out.labels.resize(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      std::copy(rows.row(keep[r]).begin(), rows.row(keep[r]).end(), out.rows.row(r).begin());
      out.labels[r] = labels[keep[r]];
    }
    out.weights.assign(keep.size(), 1.0);
  };

  switch (method) {
    case Sampling::None: {
      std::vector<std::size_t> all(labels.size());
      std::iota(all.begin(), all.end(), 0);
      copy_subset(all);
      break;
    }
    case Sampling::RandomUnder: {
      std::vector<std::size_t> kept_neg = neg;
      rng.shuffle(kept_neg);
      kept_neg.resize(std::min(neg.size(), pos.size()));
      std::vector<std::size_t> keep = pos;
      keep.insert(keep.end(), kept_neg.begin(), kept_neg.end());
      std::sort(keep.begin(), keep.end());  // preserve original row order
      copy_subset(keep);
      break;
    }
    case Sampling::RandomOver: {
      std::vector<std::size_t> keep(labels.size());
      std::iota(keep.begin(), keep.end(), 0);
      for (std::size_t extra = neg.size() > pos.size() ? neg.size() - pos.size() : 0;
           extra > 0; --extra)
        keep.push_back(pos[rng.below(pos.size())]);
      copy_subset(keep);
      break;
    }
    case Sampling::Smote: {
      if (pos.size() < 2) throw ValidationError("SMOTE needs at least 2 positives");
      const std::size_t n_synth = neg.size() > pos.size() ? neg.size() - pos.size() : 0;
      const std::size_t k = std::min<std::size_t>(5, pos.size() - 1);
      const std::size_t dist_lo = rows.cols() > kTxFeatureCount
                                      ? rows.cols() - kTxFeatureCount
                                      : 0;  // trailing transaction block
      // k nearest positive neighbours of each positive, excluding self.
      std::vector<std::vector<std::size_t>> knn(pos.size());
      for (std::size_t a = 0; a < pos.size(); ++a) {
        std::vector<std::pair<double, std::size_t>> d;
        d.reserve(pos.size() - 1);
        for (std::size_t b = 0; b < pos.size(); ++b) {
          if (a == b) continue;
          double s = 0.0;
          for (std::size_t c = dist_lo; c < rows.cols(); ++c) {
            const double diff = rows(pos[a], c) - rows(pos[b], c);
            s += diff * diff;
          }
          d.emplace_back(s, b);
        }
        std::stable_sort(d.begin(), d.end(),
                         [](const auto& x, const auto& y) { return x.first < y.first; });
        for (std::size_t j = 0; j < k; ++j) knn[a].push_back(d[j].second);
      }
      out.rows = Matrix(labels.size() + n_synth, rows.cols());
      out.labels.resize(labels.size() + n_synth);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        std::copy(rows.row(r).begin(), rows.row(r).end(), out.rows.row(r).begin());
        out.labels[r] = labels[r];
      }
      for (std::size_t s = 0; s < n_synth; ++s) {
        const std::size_t a = rng.below(pos.size());
        const std::size_t b = knn[a][rng.below(k)];
        const double u = rng.uniform();
        const std::size_t r = labels.size() + s;
        for (std::size_t c = 0; c < rows.cols(); ++c)
          out.rows(r, c) = rows(pos[a], c) + u * (rows(pos[b], c) - rows(pos[a], c));
        out.labels[r] = 1;
      }
      out.weights.assign(out.labels.size(), 1.0);
      break;
    }
    case Sampling::Reweight: {
      std::vector<std::size_t> all(labels.size());
      std::iota(all.begin(), all.end(), 0);
      copy_subset(all);
      const double w_pos =
          static_cast<double>(neg.size()) / static_cast<double>(pos.size());
      for (std::size_t i = 0; i < out.labels.size(); ++i)
        out.weights[i] = out.labels[i] == 1 ? w_pos : 1.0;
      break;
    }
  }
  return out;
}

/// Subsamples train indices keeping the class ratio (counts rounded per
/// class). fraction = 1 returns the indices unchanged.
inline std::vector<std::size_t> subsample_train(const Dataset& ds, double fraction,
                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("fraction must lie in (0,1]");
  if (fraction == 1.0) return ds.train_idx;
  std::vector<std::size_t> pos, neg;
  for (std::size_t i : ds.train_idx)
    (ds.transactions[i].label == 1 ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, "fraction"));
  rng.shuffle(pos);
  rng.shuffle(neg);
  pos.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pos.size()))));
  neg.resize(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(neg.size()))));
  std::vector<std::size_t> keep = pos;
  keep.insert(keep.end(), neg.begin(), neg.end());
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Feature matrix and label vector for a set of transaction indices.
inline std::pair<Matrix, std::vector<int>> tx_feature_matrix(
    const Dataset& ds, std::span<const std::size_t> indices) {
  Matrix m(indices.size(), kTxFeatureCount);
  std::vector<int> labels(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& tx = ds.transactions[indices[r]];
    std::copy(tx.features.begin(), tx.features.end(), m.row(r).begin());
    labels[r] = tx.label;
  }
  return {std::move(m), std::move(labels)};
}

// ---------------------------------------------------------------------------
// CSV import/export. transactions.csv: tx_id,f1..f7,sender,receiver,label;
// accounts.csv: account_id,flag. UTF-8, header row, '.' decimal separator.

namespace detail {
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}
}  // namespace detail

inline void export_csv(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream tx(dir / "transactions.csv");
    if (!tx) throw IoError("cannot write transactions.csv");
    tx << "tx_id,f1,f2,f3,f4,f5,f6,f7,sender,receiver,label\n";
    for (const auto& t : ds.transactions) {
      tx << t.tx_id;
      for (double f : t.features) tx << ',' << detail::fmt_double(f);
      tx << ',' << t.sender_account << ',' << t.receiver_account << ',' << t.label << '\n';
    }
  }
  {
    std::ofstream ac(dir / "accounts.csv");
    if (!ac) throw IoError("cannot write accounts.csv");
    ac << "account_id,flag\n";
    for (const auto& [id, rec] : ds.accounts) ac << id << ',' << rec.flag << '\n';
  }
}

/// Reads the two-file CSV layout written by export_csv. The train/test split
/// is reconstructed from the row count: train = floor(4N/5), matching the
/// generator's test-set rule (test = ceil(train/4)).
inline Dataset import_csv(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream ac(dir / "accounts.csv");
    if (!ac) throw IoError("cannot read accounts.csv");
    std::string line;
    std::getline(ac, line);  // header
    while (std::getline(ac, line)) {
      if (line.empty()) continue;
      auto cells = detail::split_csv_line(line);
      if (cells.size() != 2) throw IoError("accounts.csv: bad column count");
      AccountRecord rec{std::stoull(cells[0]), std::stoi(cells[1])};
      if (rec.flag < 0 || rec.flag > kMaxFlag) throw IoError("accounts.csv: flag out of range");
      ds.accounts.emplace(rec.account_id, rec);
    }
  }
  {
    std::ifstream tx(dir / "transactions.csv");
    if (!tx) throw IoError("cannot read transactions.csv");
    std::string line;
    std::getline(tx, line);  // header
    while (std::getline(tx, line)) {
      if (line.empty()) continue;
      auto cells = detail::split_csv_line(line);
      if (cells.size() != 11) throw IoError("transactions.csv: bad column count");
      TransactionRecord t;
      t.tx_id = std::stoull(cells[0]);
      for (std::size_t i = 0; i < kTxFeatureCount; ++i) t.features[i] = std::stod(cells[1 + i]);
      t.sender_account = std::stoull(cells[8]);
      t.receiver_account = std::stoull(cells[9]);
      t.label = std::stoi(cells[10]);
      if (t.label != 0 && t.label != 1) throw IoError("transactions.csv: label must be 0/1");
      if (t.sender_account == t.receiver_account)
        throw IoError("transactions.csv: sender equals receiver");
      if (!ds.accounts.count(t.sender_account) || !ds.accounts.count(t.receiver_account))
        throw IoError("transactions.csv: unresolved account id");
      ds.transactions.push_back(t);
    }
  }
  const std::size_t n = ds.transactions.size();
  const std::size_t n_train = 4 * n / 5;
  ds.train_idx.resize(n_train);
  std::iota(ds.train_idx.begin(), ds.train_idx.end(), 0);
  ds.test_idx.resize(n - n_train);
  std::iota(ds.test_idx.begin(), ds.test_idx.end(), n_train);
  return ds;
}

}  // namespace hyfl
