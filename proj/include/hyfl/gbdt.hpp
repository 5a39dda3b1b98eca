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
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/matrix.hpp"
#include "hyfl/nn.hpp"

namespace hyfl {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf contribution, learning rate applied
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root

  double eval(std::span<const double> x) const {
    int cur = 0;
    while (nodes[cur].feature >= 0)
      cur = x[static_cast<std::size_t>(nodes[cur].feature)] < nodes[cur].threshold
                ? nodes[cur].left
                : nodes[cur].right;
    return nodes[cur].value;
  }
};

struct GbdtOptions {
  std::size_t rounds = 50;
  int max_depth = 4;
  double learning_rate = 0.3;
  double lambda = 1.0;           // L2 on leaf values
  double min_child_hessian = 1e-3;
};

struct GbdtModel {
  std::vector<Tree> trees;
  double base_score = 0.0;  // logit space
  std::size_t n_features = 0;

  double predict_logit(std::span<const double> x) const {
    if (x.size() != n_features) throw ValidationError("feature dimension mismatch");
    double z = base_score;
    for (const auto& t : trees) z += t.eval(x);
    return z;
  }

  double predict(std::span<const double> x) const { return sigmoid(predict_logit(x)); }
};

inline bool x_goes_left(const Matrix& rows, std::size_t i, const TreeNode& node) {
  return rows(i, static_cast<std::size_t>(node.feature)) < node.threshold;
}

/// Gradient boosting with logistic loss. Exact greedy splits: every distinct
/// value boundary is a candidate, scanned over globally presorted feature
/// orders with per-node accumulators. Leaf values are the second-order step
/// -G / (H + lambda) scaled by the learning rate. Fully deterministic: ties
/// resolve to the lowest feature index and earliest boundary.
inline GbdtModel gbdt_train(const Matrix& rows, std::span<const int> labels,
                            std::span<const double> weights, const GbdtOptions& opt) {
  const std::size_t n = rows.rows();
  const std::size_t n_feat = rows.cols();
  if (n == 0 || labels.size() != n || weights.size() != n)
    throw ValidationError("rows/labels/weights length mismatch");
  if (!rows.all_finite()) throw ValidationError("non-finite features");

  GbdtModel model;
  model.n_features = n_feat;

  // Presort each feature once; ties keep index order so runs of equal
  // values (including duplicated rows) stay adjacent.
  std::vector<std::vector<std::uint32_t>> sorted(n_feat);
  for (std::size_t f = 0; f < n_feat; ++f) {
    auto& ord = sorted[f];
    ord.resize(n);
    std::iota(ord.begin(), ord.end(), 0u);
    std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
      return rows(a, f) < rows(b, f);
    });
  }

  std::vector<double> logits(n, model.base_score);
  std::vector<double> grad(n), hess(n);
  std::vector<std::int32_t> node_of_row(n);

  struct NodeStats {
    double g_total = 0.0, h_total = 0.0;
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    bool open = false;  // candidate for splitting at this level
    // per-feature scan accumulators
    double g_left = 0.0, h_left = 0.0;
    double prev_value = 0.0;
    bool seen = false;
  };

  for (std::size_t round = 0; round < opt.rounds; ++round) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(logits[i]);
      grad[i] = weights[i] * (p - static_cast<double>(labels[i]));
      hess[i] = weights[i] * p * (1.0 - p);
    }

    Tree tree;
    tree.nodes.push_back({});
    std::fill(node_of_row.begin(), node_of_row.end(), 0);
    std::vector<int> level_nodes{0};

    for (int depth = 0; depth < opt.max_depth && !level_nodes.empty(); ++depth) {
      std::vector<NodeStats> stats(tree.nodes.size());
      for (int nid : level_nodes) stats[static_cast<std::size_t>(nid)].open = true;
      for (std::size_t i = 0; i < n; ++i) {
        auto& s = stats[static_cast<std::size_t>(node_of_row[i])];
        if (!s.open) continue;
        s.g_total += grad[i];
        s.h_total += hess[i];
      }
      auto score = [&](double g, double h) { return g * g / (h + opt.lambda); };

      for (std::size_t f = 0; f < n_feat; ++f) {
        for (int nid : level_nodes) {
          auto& s = stats[static_cast<std::size_t>(nid)];
          s.g_left = s.h_left = 0.0;
          s.seen = false;
        }
        for (std::uint32_t r : sorted[f]) {
          auto& s = stats[static_cast<std::size_t>(node_of_row[r])];
          if (!s.open) continue;
          const double v = rows(r, f);
          if (s.seen && v > s.prev_value) {
            const double g_r = s.g_total - s.g_left;
            const double h_r = s.h_total - s.h_left;
            if (s.h_left >= opt.min_child_hessian && h_r >= opt.min_child_hessian) {
              const double gain = 0.5 * (score(s.g_left, s.h_left) + score(g_r, h_r) -
                                         score(s.g_total, s.h_total));
              if (gain > s.best_gain) {
                s.best_gain = gain;
                s.best_feature = static_cast<int>(f);
                s.best_threshold = 0.5 * (s.prev_value + v);
              }
            }
          }
          s.g_left += grad[r];
          s.h_left += hess[r];
          s.prev_value = v;
          s.seen = true;
        }
      }

      std::vector<int> next_level;
      for (int nid : level_nodes) {
        auto& s = stats[static_cast<std::size_t>(nid)];
        auto& node = tree.nodes[static_cast<std::size_t>(nid)];
        if (s.best_feature < 0 || s.best_gain <= 0.0) {
          node.value = -s.g_total / (s.h_total + opt.lambda) * opt.learning_rate;
          continue;
        }
        node.feature = s.best_feature;
        node.threshold = s.best_threshold;
        node.left = static_cast<int>(tree.nodes.size());
        node.right = node.left + 1;
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        next_level.push_back(node.left);
        next_level.push_back(node.right);
      }
      // Last level: children become leaves below; re-route rows first.
      for (std::size_t i = 0; i < n; ++i) {
        const auto& node = tree.nodes[static_cast<std::size_t>(node_of_row[i])];
        if (node.feature >= 0)
          node_of_row[i] = x_goes_left(rows, i, node) ? node.left : node.right;
      }
      if (depth == opt.max_depth - 1) {
        // Depth budget exhausted: score the fresh children as leaves.
        std::vector<double> g_leaf(tree.nodes.size(), 0.0), h_leaf(tree.nodes.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          g_leaf[static_cast<std::size_t>(node_of_row[i])] += grad[i];
          h_leaf[static_cast<std::size_t>(node_of_row[i])] += hess[i];
        }
        for (int nid : next_level) {
          auto& node = tree.nodes[static_cast<std::size_t>(nid)];
          node.value = -g_leaf[static_cast<std::size_t>(nid)] /
                       (h_leaf[static_cast<std::size_t>(nid)] + opt.lambda) *
                       opt.learning_rate;
        }
        next_level.clear();
      }
      level_nodes = std::move(next_level);
    }

    for (std::size_t i = 0; i < n; ++i)
      logits[i] += tree.nodes[static_cast<std::size_t>(node_of_row[i])].value;
    model.trees.push_back(std::move(tree));
  }
  return model;
}

/// Weighted mean logistic loss of raw logits; used by the monotonicity
/// checks on boosting rounds.
inline double weighted_logloss(std::span<const double> logits, std::span<const int> labels,
                               std::span<const double> weights) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    // log(1 + e^z) - y z, computed stably
    const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    num += weights[i] * (softplus - static_cast<double>(labels[i]) * z);
    den += weights[i];
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace hyfl
