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
#include <numeric>
#include <span>
#include <vector>

#include "hyfl/errors.hpp"

namespace hyfl {

namespace detail {
inline void check_scores_labels(std::span<const double> scores,
                                std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ValidationError("scores and labels differ in length");
  if (scores.empty()) throw ValidationError("empty score set");
  for (double s : scores)
    if (!std::isfinite(s)) throw ValidationError("non-finite score");
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0/1");
    pos += static_cast<std::size_t>(y);
  }
  if (pos == 0 || pos == labels.size())
    throw ValidationError("metrics need at least one positive and one negative");
}
}  // namespace detail

/// Area under the precision-recall curve: sum over descending score
/// thresholds of (R_k - R_{k-1}) * P_k, with R_0 = 0. Tied scores are
/// grouped at a single threshold.
inline double aucpr(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores_labels(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t total_pos = 0;
  for (int y : labels) total_pos += static_cast<std::size_t>(y);

  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < n) {
    // Advance over the whole tie group.
    const double t = scores[order[i]];
    while (i < n && scores[order[i]] == t) {
      if (labels[order[i]] == 1)
        ++tp;
      else
        ++fp;
      ++i;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

struct Prf1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 at a fixed threshold (predicted positive when
/// score >= threshold). Zero-denominator convention: precision = 0 with no
/// predicted positives, recall = 0 with no actual positives, f1 = 0 when
/// p + r = 0.
inline Prf1 prf1(std::span<const double> scores, std::span<const int> labels,
                 double threshold = 0.5) {
  detail::check_scores_labels(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
  }
  Prf1 out;
  out.precision = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  out.recall = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  out.f1 = (out.precision + out.recall > 0.0)
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

/// ROC AUC via the rank statistic; ties contribute half. Used by the attack
/// reports, where member/non-member sets are balanced.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_scores_labels(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks across tie groups.
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j - 1) + 1.0;  // 1-based
    for (std::size_t k = i; k < j; ++k) rank[order[k]] = r;
    i = j;
  }
  double pos_rank_sum = 0.0;
  std::size_t npos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (labels[k] == 1) {
      pos_rank_sum += rank[k];
      ++npos;
    }
  }
  const std::size_t nneg = n - npos;
  return (pos_rank_sum - static_cast<double>(npos) * (npos + 1) / 2.0) /
         (static_cast<double>(npos) * static_cast<double>(nneg));
}

}  // namespace hyfl
