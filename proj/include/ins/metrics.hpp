#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "ins/error.hpp"

namespace ins {

struct RocResult {
  double auc = 0.0;
  int n_pos = 0;
  int n_neg = 0;
  double threshold_accuracy = 0.0;  // fraction correct at score >= 0.5
};

/// Mann-Whitney ROC-AUC with midranks for tied scores.
inline RocResult roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw DimensionError("roc_auc: " + std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                         " labels");
  RocResult r;
  int correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("roc_auc: labels must be 0 or 1");
    (labels[i] ? r.n_pos : r.n_neg)++;
    correct += (scores[i] >= 0.5) == (labels[i] == 1);
  }
  if (r.n_pos == 0 || r.n_neg == 0)
    throw UndefinedAucError("need both classes, got " + std::to_string(r.n_pos) + " positive and " +
                            std::to_string(r.n_neg) + " negative");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]]) pos_rank_sum += midrank;
    i = j;
  }
  const double np = r.n_pos, nn = r.n_neg;
  r.auc = (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
  r.threshold_accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  return r;
}

}  // namespace ins
