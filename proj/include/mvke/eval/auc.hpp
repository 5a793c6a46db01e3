#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "mvke/errors.hpp"

namespace mvke {

/// Area under the ROC curve: probability that a random positive outranks a
/// random negative, ties credited 0.5. O(n log n) via sorting.
///
/// Pair credit is accumulated in half-units as an integer and divided once,
/// so the result is bit-identical to an exhaustive pairwise count.
template <typename S, typename L>
double auc(std::span<const S> scores, std::span<const L> labels) {
  if (scores.size() != labels.size()) throw ConfigError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  std::uint64_t positives = 0, negatives = 0;
  std::uint64_t half_credit = 0;  // 2 * (wins + 0.5 * ties)
  std::uint64_t negatives_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t pos_group = 0, neg_group = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      const auto y = labels[order[j]];
      if (y == L(1)) ++pos_group;
      else if (y == L(0)) ++neg_group;
      else throw DataError("auc: labels must be 0 or 1");
      ++j;
    }
    half_credit += pos_group * (2 * negatives_below + neg_group);
    negatives_below += neg_group;
    positives += pos_group;
    negatives += neg_group;
    i = j;
  }
  if (positives == 0 || negatives == 0)
    throw DataError("auc is undefined without both positive and negative labels");
  return static_cast<double>(half_credit) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

template <typename S, typename L>
double auc(const std::vector<S>& scores, const std::vector<L>& labels) {
  return auc(std::span<const S>(scores), std::span<const L>(labels));
}

}  // namespace mvke
