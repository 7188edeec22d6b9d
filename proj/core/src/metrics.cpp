#include "dephn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace dephn::metrics {

double logloss(std::span<const double> predictions, std::span<const double> labels, double clamp) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("logloss: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (predictions.empty()) throw std::invalid_argument("logloss: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = std::clamp(predictions[i], clamp, 1.0 - clamp);
    acc += labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
  }
  return -acc / static_cast<double>(predictions.size());
}

AucFraction auc_fraction(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("auc: " + std::to_string(scores.size()) + " scores vs " +
                                std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score order. Each positive beats every
  // negative seen in earlier groups and ties with the negatives of its own group.
  std::uint64_t positives = 0, negatives = 0, wins = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::uint64_t group_pos = 0, group_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] > 0.5 ? group_pos : group_neg) += 1;
      ++j;
    }
    wins += group_pos * (2 * negatives + group_neg);
    positives += group_pos;
    negatives += group_neg;
    i = j;
  }
  if (positives == 0 || negatives == 0) {
    throw SingleClassError("auc undefined: labels contain only " + std::string(positives ? "positives" : "negatives"));
  }
  return AucFraction{wins, 2 * positives * negatives};
}

double auc(std::span<const double> scores, std::span<const double> labels) {
  return auc_fraction(scores, labels).value();
}

}  // namespace dephn::metrics
