#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>

namespace dephn::metrics {

/// Raised when AUC is requested on labels of a single class.
class SingleClassError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mean negative log-likelihood with predictions clamped to (clamp, 1 - clamp).
double logloss(std::span<const double> predictions, std::span<const double> labels, double clamp = 1e-7);

/// AUC as the exact rational `wins / pairs`, where `wins` counts twice the
/// number of positive-over-negative pairs plus the ties, and `pairs` is
/// 2 * positives * negatives.
struct AucFraction {
  std::uint64_t wins = 0;
  std::uint64_t pairs = 0;

  double value() const { return static_cast<double>(wins) / static_cast<double>(pairs); }
  friend bool operator==(const AucFraction&, const AucFraction&) = default;
};

/// Rank-statistic AUC in O(N log N). Labels are 1 for positive and 0 otherwise.
/// Throws SingleClassError when either class is absent.
AucFraction auc_fraction(std::span<const double> scores, std::span<const double> labels);
double auc(std::span<const double> scores, std::span<const double> labels);

}  // namespace dephn::metrics
