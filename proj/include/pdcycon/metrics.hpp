#pragma once

#include <cstdint>
#include <span>

namespace pdcycon::metrics {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

/// A probability at or above the threshold counts as a positive prediction.
ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5);

/// Matthews correlation coefficient; 0 when any factor of the denominator is 0.
double mcc(const ConfusionCounts& c);

enum class PositiveClass { Pd, NonPd };

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Scores with `positive` as the class of interest. Empty denominators give 0.
ClassScores precision_recall_f1(const ConfusionCounts& c, PositiveClass positive = PositiveClass::Pd);

struct ClassificationReport {
  ConfusionCounts counts;
  ClassScores pd;
  ClassScores non_pd;
  ClassScores overall;  // unweighted mean of the two classes
  double mcc = 0.0;
};

ClassificationReport classification_report(const ConfusionCounts& c);

}  // namespace pdcycon::metrics
