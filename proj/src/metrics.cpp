#include "pdcycon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pdcycon/error.hpp"

namespace pdcycon::metrics {

ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels, double threshold) {
  if (probs.size() != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(probs.size()) + " predictions for " +
                                               std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const bool predicted = probs[i] >= threshold;
    const bool actual = labels[i] != 0;
    if (predicted && actual) ++c.tp;
    else if (!predicted && !actual) ++c.tn;
    else if (predicted) ++c.fp;
    else ++c.fn;
  }
  return c;
}

double mcc(const ConfusionCounts& c) {
  const double tp = static_cast<double>(c.tp), tn = static_cast<double>(c.tn);
  const double fp = static_cast<double>(c.fp), fn = static_cast<double>(c.fn);
  const double a = tp + fp, b = tp + fn, d = tn + fp, e = tn + fn;
  if (a == 0.0 || b == 0.0 || d == 0.0 || e == 0.0) return 0.0;
  const double value = (tp * tn - fp * fn) / std::sqrt(a * b * d * e);
  return std::clamp(value, -1.0, 1.0);
}

ClassScores precision_recall_f1(const ConfusionCounts& c, PositiveClass positive) {
  // For the non-PD view the roles of the two outcomes are exchanged.
  const double tp = static_cast<double>(positive == PositiveClass::Pd ? c.tp : c.tn);
  const double fp = static_cast<double>(positive == PositiveClass::Pd ? c.fp : c.fn);
  const double fn = static_cast<double>(positive == PositiveClass::Pd ? c.fn : c.fp);
  ClassScores s;
  s.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
  s.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
  s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

ClassificationReport classification_report(const ConfusionCounts& c) {
  ClassificationReport r;
  r.counts = c;
  r.pd = precision_recall_f1(c, PositiveClass::Pd);
  r.non_pd = precision_recall_f1(c, PositiveClass::NonPd);
  r.overall.precision = 0.5 * (r.pd.precision + r.non_pd.precision);
  r.overall.recall = 0.5 * (r.pd.recall + r.non_pd.recall);
  r.overall.f1 = 0.5 * (r.pd.f1 + r.non_pd.f1);
  r.mcc = mcc(c);
  return r;
}

}  // namespace pdcycon::metrics
