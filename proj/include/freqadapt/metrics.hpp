#pragma once

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "freqadapt/errors.hpp"

namespace freqadapt {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }
};

struct ConfusionMetrics {
  double acc = 0.0, sen = 0.0, spe = 0.0;
};

struct EvalReport {
  double acc = 0.0, sen = 0.0, spe = 0.0, auc = 0.0;
  std::size_t n_pos = 0, n_neg = 0;
  double threshold = 0.5;

  // Flat key=value block, one per line.
  std::string to_kv() const {
    std::ostringstream os;
    os.precision(17);
    os << "acc=" << acc << "\nsen=" << sen << "\nspe=" << spe << "\nauc=" << auc << "\nn_pos=" << n_pos
       << "\nn_neg=" << n_neg << "\nthreshold=" << threshold << "\n";
    return os.str();
  }
};

namespace detail {

inline void check_binary_inputs(std::span<const double> scores, std::span<const int> labels,
                                const char* what) {
  if (scores.size() != labels.size())
    throw ShapeError(std::string(what) + ": scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == 0) ++neg;
    else throw ValueError(std::string(what) + ": labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0)
    throw ValueError(std::string(what) + ": both classes must be present");
}

}  // namespace detail

// Positive prediction iff score >= threshold.
inline ConfusionCounts confusion_counts(std::span<const double> scores, std::span<const int> labels,
                                        double threshold = 0.5) {
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) (pred ? c.tp : c.fn)++;
    else (pred ? c.fp : c.tn)++;
  }
  return c;
}

inline ConfusionMetrics confusion_metrics(std::span<const double> scores, std::span<const int> labels,
                                          double threshold = 0.5) {
  detail::check_binary_inputs(scores, labels, "confusion_metrics");
  const auto c = confusion_counts(scores, labels, threshold);
  const double p = static_cast<double>(c.positives()), n = static_cast<double>(c.negatives());
  return {static_cast<double>(c.tp + c.tn) / (p + n), static_cast<double>(c.tp) / p,
          static_cast<double>(c.tn) / n};
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Counted in integers so the result is exact up to the
/// final division.
inline double auc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_binary_inputs(scores, labels, "auc");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i) (labels[i] == 1 ? pos : neg).push_back(scores[i]);
  std::uint64_t twice_concordant = 0;
  for (double sp : pos)
    for (double sn : neg) twice_concordant += sp > sn ? 2u : (sp == sn ? 1u : 0u);
  return static_cast<double>(twice_concordant) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                  double threshold = 0.5) {
  const auto cm = confusion_metrics(scores, labels, threshold);
  const auto c = confusion_counts(scores, labels, threshold);
  EvalReport r;
  r.acc = cm.acc;
  r.sen = cm.sen;
  r.spe = cm.spe;
  r.auc = auc(scores, labels);
  r.n_pos = c.positives();
  r.n_neg = c.negatives();
  r.threshold = threshold;
  return r;
}

}  // namespace freqadapt
