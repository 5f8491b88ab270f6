#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace gazemil {

struct Confusion {
  int tp = 0;
  int fp = 0;
  int tn = 0;
  int fn = 0;
  int total() const { return tp + fp + tn + fn; }
};

/// A score counts as a positive prediction when it is >= threshold.
Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                    double threshold = 0.5);

/// Ratios with a zero denominator are reported as 0.
double accuracy(const Confusion& c);
double precision(const Confusion& c);
double recall(const Confusion& c);
double f1_score(const Confusion& c);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // +inf for the (0, 0) point
};

struct RocCurve {
  std::vector<RocPoint> points;  // (0,0) first, (1,1) last
  double auc = 0.0;
};

/// One ROC point per distinct score (descending), trapezoidal area. Ties in
/// score contribute half a concordant pair, so the area equals
/// P(s+ > s-) + 0.5 P(s+ = s-). Throws InputError unless both classes occur.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);

/// CSV with header `fpr,tpr,threshold`.
void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc);

struct HeadMetrics {
  Confusion counts;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;  // NaN when the set holds a single class
  RocCurve roc;
};

/// Threshold-0.5 counts and derived metrics plus the ROC of positive-class
/// scores. Throws InputError for an empty set.
HeadMetrics head_metrics(std::span<const double> scores, std::span<const int> labels);

}  // namespace gazemil
