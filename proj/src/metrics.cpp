#include "gazemil/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

#include "gazemil/errors.hpp"

namespace gazemil {

namespace {

void check_labels(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw InputError("metrics: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("metrics: labels must be 0 or 1");
  }
}

double ratio(int num, int den) { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

}  // namespace

Confusion confusion(std::span<const double> scores, std::span<const int> labels,
                    double threshold) {
  check_labels(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

double accuracy(const Confusion& c) { return ratio(c.tp + c.tn, c.total()); }
double precision(const Confusion& c) { return ratio(c.tp, c.tp + c.fp); }
double recall(const Confusion& c) { return ratio(c.tp, c.tp + c.fn); }
double f1_score(const Confusion& c) { return ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0) throw InputError("roc_auc: both classes must be present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  // Twice the area in units of one positive-negative pair.
  long long twice_area = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    long dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] == 1 ? dtp : dfp) += 1;
    }
    twice_area += static_cast<long long>(dfp) * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    roc.points.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s});
  }
  roc.auc = static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * neg);
  return roc;
}

void write_roc_csv(const std::filesystem::path& path, const RocCurve& roc) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "fpr,tpr,threshold\n" << std::setprecision(17);
  for (const auto& p : roc.points) os << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
  if (!os) throw IoError("write failed: " + path.string());
}

HeadMetrics head_metrics(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty()) throw InputError("evaluate: empty split");
  HeadMetrics m;
  m.counts = confusion(scores, labels);
  m.accuracy = accuracy(m.counts);
  m.precision = precision(m.counts);
  m.recall = recall(m.counts);
  m.f1 = f1_score(m.counts);
  const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                    std::find(labels.begin(), labels.end(), 1) != labels.end();
  if (both) {
    m.roc = roc_auc(scores, labels);
    m.auc = m.roc.auc;
  } else {
    m.auc = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

}  // namespace gazemil
