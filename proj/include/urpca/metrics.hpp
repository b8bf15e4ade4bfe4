#pragma once

#include <cstdint>
#include <vector>

#include "urpca/tensor.hpp"

namespace urpca {

struct ConfusionCounts {
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  ConfusionCounts& operator+=(const ConfusionCounts& o);
};

// Pixel counts between two binary maps of equal shape.
ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask);

// Micro-averaged over accumulated counts; empty problems (no positives on
// either side) score 1.
double miou(const ConfusionCounts& c);  // TP / (TP+FP+FN)
double f1(const ConfusionCounts& c);    // 2TP / (2TP+FP+FN)

// 1.0 where score strictly exceeds the threshold.
Tensor binarize(const Tensor& scores, double threshold);

struct Component {
  std::vector<int64_t> pixels;  // flat row-major indices
  double cy = 0.0, cx = 0.0;    // centroid
};

// 8-connected foreground components (value > 0.5), deterministic scan order.
std::vector<Component> connected_components(const Tensor& mask);

struct TargetMatchResult {
  int64_t detected = 0;
  int64_t total_gt = 0;
  int64_t false_alarm_pixels = 0;  // pixels of predicted components left unmatched
};

// Greedy centroid matching, closest pairs first; each predicted component
// claims at most one ground-truth component. Invariant to component ordering.
TargetMatchResult target_match(const Tensor& pred_mask, const Tensor& gt_mask,
                               double dist_thresh = 3.0);

struct MetricsReport {
  double miou = 0.0;
  double f1 = 0.0;
  double pd = 0.0;
  double fa = 0.0;       // false-alarm pixels / total pixels
  bool zero_gt = false;  // no ground-truth targets anywhere: pd reported as 1
};

// Binarizes every score map at the threshold and aggregates pixel counts
// (micro) and target matches over the whole set.
MetricsReport evaluate(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                       double threshold = 0.5);

struct RocPoint {
  double threshold = 0.0;
  double fa = 0.0;
  double pd = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // sorted by fa ascending
  double auc = 0.0;
};

// Sweeps n_thresh evenly spaced thresholds in (0,1); AUC by trapezoid over
// fa normalized to its observed maximum with (0,0) prepended. A sweep that
// never produces a false alarm degenerates to the lowest-threshold pd.
RocCurve roc_sweep(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                   int n_thresh);

}  // namespace urpca
