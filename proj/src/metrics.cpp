#include "urpca/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

namespace urpca {

namespace {

// Trailing two dims are the grid; leading dims must be singleton.
std::pair<int64_t, int64_t> grid_dims(const Tensor& t) {
  if (t.rank() < 2) throw ShapeError("metrics: mask must have spatial dims");
  for (size_t i = 0; i + 2 < t.rank(); ++i)
    if (t.dim(i) != 1) throw ShapeError("metrics: mask must be a single map, got " + shape_str(t.shape()));
  return {t.dim(t.rank() - 2), t.dim(t.rank() - 1)};
}

}  // namespace

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

ConfusionCounts confusion(const Tensor& pred_mask, const Tensor& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape())
    throw ShapeError("confusion: shape mismatch " + shape_str(pred_mask.shape()) + " vs " +
                     shape_str(gt_mask.shape()));
  ConfusionCounts c;
  const auto p = pred_mask.data(), g = gt_mask.data();
  for (size_t i = 0; i < p.size(); ++i) {
    const bool pi = p[i] > 0.5, gi = g[i] > 0.5;
    if (pi && gi)
      ++c.tp;
    else if (pi)
      ++c.fp;
    else if (gi)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

double miou(const ConfusionCounts& c) {
  const int64_t denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double f1(const ConfusionCounts& c) {
  const int64_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(denom);
}

Tensor binarize(const Tensor& scores, double threshold) {
  Tensor out = Tensor::zeros(scores.shape());
  const auto s = scores.data();
  auto o = out.data();
  for (size_t i = 0; i < s.size(); ++i) o[i] = s[i] > threshold ? 1.0 : 0.0;
  return out;
}

std::vector<Component> connected_components(const Tensor& mask) {
  const auto [h, w] = grid_dims(mask);
  const auto v = mask.data();
  std::vector<uint8_t> seen(v.size(), 0);
  std::vector<Component> comps;
  std::vector<int64_t> stack;
  for (int64_t start = 0; start < static_cast<int64_t>(v.size()); ++start) {
    if (seen[start] || v[start] <= 0.5) continue;
    Component comp;
    stack.push_back(start);
    seen[start] = 1;
    while (!stack.empty()) {
      const int64_t idx = stack.back();
      stack.pop_back();
      comp.pixels.push_back(idx);
      const int64_t y = idx / w, x = idx % w;
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const int64_t ny = y + dy, nx = x + dx;
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const int64_t nidx = ny * w + nx;
          if (!seen[nidx] && v[nidx] > 0.5) {
            seen[nidx] = 1;
            stack.push_back(nidx);
          }
        }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    double sy = 0, sx = 0;
    for (int64_t idx : comp.pixels) {
      sy += static_cast<double>(idx / w);
      sx += static_cast<double>(idx % w);
    }
    comp.cy = sy / static_cast<double>(comp.pixels.size());
    comp.cx = sx / static_cast<double>(comp.pixels.size());
    comps.push_back(std::move(comp));
  }
  return comps;
}

TargetMatchResult target_match(const Tensor& pred_mask, const Tensor& gt_mask,
                               double dist_thresh) {
  if (pred_mask.shape() != gt_mask.shape()) throw ShapeError("target_match: shape mismatch");
  const auto preds = connected_components(pred_mask);
  const auto gts = connected_components(gt_mask);

  TargetMatchResult r;
  r.total_gt = static_cast<int64_t>(gts.size());

  // Candidate pairs ordered by distance (centroids break ties) so matching
  // does not depend on how the components were enumerated.
  struct Pair {
    double d, gy, gx, py, px;
    size_t gi, pi;
  };
  std::vector<Pair> pairs;
  for (size_t gi = 0; gi < gts.size(); ++gi)
    for (size_t pi = 0; pi < preds.size(); ++pi) {
      const double dy = gts[gi].cy - preds[pi].cy, dx = gts[gi].cx - preds[pi].cx;
      const double d = std::sqrt(dy * dy + dx * dx);
      if (d <= dist_thresh)
        pairs.push_back({d, gts[gi].cy, gts[gi].cx, preds[pi].cy, preds[pi].cx, gi, pi});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.d, a.gy, a.gx, a.py, a.px) < std::tie(b.d, b.gy, b.gx, b.py, b.px);
  });

  std::vector<uint8_t> g_used(gts.size(), 0), p_used(preds.size(), 0);
  for (const Pair& pr : pairs) {
    if (g_used[pr.gi] || p_used[pr.pi]) continue;
    g_used[pr.gi] = 1;
    p_used[pr.pi] = 1;
    ++r.detected;
  }
  for (size_t pi = 0; pi < preds.size(); ++pi)
    if (!p_used[pi]) r.false_alarm_pixels += static_cast<int64_t>(preds[pi].pixels.size());
  return r;
}

namespace {

struct SweepTotals {
  ConfusionCounts counts;
  int64_t detected = 0, total_gt = 0, fa_pixels = 0, pixels = 0;
};

SweepTotals aggregate(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                      double threshold) {
  SweepTotals t;
  for (size_t i = 0; i < scores.size(); ++i) {
    Tensor pred = binarize(scores[i], threshold);
    t.counts += confusion(pred, gts[i]);
    const TargetMatchResult tm = target_match(pred, gts[i]);
    t.detected += tm.detected;
    t.total_gt += tm.total_gt;
    t.fa_pixels += tm.false_alarm_pixels;
    t.pixels += scores[i].numel();
  }
  return t;
}

void check_eval_inputs(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts) {
  if (scores.empty()) throw ConfigError("evaluate: empty evaluation set");
  if (scores.size() != gts.size())
    throw ShapeError("evaluate: " + std::to_string(scores.size()) + " score maps vs " +
                     std::to_string(gts.size()) + " ground-truth maps");
}

}  // namespace

MetricsReport evaluate(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                       double threshold) {
  check_eval_inputs(scores, gts);
  const SweepTotals t = aggregate(scores, gts, threshold);
  MetricsReport r;
  r.miou = miou(t.counts);
  r.f1 = f1(t.counts);
  r.zero_gt = t.total_gt == 0;
  r.pd = r.zero_gt ? 1.0 : static_cast<double>(t.detected) / static_cast<double>(t.total_gt);
  r.fa = static_cast<double>(t.fa_pixels) / static_cast<double>(t.pixels);
  return r;
}

RocCurve roc_sweep(const std::vector<Tensor>& scores, const std::vector<Tensor>& gts,
                   int n_thresh) {
  check_eval_inputs(scores, gts);
  if (n_thresh < 1) throw ConfigError("roc_sweep: need at least one threshold");

  RocCurve curve;
  // High threshold first: fa grows along the sweep, so the point list comes
  // out sorted by fa up to ties.
  for (int i = n_thresh; i >= 1; --i) {
    const double thr = static_cast<double>(i) / (n_thresh + 1);
    const SweepTotals t = aggregate(scores, gts, thr);
    RocPoint p;
    p.threshold = thr;
    p.fa = static_cast<double>(t.fa_pixels) / static_cast<double>(t.pixels);
    p.pd = t.total_gt == 0 ? 1.0 : static_cast<double>(t.detected) / static_cast<double>(t.total_gt);
    curve.points.push_back(p);
  }
  const double pd_lowest_thresh = curve.points.back().pd;
  std::stable_sort(curve.points.begin(), curve.points.end(), [](const RocPoint& a, const RocPoint& b) {
    return std::tie(a.fa, a.pd) < std::tie(b.fa, b.pd);
  });

  const double max_fa = curve.points.back().fa;
  if (max_fa == 0.0) {
    curve.auc = pd_lowest_thresh;
    return curve;
  }
  double prev_fa = 0.0, prev_pd = 0.0, area = 0.0;
  for (const RocPoint& p : curve.points) {
    area += (p.fa - prev_fa) * (p.pd + prev_pd) / 2.0;
    prev_fa = p.fa;
    prev_pd = p.pd;
  }
  curve.auc = area / max_fa;
  return curve;
}

}  // namespace urpca
