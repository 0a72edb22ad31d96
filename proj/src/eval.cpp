#include "bevflow/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bevflow {

namespace {

double polygon_area(const std::vector<Vec2>& poly) {
  double a = 0.0;
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % n];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::fabs(a);
}

// clips subject by the half-plane left of edge a->b (CCW clip polygon)
std::vector<Vec2> clip_by_edge(const std::vector<Vec2>& subject, const Vec2& a, const Vec2& b) {
  std::vector<Vec2> out;
  const std::size_t n = subject.size();
  auto side = [&](const Vec2& p) {
    return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& cur = subject[i];
    const Vec2& nxt = subject[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur.x + t * (nxt.x - cur.x), cur.y + t * (nxt.y - cur.y)});
    }
  }
  return out;
}

double intersection_area(const OrientedBox& a, const OrientedBox& b) {
  auto ca = a.corners();
  auto cb = b.corners();
  std::vector<Vec2> poly(ca.begin(), ca.end());
  for (int i = 0; i < 4 && !poly.empty(); ++i) {
    poly = clip_by_edge(poly, cb[i], cb[(i + 1) % 4]);
  }
  if (poly.size() < 3) return 0.0;
  return polygon_area(poly);
}

struct Match {
  double confidence;
  bool tp;
  double center_err;
};

// Greedy confidence-ordered matching of pooled detections to per-record GT.
std::vector<Match> match_detections(const std::vector<EvalRecord>& records,
                                    double iou_threshold) {
  struct Det {
    std::size_t record;
    std::size_t index;
    double confidence;
  };
  std::vector<Det> dets;
  for (std::size_t r = 0; r < records.size(); ++r) {
    for (std::size_t i = 0; i < records[r].detections.size(); ++i) {
      dets.push_back({r, i, records[r].detections[i].confidence});
    }
  }
  std::sort(dets.begin(), dets.end(), [&](const Det& a, const Det& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.record != b.record) return a.record < b.record;
    return a.index < b.index;
  });

  std::vector<std::vector<char>> gt_used(records.size());
  for (std::size_t r = 0; r < records.size(); ++r) {
    gt_used[r].assign(records[r].ground_truth.size(), 0);
  }

  std::vector<Match> matches;
  matches.reserve(dets.size());
  for (const auto& d : dets) {
    const auto& rec = records[d.record];
    const auto& box = rec.detections[d.index];
    double best_iou = 0.0;
    std::size_t best_gt = 0;
    bool found = false;
    // distance prefilter: boxes farther apart than the sum of half
    // diagonals cannot overlap
    const double reach_d = 0.5 * std::hypot(box.length, box.width);
    for (std::size_t g = 0; g < rec.ground_truth.size(); ++g) {
      if (gt_used[d.record][g]) continue;
      const auto& gt = rec.ground_truth[g];
      const double gap = (gt.center - box.center).norm();
      if (gap > reach_d + 0.5 * std::hypot(gt.length, gt.width)) continue;
      const double iou = rotated_iou(box, gt);
      if (iou > best_iou) {
        best_iou = iou;
        best_gt = g;
        found = true;
      }
    }
    if (found && best_iou >= iou_threshold) {
      gt_used[d.record][best_gt] = 1;
      const double err = (rec.ground_truth[best_gt].center - box.center).norm();
      matches.push_back({d.confidence, true, err});
    } else {
      matches.push_back({d.confidence, false, 0.0});
    }
  }
  return matches;
}

std::size_t total_ground_truth(const std::vector<EvalRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += r.ground_truth.size();
  return n;
}

}  // namespace

double rotated_iou(const OrientedBox& a, const OrientedBox& b) {
  const double aa = a.area(), ab = b.area();
  if (aa <= 0.0 || ab <= 0.0) return 0.0;
  const double inter = intersection_area(a, b);
  const double uni = aa + ab - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::optional<PrCurve> pr_curve(const std::vector<EvalRecord>& records, double iou_threshold) {
  const std::size_t n_gt = total_ground_truth(records);
  if (n_gt == 0) return std::nullopt;

  const auto matches = match_detections(records, iou_threshold);
  PrCurve curve;
  std::size_t tp = 0, fp = 0;
  for (const auto& m : matches) {
    if (m.tp) ++tp; else ++fp;
    curve.recall.push_back(double(tp) / double(n_gt));
    curve.precision.push_back(double(tp) / double(tp + fp));
  }

  // area under the precision envelope
  double ap = 0.0;
  double env = 0.0;
  for (std::size_t i = curve.precision.size(); i-- > 0;) {
    env = std::max(env, curve.precision[i]);
    const double r_lo = (i == 0) ? 0.0 : curve.recall[i - 1];
    ap += (curve.recall[i] - r_lo) * env;
  }
  curve.ap = ap;
  return curve;
}

std::optional<double> average_precision(const std::vector<EvalRecord>& records,
                                        double iou_threshold) {
  auto curve = pr_curve(records, iou_threshold);
  if (!curve) return std::nullopt;
  return curve->ap;
}

std::optional<CenterErrorStats> center_error_stats(const std::vector<EvalRecord>& records) {
  const auto matches = match_detections(records, 0.5);
  std::vector<double> errs;
  for (const auto& m : matches) {
    if (m.tp) errs.push_back(m.center_err);
  }
  if (errs.empty()) return std::nullopt;
  std::sort(errs.begin(), errs.end());
  CenterErrorStats st;
  st.count = errs.size();
  st.mean = std::accumulate(errs.begin(), errs.end(), 0.0) / double(errs.size());
  const std::size_t n = errs.size();
  st.median = (n % 2 == 1) ? errs[n / 2] : 0.5 * (errs[n / 2 - 1] + errs[n / 2]);
  // nearest-rank p90
  std::size_t rank = static_cast<std::size_t>(std::ceil(0.9 * double(n)));
  if (rank == 0) rank = 1;
  st.p90 = errs[rank - 1];
  return st;
}

}  // namespace bevflow
