#pragma once

#include <optional>
#include <vector>

#include "bevflow/geometry.hpp"

namespace bevflow {

struct EvalRecord {
  int scene_id = 0;
  double timestamp = 0.0;
  std::vector<OrientedBox> detections;
  std::vector<OrientedBox> ground_truth;  // confidence 1
};

struct PrCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  double ap = 0.0;
};

/// Exact IoU of two oriented rectangles via convex polygon clipping.
/// Degenerate (zero-area) boxes give 0.
double rotated_iou(const OrientedBox& a, const OrientedBox& b);

/// Average precision over pooled records at the given IoU threshold,
/// all-point (area under the precision envelope) interpolation.
/// Returns nullopt when the records contain no ground truth.
std::optional<double> average_precision(const std::vector<EvalRecord>& records,
                                        double iou_threshold);

/// Same computation, keeping the PR points.
std::optional<PrCurve> pr_curve(const std::vector<EvalRecord>& records, double iou_threshold);

struct CenterErrorStats {
  double mean = 0.0;
  double median = 0.0;
  double p90 = 0.0;
  std::size_t count = 0;
};

/// Center-distance statistics over true positives at IoU 0.5.
/// Returns nullopt when there are no true positives.
std::optional<CenterErrorStats> center_error_stats(const std::vector<EvalRecord>& records);

}  // namespace bevflow
