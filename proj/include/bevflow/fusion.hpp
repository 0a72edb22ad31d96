#pragma once

#include <vector>

#include "bevflow/flow.hpp"
#include "bevflow/roi_codec.hpp"

namespace bevflow {

/// A sparse grid after motion compensation. Cell vectors are bit-identical
/// copies of source cells; the sub-cell remainder of each cell's flow is
/// kept in a side plane so decoded centers stay sub-cell accurate.
struct WarpedGrid {
  BevGrid grid;
  std::vector<float> residual;  // H * W * 2, (row, column) remainder in cell units

  struct Provenance {
    uint32_t target;  // cell index in the warped grid
    uint32_t source;  // cell index in the source grid
  };
  std::vector<Provenance> provenance;  // sorted by target
};

/// Result of max-fusing the ego grid with warped collaborator grids.
struct FusedGrid {
  BevGrid grid;
  std::vector<float> residual;        // winner's flow remainder, zero for ego cells
  std::vector<uint16_t> contributors; // per-cell count of nonzero contributors
};

/// Moves every nonzero cell to its flow target (nearest cell, half away
/// from zero). Targets outside the grid are dropped; collisions keep the
/// larger confidence, first writer winning ties.
WarpedGrid warp_features(const BevGrid& sparse, const BevFlowMap& flow);

/// Replaces each ROI's box pose by its prediction (size and confidence
/// kept). ROIs without a prediction keep their box. Ablation path.
RoiSet warp_boxes(const RoiSet& roi_set, const std::vector<PosePrediction>& predictions);

/// Per-cell vectorwise max keyed on the confidence channel; equal
/// confidences keep the lexicographically larger vector so the reduction is
/// order-independent.
FusedGrid fuse(const BevGrid& ego, const std::vector<WarpedGrid>& warped);

/// Threshold + decode + NMS on the fused grid, identical to
/// roi_codec::generate_rois decoding with the residual plane folded into
/// the decoded centers.
std::vector<OrientedBox> decode_detections(const FusedGrid& fused, double conf_threshold,
                                           double nms_iou);

}  // namespace bevflow
