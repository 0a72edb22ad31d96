#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "bevflow/grid.hpp"

namespace bevflow {

struct RoiSet {
  double timestamp = 0.0;
  std::vector<std::pair<uint32_t, OrientedBox>> rois;  // (roi_id, box), ids unique
};

/// One collaboration message: the sender's ROI set plus the sparse feature
/// grid (zero outside ROI footprints).
struct CollabMessage {
  int sender_id = 0;
  double timestamp = 0.0;
  RoiSet roi_set;
  BevGrid sparse_grid;
};

/// Rasterizes an observation into a dense detection-style grid. Every cell
/// whose center falls inside a box footprint is written with that box's
/// channel tuple plus a per-object random unit signature; overlaps keep the
/// higher-confidence vector.
BevGrid synthesize_grid(const Observation& obs, const GridSpec& spec, uint64_t rng_seed);

/// Greedy NMS by descending confidence using rotated IoU. Ties break on
/// (confidence, x, y) lexicographic order.
std::vector<OrientedBox> nms(std::vector<OrientedBox> boxes, double iou_threshold);

/// Thresholds the confidence channel, decodes candidate boxes, applies NMS,
/// and masks the grid to the surviving ROI footprints.
std::pair<RoiSet, BevGrid> generate_rois(const BevGrid& grid, double conf_threshold,
                                         double nms_iou);

/// Reads one cell's channel tuple back into a box.
OrientedBox decode_cell(const BevGrid& grid, int h, int w);

/// Decoded boxes of all nonzero cells at or above the threshold, exact
/// duplicates collapsed.
std::vector<OrientedBox> decode_candidates(const BevGrid& grid, double conf_threshold);

/// grid ⊙ H for the binary footprint mask H of the given ROI set.
BevGrid mask_to_rois(const BevGrid& grid, const RoiSet& rois);

/// Communication volume in bits for one message carrying K ROIs,
/// log2(40 * K). Throws for K < 1.
double comm_volume(int k_rois);

/// Builds a message from an observation, optionally capping the ROI count
/// at the top-K by confidence.
CollabMessage pack_message(int sender_id, const Observation& obs, const GridSpec& spec,
                           double conf_threshold, double nms_iou, uint64_t rng_seed,
                           int max_rois = 0);

// Little-endian length-prefixed binary message codec. A log is a plain
// concatenation of encoded messages.
void write_message(std::ostream& os, const CollabMessage& msg);
std::optional<CollabMessage> read_message(std::istream& is, const GridSpec& spec);

}  // namespace bevflow
