#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <vector>

#include "bevflow/roi_codec.hpp"

namespace bevflow {

constexpr double kInfCost = std::numeric_limits<double>::infinity();

/// Pairwise association costs between an earlier and a later ROI set.
/// Finite entries are Euclidean center distances; infeasible pairs are +inf.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;  // row-major

  double& at(int r, int c) { return values[std::size_t(r) * cols + c]; }
  double at(int r, int c) const { return values[std::size_t(r) * cols + c]; }
};

struct MatchResult {
  struct Pair {
    int row;
    int col;
    double cost;
  };
  std::vector<Pair> pairs;
  std::vector<int> unmatched_rows;
  std::vector<int> unmatched_cols;

  double total_cost() const {
    double t = 0.0;
    for (const auto& p : pairs) t += p.cost;
    return t;
  }
};

/// Irregularly timestamped pose history of one tracked ROI.
struct Tracklet {
  struct State {
    double t;
    double x;
    double y;
    double heading;
  };
  uint32_t track_id = 0;
  std::vector<State> states;  // strictly increasing t, length <= k
  OrientedBox last_box;       // box as reported in the newest matched frame
};

/// Per-sender track store. Single writer per sender.
struct TrackStore {
  int sender_id = 0;
  int history_depth = 5;       // k
  int staleness_limit = 2;     // drop after this many consecutive misses
  std::map<uint32_t, Tracklet> tracklets;
  std::map<uint32_t, int> miss_counts;
  std::map<uint32_t, uint32_t> latest_assignment;  // roi_id in latest frame -> track id
  RoiSet latest_rois;
  bool has_frame = false;
  uint32_t next_track_id = 0;
};

/// Builds the association cost matrix. A later ROI is feasible when its
/// bearing from the earlier ROI lies within +-half_angle of the earlier
/// ROI's heading or of its opposite (front and rear vicinity). Coincident
/// centers are always feasible at cost 0.
CostMatrix build_cost_matrix(const RoiSet& prev, const RoiSet& next, double half_angle);

/// Greedy matching: rows in ascending order of their row minimum, each
/// taking the cheapest unclaimed finite column; pairs costing more than
/// max_cost are then moved to the unmatched sets.
MatchResult greedy_match(const CostMatrix& cost, double max_cost);

/// Minimum-total-cost assignment (maximum cardinality over finite entries,
/// then minimum cost), with the same max_cost post-processing. Ablation
/// matcher.
MatchResult hungarian_match(const CostMatrix& cost, double max_cost);

/// Applies a match result: matched ROIs extend their tracklets, unmatched
/// next-frame ROIs open new ones, and tracklets missing for longer than the
/// staleness limit are dropped. Throws if next is not newer than the stored
/// frame.
void update_tracklets(TrackStore& store, const MatchResult& match, const RoiSet& next);

struct TrackerParams {
  double half_angle = M_PI / 4.0;
  double max_speed = 29.17;    // m/s, used for the match gate
  double gate_slack = 3.0;     // m added on top of max_speed * dt
  bool use_hungarian = false;
};

/// Convenience: matches `next` against the store's latest frame (gate
/// max_cost = max_speed * dt + slack) and updates the store.
MatchResult track_message(TrackStore& store, const RoiSet& next, const TrackerParams& params);

}  // namespace bevflow
