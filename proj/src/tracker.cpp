#include "bevflow/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bevflow {

CostMatrix build_cost_matrix(const RoiSet& prev, const RoiSet& next, double half_angle) {
  if (half_angle <= 0.0 || half_angle > M_PI / 2.0)
    throw std::invalid_argument("build_cost_matrix: half_angle must be in (0, pi/2]");
  CostMatrix c;
  c.rows = int(prev.rois.size());
  c.cols = int(next.rois.size());
  c.values.assign(std::size_t(c.rows) * c.cols, kInfCost);
  for (int p = 0; p < c.rows; ++p) {
    const OrientedBox& bp = prev.rois[p].second;
    for (int q = 0; q < c.cols; ++q) {
      const OrientedBox& bq = next.rois[q].second;
      const Vec2 d = bq.center - bp.center;
      const double dist = d.norm();
      if (dist == 0.0) {
        c.at(p, q) = 0.0;
        continue;
      }
      const double bearing = std::atan2(d.y, d.x);
      const double front = std::fabs(wrap_angle(bearing - bp.heading));
      const double rear = std::fabs(wrap_angle(bearing - bp.heading - M_PI));
      if (front <= half_angle || rear <= half_angle) c.at(p, q) = dist;
    }
  }
  return c;
}

namespace {

void apply_max_cost(MatchResult& m, double max_cost) {
  std::vector<MatchResult::Pair> kept;
  for (const auto& p : m.pairs) {
    if (p.cost <= max_cost) {
      kept.push_back(p);
    } else {
      m.unmatched_rows.push_back(p.row);
      m.unmatched_cols.push_back(p.col);
    }
  }
  m.pairs = std::move(kept);
  std::sort(m.unmatched_rows.begin(), m.unmatched_rows.end());
  std::sort(m.unmatched_cols.begin(), m.unmatched_cols.end());
}

}  // namespace

MatchResult greedy_match(const CostMatrix& cost, double max_cost) {
  if (max_cost <= 0.0) throw std::invalid_argument("greedy_match: max_cost must be > 0");
  MatchResult m;
  std::vector<int> order(cost.rows);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> row_min(cost.rows, kInfCost);
  for (int r = 0; r < cost.rows; ++r) {
    for (int c = 0; c < cost.cols; ++c) row_min[r] = std::min(row_min[r], cost.at(r, c));
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (row_min[a] != row_min[b]) return row_min[a] < row_min[b];
    return a < b;
  });

  std::vector<char> col_used(cost.cols, 0);
  std::vector<char> row_matched(cost.rows, 0);
  for (int r : order) {
    int best = -1;
    double best_cost = kInfCost;
    for (int c = 0; c < cost.cols; ++c) {
      if (col_used[c]) continue;
      const double v = cost.at(r, c);
      if (v < best_cost) {
        best_cost = v;
        best = c;
      }
    }
    if (best >= 0 && std::isfinite(best_cost)) {
      col_used[best] = 1;
      row_matched[r] = 1;
      m.pairs.push_back({r, best, best_cost});
    }
  }
  std::sort(m.pairs.begin(), m.pairs.end(),
            [](const auto& a, const auto& b) { return a.row < b.row; });
  for (int r = 0; r < cost.rows; ++r) {
    if (!row_matched[r]) m.unmatched_rows.push_back(r);
  }
  for (int c = 0; c < cost.cols; ++c) {
    if (!col_used[c]) m.unmatched_cols.push_back(c);
  }
  apply_max_cost(m, max_cost);
  return m;
}

MatchResult hungarian_match(const CostMatrix& cost, double max_cost) {
  if (max_cost <= 0.0) throw std::invalid_argument("hungarian_match: max_cost must be > 0");
  MatchResult m;
  const int rows = cost.rows, cols = cost.cols;
  if (rows == 0 || cols == 0) {
    for (int r = 0; r < rows; ++r) m.unmatched_rows.push_back(r);
    for (int c = 0; c < cols; ++c) m.unmatched_cols.push_back(c);
    return m;
  }

  // potentials formulation on the transposed-if-needed matrix; infeasible
  // entries become a large finite cost so unavoidable uses can be stripped
  // afterwards (max cardinality first, then min cost)
  const bool transposed = rows > cols;
  const int n = transposed ? cols : rows;  // n <= k
  const int k = transposed ? rows : cols;
  const double big = 1e12;
  auto entry = [&](int i, int j) {
    const double v = transposed ? cost.at(j, i) : cost.at(i, j);
    return std::isfinite(v) ? v : big;
  };

  std::vector<double> u(n + 1, 0.0), v(k + 1, 0.0);
  std::vector<int> way(k + 1, 0), match_col(k + 1, 0);  // match_col: col -> row+1
  for (int i = 1; i <= n; ++i) {
    match_col[0] = i;
    int j0 = 0;
    std::vector<double> minv(k + 1, kInfCost);
    std::vector<char> used(k + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = match_col[j0];
      double delta = kInfCost;
      int j1 = 0;
      for (int j = 1; j <= k; ++j) {
        if (used[j]) continue;
        const double cur = entry(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= k; ++j) {
        if (used[j]) {
          u[match_col[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match_col[j0] != 0);
    do {
      const int j1 = way[j0];
      match_col[j0] = match_col[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<char> row_matched(rows, 0), col_matched(cols, 0);
  for (int j = 1; j <= k; ++j) {
    const int i = match_col[j];
    if (i == 0) continue;
    const int r = transposed ? j - 1 : i - 1;
    const int c = transposed ? i - 1 : j - 1;
    const double v0 = cost.at(r, c);
    if (!std::isfinite(v0)) continue;  // forced onto an infeasible pad
    m.pairs.push_back({r, c, v0});
    row_matched[r] = 1;
    col_matched[c] = 1;
  }
  std::sort(m.pairs.begin(), m.pairs.end(),
            [](const auto& a, const auto& b) { return a.row < b.row; });
  for (int r = 0; r < rows; ++r) {
    if (!row_matched[r]) m.unmatched_rows.push_back(r);
  }
  for (int c = 0; c < cols; ++c) {
    if (!col_matched[c]) m.unmatched_cols.push_back(c);
  }
  apply_max_cost(m, max_cost);
  return m;
}

void update_tracklets(TrackStore& store, const MatchResult& match, const RoiSet& next) {
  if (store.has_frame && next.timestamp <= store.latest_rois.timestamp)
    throw std::invalid_argument("update_tracklets: next frame is not newer");

  std::map<uint32_t, uint32_t> new_assignment;
  std::vector<char> next_matched(next.rois.size(), 0);

  for (const auto& p : match.pairs) {
    const uint32_t prev_roi_id = store.latest_rois.rois[p.row].first;
    const auto it = store.latest_assignment.find(prev_roi_id);
    if (it == store.latest_assignment.end()) continue;
    const uint32_t track_id = it->second;
    auto& tr = store.tracklets.at(track_id);
    const auto& [roi_id, box] = next.rois[p.col];
    tr.states.push_back({next.timestamp, box.center.x, box.center.y, box.heading});
    if (int(tr.states.size()) > store.history_depth)
      tr.states.erase(tr.states.begin(),
                      tr.states.end() - store.history_depth);
    tr.last_box = box;
    store.miss_counts[track_id] = 0;
    new_assignment[roi_id] = track_id;
    next_matched[p.col] = 1;
  }

  for (std::size_t q = 0; q < next.rois.size(); ++q) {
    if (next_matched[q]) continue;
    const auto& [roi_id, box] = next.rois[q];
    Tracklet tr;
    tr.track_id = store.next_track_id++;
    tr.states.push_back({next.timestamp, box.center.x, box.center.y, box.heading});
    tr.last_box = box;
    store.miss_counts[tr.track_id] = 0;
    new_assignment[roi_id] = tr.track_id;
    store.tracklets.emplace(tr.track_id, std::move(tr));
  }

  // age out tracks that were not matched this frame
  std::vector<uint32_t> assigned;
  for (const auto& [roi, tid] : new_assignment) assigned.push_back(tid);
  for (auto it = store.tracklets.begin(); it != store.tracklets.end();) {
    const uint32_t tid = it->first;
    if (std::find(assigned.begin(), assigned.end(), tid) == assigned.end()) {
      int& misses = store.miss_counts[tid];
      ++misses;
      if (misses >= store.staleness_limit) {
        store.miss_counts.erase(tid);
        it = store.tracklets.erase(it);
        continue;
      }
    }
    ++it;
  }

  store.latest_assignment = std::move(new_assignment);
  store.latest_rois = next;
  store.has_frame = true;
}

MatchResult track_message(TrackStore& store, const RoiSet& next, const TrackerParams& params) {
  MatchResult match;
  if (store.has_frame) {
    const double dt = next.timestamp - store.latest_rois.timestamp;
    const double gate = params.max_speed * std::max(dt, 0.0) + params.gate_slack;
    const CostMatrix cost = build_cost_matrix(store.latest_rois, next, params.half_angle);
    match = params.use_hungarian ? hungarian_match(cost, gate) : greedy_match(cost, gate);
  } else {
    for (std::size_t q = 0; q < next.rois.size(); ++q) match.unmatched_cols.push_back(int(q));
  }
  update_tracklets(store, match, next);
  return match;
}

}  // namespace bevflow
