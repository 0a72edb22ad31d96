#include "bevflow/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace bevflow {

namespace {

// strict "better than" for fusion collisions: confidence first, then full
// vector lexicographic, so the reduction commutes
bool vector_beats(const float* a, const float* b, int channels) {
  if (a[0] != b[0]) return a[0] > b[0];
  for (int i = 1; i < channels; ++i) {
    if (a[i] != b[i]) return a[i] > b[i];
  }
  return false;
}

}  // namespace

WarpedGrid warp_features(const BevGrid& sparse, const BevFlowMap& flow) {
  if (!(sparse.spec == flow.spec))
    throw std::invalid_argument("warp_features: grid and flow specs differ");
  const GridSpec& spec = sparse.spec;
  const int channels = spec.channels;

  WarpedGrid out;
  out.grid = BevGrid(spec);
  out.residual.assign(spec.cell_count() * 2, 0.0f);

  std::vector<uint32_t> source_of(spec.cell_count(), UINT32_MAX);
  for (uint32_t idx : sparse.nonzero) {
    const int h = int(idx / spec.width), w = int(idx % spec.width);
    const float* fv = flow.at(h, w);
    const long dh = std::lround(double(fv[0]));
    const long dw = std::lround(double(fv[1]));
    const long th = h + dh, tw = w + dw;
    if (th < 0 || th >= spec.height || tw < 0 || tw >= spec.width) continue;
    const std::size_t tidx = std::size_t(th) * spec.width + tw;
    const float* src = sparse.cell(h, w);
    float* dst = out.grid.data.data() + tidx * channels;
    if (source_of[tidx] != UINT32_MAX) {
      // collision: larger confidence wins, earlier source keeps ties
      if (!(src[0] > dst[0])) continue;
    } else {
      out.grid.mark_nonzero(uint32_t(tidx));
    }
    std::memcpy(dst, src, sizeof(float) * channels);
    out.residual[tidx * 2 + 0] = float(double(fv[0]) - double(dh));
    out.residual[tidx * 2 + 1] = float(double(fv[1]) - double(dw));
    source_of[tidx] = idx;
  }
  out.grid.finalize_nonzero();
  out.provenance.reserve(out.grid.nonzero.size());
  for (uint32_t tidx : out.grid.nonzero) {
    out.provenance.push_back({tidx, source_of[tidx]});
  }
  return out;
}

RoiSet warp_boxes(const RoiSet& roi_set, const std::vector<PosePrediction>& predictions) {
  RoiSet out = roi_set;
  for (auto& [id, box] : out.rois) {
    for (const auto& p : predictions) {
      if (p.roi_id == id) {
        box.center = {p.x, p.y};
        box.heading = p.heading;
        break;
      }
    }
  }
  return out;
}

FusedGrid fuse(const BevGrid& ego, const std::vector<WarpedGrid>& warped) {
  const GridSpec& spec = ego.spec;
  for (const auto& w : warped) {
    if (!(w.grid.spec == spec)) throw std::invalid_argument("fuse: grid specs differ");
  }
  const int channels = spec.channels;

  FusedGrid out;
  out.grid = ego;
  out.residual.assign(spec.cell_count() * 2, 0.0f);
  out.contributors.assign(spec.cell_count(), 0);
  for (uint32_t idx : ego.nonzero) out.contributors[idx] = 1;

  for (const auto& wg : warped) {
    for (uint32_t idx : wg.grid.nonzero) {
      const float* src = wg.grid.data.data() + std::size_t(idx) * channels;
      float* dst = out.grid.data.data() + std::size_t(idx) * channels;
      const bool occupied = out.contributors[idx] > 0;
      ++out.contributors[idx];
      if (!occupied || vector_beats(src, dst, channels)) {
        if (!occupied) out.grid.mark_nonzero(idx);
        std::memcpy(dst, src, sizeof(float) * channels);
        out.residual[idx * 2 + 0] = wg.residual[idx * 2 + 0];
        out.residual[idx * 2 + 1] = wg.residual[idx * 2 + 1];
      }
    }
  }
  out.grid.finalize_nonzero();
  return out;
}

std::vector<OrientedBox> decode_detections(const FusedGrid& fused, double conf_threshold,
                                           double nms_iou) {
  const GridSpec& spec = fused.grid.spec;
  std::vector<OrientedBox> cands;
  for (uint32_t idx : fused.grid.nonzero) {
    const int h = int(idx / spec.width), w = int(idx % spec.width);
    if (fused.grid.confidence(h, w) < conf_threshold) continue;
    OrientedBox box = decode_cell(fused.grid, h, w);
    box.center.y += double(fused.residual[idx * 2 + 0]) * spec.cell;
    box.center.x += double(fused.residual[idx * 2 + 1]) * spec.cell;
    cands.push_back(box);
  }
  std::sort(cands.begin(), cands.end(), [](const OrientedBox& a, const OrientedBox& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    if (a.center.x != b.center.x) return a.center.x < b.center.x;
    if (a.center.y != b.center.y) return a.center.y < b.center.y;
    if (a.length != b.length) return a.length < b.length;
    if (a.width != b.width) return a.width < b.width;
    return a.heading < b.heading;
  });
  cands.erase(std::unique(cands.begin(), cands.end(),
                          [](const OrientedBox& a, const OrientedBox& b) {
                            return a.confidence == b.confidence &&
                                   a.center.x == b.center.x && a.center.y == b.center.y &&
                                   a.length == b.length && a.width == b.width &&
                                   a.heading == b.heading;
                          }),
              cands.end());
  return nms(std::move(cands), nms_iou);
}

}  // namespace bevflow
