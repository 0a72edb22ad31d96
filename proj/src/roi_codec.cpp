#include "bevflow/roi_codec.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "bevflow/eval.hpp"
#include "bevflow/rng.hpp"

namespace bevflow {

namespace {

void write_cell_vector(float* dst, const OrientedBox& box, const Vec2& cell_center,
                       double cell, const std::vector<float>& signature) {
  dst[0] = float(box.confidence);
  dst[1] = float((box.center.x - cell_center.x) / cell);
  dst[2] = float((box.center.y - cell_center.y) / cell);
  dst[3] = float(box.length);
  dst[4] = float(box.width);
  dst[5] = float(std::cos(box.heading));
  dst[6] = float(std::sin(box.heading));
  for (std::size_t i = 0; i < signature.size(); ++i) dst[7 + i] = signature[i];
}

bool box_less(const OrientedBox& a, const OrientedBox& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.center.x != b.center.x) return a.center.x < b.center.x;
  if (a.center.y != b.center.y) return a.center.y < b.center.y;
  if (a.length != b.length) return a.length < b.length;
  if (a.width != b.width) return a.width < b.width;
  return a.heading < b.heading;
}

bool box_equal(const OrientedBox& a, const OrientedBox& b) {
  return a.confidence == b.confidence && a.center.x == b.center.x &&
         a.center.y == b.center.y && a.length == b.length && a.width == b.width &&
         a.heading == b.heading;
}

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool get(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return bool(is);
}

}  // namespace

OrientedBox decode_cell(const BevGrid& grid, int h, int w) {
  const float* v = grid.cell(h, w);
  const Vec2 cc = grid.spec.cell_center(h, w);
  OrientedBox box;
  box.confidence = v[0];
  box.center = {cc.x + double(v[1]) * grid.spec.cell, cc.y + double(v[2]) * grid.spec.cell};
  box.length = v[3];
  box.width = v[4];
  box.heading = wrap_angle(std::atan2(double(v[6]), double(v[5])));
  return box;
}

BevGrid synthesize_grid(const Observation& obs, const GridSpec& spec, uint64_t rng_seed) {
  BevGrid grid(spec);
  auto rng = make_rng(rng_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const int sig_dim = spec.channels - 7;
  std::vector<std::vector<float>> signatures(obs.objects.size());
  for (auto& sig : signatures) {
    sig.resize(sig_dim);
    double norm2 = 0.0;
    std::vector<double> raw(sig_dim);
    for (auto& r : raw) {
      r = gauss(rng);
      norm2 += r * r;
    }
    const double inv = (norm2 > 0.0) ? 1.0 / std::sqrt(norm2) : 0.0;
    for (int i = 0; i < sig_dim; ++i) sig[i] = float(raw[i] * inv);
  }

  for (std::size_t i = 0; i < obs.objects.size(); ++i) {
    const auto& box = obs.objects[i];
    for_each_footprint_cell(spec, box, [&](int h, int w) {
      float* cell = grid.cell(h, w);
      if (cell[0] == 0.0f) grid.mark_nonzero(uint32_t(h) * spec.width + w);
      if (cell[0] < box.confidence || cell[0] == 0.0f) {
        write_cell_vector(cell, box, spec.cell_center(h, w), spec.cell, signatures[i]);
      }
    });
  }
  grid.finalize_nonzero();
  return grid;
}

std::vector<OrientedBox> nms(std::vector<OrientedBox> boxes, double iou_threshold) {
  if (iou_threshold <= 0.0 || iou_threshold >= 1.0)
    throw std::invalid_argument("nms: iou_threshold must be in (0,1)");
  std::sort(boxes.begin(), boxes.end(), box_less);
  std::vector<OrientedBox> kept;
  for (const auto& cand : boxes) {
    bool suppressed = false;
    const double reach = 0.5 * std::hypot(cand.length, cand.width);
    for (const auto& k : kept) {
      if ((k.center - cand.center).norm() > reach + 0.5 * std::hypot(k.length, k.width))
        continue;
      if (rotated_iou(cand, k) >= iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

std::vector<OrientedBox> decode_candidates(const BevGrid& grid, double conf_threshold) {
  std::vector<OrientedBox> cands;
  for (uint32_t idx : grid.nonzero) {
    const int h = int(idx / grid.spec.width), w = int(idx % grid.spec.width);
    if (grid.confidence(h, w) >= conf_threshold) cands.push_back(decode_cell(grid, h, w));
  }
  // exact duplicates (every in-object cell decodes to the same box) collapse
  // to one representative; the greedy NMS result is unchanged
  std::sort(cands.begin(), cands.end(), box_less);
  cands.erase(std::unique(cands.begin(), cands.end(), box_equal), cands.end());
  return cands;
}

BevGrid mask_to_rois(const BevGrid& grid, const RoiSet& rois) {
  BevGrid sparse(grid.spec);
  for (const auto& [id, box] : rois.rois) {
    for_each_footprint_cell(grid.spec, box, [&](int h, int w) {
      const float* src = grid.cell(h, w);
      float* dst = sparse.cell(h, w);
      if (src[0] != 0.0f && dst[0] == 0.0f) {
        std::memcpy(dst, src, sizeof(float) * grid.spec.channels);
        sparse.mark_nonzero(uint32_t(h) * grid.spec.width + w);
      }
    });
  }
  sparse.finalize_nonzero();
  return sparse;
}

std::pair<RoiSet, BevGrid> generate_rois(const BevGrid& grid, double conf_threshold,
                                         double nms_iou) {
  if (conf_threshold <= 0.0 || conf_threshold >= 1.0)
    throw std::invalid_argument("generate_rois: conf_threshold must be in (0,1)");
  const auto kept = nms(decode_candidates(grid, conf_threshold), nms_iou);
  RoiSet rois;
  for (std::size_t i = 0; i < kept.size(); ++i) rois.rois.emplace_back(uint32_t(i), kept[i]);
  return {rois, mask_to_rois(grid, rois)};
}

double comm_volume(int k_rois) {
  if (k_rois < 1) throw std::invalid_argument("comm_volume: K must be >= 1");
  // Split off the power of two so that doubling K shifts only the integer
  // part; the fraction is quantized to a 2^-46 grid to keep the sum exact.
  int e = 0;
  const double m = std::frexp(40.0 * double(k_rois), &e);  // m in [0.5, 1)
  double frac = std::log2(m) + 1.0;
  frac = std::nearbyint(frac * 0x1p46) * 0x1p-46;
  return double(e - 1) + frac;
}

CollabMessage pack_message(int sender_id, const Observation& obs, const GridSpec& spec,
                           double conf_threshold, double nms_iou, uint64_t rng_seed,
                           int max_rois) {
  CollabMessage msg;
  msg.sender_id = sender_id;
  msg.timestamp = obs.timestamp;
  const BevGrid dense = synthesize_grid(obs, spec, rng_seed);
  auto [rois, sparse] = generate_rois(dense, conf_threshold, nms_iou);
  rois.timestamp = obs.timestamp;
  if (max_rois > 0 && int(rois.rois.size()) > max_rois) {
    rois.rois.resize(max_rois);  // already in descending-confidence order
    sparse = mask_to_rois(dense, rois);
  }
  msg.roi_set = std::move(rois);
  msg.sparse_grid = std::move(sparse);
  return msg;
}

void write_message(std::ostream& os, const CollabMessage& msg) {
  const GridSpec& spec = msg.sparse_grid.spec;
  const uint32_t n_rois = uint32_t(msg.roi_set.rois.size());
  const uint32_t n_cells = uint32_t(msg.sparse_grid.nonzero.size());
  const uint64_t payload = 4 + 8 + 4 + uint64_t(n_rois) * (4 + 7 * 8) +
                           uint64_t(n_cells) * (8 + 4 * uint64_t(spec.channels));
  put(os, uint32_t(payload));
  put(os, uint32_t(msg.sender_id));
  put(os, msg.timestamp);
  put(os, n_rois);
  for (const auto& [id, box] : msg.roi_set.rois) {
    put(os, id);
    put(os, box.center.x);
    put(os, box.center.y);
    put(os, box.length);
    put(os, box.width);
    put(os, std::cos(box.heading));
    put(os, std::sin(box.heading));
    put(os, box.confidence);
  }
  for (uint32_t idx : msg.sparse_grid.nonzero) {
    const uint32_t h = idx / spec.width, w = idx % spec.width;
    put(os, h);
    put(os, w);
    os.write(reinterpret_cast<const char*>(msg.sparse_grid.cell(int(h), int(w))),
             sizeof(float) * spec.channels);
  }
}

std::optional<CollabMessage> read_message(std::istream& is, const GridSpec& spec) {
  uint32_t payload = 0;
  if (!get(is, payload)) return std::nullopt;  // clean EOF
  CollabMessage msg;
  msg.sparse_grid = BevGrid(spec);
  uint32_t sender = 0, n_rois = 0;
  if (!get(is, sender) || !get(is, msg.timestamp) || !get(is, n_rois))
    throw std::runtime_error("read_message: truncated header");
  msg.sender_id = int(sender);
  msg.roi_set.timestamp = msg.timestamp;
  for (uint32_t i = 0; i < n_rois; ++i) {
    uint32_t id = 0;
    double x, y, len, wid, c, s, conf;
    if (!get(is, id) || !get(is, x) || !get(is, y) || !get(is, len) || !get(is, wid) ||
        !get(is, c) || !get(is, s) || !get(is, conf))
      throw std::runtime_error("read_message: truncated ROI record");
    msg.roi_set.rois.emplace_back(
        id, OrientedBox{conf, {x, y}, len, wid, wrap_angle(std::atan2(s, c))});
  }
  const uint64_t roi_bytes = 4 + 8 + 4 + uint64_t(n_rois) * (4 + 7 * 8);
  const uint64_t cell_bytes = uint64_t(payload) - roi_bytes;
  const uint64_t cell_size = 8 + 4 * uint64_t(spec.channels);
  if (cell_bytes % cell_size != 0)
    throw std::runtime_error("read_message: payload size mismatch");
  const uint64_t n_cells = cell_bytes / cell_size;
  for (uint64_t i = 0; i < n_cells; ++i) {
    uint32_t h = 0, w = 0;
    if (!get(is, h) || !get(is, w)) throw std::runtime_error("read_message: truncated cell");
    if (int(h) >= spec.height || int(w) >= spec.width)
      throw std::runtime_error("read_message: cell index out of bounds");
    float* dst = msg.sparse_grid.cell(int(h), int(w));
    is.read(reinterpret_cast<char*>(dst), sizeof(float) * spec.channels);
    if (!is) throw std::runtime_error("read_message: truncated cell data");
    msg.sparse_grid.mark_nonzero(h * uint32_t(spec.width) + w);
  }
  msg.sparse_grid.finalize_nonzero();
  return msg;
}

}  // namespace bevflow
