#pragma once

#include <cstdint>
#include <vector>

#include "bevflow/geometry.hpp"
#include "bevflow/scene_sim.hpp"

namespace bevflow {

/// Metric layout of a BEV grid. Row index h runs along y, column index w
/// along x. Channel layout of the feature vector:
///   [0]      confidence
///   [1], [2] offset from the cell center to the object center, cell units
///            (x then y)
///   [3], [4] object length and width, meters
///   [5], [6] cos/sin of the object heading
///   [7..D-1] per-object signature
struct GridSpec {
  double x_min = 0.0, x_max = 0.0, y_min = 0.0, y_max = 0.0;
  double cell = 0.4;  // meters per cell side
  int height = 0;     // cell count along y
  int width = 0;      // cell count along x
  int channels = 15;  // >= 7

  static GridSpec make(double x_min, double x_max, double y_min, double y_max,
                       double cell, int channels);

  std::size_t cell_count() const { return std::size_t(height) * std::size_t(width); }
  std::size_t value_count() const { return cell_count() * std::size_t(channels); }

  Vec2 cell_center(int h, int w) const {
    return {x_min + (w + 0.5) * cell, y_min + (h + 0.5) * cell};
  }
  bool cell_in_bounds(int h, int w) const {
    return h >= 0 && h < height && w >= 0 && w < width;
  }
  /// Cell containing point p; false when p is outside the extent.
  bool locate(const Vec2& p, int& h, int& w) const;

  BevExtent extent() const { return {x_min, x_max, y_min, y_max}; }

  bool operator==(const GridSpec&) const = default;
};

/// Dense H x W x D feature map plus the sorted list of nonzero cells.
struct BevGrid {
  GridSpec spec;
  std::vector<float> data;            // h-major, then w, then channel
  std::vector<uint32_t> nonzero;      // sorted cell indices h * width + w

  explicit BevGrid(const GridSpec& s) : spec(s), data(s.value_count(), 0.0f) {}
  BevGrid() = default;

  std::size_t offset(int h, int w) const {
    return (std::size_t(h) * spec.width + w) * spec.channels;
  }
  float* cell(int h, int w) { return data.data() + offset(h, w); }
  const float* cell(int h, int w) const { return data.data() + offset(h, w); }
  float confidence(int h, int w) const { return cell(h, w)[0]; }

  void mark_nonzero(uint32_t idx) { nonzero.push_back(idx); }
  void finalize_nonzero();  // sort + dedupe
};

/// Cells whose centers lie inside the box footprint, clipped to the grid.
/// Visits cells in (h, w) ascending order.
template <typename Fn>
void for_each_footprint_cell(const GridSpec& spec, const OrientedBox& box, Fn&& fn) {
  const auto corners = box.corners();
  double lox = corners[0].x, hix = corners[0].x, loy = corners[0].y, hiy = corners[0].y;
  for (const auto& c : corners) {
    lox = std::min(lox, c.x); hix = std::max(hix, c.x);
    loy = std::min(loy, c.y); hiy = std::max(hiy, c.y);
  }
  const int h0 = std::max(0, int(std::floor((loy - spec.y_min) / spec.cell - 0.5)));
  const int h1 = std::min(spec.height - 1, int(std::ceil((hiy - spec.y_min) / spec.cell)));
  const int w0 = std::max(0, int(std::floor((lox - spec.x_min) / spec.cell - 0.5)));
  const int w1 = std::min(spec.width - 1, int(std::ceil((hix - spec.x_min) / spec.cell)));
  for (int h = h0; h <= h1; ++h) {
    for (int w = w0; w <= w1; ++w) {
      if (box.contains(spec.cell_center(h, w))) fn(h, w);
    }
  }
}

}  // namespace bevflow
