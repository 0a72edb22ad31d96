#include "bevflow/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bevflow {

GridSpec GridSpec::make(double x_min, double x_max, double y_min, double y_max,
                        double cell, int channels) {
  if (cell <= 0.0) throw std::invalid_argument("GridSpec: cell must be > 0");
  if (channels < 7) throw std::invalid_argument("GridSpec: channels must be >= 7");
  GridSpec s;
  s.x_min = x_min; s.x_max = x_max; s.y_min = y_min; s.y_max = y_max;
  s.cell = cell;
  s.channels = channels;
  const double hf = (y_max - y_min) / cell;
  const double wf = (x_max - x_min) / cell;
  s.height = int(std::lround(hf));
  s.width = int(std::lround(wf));
  if (s.height <= 0 || s.width <= 0 ||
      std::fabs(hf - s.height) > 1e-9 || std::fabs(wf - s.width) > 1e-9) {
    throw std::invalid_argument("GridSpec: extent must be an integer number of cells");
  }
  return s;
}

bool GridSpec::locate(const Vec2& p, int& h, int& w) const {
  const int wi = int(std::floor((p.x - x_min) / cell));
  const int hi = int(std::floor((p.y - y_min) / cell));
  if (!cell_in_bounds(hi, wi)) return false;
  h = hi;
  w = wi;
  return true;
}

void BevGrid::finalize_nonzero() {
  std::sort(nonzero.begin(), nonzero.end());
  nonzero.erase(std::unique(nonzero.begin(), nonzero.end()), nonzero.end());
}

}  // namespace bevflow
