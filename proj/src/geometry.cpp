#include "bevflow/geometry.hpp"

namespace bevflow {

std::array<Vec2, 4> OrientedBox::corners() const {
  const double hl = 0.5 * length, hw = 0.5 * width;
  const double c = std::cos(heading), s = std::sin(heading);
  auto corner = [&](double dx, double dy) -> Vec2 {
    return {center.x + c * dx - s * dy, center.y + s * dx + c * dy};
  };
  // counterclockwise order
  return {corner(hl, hw), corner(-hl, hw), corner(-hl, -hw), corner(hl, -hw)};
}

bool OrientedBox::contains(const Vec2& p) const {
  const double c = std::cos(heading), s = std::sin(heading);
  const double dx = p.x - center.x, dy = p.y - center.y;
  const double u = c * dx + s * dy;   // along heading
  const double v = -s * dx + c * dy;  // across heading
  return std::fabs(u) <= 0.5 * length && std::fabs(v) <= 0.5 * width;
}

}  // namespace bevflow
