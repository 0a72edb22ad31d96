#pragma once

#include <array>
#include <cmath>

namespace bevflow {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

/// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, 2.0 * M_PI);
  if (w <= -M_PI) w += 2.0 * M_PI;
  return w;
}

/// Rotates v counterclockwise by angle (radians).
inline Vec2 rotate(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

/// 2D oriented rectangle with a detection confidence. Heading is measured
/// counterclockwise from the +x axis; length extends along the heading.
struct OrientedBox {
  double confidence = 0.0;
  Vec2 center;
  double length = 0.0;
  double width = 0.0;
  double heading = 0.0;

  std::array<Vec2, 4> corners() const;
  bool contains(const Vec2& p) const;
  double area() const { return length * width; }
};

}  // namespace bevflow
