#pragma once

#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "erl_egomotion/types.hpp"

namespace erl {

/// Spherical Fibonacci samples on the upper hemisphere (t_z >= 0). Heights are
/// equally spaced in z from the pole downward, so sample 0 is always (0, 0, 1).
inline std::vector<Vector3d> hemisphere_grid(std::size_t n) {
  if (n == 0) throw InvalidInputError("hemisphere_grid: n must be >= 1");
  const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::vector<Vector3d> grid;
  grid.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double z = 1.0 - static_cast<double>(k) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden_angle * static_cast<double>(k);
    grid.emplace_back(Vector3d(r * std::cos(phi), r * std::sin(phi), z).normalized());
  }
  return grid;
}

/// Orthonormal basis of the tangent plane at unit vector t.
inline std::pair<Vector3d, Vector3d> tangent_basis(const Vector3d& t) {
  const Vector3d seed = std::abs(t.x()) < 0.9 ? Vector3d::UnitX() : Vector3d::UnitY();
  const Vector3d e1 = (seed - seed.dot(t) * t).normalized();
  const Vector3d e2 = t.cross(e1);
  return {e1, e2};
}

/// Point on the sphere reached from t by a tangent-plane step (retraction by normalization).
inline Vector3d chart_step(const Vector3d& t, const std::pair<Vector3d, Vector3d>& basis,
                           double d1, double d2) {
  return (t + d1 * basis.first + d2 * basis.second).normalized();
}

/// Angle between two unit vectors in radians, stable for small angles.
inline double angle_between(const Vector3d& a, const Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace erl
