#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace erl {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

/// Calibrated image coordinates (focal length normalized to 1).
struct ImagePoint {
  double x = 0.0;
  double y = 0.0;
};

/// Image velocity in calibrated units per frame.
struct FlowVector {
  double u = 0.0;
  double v = 0.0;

  Vector2d vec() const { return {u, v}; }
};

/// N image points and their measured flow. Both sequences have equal length.
struct FlowField {
  std::vector<ImagePoint> points;
  std::vector<FlowVector> flows;

  std::size_t size() const { return points.size(); }
  const ImagePoint& point(std::size_t i) const { return points[i]; }
  const FlowVector& flow(std::size_t i) const { return flows[i]; }
};

/// Translation direction (unit norm, scale unobservable) and rotational velocity.
struct CameraMotion {
  Vector3d t = Vector3d::UnitZ();
  Vector3d omega = Vector3d::Zero();
};

/// Per-point inverse depth. Entries at the focus of expansion are NaN with valid[i] == false.
struct InverseDepths {
  std::vector<double> rho;
  std::vector<bool> valid;

  std::size_t size() const { return rho.size(); }
};

// Error hierarchy. Every failure the library reports derives from erl::Error.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Point at (or numerically at) the focus of expansion: ||J A(x) t|| < eps_foe.
class DegeneratePointError : public Error {
 public:
  using Error::Error;
};

/// 3x3 normal system for omega is rank deficient or too ill-conditioned.
class SingularSystemError : public Error {
 public:
  using Error::Error;
};

class InvalidInputError : public Error {
 public:
  using Error::Error;
};

/// Flow field too small in magnitude to carry motion information.
class ZeroMotionError : public Error {
 public:
  using Error::Error;
};

class NearSingularError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. line() is 1-based; 0 when not tied to a line.
class ParseError : public Error {
 public:
  enum class Kind { malformed_header, count_mismatch, non_finite_value, malformed_record, io };

  ParseError(Kind kind, std::size_t line, const std::string& what)
      : Error(what), kind_(kind), line_(line) {}

  Kind kind() const { return kind_; }
  std::size_t line() const { return line_; }

 private:
  Kind kind_;
  std::size_t line_;
};

/// Threshold on ||J A(x) t|| below which a point is treated as the focus of expansion.
inline constexpr double kFoeEpsilon = 1e-8;

/// Largest condition number accepted for the 3x3 omega normal matrix.
inline constexpr double kMaxOmegaCondition = 1e12;

/// Pick the antipodal representative with t_z >= 0 (then t_x >= 0, then t_y >= 0).
/// Returns true when the input was flipped.
inline bool canonical_hemisphere_flip(const Vector3d& t) {
  if (t.z() != 0.0) return t.z() < 0.0;
  if (t.x() != 0.0) return t.x() < 0.0;
  return t.y() < 0.0;
}

/// Canonicalize motion and depths together so that rho * A t is unchanged.
inline void canonicalize(CameraMotion& motion, InverseDepths* depths = nullptr) {
  if (!canonical_hemisphere_flip(motion.t)) return;
  motion.t = -motion.t;
  if (depths != nullptr) {
    for (double& r : depths->rho) r = -r;
  }
}

inline void validate_flow_field(const FlowField& flow, std::size_t min_points = 1) {
  if (flow.points.size() != flow.flows.size()) {
    throw InvalidInputError("flow field: points and flows differ in length");
  }
  if (flow.size() < min_points) {
    throw InvalidInputError("flow field: need at least " + std::to_string(min_points) +
                            " points, got " + std::to_string(flow.size()));
  }
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const auto& p = flow.points[i];
    const auto& f = flow.flows[i];
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(f.u) || !std::isfinite(f.v)) {
      throw InvalidInputError("flow field: non-finite entry at index " + std::to_string(i));
    }
  }
}

}  // namespace erl
