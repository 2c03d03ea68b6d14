#pragma once

// Perspective motion field u = rho A(x) t + B(x) omega, and the depth-eliminated
// residual machinery built on the sparse orthogonal complement of A(t).

#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "erl_egomotion/types.hpp"

namespace erl {

/// Anything that exposes indexed image points and flow vectors.
template <class F>
concept FlowLike = requires(const F& f, std::size_t i) {
  { f.size() } -> std::convertible_to<std::size_t>;
  { f.point(i) } -> std::convertible_to<ImagePoint>;
  { f.flow(i) } -> std::convertible_to<FlowVector>;
};

using Matrix23d = Eigen::Matrix<double, 2, 3>;

struct PointBasis {
  Matrix23d A;
  Matrix23d B;
};

inline PointBasis point_basis(const ImagePoint& p) {
  const double x = p.x, y = p.y;
  PointBasis basis;
  basis.A << 1.0, 0.0, -x,
             0.0, 1.0, -y;
  basis.B << -x * y, 1.0 + x * x, -y,
             -1.0 - y * y, x * y, x;
  return basis;
}

/// J A(x) t with J = [[0,-1],[1,0]]; orthogonal to A(x) t.
inline Vector2d rotated_translational_direction(const ImagePoint& p, const Vector3d& t) {
  const double ax = t.x() - p.x * t.z();
  const double ay = t.y() - p.y * t.z();
  return {-ay, ax};
}

/// Unit vector spanning the orthogonal complement of A(x) t.
inline Vector2d perp_direction(const ImagePoint& p, const Vector3d& t) {
  const Vector2d n = rotated_translational_direction(p, t);
  const double norm = n.norm();
  if (!(norm >= kFoeEpsilon)) {
    throw DegeneratePointError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                               ") lies at the focus of expansion");
  }
  return n / norm;
}

inline FlowField predict_flow(const CameraMotion& motion, const InverseDepths& depths,
                              std::span<const ImagePoint> points) {
  if (depths.size() != points.size()) {
    throw InvalidInputError("predict_flow: depth and point counts differ");
  }
  FlowField out;
  out.points.assign(points.begin(), points.end());
  out.flows.resize(points.size());
  const Vector3d& t = motion.t;
  const Vector3d& w = motion.omega;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double x = points[i].x, y = points[i].y;
    const double rho = depths.rho[i];
    const double at_x = t.x() - x * t.z();
    const double at_y = t.y() - y * t.z();
    const double bw_x = -x * y * w.x() + (1.0 + x * x) * w.y() - y * w.z();
    const double bw_y = (-1.0 - y * y) * w.x() + x * y * w.y() + x * w.z();
    out.flows[i] = {rho * at_x + bw_x, rho * at_y + bw_y};
  }
  return out;
}

/// The flow field projected onto the per-point orthogonal complement of A(x_i) t:
/// E_i(omega) = a_i . omega - b_i with a_i = B(x_i)^T p_i and b_i = p_i . u_i.
/// Degenerate points keep a_i = 0, b_i = 0 so they add nothing to any sum.
struct ProjectedSystem {
  std::vector<Vector3d> a;
  std::vector<double> b;
  std::vector<std::uint8_t> valid;
  std::size_t degenerate_count = 0;

  std::size_t size() const { return b.size(); }

  double residual(std::size_t i, const Vector3d& omega) const { return a[i].dot(omega) - b[i]; }
};

namespace detail {

inline Vector3d solve_omega_normal_equations(const Matrix3d& normal, const Vector3d& rhs,
                                             std::size_t used) {
  if (used < 3) {
    throw SingularSystemError("solve_omega_hat: fewer than 3 non-degenerate points");
  }
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig;
  eig.computeDirect(normal, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues()(0);
  const double hi = eig.eigenvalues()(2);
  if (!(hi > 0.0) || !(lo * kMaxOmegaCondition > hi)) {
    throw SingularSystemError("solve_omega_hat: normal matrix condition number exceeds 1e12");
  }
  return normal.ldlt().solve(rhs);
}

/// Projects point i at t into (a_i, b_i); returns false at the focus of expansion.
inline bool project_point(const ImagePoint& p, const FlowVector& u, const Vector3d& t, Vector3d& a,
                          double& b) {
  const Vector2d dir = rotated_translational_direction(p, t);
  const double norm = dir.norm();
  if (!(norm >= kFoeEpsilon)) return false;
  const double px = dir.x() / norm, py = dir.y() / norm;
  const double x = p.x, y = p.y;
  a = Vector3d(-x * y * px + (-1.0 - y * y) * py, (1.0 + x * x) * px + x * y * py, -y * px + x * py);
  b = px * u.u + py * u.v;
  return true;
}

}  // namespace detail

template <FlowLike F>
ProjectedSystem project(const F& flow, const Vector3d& t) {
  const std::size_t n = flow.size();
  ProjectedSystem sys;
  sys.a.resize(n);
  sys.b.resize(n);
  sys.valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const ImagePoint p = flow.point(i);
    const FlowVector u = flow.flow(i);
    if (!detail::project_point(p, u, t, sys.a[i], sys.b[i])) {
      sys.a[i].setZero();
      sys.b[i] = 0.0;
      sys.valid[i] = 0;
      ++sys.degenerate_count;
      continue;
    }
    sys.valid[i] = 1;
  }
  return sys;
}

/// Weighted least-squares omega for a projected system: minimizes sum (w_i E_i)^2.
inline Vector3d solve_omega_hat(const ProjectedSystem& sys,
                                std::span<const double> weights = {}) {
  const bool weighted = !weights.empty();
  if (weighted && weights.size() != sys.size()) {
    throw InvalidInputError("solve_omega_hat: weight count does not match flow size");
  }
  Matrix3d normal = Matrix3d::Zero();
  Vector3d rhs = Vector3d::Zero();
  std::size_t used = 0;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    if (!sys.valid[i]) continue;
    const double w2 = weighted ? weights[i] * weights[i] : 1.0;
    normal.noalias() += w2 * sys.a[i] * sys.a[i].transpose();
    rhs += w2 * sys.b[i] * sys.a[i];
    ++used;
  }
  return detail::solve_omega_normal_equations(normal, rhs, used);
}

/// ||w o E(t, omega_hat_w(t))||^2 in two passes without materializing the projection.
template <FlowLike F>
double reduced_cost(const F& flow, const Vector3d& t, std::span<const double> weights = {}) {
  const bool weighted = !weights.empty();
  const std::size_t n = flow.size();
  if (weighted && weights.size() != n) {
    throw InvalidInputError("reduced_cost: weight count does not match flow size");
  }
  Matrix3d normal = Matrix3d::Zero();
  Vector3d rhs = Vector3d::Zero();
  std::size_t used = 0;
  Vector3d a;
  double b;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::project_point(flow.point(i), flow.flow(i), t, a, b)) continue;
    const double w2 = weighted ? weights[i] * weights[i] : 1.0;
    normal.noalias() += w2 * a * a.transpose();
    rhs += w2 * b * a;
    ++used;
  }
  const Vector3d omega = detail::solve_omega_normal_equations(normal, rhs, used);
  double cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!detail::project_point(flow.point(i), flow.flow(i), t, a, b)) continue;
    const double r = (weighted ? weights[i] : 1.0) * (a.dot(omega) - b);
    cost += r * r;
  }
  return cost;
}

template <FlowLike F>
Vector3d solve_omega_hat(const F& flow, const Vector3d& t, std::span<const double> weights = {}) {
  return solve_omega_hat(project(flow, t), weights);
}

inline std::vector<double> error_vector(const ProjectedSystem& sys, const Vector3d& omega) {
  std::vector<double> e(sys.size(), 0.0);
  for (std::size_t i = 0; i < sys.size(); ++i) {
    if (sys.valid[i]) e[i] = sys.residual(i, omega);
  }
  return e;
}

/// E_i = p_i^T (B(x_i) omega - u_i); degenerate points yield 0.
template <FlowLike F>
std::vector<double> error_vector(const F& flow, const Vector3d& t, const Vector3d& omega) {
  return error_vector(project(flow, t), omega);
}

inline double squared_norm(std::span<const double> v, std::span<const double> weights = {}) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double r = weights.empty() ? v[i] : weights[i] * v[i];
    s += r * r;
  }
  return s;
}

/// Per-point least-squares inverse depth at fixed (t, omega).
template <FlowLike F>
InverseDepths recover_depths(const F& flow, const Vector3d& t, const Vector3d& omega) {
  const std::size_t n = flow.size();
  InverseDepths out;
  out.rho.assign(n, std::numeric_limits<double>::quiet_NaN());
  out.valid.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const ImagePoint p = flow.point(i);
    const FlowVector u = flow.flow(i);
    const double at_x = t.x() - p.x * t.z();
    const double at_y = t.y() - p.y * t.z();
    const double norm_sq = at_x * at_x + at_y * at_y;
    if (!(std::sqrt(norm_sq) >= kFoeEpsilon)) continue;
    const double x = p.x, y = p.y;
    const double bw_x = -x * y * omega.x() + (1.0 + x * x) * omega.y() - y * omega.z();
    const double bw_y = (-1.0 - y * y) * omega.x() + x * y * omega.y() + x * omega.z();
    out.rho[i] = (at_x * (u.u - bw_x) + at_y * (u.v - bw_y)) / norm_sq;
    out.valid[i] = true;
  }
  return out;
}

}  // namespace erl
