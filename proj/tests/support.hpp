#pragma once

#include <random>
#include <vector>

#include <Eigen/Dense>

#include "erl_egomotion.hpp"

namespace erl::test {

inline FlowField random_flow(std::mt19937_64& rng, std::size_t n, double extent = 0.6) {
  std::uniform_real_distribution<double> pos(-extent, extent), vel(-0.5, 0.5);
  FlowField f;
  for (std::size_t i = 0; i < n; ++i) {
    f.points.push_back({pos(rng), pos(rng)});
    f.flows.push_back({vel(rng), vel(rng)});
  }
  return f;
}

inline Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  return Vector3d(g(rng), g(rng), g(rng)).normalized();
}

inline Vector3d random_vec(std::mt19937_64& rng, double sigma) {
  std::normal_distribution<double> g(0.0, sigma);
  return Vector3d(g(rng), g(rng), g(rng));
}

/// A(x) and B(x) written out independently of point_basis.
inline Eigen::Matrix<double, 2, 3> a_matrix(const ImagePoint& p) {
  Eigen::Matrix<double, 2, 3> m;
  m << 1, 0, -p.x, 0, 1, -p.y;
  return m;
}

inline Eigen::Matrix<double, 2, 3> b_matrix(const ImagePoint& p) {
  Eigen::Matrix<double, 2, 3> m;
  m << -p.x * p.y, 1 + p.x * p.x, -p.y, -1 - p.y * p.y, p.x * p.y, p.x;
  return m;
}

/// Per-point 1-D least squares over rho_i of ||u_i - rho_i A_i t - B_i omega||^2, summed.
inline double depth_minimized_cost(const FlowField& flow, const Vector3d& t, const Vector3d& omega) {
  double total = 0.0;
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const Eigen::Vector2d at = a_matrix(flow.points[i]) * t;
    const Eigen::Vector2d d = flow.flows[i].vec() - b_matrix(flow.points[i]) * omega;
    const double rho = at.squaredNorm() > 0 ? at.dot(d) / at.squaredNorm() : 0.0;
    total += (d - rho * at).squaredNorm();
  }
  return total;
}

/// FlowLike view that counts element accesses.
struct CountingFlow {
  const FlowField* base;
  mutable std::size_t reads = 0;

  std::size_t size() const { return base->size(); }
  ImagePoint point(std::size_t i) const {
    ++reads;
    return base->points[i];
  }
  FlowVector flow(std::size_t i) const {
    ++reads;
    return base->flows[i];
  }
};

inline LabeledFlowField scene(std::uint64_t seed, double outliers = 0.0, double noise = 0.1,
                              std::size_t n = 1500) {
  SceneConfig sc;
  sc.seed = seed;
  sc.outlier_fraction = outliers;
  sc.noise_fraction_of_mean_flow = noise;
  sc.n_points = n;
  return generate_scene(sc);
}

inline std::vector<bool> outlier_labels(const LabeledFlowField& s) {
  std::vector<bool> out(s.inlier_mask.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = !s.inlier_mask[i];
  return out;
}

}  // namespace erl::test
