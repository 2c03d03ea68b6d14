#pragma once

// Synthetic desk-scale scenes: random points in front of a calibrated camera,
// Gaussian camera motion, motion-field flow, isotropic flow noise and
// replacement outliers sampled from a Gaussian fit to the inlier flow.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "erl_egomotion/motion_field.hpp"
#include "erl_egomotion/sphere.hpp"

namespace erl {

struct SceneConfig {
  std::size_t n_points = 1500;
  double depth_min = 2.0;
  double depth_max = 10.0;
  /// Per-axis standard deviation of the translational velocity (depth units/frame).
  double t_sigma = 1.0;
  /// Per-axis standard deviation of the rotational velocity (rad/frame).
  double omega_sigma = 0.2;
  /// RMS noise magnitude as a fraction of the mean clean flow magnitude.
  double noise_fraction_of_mean_flow = 0.1;
  double outlier_fraction = 0.0;
  /// Points are uniform in |x|, |y| <= half_fov (calibrated units).
  double half_fov = 0.5;
  std::uint64_t seed = 0;
};

struct LabeledFlowField {
  FlowField flow;
  /// Flow before noise and outliers: predict_flow(truth, depths, points).
  FlowField clean;
  /// Unit translation; depths are scaled so rho * A t reproduces the clean flow.
  CameraMotion truth;
  InverseDepths depths;
  std::vector<bool> inlier_mask;
};

inline double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0.0) a += two_pi;
  return a - std::numbers::pi;
}

inline LabeledFlowField generate_scene(const SceneConfig& cfg) {
  if (!(cfg.depth_min > 0.0) || !(cfg.depth_max >= cfg.depth_min)) {
    throw InvalidInputError("generate_scene: depth range must be positive");
  }
  if (cfg.outlier_fraction < 0.0 || cfg.outlier_fraction > 1.0 ||
      cfg.noise_fraction_of_mean_flow < 0.0) {
    throw InvalidInputError("generate_scene: fractions must lie in [0, 1]");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> image(-cfg.half_fov, cfg.half_fov);
  std::uniform_real_distribution<double> depth(cfg.depth_min, cfg.depth_max);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);

  const std::size_t n = cfg.n_points;
  LabeledFlowField scene;
  std::vector<ImagePoint> points(n);
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    points[i] = {image(rng), image(rng)};
    z[i] = depth(rng);
  }

  Vector3d t;
  do {
    t = cfg.t_sigma * Vector3d(normal(rng), normal(rng), normal(rng));
  } while (t.norm() < 1e-9);
  const Vector3d omega = cfg.omega_sigma * Vector3d(normal(rng), normal(rng), normal(rng));
  const double speed = t.norm();

  scene.truth.t = t / speed;
  scene.truth.omega = omega;
  scene.depths.rho.resize(n);
  scene.depths.valid.assign(n, true);
  for (std::size_t i = 0; i < n; ++i) scene.depths.rho[i] = speed / z[i];

  scene.clean = predict_flow(scene.truth, scene.depths, points);
  scene.flow = scene.clean;
  scene.inlier_mask.assign(n, true);

  double mean_mag = 0.0;
  for (const auto& f : scene.clean.flows) mean_mag += std::hypot(f.u, f.v);
  mean_mag /= static_cast<double>(std::max<std::size_t>(n, 1));

  // Isotropic 2-D Gaussian: uniform direction, RMS magnitude = sigma.
  const double sigma = cfg.noise_fraction_of_mean_flow * mean_mag;
  if (sigma > 0.0) {
    const double axis_sigma = sigma / std::numbers::sqrt2;
    for (auto& f : scene.flow.flows) {
      f.u += axis_sigma * normal(rng);
      f.v += axis_sigma * normal(rng);
    }
  }

  const auto n_out = static_cast<std::size_t>(std::llround(cfg.outlier_fraction * static_cast<double>(n)));
  if (n_out > 0) {
    // Diagonal Gaussian over (magnitude, direction) of the inlier flow.
    double m_mean = 0.0, a_cx = 0.0, a_cy = 0.0;
    std::vector<double> mags(n), angs(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = scene.flow.flows[i];
      mags[i] = std::hypot(f.u, f.v);
      angs[i] = std::atan2(f.v, f.u);
      m_mean += mags[i];
      a_cx += std::cos(angs[i]);
      a_cy += std::sin(angs[i]);
    }
    m_mean /= static_cast<double>(n);
    const double a_mean = std::atan2(a_cy, a_cx);
    double m_var = 0.0, a_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      m_var += (mags[i] - m_mean) * (mags[i] - m_mean);
      const double d = wrap_angle(angs[i] - a_mean);
      a_var += d * d;
    }
    const double m_sd = std::sqrt(m_var / static_cast<double>(n));
    const double a_sd = std::sqrt(a_var / static_cast<double>(n));

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < n_out; ++k) {
      const std::size_t i = idx[k];
      const double mag = m_mean + m_sd * normal(rng);
      const double dir = wrap_angle(a_mean + a_sd * normal(rng));
      scene.flow.flows[i] = {mag * std::cos(dir), mag * std::sin(dir)};
      scene.inlier_mask[i] = false;
    }
  }
  return scene;
}

/// Angle between translation directions in degrees, invariant to t -> -t.
inline double translation_angular_error(const Vector3d& t_hat, const Vector3d& t_true) {
  const Vector3d a = t_hat.normalized(), b = t_true.normalized();
  const double ang = angle_between(a, b);
  return std::min(ang, std::numbers::pi - ang) * 180.0 / std::numbers::pi;
}

inline double rotation_error(const Vector3d& omega_hat, const Vector3d& omega_true) {
  return (omega_hat - omega_true).norm();
}

/// Area under the ROC curve for `scores` ranking positives above negatives (ties count 1/2).
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t k = 0; k < order.size();) {
    std::size_t j = k;
    while (j < order.size() && scores[order[j]] == scores[order[k]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(k + 1 + j);
    for (std::size_t m = k; m < j; ++m) {
      if (positive[order[m]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    k = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return 0.5;
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

/// FNV-1a over the raw bytes of the field; identical fields hash identically.
inline std::uint64_t flow_hash(const FlowField& flow) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int k = 0; k < 8; ++k) {
      h ^= (bits >> (8 * k)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  for (std::size_t i = 0; i < flow.size(); ++i) {
    mix(flow.points[i].x);
    mix(flow.points[i].y);
    mix(flow.flows[i].u);
    mix(flow.flows[i].v);
  }
  return h;
}

}  // namespace erl
