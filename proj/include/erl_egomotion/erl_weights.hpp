#pragma once

// Expected residual likelihood (ERL) confidence weights.
//
// For each counterfactual translation t_m the flow is projected, omega_hat(t_m) is
// solved, and a distribution is fitted by maximum likelihood to the absolute
// normalized residuals |E_i(t_m)|. A point's weight is its mean likelihood
// across all models, min-max scaled to [0, 1] over the field.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "erl_egomotion/motion_field.hpp"

namespace erl {

enum class ResidualDistribution { laplacian, gaussian };

struct ErlConfig {
  ResidualDistribution distribution = ResidualDistribution::laplacian;
  /// Lower clamp on the fitted scale, in residual units.
  double scale_min = 1e-9;
};

struct LaplacianFit {
  double mu = 0.0;
  double b = 1.0;
};

struct GaussianFit {
  double mean = 0.0;
  double sigma = 1.0;
};

struct ConfidenceWeights {
  std::vector<double> w;
  /// All raw expected likelihoods were equal; w is all ones.
  bool degenerate = false;
  /// Number of model samples that contributed (singular samples are skipped).
  std::size_t models_used = 0;
};

template <FlowLike F>
std::vector<double> scaled_residuals(const F& flow, const Vector3d& t_m) {
  const ProjectedSystem sys = project(flow, t_m);
  const Vector3d omega = solve_omega_hat(sys);
  std::vector<double> r = error_vector(sys, omega);
  for (double& v : r) v = std::abs(v);
  return r;
}

/// Median, averaging the two central order statistics for even lengths.
inline double median(std::vector<double> values) {
  if (values.empty()) throw InvalidInputError("median of empty sequence");
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

inline LaplacianFit laplacian_mle(std::span<const double> residuals, double scale_min = 1e-9) {
  if (residuals.empty()) throw InvalidInputError("laplacian_mle: empty input");
  LaplacianFit fit;
  fit.mu = median(std::vector<double>(residuals.begin(), residuals.end()));
  double dev = 0.0;
  for (double r : residuals) dev += std::abs(r - fit.mu);
  fit.b = std::max(dev / static_cast<double>(residuals.size()), scale_min);
  return fit;
}

inline double laplacian_likelihood(double r, const LaplacianFit& fit) {
  return std::exp(-std::abs(r - fit.mu) / fit.b) / (2.0 * fit.b);
}

inline double laplacian_log_likelihood(double r, const LaplacianFit& fit) {
  return -std::log(2.0 * fit.b) - std::abs(r - fit.mu) / fit.b;
}

/// Mean and (biased, 1/N) standard deviation.
inline GaussianFit gaussian_mle(std::span<const double> residuals, double scale_min = 1e-9) {
  if (residuals.empty()) throw InvalidInputError("gaussian_mle: empty input");
  const double n = static_cast<double>(residuals.size());
  GaussianFit fit;
  double sum = 0.0;
  for (double r : residuals) sum += r;
  fit.mean = sum / n;
  double var = 0.0;
  for (double r : residuals) var += (r - fit.mean) * (r - fit.mean);
  fit.sigma = std::max(std::sqrt(var / n), scale_min);
  return fit;
}

inline double gaussian_likelihood(double r, const GaussianFit& fit) {
  const double z = (r - fit.mean) / fit.sigma;
  return std::exp(-0.5 * z * z) / (fit.sigma * std::sqrt(2.0 * std::numbers::pi));
}

inline double gaussian_log_likelihood(double r, const GaussianFit& fit) {
  const double z = (r - fit.mean) / fit.sigma;
  return -0.5 * z * z - std::log(fit.sigma) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Relative spread below which expected likelihoods count as equal.
inline constexpr double kDegenerateRelativeRange = 1e-6;

/// Affine min-max rescale to [0, 1]. All-equal input maps to all ones, flagged degenerate.
inline ConfidenceWeights scale_to_unit_interval(std::vector<double> raw) {
  ConfidenceWeights out;
  if (raw.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(raw.begin(), raw.end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  if (!(range > kDegenerateRelativeRange * std::abs(hi))) {
    out.w.assign(raw.size(), 1.0);
    out.degenerate = true;
    return out;
  }
  for (double& v : raw) v = (v - lo) / range;
  out.w = std::move(raw);
  return out;
}

namespace detail {

template <FlowLike F, class Fit, class Likelihood>
ConfidenceWeights expected_likelihood_weights(const F& flow, std::span<const Vector3d> samples,
                                              Fit&& fit_fn, Likelihood&& likelihood_fn) {
  if (samples.empty()) throw InvalidInputError("confidence weights: no model samples");
  const std::size_t n = flow.size();
  std::vector<double> accum(n, 0.0);
  std::size_t used = 0;
  for (const Vector3d& t_m : samples) {
    std::vector<double> r;
    try {
      r = scaled_residuals(flow, t_m);
    } catch (const SingularSystemError&) {
      continue;
    }
    const auto fit = fit_fn(std::span<const double>(r));
    for (std::size_t i = 0; i < n; ++i) accum[i] += likelihood_fn(r[i], fit);
    ++used;
  }
  if (used == 0) throw SingularSystemError("confidence weights: every model sample was singular");
  for (double& v : accum) v /= static_cast<double>(used);
  ConfidenceWeights out = scale_to_unit_interval(std::move(accum));
  out.models_used = used;
  return out;
}

}  // namespace detail

template <FlowLike F>
ConfidenceWeights erl_confidence_weights(const F& flow, std::span<const Vector3d> samples,
                                         const ErlConfig& cfg = {}) {
  return detail::expected_likelihood_weights(
      flow, samples, [&](std::span<const double> r) { return laplacian_mle(r, cfg.scale_min); },
      [](double r, const LaplacianFit& fit) { return laplacian_likelihood(r, fit); });
}

template <FlowLike F>
ConfidenceWeights gaussian_confidence_weights(const F& flow, std::span<const Vector3d> samples,
                                              const ErlConfig& cfg = {}) {
  return detail::expected_likelihood_weights(
      flow, samples, [&](std::span<const double> r) { return gaussian_mle(r, cfg.scale_min); },
      [](double r, const GaussianFit& fit) { return gaussian_likelihood(r, fit); });
}

template <FlowLike F>
ConfidenceWeights confidence_weights(const F& flow, std::span<const Vector3d> samples,
                                     const ErlConfig& cfg) {
  return cfg.distribution == ResidualDistribution::laplacian
             ? erl_confidence_weights(flow, samples, cfg)
             : gaussian_confidence_weights(flow, samples, cfg);
}

}  // namespace erl
