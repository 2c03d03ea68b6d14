#pragma once

// Experiment runners: the outlier-rate sweep over estimators and the study of
// Laplacian against Gaussian fits to residuals at the true motion.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "erl_egomotion/estimator.hpp"
#include "erl_egomotion/synth.hpp"

namespace erl {

struct SweepRecord {
  double fraction = 0.0;
  Method method = Method::raw;
  std::uint64_t seed = 0;
  /// NaN when the estimator failed.
  double t_err_deg = std::numeric_limits<double>::quiet_NaN();
  double omega_err = std::numeric_limits<double>::quiet_NaN();
  double runtime_ms = 0.0;
  bool converged = false;
  bool failed = false;
  std::string error;
  std::uint64_t flow_hash = 0;
};

struct SweepCell {
  double fraction = 0.0;
  Method method = Method::raw;
  /// Median over seeds; failed runs count as +infinity.
  double median_t_err_deg = 0.0;
  double median_omega_err = 0.0;
  std::size_t failures = 0;
};

struct SweepResult {
  std::vector<SweepRecord> records;
  std::vector<SweepCell> cells;

  const SweepCell* cell(double fraction, Method method) const {
    for (const auto& c : cells) {
      if (c.fraction == fraction && c.method == method) return &c;
    }
    return nullptr;
  }
};

struct SweepConfig {
  SceneConfig scene;
  SolverConfig solver;
  /// Seed for cell (fraction index f, seed index s) is base_seed + f * stride + s.
  std::uint64_t base_seed = 1;
  std::uint64_t fraction_stride = 100003;
  /// Called after every record; for progress reporting.
  std::function<void(const SweepRecord&)> on_record;
};

namespace detail {

inline double median_with_failures(std::vector<double> v) {
  for (double& x : v) {
    if (!std::isfinite(x)) x = std::numeric_limits<double>::infinity();
  }
  return median(std::move(v));
}

}  // namespace detail

inline SweepResult run_outlier_sweep(std::span<const double> fractions, std::size_t seeds_per_cell,
                                     std::span<const Method> methods, const SweepConfig& cfg = {}) {
  SweepResult result;
  result.records.reserve(fractions.size() * seeds_per_cell * methods.size());
  for (std::size_t f = 0; f < fractions.size(); ++f) {
    for (std::size_t s = 0; s < seeds_per_cell; ++s) {
      SceneConfig scene_cfg = cfg.scene;
      scene_cfg.outlier_fraction = fractions[f];
      scene_cfg.seed = cfg.base_seed + f * cfg.fraction_stride + s;
      const LabeledFlowField scene = generate_scene(scene_cfg);
      const std::uint64_t hash = flow_hash(scene.flow);

      for (const Method m : methods) {
        SweepRecord rec;
        rec.fraction = fractions[f];
        rec.method = m;
        rec.seed = scene_cfg.seed;
        rec.flow_hash = hash;
        const auto start = std::chrono::steady_clock::now();
        try {
          const EgomotionEstimate est = estimate(scene.flow, m, cfg.solver);
          rec.t_err_deg = translation_angular_error(est.motion.t, scene.truth.t);
          rec.omega_err = rotation_error(est.motion.omega, scene.truth.omega);
          rec.converged = est.diagnostics.converged;
        } catch (const std::exception& e) {
          rec.failed = true;
          rec.error = e.what();
        }
        rec.runtime_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (cfg.on_record) cfg.on_record(rec);
        result.records.push_back(std::move(rec));
      }
    }
  }

  for (const double fraction : fractions) {
    for (const Method m : methods) {
      SweepCell cell;
      cell.fraction = fraction;
      cell.method = m;
      std::vector<double> t_err, omega_err;
      for (const auto& r : result.records) {
        if (r.fraction != fraction || r.method != m) continue;
        t_err.push_back(r.t_err_deg);
        omega_err.push_back(r.omega_err);
        if (r.failed) ++cell.failures;
      }
      if (!t_err.empty()) {
        cell.median_t_err_deg = detail::median_with_failures(std::move(t_err));
        cell.median_omega_err = detail::median_with_failures(std::move(omega_err));
      }
      result.cells.push_back(cell);
    }
  }
  return result;
}

struct FitTrial {
  std::uint64_t seed = 0;
  double laplacian_loglik = 0.0;
  double gaussian_loglik = 0.0;
  /// Both fitted scales hit the clamp; the comparison is meaningless.
  bool degenerate = false;
  /// ERL translation error with each likelihood, when estimates were requested.
  double erl_laplacian_t_err_deg = std::numeric_limits<double>::quiet_NaN();
  double erl_gaussian_t_err_deg = std::numeric_limits<double>::quiet_NaN();
};

struct FitStudyConfig {
  /// Contamination level of every trial.
  SceneConfig scene = [] {
    SceneConfig s;
    s.outlier_fraction = 0.3;
    return s;
  }();
  SolverConfig solver;
  std::uint64_t base_seed = 7001;
  /// Also run ERL with both likelihoods on each trial.
  bool run_estimates = false;
};

/// Summed log-likelihood of the signed residuals E(t*, omega*) under Laplacian and
/// Gaussian maximum-likelihood fits.
inline std::pair<double, double> residual_log_likelihoods(std::span<const double> residuals,
                                                          double scale_min, bool* degenerate = nullptr) {
  const LaplacianFit lap = laplacian_mle(residuals, scale_min);
  const GaussianFit gau = gaussian_mle(residuals, scale_min);
  double l = 0.0, g = 0.0;
  for (double r : residuals) {
    l += laplacian_log_likelihood(r, lap);
    g += gaussian_log_likelihood(r, gau);
  }
  if (degenerate) *degenerate = lap.b <= scale_min && gau.sigma <= scale_min;
  return {l, g};
}

inline std::vector<FitTrial> likelihood_fit_study(std::size_t n_trials, const FitStudyConfig& cfg = {}) {
  std::vector<FitTrial> trials;
  trials.reserve(n_trials);
  for (std::size_t k = 0; k < n_trials; ++k) {
    SceneConfig scene_cfg = cfg.scene;
    scene_cfg.seed = cfg.base_seed + k;
    const LabeledFlowField scene = generate_scene(scene_cfg);

    FitTrial trial;
    trial.seed = scene_cfg.seed;
    const std::vector<double> e = error_vector(scene.flow, scene.truth.t, scene.truth.omega);
    const auto [l, g] = residual_log_likelihoods(e, cfg.solver.erl.scale_min, &trial.degenerate);
    trial.laplacian_loglik = l;
    trial.gaussian_loglik = g;

    if (cfg.run_estimates) {
      SolverConfig solver = cfg.solver;
      for (const auto dist : {ResidualDistribution::laplacian, ResidualDistribution::gaussian}) {
        solver.erl.distribution = dist;
        double err = std::numeric_limits<double>::quiet_NaN();
        try {
          err = translation_angular_error(estimate_erl(scene.flow, solver).motion.t, scene.truth.t);
        } catch (const Error&) {
        }
        (dist == ResidualDistribution::laplacian ? trial.erl_laplacian_t_err_deg
                                                 : trial.erl_gaussian_t_err_deg) = err;
      }
    }
    trials.push_back(trial);
  }
  return trials;
}

}  // namespace erl
