#pragma once

// Egomotion pipeline: hemisphere-grid initialization, pruning to the best grid
// point, and refinement of t on the sphere, for four estimators:
//   raw     unweighted reduced residual ||E(t, omega_hat(t))||^2
//   erl     the same with frozen ERL confidence weights
//   lifted  inner LM over (omega, w) with the lifted truncated quadratic
//   soatto  closed-form denominator-free cost

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "erl_egomotion/erl_weights.hpp"
#include "erl_egomotion/lifted_kernel.hpp"
#include "erl_egomotion/motion_field.hpp"
#include "erl_egomotion/soatto.hpp"
#include "erl_egomotion/sphere.hpp"

namespace erl {

enum class Method { raw, erl, lifted, soatto };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::raw: return "raw";
    case Method::erl: return "erl";
    case Method::lifted: return "lifted";
    case Method::soatto: return "soatto";
  }
  return "unknown";
}

inline std::optional<Method> parse_method(std::string_view s) {
  if (s == "raw") return Method::raw;
  if (s == "erl") return Method::erl;
  if (s == "lifted") return Method::lifted;
  if (s == "soatto") return Method::soatto;
  return std::nullopt;
}

struct SolverConfig {
  std::size_t init_grid_size = 625;
  std::size_t erl_grid_size = 100;
  int gn_max_iterations = 50;
  /// Converged once a refinement step moves t by less than this angle (radians).
  double gn_tolerance = 1e-10;
  /// ...or lowers the cost by less than this fraction.
  double gn_cost_tolerance = 1e-12;
  /// Mean flow magnitude below which the field is rejected as static.
  double min_mean_flow_magnitude = 1e-4;
  ErlConfig erl;
  LiftedConfig lifted;
  /// LM iteration cap for the inner lifted solve at each grid point during pruning.
  int lifted_grid_iterations = 10;
  /// Relative cost decrease that ends the lifted refinement. The lifted cost in t
  /// is only as smooth as the inner solve is converged, so this sits well above
  /// gn_cost_tolerance.
  double lifted_refine_cost_tolerance = 1e-5;
};

struct Diagnostics {
  int iterations = 0;
  std::size_t grid_winner = 0;
  double grid_cost = 0.0;
  std::size_t degenerate_points = 0;
  bool converged = false;
  bool weights_degenerate = false;
  bool fell_back_to_raw = false;
  int inner_iterations = 0;
};

struct EgomotionEstimate {
  Method method = Method::raw;
  CameraMotion motion;
  InverseDepths depths;
  ConfidenceWeights weights;
  /// Unconstrained lifted weights behind `cost` (lifted only; empty otherwise).
  std::vector<double> lifted_weights;
  double cost = 0.0;
  Diagnostics diagnostics;
};

// ---------------------------------------------------------------------------
// Objectives over unit translations.

template <class O>
concept TranslationObjective = requires(O& o, const Vector3d& t) {
  { o.cost(t) } -> std::convertible_to<double>;
};

using TangentBasis = std::pair<Vector3d, Vector3d>;

/// Residual vector at t and its Jacobian with respect to the two tangent-chart
/// coordinates at t, with ||r||^2 equal to the objective's cost.
struct Linearization {
  Eigen::VectorXd r;
  Eigen::Matrix<double, Eigen::Dynamic, 2> J;
};

/// Objectives that also provide a least-squares linearization for Gauss-Newton.
template <class O>
concept LeastSquaresObjective = TranslationObjective<O> && requires(O& o, const Vector3d& t,
                                                                     const TangentBasis& basis) {
  { o.linearize(t, basis) } -> std::convertible_to<Linearization>;
};

namespace detail {

inline constexpr double kChartStep = 1e-6;

/// Central differences of a residual function along both chart directions.
template <class Fn>
Eigen::Matrix<double, Eigen::Dynamic, 2> chart_jacobian(Fn&& residual_fn, const Vector3d& t,
                                                        const TangentBasis& basis,
                                                        Eigen::Index rows) {
  Eigen::Matrix<double, Eigen::Dynamic, 2> jac(rows, 2);
  for (int k = 0; k < 2; ++k) {
    const double d1 = k == 0 ? kChartStep : 0.0, d2 = k == 1 ? kChartStep : 0.0;
    const std::vector<double> rp = residual_fn(chart_step(t, basis, d1, d2));
    const std::vector<double> rm = residual_fn(chart_step(t, basis, -d1, -d2));
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto s = static_cast<std::size_t>(i);
      jac(i, k) = (rp[s] - rm[s]) / (2.0 * kChartStep);
    }
  }
  return jac;
}

}  // namespace detail

/// ||w o E(t, omega_hat_w(t))||^2; unweighted when weights are empty.
class ReducedObjective {
 public:
  explicit ReducedObjective(const FlowField& flow, std::span<const double> weights = {})
      : flow_(&flow), weights_(weights) {}

  std::vector<double> residuals(const Vector3d& t) const {
    const ProjectedSystem sys = project(*flow_, t);
    const Vector3d omega = solve_omega_hat(sys, weights_);
    std::vector<double> e = error_vector(sys, omega);
    if (!weights_.empty()) {
      for (std::size_t i = 0; i < e.size(); ++i) e[i] *= weights_[i];
    }
    return e;
  }

  double cost(const Vector3d& t) const { return reduced_cost(*flow_, t, weights_); }

  /// omega_hat is re-solved at every perturbed t, so the differenced Jacobian is
  /// that of the variable-projection residual.
  Linearization linearize(const Vector3d& t, const TangentBasis& basis) const {
    const std::vector<double> r0 = residuals(t);
    Linearization lin;
    lin.r = Eigen::Map<const Eigen::VectorXd>(r0.data(), static_cast<Eigen::Index>(r0.size()));
    lin.J = detail::chart_jacobian([this](const Vector3d& tp) { return residuals(tp); }, t, basis,
                                   lin.r.size());
    return lin;
  }

 private:
  const FlowField* flow_;
  std::span<const double> weights_;
};

/// Lifted cost with a capped, cold-started inner solve (used for grid pruning).
class LiftedGridObjective {
 public:
  LiftedGridObjective(const FlowField& flow, LiftedConfig cfg, int max_inner_iterations)
      : flow_(&flow), cfg_(cfg) {
    cfg_.max_iterations = max_inner_iterations;
  }

  double cost(const Vector3d& t) const { return solve_lifted_inner(*flow_, t, cfg_).cost; }

 private:
  const FlowField* flow_;
  LiftedConfig cfg_;
};

/// Lifted cost with full inner solves warm-started from the last linearization point.
class LiftedRefineObjective {
 public:
  LiftedRefineObjective(const FlowField& flow, LiftedConfig cfg) : flow_(&flow), cfg_(cfg) {}

  double cost(const Vector3d& t) {
    last_t_ = t;
    last_ = solve_lifted_inner(*flow_, t, cfg_, anchor_);
    return last_->cost;
  }

  /// Variable-projection linearization: the t-Jacobian of the stacked residual at
  /// fixed (omega, w) is projected onto the orthogonal complement of the range of
  /// the inner Jacobian. The projection is a least-squares solve against the
  /// inner block Jacobian, done with the same Schur elimination as the LM step.
  Linearization linearize(const Vector3d& t, const TangentBasis& basis) {
    if (!last_ || last_t_ != t) cost(t);
    anchor_ = last_;
    const LiftedState& state = *anchor_;
    const ProjectedSystem sys = project(*flow_, t);
    const auto n = static_cast<Eigen::Index>(sys.size());

    Linearization lin;
    lin.r = lifted_residual(sys, state.omega, state.w, cfg_.tau);
    auto data_residual = [&](const Vector3d& tp) {
      const ProjectedSystem sp = project(*flow_, tp);
      std::vector<double> r(sp.size());
      for (std::size_t i = 0; i < sp.size(); ++i) {
        r[i] = sp.valid[i] ? state.w[i] * sp.residual(i, state.omega) : 0.0;
      }
      return r;
    };
    const Eigen::Matrix<double, Eigen::Dynamic, 2> j_data =
        detail::chart_jacobian(data_residual, t, basis, n);

    const LiftedJacobian inner = lifted_jacobian(sys, state.omega, state.w, cfg_.tau);
    lin.J.setZero(2 * n, 2);
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd column = Eigen::VectorXd::Zero(2 * n);
      column.head(n) = j_data.col(k);
      // x = argmin ||J_inner x - column||, via (J^T J + eps I) x = J^T column.
      const LiftedStep x = schur_complement_step(inner, -column, 1e-12);
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto s = static_cast<std::size_t>(i);
        const double fit_data = inner.omega_block[s].dot(x.delta_omega) +
                                inner.data_weight_diag[s] * x.delta_w(i);
        const double fit_reg = inner.reg_weight_diag[s] * x.delta_w(i);
        lin.J(i, k) = column(i) - fit_data;
        lin.J(n + i, k) = -fit_reg;
      }
    }
    return lin;
  }

  /// Inner state at the most recently evaluated t.
  const std::optional<LiftedState>& last_state() const { return last_; }

 private:
  const FlowField* flow_;
  LiftedConfig cfg_;
  Vector3d last_t_ = Vector3d::Zero();
  std::optional<LiftedState> last_;
  std::optional<LiftedState> anchor_;
};

class SoattoObjective {
 public:
  explicit SoattoObjective(const SoattoPrecompute& pre) : pre_(&pre) {}

  double cost(const Vector3d& t) const { return soatto_cost(*pre_, t); }

 private:
  const SoattoPrecompute* pre_;
};

// ---------------------------------------------------------------------------
// Grid pruning and refinement.

struct GridPruneResult {
  std::size_t index = 0;
  Vector3d t = Vector3d::UnitZ();
  double cost = 0.0;
};

/// Argmin of the objective over the grid; ties keep the lowest index. Grid points
/// whose evaluation throws are skipped.
template <TranslationObjective O>
GridPruneResult grid_prune(O& objective, std::span<const Vector3d> grid) {
  if (grid.empty()) throw InvalidInputError("grid_prune: empty grid");
  GridPruneResult best;
  bool found = false;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    double c;
    try {
      c = objective.cost(grid[k]);
    } catch (const Error&) {
      continue;
    }
    if (!std::isfinite(c)) continue;
    if (!found || c < best.cost) {
      best = {k, grid[k], c};
      found = true;
    }
  }
  if (!found) throw SingularSystemError("grid_prune: objective failed at every grid point");
  return best;
}

struct RefineResult {
  Vector3d t = Vector3d::UnitZ();
  double cost = 0.0;
  double initial_cost = 0.0;
  int iterations = 0;
  bool converged = false;
};

namespace detail {

inline double safe_cost(auto& objective, const Vector3d& t) {
  try {
    const double c = objective.cost(t);
    return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

/// Step halving along the chart direction; returns true when a lower cost is found.
inline bool halving_line_search(auto& objective, const Vector3d& t, const TangentBasis& basis, Eigen::Vector2d step,
                                double cost, Vector3d& t_out, double& cost_out) {
  constexpr double kMaxStep = 0.5;
  if (step.norm() > kMaxStep) step *= kMaxStep / step.norm();
  for (int halving = 0; halving < 40; ++halving) {
    const Vector3d trial = chart_step(t, basis, step.x(), step.y());
    const double c = safe_cost(objective, trial);
    if (c < cost) {
      t_out = trial;
      cost_out = c;
      return true;
    }
    step *= 0.5;
  }
  return false;
}

}  // namespace detail

/// Local minimization of the objective over the unit sphere in a 2-D tangent
/// chart at the current t, renormalizing after each step. Least-squares
/// objectives take Gauss-Newton steps from their linearization; scalar objectives
/// take Newton steps from a finite-difference Hessian. Both halve the step until
/// the cost decreases.
template <TranslationObjective O>
RefineResult gauss_newton_refine_t(O& objective, const Vector3d& t0, const SolverConfig& cfg) {
  RefineResult out;
  out.t = t0.normalized();
  out.cost = objective.cost(out.t);
  out.initial_cost = out.cost;

  for (int iter = 0; iter < cfg.gn_max_iterations; ++iter) {
    out.iterations = iter + 1;
    const auto basis = tangent_basis(out.t);
    Eigen::Vector2d step;

    if constexpr (LeastSquaresObjective<O>) {
      Linearization lin;
      try {
        lin = objective.linearize(out.t, basis);
      } catch (const Error&) {
        break;
      }
      const Eigen::Matrix2d jtj = lin.J.transpose() * lin.J;
      const Eigen::Vector2d grad = lin.J.transpose() * lin.r;
      if (grad.isZero(0.0)) {
        out.converged = true;
        break;
      }
      step = (jtj + 1e-12 * jtj.trace() * Eigen::Matrix2d::Identity()).ldlt().solve(-grad);
    } else {
      constexpr double h = 1e-5;
      double f[3][3];
      for (int a = -1; a <= 1; ++a) {
        for (int b = -1; b <= 1; ++b) {
          f[a + 1][b + 1] = (a == 0 && b == 0)
                                ? out.cost
                                : detail::safe_cost(objective, chart_step(out.t, basis, a * h, b * h));
        }
      }
      Eigen::Vector2d grad((f[2][1] - f[0][1]) / (2 * h), (f[1][2] - f[1][0]) / (2 * h));
      Eigen::Matrix2d hess;
      hess(0, 0) = (f[2][1] - 2 * f[1][1] + f[0][1]) / (h * h);
      hess(1, 1) = (f[1][2] - 2 * f[1][1] + f[1][0]) / (h * h);
      hess(0, 1) = hess(1, 0) = (f[2][2] - f[2][0] - f[0][2] + f[0][0]) / (4 * h * h);
      if (!grad.allFinite() || !hess.allFinite()) break;
      if (grad.isZero(0.0)) {
        out.converged = true;
        break;
      }
      const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(hess);
      if (eig.eigenvalues()(0) > 0.0) {
        step = hess.ldlt().solve(-grad);
      } else {
        step = -grad / std::max(std::abs(eig.eigenvalues()(1)), grad.norm() / 0.1);
      }
    }

    Vector3d next;
    double next_cost;
    if (!detail::halving_line_search(objective, out.t, basis, step, out.cost, next, next_cost)) {
      out.converged = true;  // no further descent at working precision
      break;
    }
    const double moved = angle_between(out.t, next);
    const double decrease = (out.cost - next_cost) / out.cost;
    out.t = next;
    out.cost = next_cost;
    if (moved < cfg.gn_tolerance || decrease < cfg.gn_cost_tolerance) {
      out.converged = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimators.

namespace detail {

inline void check_estimable(const FlowField& flow, const SolverConfig& cfg) {
  validate_flow_field(flow, 6);
  double total = 0.0;
  for (const auto& f : flow.flows) total += std::hypot(f.u, f.v);
  const double mean = total / static_cast<double>(flow.size());
  if (mean < cfg.min_mean_flow_magnitude) {
    throw ZeroMotionError("zero motion: mean flow magnitude " + std::to_string(mean) +
                          " is below " + std::to_string(cfg.min_mean_flow_magnitude));
  }
}

inline void finalize(const FlowField& flow, EgomotionEstimate& est) {
  canonicalize(est.motion);
  est.depths = recover_depths(flow, est.motion.t, est.motion.omega);
  est.diagnostics.degenerate_points =
      static_cast<std::size_t>(std::count(est.depths.valid.begin(), est.depths.valid.end(), false));
}

inline void apply_refinement(EgomotionEstimate& est, const GridPruneResult& pruned,
                             const RefineResult& refined) {
  est.motion.t = refined.t;
  est.diagnostics.grid_winner = pruned.index;
  est.diagnostics.grid_cost = pruned.cost;
  est.diagnostics.iterations = refined.iterations;
  est.diagnostics.converged = refined.converged;
}

}  // namespace detail

inline EgomotionEstimate estimate_raw(const FlowField& flow, const SolverConfig& cfg = {}) {
  detail::check_estimable(flow, cfg);
  const auto grid = hemisphere_grid(cfg.init_grid_size);
  ReducedObjective objective(flow);
  const GridPruneResult pruned = grid_prune(objective, grid);
  const RefineResult refined = gauss_newton_refine_t(objective, pruned.t, cfg);

  EgomotionEstimate est;
  est.method = Method::raw;
  detail::apply_refinement(est, pruned, refined);
  est.weights.w.assign(flow.size(), 1.0);
  canonicalize(est.motion);
  const ProjectedSystem sys = project(flow, est.motion.t);
  est.motion.omega = solve_omega_hat(sys);
  detail::finalize(flow, est);
  est.cost = squared_norm(error_vector(sys, est.motion.omega));
  return est;
}

inline EgomotionEstimate estimate_erl(const FlowField& flow, const SolverConfig& cfg = {}) {
  detail::check_estimable(flow, cfg);
  const auto model_grid = hemisphere_grid(cfg.erl_grid_size);
  ConfidenceWeights weights = confidence_weights(flow, model_grid, cfg.erl);
  if (weights.degenerate) {
    EgomotionEstimate est = estimate_raw(flow, cfg);
    est.method = Method::erl;
    est.diagnostics.weights_degenerate = true;
    est.diagnostics.fell_back_to_raw = true;
    return est;
  }

  const auto grid = hemisphere_grid(cfg.init_grid_size);
  ReducedObjective objective(flow, weights.w);
  const GridPruneResult pruned = grid_prune(objective, grid);
  const RefineResult refined = gauss_newton_refine_t(objective, pruned.t, cfg);

  EgomotionEstimate est;
  est.method = Method::erl;
  detail::apply_refinement(est, pruned, refined);
  est.weights = std::move(weights);
  canonicalize(est.motion);
  const ProjectedSystem sys = project(flow, est.motion.t);
  est.motion.omega = solve_omega_hat(sys, est.weights.w);
  detail::finalize(flow, est);
  est.cost = squared_norm(error_vector(sys, est.motion.omega), est.weights.w);
  return est;
}

inline EgomotionEstimate estimate_lifted(const FlowField& flow, const SolverConfig& cfg = {}) {
  detail::check_estimable(flow, cfg);
  const auto grid = hemisphere_grid(cfg.init_grid_size);
  LiftedGridObjective grid_objective(flow, cfg.lifted, cfg.lifted_grid_iterations);
  const GridPruneResult pruned = grid_prune(grid_objective, grid);

  LiftedRefineObjective objective(flow, cfg.lifted);
  SolverConfig refine_cfg = cfg;
  refine_cfg.gn_cost_tolerance = std::max(cfg.gn_cost_tolerance, cfg.lifted_refine_cost_tolerance);
  const RefineResult refined = gauss_newton_refine_t(objective, pruned.t, refine_cfg);

  EgomotionEstimate est;
  est.method = Method::lifted;
  detail::apply_refinement(est, pruned, refined);
  const LiftedState inner = solve_lifted_inner(flow, refined.t, cfg.lifted, objective.last_state());
  est.motion.omega = inner.omega;
  est.lifted_weights = inner.w;
  est.diagnostics.inner_iterations = inner.iterations;
  est.weights = scale_to_unit_interval(clamp_lifted_weights(inner.w));
  detail::finalize(flow, est);
  est.cost = lifted_objective(project(flow, est.motion.t), est.motion.omega, est.lifted_weights,
                              cfg.lifted.tau);
  return est;
}

inline EgomotionEstimate soatto_estimate(const FlowField& flow, const SolverConfig& cfg = {}) {
  detail::check_estimable(flow, cfg);
  const SoattoPrecompute pre = soatto_precompute(flow);
  const auto grid = hemisphere_grid(cfg.init_grid_size);
  SoattoObjective objective(pre);
  const GridPruneResult pruned = grid_prune(objective, grid);
  const RefineResult refined = gauss_newton_refine_t(objective, pruned.t, cfg);

  EgomotionEstimate est;
  est.method = Method::soatto;
  detail::apply_refinement(est, pruned, refined);
  est.weights.w.assign(flow.size(), 1.0);
  canonicalize(est.motion);
  est.motion.omega = solve_omega_hat(flow, est.motion.t);
  detail::finalize(flow, est);
  est.cost = soatto_cost(pre, est.motion.t);
  return est;
}

inline EgomotionEstimate estimate(const FlowField& flow, Method method, const SolverConfig& cfg = {}) {
  switch (method) {
    case Method::raw: return estimate_raw(flow, cfg);
    case Method::erl: return estimate_erl(flow, cfg);
    case Method::lifted: return estimate_lifted(flow, cfg);
    case Method::soatto: return soatto_estimate(flow, cfg);
  }
  throw InvalidInputError("unknown method");
}

}  // namespace erl
