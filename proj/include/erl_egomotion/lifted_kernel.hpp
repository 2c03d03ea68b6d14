#pragma once

// Lifted smooth truncated-quadratic kernel for fixed translation t.
//
// Stacked residual over (omega, w):
//   r = ( w_i * f_i(omega) ; kappa(w_i^2) ),  f_i(omega) = E_i(t, omega)
//   kappa(s) = tau / sqrt(2) * (s - 1)
// Levenberg-Marquardt runs on the (3 + N)-dimensional normal equations with the
// diagonal weight block eliminated by a Schur complement, so each step costs O(N).

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "erl_egomotion/motion_field.hpp"

namespace erl {

struct LiftedConfig {
  double tau = 0.05;
  double initial_damping = 1e-4;
  int max_iterations = 200;
  /// Stop when an accepted step lowers the cost by less than this fraction.
  double cost_tolerance = 1e-9;
  double w_init = 1.0;
};

struct LiftedState {
  Vector3d omega = Vector3d::Zero();
  /// Unconstrained real weights; sign is a gauge of the kernel.
  std::vector<double> w;
  double cost = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Cost after every accepted step, starting with the initial cost.
  std::vector<double> accepted_costs;
};

inline double kappa(double w_sq, double tau) {
  return tau / std::numbers::sqrt2 * (w_sq - 1.0);
}

/// d kappa(w^2) / dw
inline double kappa_derivative(double w, double tau) {
  return std::numbers::sqrt2 * tau * w;
}

inline double lifted_objective(const ProjectedSystem& sys, const Vector3d& omega,
                               std::span<const double> w, double tau) {
  if (w.size() != sys.size()) throw InvalidInputError("lifted_objective: weight count mismatch");
  double cost = 0.0;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const double f = sys.valid[i] ? sys.residual(i, omega) : 0.0;
    const double data = w[i] * f;
    const double reg = kappa(w[i] * w[i], tau);
    cost += data * data + reg * reg;
  }
  return cost;
}

template <FlowLike F>
double lifted_objective(const F& flow, const Vector3d& t, const LiftedState& state,
                        const LiftedConfig& cfg) {
  return lifted_objective(project(flow, t), state.omega, state.w, cfg.tau);
}

/// Stacked residual (w o f ; kappa(w o w)), length 2N.
inline Eigen::VectorXd lifted_residual(const ProjectedSystem& sys, const Vector3d& omega,
                                       std::span<const double> w, double tau) {
  const auto n = static_cast<Eigen::Index>(sys.size());
  Eigen::VectorXd r(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    const double f = sys.valid[k] ? sys.residual(k, omega) : 0.0;
    r(i) = w[k] * f;
    r(n + i) = kappa(w[k] * w[k], tau);
  }
  return r;
}

/// Block Jacobian of the stacked residual with respect to (omega, w):
///   [ diag(w) grad f   diag(f)             ]
///   [ 0                diag(kappa'(w o w)) ]
/// Only the non-zero blocks are stored; the weight blocks stay diagonal.
struct LiftedJacobian {
  /// Row i of diag(w) grad f, i.e. w_i a_i.
  std::vector<Vector3d> omega_block;
  /// Diagonal of diag(f).
  std::vector<double> data_weight_diag;
  /// Diagonal of d kappa(w_i^2) / d w_i.
  std::vector<double> reg_weight_diag;

  std::size_t size() const { return data_weight_diag.size(); }

  Eigen::MatrixXd dense() const {
    const auto n = static_cast<Eigen::Index>(size());
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(2 * n, 3 + n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      jac.block<1, 3>(i, 0) = omega_block[k].transpose();
      jac(i, 3 + i) = data_weight_diag[k];
      jac(n + i, 3 + i) = reg_weight_diag[k];
    }
    return jac;
  }
};

inline LiftedJacobian lifted_jacobian(const ProjectedSystem& sys, const Vector3d& omega,
                                      std::span<const double> w, double tau) {
  LiftedJacobian jac;
  const std::size_t n = sys.size();
  jac.omega_block.resize(n);
  jac.data_weight_diag.resize(n);
  jac.reg_weight_diag.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool ok = sys.valid[i] != 0;
    jac.omega_block[i] = ok ? Vector3d(w[i] * sys.a[i]) : Vector3d::Zero();
    jac.data_weight_diag[i] = ok ? sys.residual(i, omega) : 0.0;
    jac.reg_weight_diag[i] = kappa_derivative(w[i], tau);
  }
  return jac;
}

template <FlowLike F>
LiftedJacobian lifted_jacobian(const F& flow, const Vector3d& t, const LiftedState& state,
                               const LiftedConfig& cfg) {
  return lifted_jacobian(project(flow, t), state.omega, state.w, cfg.tau);
}

struct LiftedStep {
  Vector3d delta_omega = Vector3d::Zero();
  Eigen::VectorXd delta_w;
};

/// Solves (J^T J + damping I) delta = -J^T r by eliminating the diagonal (w, w) block.
/// `residual` is the stacked residual from lifted_residual.
inline LiftedStep schur_complement_step(const LiftedJacobian& jac, const Eigen::VectorXd& residual,
                                        double damping) {
  const std::size_t n = jac.size();
  const auto ni = static_cast<Eigen::Index>(n);
  // Normal-equation blocks: U (3x3), C (3xN, column i = c_i), V (diagonal).
  Matrix3d reduced = damping * Matrix3d::Identity();
  Vector3d reduced_rhs = Vector3d::Zero();
  std::vector<Vector3d> cross(n);
  Eigen::VectorXd v_diag(ni), g_w(ni);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const Vector3d& j_omega = jac.omega_block[i];
    const double r_data = residual(k);
    const double r_reg = residual(ni + k);
    const double d_data = jac.data_weight_diag[i];
    const double d_reg = jac.reg_weight_diag[i];

    cross[i] = d_data * j_omega;
    v_diag(k) = d_data * d_data + d_reg * d_reg + damping;
    g_w(k) = d_data * r_data + d_reg * r_reg;

    reduced.noalias() += j_omega * j_omega.transpose() - cross[i] * cross[i].transpose() / v_diag(k);
    reduced_rhs += -r_data * j_omega + cross[i] * (g_w(k) / v_diag(k));
  }
  LiftedStep step;
  step.delta_omega = reduced.ldlt().solve(reduced_rhs);
  step.delta_w.resize(ni);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    step.delta_w(k) = (-g_w(k) - cross[i].dot(step.delta_omega)) / v_diag(k);
  }
  return step;
}

namespace detail {

struct LmTrial {
  Vector3d omega;
  double cost;
};

/// One damped Schur-complement step from (omega, w) written into trial_w, with the
/// trial cost evaluated in the same pass. Same algebra as schur_complement_step.
inline LmTrial lm_trial(const ProjectedSystem& sys, const Vector3d& omega, std::span<const double> w,
                        double tau, double damping, std::span<double> trial_w) {
  const std::size_t n = sys.size();
  Matrix3d reduced = damping * Matrix3d::Identity();
  Vector3d reduced_rhs = Vector3d::Zero();
  auto terms = [&](std::size_t i, Vector3d& j_omega, Vector3d& cross, double& v, double& g_w) {
    const bool ok = sys.valid[i] != 0;
    const double f = ok ? sys.residual(i, omega) : 0.0;
    j_omega = ok ? Vector3d(w[i] * sys.a[i]) : Vector3d::Zero();
    const double d_reg = kappa_derivative(w[i], tau);
    const double r_data = w[i] * f;
    const double r_reg = kappa(w[i] * w[i], tau);
    cross = f * j_omega;
    v = f * f + d_reg * d_reg + damping;
    g_w = f * r_data + d_reg * r_reg;
    return r_data;
  };
  Vector3d j_omega, cross;
  double v, g_w;
  for (std::size_t i = 0; i < n; ++i) {
    const double r_data = terms(i, j_omega, cross, v, g_w);
    reduced.noalias() += j_omega * j_omega.transpose() - cross * cross.transpose() / v;
    reduced_rhs += -r_data * j_omega + cross * (g_w / v);
  }
  LmTrial out;
  out.omega = omega + reduced.ldlt().solve(reduced_rhs);
  const Vector3d delta_omega = out.omega - omega;
  out.cost = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    terms(i, j_omega, cross, v, g_w);
    trial_w[i] = w[i] + (-g_w - cross.dot(delta_omega)) / v;
    const double f = sys.valid[i] ? sys.residual(i, out.omega) : 0.0;
    const double data = trial_w[i] * f;
    const double reg = kappa(trial_w[i] * trial_w[i], tau);
    out.cost += data * data + reg * reg;
  }
  return out;
}

}  // namespace detail

/// LM over (omega, w) for fixed t. The system must already be projected at t.
inline LiftedState solve_lifted_inner(const ProjectedSystem& sys, const LiftedConfig& cfg,
                                      const std::optional<LiftedState>& init = std::nullopt) {
  if (sys.size() - sys.degenerate_count < 3) {
    throw SingularSystemError("solve_lifted_inner: fewer than 3 non-degenerate points");
  }
  LiftedState state;
  if (init && init->w.size() == sys.size()) {
    state.omega = init->omega;
    state.w = init->w;
  } else {
    state.w.assign(sys.size(), cfg.w_init);
    try {
      state.omega = solve_omega_hat(sys);
    } catch (const SingularSystemError&) {
      state.omega.setZero();
    }
  }
  state.cost = lifted_objective(sys, state.omega, state.w, cfg.tau);
  state.accepted_costs.push_back(state.cost);

  double damping = cfg.initial_damping;
  std::vector<double> trial_w(sys.size());
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    state.iterations = iter + 1;
    if (state.cost == 0.0) {
      state.converged = true;
      break;
    }
    const detail::LmTrial trial =
        detail::lm_trial(sys, state.omega, state.w, cfg.tau, damping, trial_w);
    const Vector3d& trial_omega = trial.omega;
    const double trial_cost = trial.cost;

    if (trial_cost < state.cost) {
      const double decrease = (state.cost - trial_cost) / state.cost;
      state.omega = trial_omega;
      state.w.swap(trial_w);
      state.cost = trial_cost;
      state.accepted_costs.push_back(trial_cost);
      damping *= 0.5;
      if (decrease < cfg.cost_tolerance) {
        state.converged = true;
        break;
      }
    } else {
      damping *= 10.0;
      if (damping > 1e16) {
        // No descent direction left at working precision.
        state.converged = true;
        break;
      }
    }
  }
  return state;
}

template <FlowLike F>
LiftedState solve_lifted_inner(const F& flow, const Vector3d& t, const LiftedConfig& cfg,
                               const std::optional<LiftedState>& init = std::nullopt) {
  return solve_lifted_inner(project(flow, t), cfg, init);
}

/// Export lifted weights as ConfidenceWeights: |w| clamped to [0, 1], then min-max scaled.
inline std::vector<double> clamp_lifted_weights(std::span<const double> w) {
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = std::min(std::abs(w[i]), 1.0);
  return out;
}

}  // namespace erl
