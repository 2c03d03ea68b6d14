#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>

#include "support.hpp"

using namespace erl;

namespace {

double deg(double rad) { return rad * 180.0 / std::numbers::pi; }

struct ConstantObjective {
  double cost(const Vector3d&) const { return 1.0; }
};

struct FailingBelowEquator {
  double cost(const Vector3d& t) const {
    if (t.z() < 0.5) throw SingularSystemError("stub");
    return 1.0 - t.z();
  }
};

Matrix3d direct_g(const FlowField& f, const Vector3d& t) {
  Matrix3d g = Matrix3d::Zero();
  const Eigen::Matrix2d j{{0, -1}, {1, 0}};
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Vector3d bq = test::b_matrix(f.points[i]).transpose() * (j * test::a_matrix(f.points[i]) * t);
    g += bq * bq.transpose();
  }
  return g;
}

}  // namespace

TEST(HemisphereGrid, UnitUpperHemisphere) {
  for (const std::size_t n : {1u, 2u, 100u, 625u}) {
    const auto grid = hemisphere_grid(n);
    ASSERT_EQ(grid.size(), n);
    for (const auto& t : grid) {
      EXPECT_NEAR(t.norm(), 1.0, 1e-12);
      EXPECT_GE(t.z(), 0.0);
    }
  }
  EXPECT_THROW(hemisphere_grid(0), InvalidInputError);
}

TEST(HemisphereGrid, SinglePointIsOpticalAxis) {
  EXPECT_EQ(hemisphere_grid(1)[0], Vector3d(0, 0, 1));
}

TEST(HemisphereGrid, MinimumSpacingRegression) {
  const auto grid = hemisphere_grid(625);
  double min_angle = 10.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = i + 1; j < grid.size(); ++j) min_angle = std::min(min_angle, angle_between(grid[i], grid[j]));
  }
  EXPECT_GT(deg(min_angle), 3.0);
  EXPECT_NEAR(deg(min_angle), 3.2416, 1e-4);
}

TEST(GridPrune, ConstantObjectivePicksFirstPoint) {
  ConstantObjective o;
  const auto grid = hemisphere_grid(50);
  EXPECT_EQ(grid_prune(o, grid).index, 0u);
}

TEST(GridPrune, SkipsFailingPointsAndFailsWhenAllFail) {
  FailingBelowEquator o;
  const auto grid = hemisphere_grid(50);
  const GridPruneResult r = grid_prune(o, grid);
  EXPECT_EQ(r.index, 0u);
  const std::vector<Vector3d> low{Vector3d(1, 0, 0), Vector3d(0, 1, 0)};
  EXPECT_THROW(grid_prune(o, low), Error);
}

TEST(GridPrune, WinnerIsArgminAndNearTruth) {
  const auto s = test::scene(1, 0.0, 0.0);
  ReducedObjective o(s.flow);
  const auto grid = hemisphere_grid(625);
  const GridPruneResult r = grid_prune(o, grid);
  for (const auto& t : grid) EXPECT_LE(r.cost, o.cost(t));
  EXPECT_LT(translation_angular_error(r.t, s.truth.t), 2 * 3.2416 * 1.5);
}

TEST(Refine, StationaryAtTruth) {
  const auto s = test::scene(2, 0.0, 0.0);
  ReducedObjective o(s.flow);
  Vector3d t0 = s.truth.t;
  const RefineResult r = gauss_newton_refine_t(o, t0, SolverConfig{});
  EXPECT_LT(angle_between(r.t, t0), 1e-10);
}

TEST(Refine, ConvergesFromFiveDegreesAway) {
  const auto s = test::scene(3, 0.0, 0.0);
  const auto basis = tangent_basis(s.truth.t);
  const Vector3d t0 = chart_step(s.truth.t, basis, std::tan(5.0 * std::numbers::pi / 180.0), 0.0);
  ASSERT_NEAR(deg(angle_between(t0, s.truth.t)), 5.0, 1e-9);
  ReducedObjective o(s.flow);
  const RefineResult r = gauss_newton_refine_t(o, t0, SolverConfig{});
  EXPECT_LT(translation_angular_error(r.t, s.truth.t), 0.01);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.cost, r.initial_cost);
}

TEST(Refine, ScalarObjectiveDescends) {
  const auto s = test::scene(4, 0.0, 0.1);
  const SoattoPrecompute pre = soatto_precompute(s.flow);
  SoattoObjective o(pre);
  const auto grid = hemisphere_grid(625);
  const GridPruneResult p = grid_prune(o, grid);
  const RefineResult r = gauss_newton_refine_t(o, p.t, SolverConfig{});
  EXPECT_LE(r.cost, p.cost);
}

TEST(EstimateRaw, NoiselessExact) {
  const auto s = test::scene(5, 0.0, 0.0);
  const EgomotionEstimate e = estimate_raw(s.flow);
  EXPECT_LT(translation_angular_error(e.motion.t, s.truth.t), 0.1);
  EXPECT_LT(rotation_error(e.motion.omega, s.truth.omega), 1e-6);
  EXPECT_GE(e.motion.t.z(), 0.0);
  EXPECT_NEAR(e.motion.t.norm(), 1.0, 1e-12);
}

TEST(EstimateRaw, ZeroMotionGuard) {
  auto s = test::scene(6, 0.0, 0.0, 100);
  for (auto& u : s.flow.flows) u = {u.u * 1e-6, u.v * 1e-6};
  EXPECT_THROW(estimate_raw(s.flow), ZeroMotionError);
  EXPECT_THROW(estimate(s.flow, Method::lifted), ZeroMotionError);
}

TEST(EstimateRaw, TooFewPoints) {
  const auto s = test::scene(7, 0.0, 0.0, 5);
  EXPECT_THROW(estimate_raw(s.flow), InvalidInputError);
}

TEST(EstimateRaw, ConsistencyAcrossSampleSizes) {
  std::vector<double> medians;
  for (const std::size_t n : {100u, 1000u}) {
    std::vector<double> errs;
    for (int k = 0; k < 30; ++k) {
      const auto s = test::scene(600 + static_cast<std::uint64_t>(k), 0.0, 0.1, n);
      errs.push_back(translation_angular_error(estimate_raw(s.flow).motion.t, s.truth.t));
    }
    medians.push_back(median(errs));
  }
  EXPECT_GT(medians[0], medians[1]);
}

class AllMethods : public ::testing::TestWithParam<Method> {};

TEST_P(AllMethods, GaugeInvarianceAndDeterminism) {
  const Method m = GetParam();
  const auto s = test::scene(8, 0.1, 0.1, 400);
  CameraMotion flipped = s.truth;
  flipped.t = -flipped.t;
  InverseDepths neg = s.depths;
  for (double& r : neg.rho) r = -r;
  FlowField mirrored = predict_flow(flipped, neg, s.clean.points);
  for (std::size_t i = 0; i < mirrored.size(); ++i) {
    mirrored.flows[i].u += s.flow.flows[i].u - s.clean.flows[i].u;
    mirrored.flows[i].v += s.flow.flows[i].v - s.clean.flows[i].v;
  }
  const EgomotionEstimate a = estimate(s.flow, m);
  const EgomotionEstimate b = estimate(mirrored, m);
  const EgomotionEstimate c = estimate(s.flow, m);
  EXPECT_LT(angle_between(a.motion.t, b.motion.t), 1e-9);
  EXPECT_LT((a.motion.omega - b.motion.omega).norm(), 1e-9);
  EXPECT_EQ(a.motion.t, c.motion.t);
  EXPECT_EQ(a.motion.omega, c.motion.omega);
  EXPECT_EQ(a.cost, c.cost);
}

TEST_P(AllMethods, ReportedStateIsConsistent) {
  const Method m = GetParam();
  const auto s = test::scene(9, 0.2, 0.1, 500);
  const EgomotionEstimate e = estimate(s.flow, m);
  EXPECT_EQ(e.method, m);
  EXPECT_GE(e.motion.t.z(), 0.0);
  EXPECT_NEAR(e.motion.t.norm(), 1.0, 1e-12);
  ASSERT_EQ(e.weights.w.size(), s.flow.size());
  ASSERT_EQ(e.depths.size(), s.flow.size());
  for (double w : e.weights.w) {
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, 1.0);
  }
  const ProjectedSystem sys = project(s.flow, e.motion.t);
  double recomputed = 0.0;
  switch (m) {
    case Method::raw:
      recomputed = squared_norm(error_vector(sys, e.motion.omega));
      break;
    case Method::erl:
      recomputed = squared_norm(error_vector(sys, e.motion.omega), e.weights.w);
      break;
    case Method::lifted:
      recomputed = lifted_objective(sys, e.motion.omega, e.lifted_weights, LiftedConfig{}.tau);
      break;
    case Method::soatto:
      recomputed = soatto_cost(soatto_precompute(s.flow), e.motion.t);
      break;
  }
  EXPECT_NEAR(e.cost, recomputed, 1e-10 * std::max(1.0, std::abs(recomputed)));
  const InverseDepths d = recover_depths(s.flow, e.motion.t, e.motion.omega);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.rho[i], e.depths.rho[i]);
  EXPECT_LE(e.diagnostics.grid_winner, 624u);
}

TEST_P(AllMethods, RefinementDoesNotIncreaseObjective) {
  const Method m = GetParam();
  const auto s = test::scene(10, 0.3, 0.1, 500);
  const EgomotionEstimate e = estimate(s.flow, m);
  EXPECT_LE(e.cost, e.diagnostics.grid_cost * (1 + 1e-12));
}

INSTANTIATE_TEST_SUITE_P(Methods, AllMethods,
                         ::testing::Values(Method::raw, Method::erl, Method::lifted, Method::soatto),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(EstimateLifted, RefinementDescends) {
  const auto s = test::scene(11, 0.3, 0.1, 500);
  SolverConfig cfg;
  LiftedGridObjective grid_obj(s.flow, cfg.lifted, cfg.lifted_grid_iterations);
  const auto grid = hemisphere_grid(cfg.init_grid_size);
  const GridPruneResult p = grid_prune(grid_obj, grid);
  LiftedRefineObjective refine_obj(s.flow, cfg.lifted);
  const double start = refine_obj.cost(p.t);
  const RefineResult r = gauss_newton_refine_t(refine_obj, p.t, cfg);
  EXPECT_LE(r.cost, start);
}

TEST(EstimateLifted, NoiselessExact) {
  const auto s = test::scene(12, 0.0, 0.0);
  const EgomotionEstimate e = estimate_lifted(s.flow);
  EXPECT_LT(translation_angular_error(e.motion.t, s.truth.t), 0.1);
  ASSERT_EQ(e.lifted_weights.size(), s.flow.size());
}

TEST(EstimateErl, FallsBackOnDegenerateWeights) {
  std::mt19937_64 rng(13);
  FlowField f = test::random_flow(rng, 60);
  const Vector3d omega(0.05, -0.02, 0.1);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const Eigen::Vector2d u = test::b_matrix(f.points[i]) * omega;
    f.flows[i] = {u.x(), u.y()};
  }
  const EgomotionEstimate e = estimate_erl(f);
  EXPECT_TRUE(e.diagnostics.weights_degenerate);
  EXPECT_TRUE(e.diagnostics.fell_back_to_raw);
  EXPECT_EQ(e.weights.w, std::vector<double>(60, 1.0));
  EXPECT_EQ(e.method, Method::erl);
}

TEST(Estimators, RobustMethodsBeatRawWithOutliers) {
  std::vector<double> raw, erl, lifted;
  for (int k = 0; k < 15; ++k) {
    const auto s = test::scene(700 + static_cast<std::uint64_t>(k), 0.3);
    raw.push_back(translation_angular_error(estimate_raw(s.flow).motion.t, s.truth.t));
    erl.push_back(translation_angular_error(estimate_erl(s.flow).motion.t, s.truth.t));
    lifted.push_back(translation_angular_error(estimate_lifted(s.flow).motion.t, s.truth.t));
  }
  EXPECT_LT(median(erl), median(raw));
  EXPECT_LT(median(lifted), median(raw));
}

TEST(Estimators, NoOutlierParity) {
  std::vector<double> raw, erl;
  for (int k = 0; k < 15; ++k) {
    const auto s = test::scene(800 + static_cast<std::uint64_t>(k), 0.0);
    raw.push_back(translation_angular_error(estimate_raw(s.flow).motion.t, s.truth.t));
    erl.push_back(translation_angular_error(estimate_erl(s.flow).motion.t, s.truth.t));
  }
  EXPECT_LT(median(raw), 1.0);
  EXPECT_LT(median(erl), 1.0);
  EXPECT_LT(std::abs(median(erl) - median(raw)), 0.5);
}

TEST(Soatto, PrecomputedGMatchesDirectSum) {
  const auto s = test::scene(14, 0.2, 0.1, 300);
  const SoattoPrecompute pre = soatto_precompute(s.flow);
  std::mt19937_64 rng(14);
  for (int k = 0; k < 100; ++k) {
    const Vector3d t = test::random_unit(rng);
    const Matrix3d g = direct_g(s.flow, t);
    EXPECT_LE((soatto_G(pre, t) - g).norm(), 1e-10 * g.norm());
    EXPECT_NEAR(soatto_determinant(pre, t), g.determinant(), 1e-9 * std::pow(g.norm(), 3));
  }
}

TEST(Soatto, PointAtOriginCoefficientBlocks) {
  // At x = 0, B^T J A maps t to (-t1, -t2, 0), so G(t) has no t3^2 part and its
  // t1^2 coefficient is e1 e1^T per point.
  FlowField f;
  for (int k = 0; k < 6; ++k) {
    f.points.push_back({0.0, 0.0});
    f.flows.push_back({0.1, 0.2});
  }
  const SoattoPrecompute pre = soatto_precompute(f);
  Matrix3d e11 = Matrix3d::Zero();
  e11(0, 0) = 6.0;
  EXPECT_EQ(pre.G[detail::Monomials<2>::index(0, 0)], Matrix3d::Zero());
  EXPECT_EQ(pre.G[detail::Monomials<2>::index(2, 0)], e11);
}

TEST(Soatto, SIsSymmetricPsd) {
  const auto s = test::scene(15, 0.3, 0.1, 300);
  const SoattoPrecompute pre = soatto_precompute(s.flow);
  EXPECT_LE((pre.S - pre.S.transpose()).norm(), 1e-15 * pre.S.norm());
  Eigen::SelfAdjointEigenSolver<Matrix3d> eig(pre.S);
  EXPECT_GE(eig.eigenvalues()(0), -1e-12 * pre.S.norm());
}

TEST(Soatto, CostMatchesDirectEvaluation) {
  std::mt19937_64 rng(16);
  const auto s = test::scene(16, 0.1, 0.1, 500);
  const SoattoPrecompute pre = soatto_precompute(s.flow);
  const Eigen::Matrix2d j{{0, -1}, {1, 0}};
  for (int k = 0; k < 200; ++k) {
    const Vector3d t = test::random_unit(rng);
    Matrix3d g = Matrix3d::Zero();
    Vector3d h = Vector3d::Zero();
    double sum = 0.0;
    for (std::size_t i = 0; i < s.flow.size(); ++i) {
      const Eigen::Vector2d q = j * test::a_matrix(s.flow.points[i]) * t;
      const Vector3d bq = test::b_matrix(s.flow.points[i]).transpose() * q;
      const double qu = q.dot(s.flow.flows[i].vec());
      g += bq * bq.transpose();
      h += bq * qu;
      sum += qu * qu;
    }
    const double direct = sum - h.dot(g.ldlt().solve(h));
    EXPECT_NEAR(soatto_cost(pre, t), direct, 1e-8 * std::abs(direct));
  }
}

TEST(Soatto, NearSingularThrows) {
  FlowField f;
  for (int k = 0; k < 6; ++k) {
    f.points.push_back({0.0, 0.0});
    f.flows.push_back({0.1, 0.2});
  }
  const SoattoPrecompute pre = soatto_precompute(f);
  EXPECT_THROW(soatto_cost(pre, Vector3d(0, 0, 1)), NearSingularError);
}

TEST(Soatto, NoiselessTruthBeatsEveryGridPoint) {
  const auto grid = hemisphere_grid(625);
  int wins = 0;
  for (int k = 0; k < 100; ++k) {
    const auto s = test::scene(900 + static_cast<std::uint64_t>(k), 0.0, 0.0, 300);
    const SoattoPrecompute pre = soatto_precompute(s.flow);
    const double at_truth = soatto_cost(pre, s.truth.t);
    bool ok = true;
    for (const auto& t : grid) {
      try {
        if (soatto_cost(pre, t) < at_truth) ok = false;
      } catch (const NearSingularError&) {
      }
    }
    if (ok) ++wins;
  }
  EXPECT_GE(wins, 95);
}

TEST(Soatto, BiasedOnNoisyScenes) {
  std::vector<double> raw, soatto;
  for (int k = 0; k < 15; ++k) {
    const auto s = test::scene(1000 + static_cast<std::uint64_t>(k), 0.0, 0.1);
    raw.push_back(translation_angular_error(estimate_raw(s.flow).motion.t, s.truth.t));
    soatto.push_back(translation_angular_error(soatto_estimate(s.flow).motion.t, s.truth.t));
  }
  EXPECT_GE(median(soatto), median(raw));
}

TEST(Soatto, CostEvaluationIsFast) {
  const auto s = test::scene(17, 0.0, 0.1);
  const SoattoPrecompute pre = soatto_precompute(s.flow);
  const auto grid = hemisphere_grid(625);
  auto clock = [](auto&& fn) {
    const auto start = std::chrono::steady_clock::now();
    fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  volatile double sink = 0.0;
  const double soatto_s = clock([&] {
    for (int rep = 0; rep < 20; ++rep) {
      for (const auto& t : grid) sink = sink + soatto_cost(pre, t);
    }
  });
  const double raw_s = clock([&] {
    for (const auto& t : grid) sink = sink + reduced_cost(s.flow, t);
  }) * 20;
  EXPECT_GT(raw_s / soatto_s, 5.0);
}
