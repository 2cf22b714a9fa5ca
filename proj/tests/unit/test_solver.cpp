#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "covloc/bench.hpp"
#include "covloc/config.hpp"
#include "covloc/detail/steering_model.hpp"
#include "covloc/errors.hpp"
#include "covloc/solver.hpp"
#include "scenes.hpp"

namespace covloc {
namespace {

constexpr double kPi = std::numbers::pi;

Eigen::MatrixXcd random_complex(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXcd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = {n(rng), n(rng)};
  return m;
}

double scalar_loop_objective(const Eigen::VectorXcd& r, const Eigen::MatrixXcd& psi, const Eigen::VectorXd& rho,
                             double lambda, double delta) {
  double penalty = 0.0;
  for (Eigen::Index p = 0; p < rho.size(); ++p) penalty += std::atan(std::abs(rho(p)) / delta);
  double fit = 0.0;
  for (Eigen::Index i = 0; i < r.size(); ++i) {
    Complex model = 0.0;
    for (Eigen::Index p = 0; p < rho.size(); ++p) model += psi(i, p) * rho(p);
    fit += std::norm(r(i) - model);
  }
  return lambda * penalty + fit;
}

// -- objective and surrogate ----------------------------------------------

TEST(Objective, ZeroRhoIsDataEnergy) {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXcd psi = random_complex(rng, 6, 3);
  const Eigen::VectorXcd r = random_complex(rng, 6, 1);
  EXPECT_NEAR(objective(r, psi, Eigen::VectorXd::Zero(3), 2.0, 0.1), r.squaredNorm(), 1e-12);
}

TEST(Objective, PenaltyBoundedAndMatchesLoop) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 5.0);
  for (int t = 0; t < 50; ++t) {
    const Eigen::MatrixXcd psi = random_complex(rng, 6, 3);
    const Eigen::VectorXcd r = random_complex(rng, 6, 1);
    const Eigen::VectorXd rho = Eigen::VectorXd::NullaryExpr(3, [&] { return u(rng); });
    const double lambda = 0.5 + u(rng), delta = 0.01 + u(rng);
    const double g = objective(r, psi, rho, lambda, delta);
    const double fit = (r - psi * rho.cast<Complex>()).squaredNorm();
    EXPECT_LT(g - fit, lambda * 3 * kPi / 2);
    EXPECT_NEAR(g, scalar_loop_objective(r, psi, rho, lambda, delta), 1e-12 * g);
  }
}

TEST(SurrogateWeights, ValueAtDelta) {
  const double delta = 0.03;
  const Eigen::VectorXd beta = surrogate_weights(Eigen::VectorXd::Constant(1, delta), delta, 1e-12);
  EXPECT_NEAR(beta(0), 1.0 / (2.0 * delta * delta), 1e-9 * beta(0));
}

TEST(SurrogateWeights, StrictlyDecreasing) {
  Eigen::VectorXd rho(50);
  for (int i = 0; i < 50; ++i) rho(i) = 1e-4 * std::pow(1.4, i);
  const Eigen::VectorXd beta = surrogate_weights(rho, 0.1, 1e-12);
  for (int i = 1; i < 50; ++i) EXPECT_LT(beta(i), beta(i - 1));
  EXPECT_TRUE(surrogate_weights(Eigen::VectorXd::Zero(2), 0.1, 1e-12).allFinite());
}

TEST(SurrogateWeights, SlopeMatchesPenaltyDerivative) {
  const double delta = 0.2;
  for (double factor : {0.1, 1.0, 10.0}) {
    const double rho = factor * delta;
    const double beta = surrogate_weights(Eigen::VectorXd::Constant(1, rho), delta, 1e-12)(0);
    const double h = 1e-6 * delta;
    const double fd = (std::atan((rho + h) / delta) - std::atan((rho - h) / delta)) / (2.0 * h);
    EXPECT_NEAR(beta * rho, fd, 1e-6 * fd);
  }
}

TEST(SurrogateWeights, MajorizesAndTouchesPenalty) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int t = 0; t < 200; ++t) {
    const double delta = std::pow(10.0, -3.0 + 3.0 * (u(rng) + 1.0) / 2.0);
    const double x0 = std::pow(10.0, 2.0 * u(rng)) * delta * (u(rng) < 0 ? -1.0 : 1.0);
    const double beta = surrogate_weights(Eigen::VectorXd::Constant(1, x0), delta, 1e-12)(0);
    auto g = [&](double x) { return std::atan(std::abs(x) / delta); };
    auto f = [&](double x) { return g(x0) + 0.5 * beta * (x * x - x0 * x0); };
    for (int s = 0; s < 50; ++s) {
      const double x = 10.0 * std::abs(x0) * u(rng);
      EXPECT_GE(f(x) - g(x), -1e-12);
    }
    EXPECT_NEAR(f(x0), g(x0), 1e-12);
    const double h = 1e-7 * std::abs(x0);
    EXPECT_NEAR((f(x0 + h) - f(x0 - h)) / (2 * h), (g(x0 + h) - g(x0 - h)) / (2 * h),
                1e-6 * std::abs(beta * x0));
  }
}

TEST(Penalty, ApproachesCountingFunction) {
  for (double rho : {1e-3, 0.01, 0.5, 1.0, 10.0}) {
    for (double delta : {0.9, 0.1, 0.01}) {
      EXPECT_GE(std::atan(rho / delta) / (kPi / 2), std::atan(rho) / (kPi / 2));
    }
    double previous = 0.0;
    for (double delta : {1e-1, 1e-3, 1e-5, 1e-7, 1e-9}) {
      const double v = std::atan(rho / delta) / (kPi / 2);
      EXPECT_GE(v, previous);
      previous = v;
    }
    EXPECT_NEAR(previous, 1.0, 1e-5);
  }
  EXPECT_EQ(std::atan(0.0 / 1e-9), 0.0);
}

// -- rho update -----------------------------------------------------------

TEST(UpdateRho, OrthonormalDictionaryWithoutRegularization) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(random_complex(rng, 8, 3).real()).householderQ() *
                            Eigen::MatrixXd::Identity(8, 3);
  const Eigen::Vector3d x(0.7, 1.3, 2.1);
  Eigen::VectorXd r = q * x;
  r += 0.1 * (Eigen::MatrixXd::Identity(8, 8) - q * q.transpose()) * random_complex(rng, 8, 1).real();
  const Eigen::VectorXd rho = update_rho(r.cast<Complex>(), q.cast<Complex>(), Eigen::VectorXd::Ones(3), 0.0);
  EXPECT_LT((rho - q.transpose() * r).norm(), 1e-12);
}

TEST(UpdateRho, HeavyRegularizationDrivesToZero) {
  std::mt19937_64 rng(5);
  Eigen::MatrixXcd psi = random_complex(rng, 8, 3);
  psi.colwise().normalize();
  Eigen::VectorXcd r = random_complex(rng, 8, 1);
  r.normalize();
  const Eigen::VectorXd rho = update_rho(r, psi, Eigen::VectorXd::Ones(3), 1e12);
  EXPECT_LE(rho.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(UpdateRho, MatchesAugmentedLeastSquares) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const Eigen::MatrixXcd psi = random_complex(rng, 8, 3);
    const Eigen::VectorXcd r = random_complex(rng, 8, 1);
    const Eigen::Vector3d b(0.5, 2.0, 1.5);
    const double lambda = 0.7;
    // min |[Re; Im](r - Psi x)|^2 + lambda sum b x^2 as one stacked real least-squares problem.
    Eigen::MatrixXd a(19, 3);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(19);
    a << psi.real(), psi.imag(), Eigen::MatrixXd((lambda * b).cwiseSqrt().asDiagonal());
    y.head(8) = r.real();
    y.segment(8, 8) = r.imag();
    const Eigen::VectorXd oracle = a.colPivHouseholderQr().solve(y).cwiseMax(0.0);
    EXPECT_LT((update_rho(r, psi, b, lambda) - oracle).norm(), 1e-10 * std::max(1.0, oracle.norm()));
  }
}

// -- position gradient ----------------------------------------------------

TEST(PositionGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    const int L = 3 + t % 6, M = 2 + t % 4, P = 1 + t % 4;
    const auto truth = testing::random_scene(rng, L, M, 3);
    const Eigen::VectorXcd r = testing::exact_covariance_vector(truth.model, truth.emitters, truth.powers);
    std::vector<Position> cands;
    for (int p = 0; p < P; ++p) cands.emplace_back(-1500 + 3000 * u(rng), -1500 + 3000 * u(rng), 0.0);
    const CandidateSet s(cands);
    const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(P, [&] { return 0.5 + u(rng); });
    const double lambda = 0.3;
    for (int p = 0; p < P; ++p) {
      const Eigen::Vector3d g = position_gradient(truth.model, s, r, b, lambda, p);
      for (int axis = 0; axis < 2; ++axis) {
        auto moved = cands;
        const double h = 1e-3;
        moved[p](axis) += h;
        const double up = concentrated_cost(truth.model, CandidateSet(moved), r, b, lambda);
        moved[p](axis) -= 2 * h;
        const double down = concentrated_cost(truth.model, CandidateSet(moved), r, b, lambda);
        const double fd = (up - down) / (2 * h);
        EXPECT_LT(std::abs(g(axis) - fd), 1e-4 * std::max(std::abs(fd), 1e-6 * g.norm() + 1e-12))
            << "scene " << t << " candidate " << p << " axis " << axis;
      }
    }
  }
}

TEST(PositionGradient, DerivativeTouchesOneColumn) {
  std::mt19937_64 rng(8);
  const auto scene = testing::random_scene(rng, 4, 2, 3);
  const CandidateSet s(scene.emitters);
  const Eigen::MatrixXcd base = build(scene.model.trajectory, s, scene.model.propagation).columns;
  auto moved = scene.emitters;
  moved[1].x() += 1e-3;
  const Eigen::MatrixXcd shifted = build(scene.model.trajectory, CandidateSet(moved), scene.model.propagation).columns;
  const Eigen::MatrixXcd diff = shifted - base;
  EXPECT_EQ(diff.col(0).norm(), 0.0);
  EXPECT_GT(diff.col(1).norm(), 0.0);
  EXPECT_EQ(diff.col(2).norm(), 0.0);
}

TEST(PositionGradient, DisplacedCandidatePointsBack) {
  // Short array at broadside: the main lobe spans several hundred metres.
  Eigen::Matrix3Xd a = Eigen::Matrix3Xd::Zero(3, 3);
  a(0, 1) = 0.3;
  a(0, 2) = 0.6;
  ArrayModel model{ArrayTrajectory({0.0}, {a}), {1e9, kSpeedOfLight}};
  const Position truth(0.3, 1000.0, 0.0);
  const Eigen::VectorXcd r = testing::exact_covariance_vector(model, {truth}, {1.0});
  const Eigen::VectorXd b = Eigen::VectorXd::Constant(1, 0.1);
  const Position off = truth + Eigen::Vector3d(200.0, 0.0, 0.0);
  const Eigen::Vector3d g = position_gradient(model, CandidateSet({off}), r, b, 1.0, 0);
  EXPECT_GT(g.x(), 0.0);
  EXPECT_GT(concentrated_cost(model, CandidateSet({off}), r, b, 1.0),
            concentrated_cost(model, CandidateSet({truth}), r, b, 1.0));
  const Position back = off - Eigen::Vector3d(10.0, 0.0, 0.0);
  EXPECT_LT(concentrated_cost(model, CandidateSet({back}), r, b, 1.0),
            concentrated_cost(model, CandidateSet({off}), r, b, 1.0));
}

// -- refinement, pruning ---------------------------------------------------

struct NoiseFree {
  ArrayModel model;
  Position truth;
  Eigen::VectorXcd r;
  SolverConfig cfg;
};

NoiseFree noise_free_single() {
  const RunConfig cfg = load_config(COVLOC_CONFIG_DIR "/noise_free_single.json");
  const Scenario s = cfg.experiment.base_scenario.instantiate(cfg.scenario_seed);
  NoiseFree out;
  out.model = {s.trajectory, s.propagation};
  out.truth = s.emitters.front().position;
  out.r = testing::exact_covariance_vector(out.model, {out.truth}, {s.emitters.front().power});
  out.cfg = cfg.experiment.solver;
  return out;
}

TEST(RefinePositions, FixedPointAtTruth) {
  const NoiseFree nf = noise_free_single();
  SolverState st;
  st.candidates = CandidateSet({nf.truth});
  st.rho = Eigen::VectorXd::Ones(1);
  st.b_diag = Eigen::VectorXd::Constant(1, 0.01);
  const CandidateSet out = refine_positions(st, nf.r, nf.model, nf.cfg, 1.0, 1e-3);
  EXPECT_LT((out[0] - nf.truth).norm(), 1e-6);
}

TEST(RefinePositions, NeverRaisesConcentratedCost) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int t = 0; t < 10; ++t) {
    const auto scene = testing::random_scene(rng, 4, 3, 2);
    const Eigen::VectorXcd r = testing::exact_covariance_vector(scene.model, scene.emitters, scene.powers);
    SolverState st;
    std::vector<Position> cands;
    for (const auto& e : scene.emitters) cands.push_back(e + Eigen::Vector3d(100 * u(rng), 100 * u(rng), 0));
    st.candidates = CandidateSet(cands);
    st.rho = Eigen::VectorXd::Ones(2);
    st.b_diag = Eigen::VectorXd::Constant(2, 0.05);
    SolverConfig cfg;
    cfg.grid = {-2000, 2000, -2000, 2000, 0, 0, 50.0};
    const double before = concentrated_cost(scene.model, st.candidates, r, st.b_diag, 0.5);
    const CandidateSet out = refine_positions(st, r, scene.model, cfg, 0.5, 1e-3);
    EXPECT_LE(concentrated_cost(scene.model, out, r, st.b_diag, 0.5), before + 1e-9 * std::abs(before));
  }
}

TEST(RefinePositions, ConvergesFromFiftyMetres) {
  const NoiseFree nf = noise_free_single();
  SolverState st;
  st.candidates = CandidateSet({nf.truth + Eigen::Vector3d(35.0, -35.0, 0.0)});
  st.rho = Eigen::VectorXd::Ones(1);
  st.b_diag = Eigen::VectorXd::Constant(1, 0.01);
  SolverConfig cfg = nf.cfg;
  cfg.line_search.initial_step_m = 25.0;
  for (int it = 0; it < 200 && (st.candidates[0] - nf.truth).norm() > 0.01; ++it) {
    st.candidates = refine_positions(st, nf.r, nf.model, cfg, 1.0, 1e-3);
  }
  EXPECT_LT((st.candidates[0] - nf.truth).norm(), 0.1);

  // Dense 1 m evaluation of the cost around the truth has its minimum there.
  double best = INFINITY;
  Position arg;
  for (int i = -5; i <= 5; ++i) {
    for (int j = -5; j <= 5; ++j) {
      const Position q = nf.truth + Eigen::Vector3d(i, j, 0);
      const double c = concentrated_cost(nf.model, CandidateSet({q}), nf.r, st.b_diag, 1.0);
      if (c < best) {
        best = c;
        arg = q;
      }
    }
  }
  EXPECT_LT((arg - nf.truth).norm(), 1e-9);
}

TEST(Prune, KeepsEverythingAboveThreshold) {
  SolverState st;
  st.candidates = CandidateSet({Position(0, 0, 0), Position(1, 0, 0)});
  st.rho = Eigen::Vector2d(1.0, 2.0);
  st.b_diag = Eigen::Vector2d(0.1, 0.2);
  const SolverState out = prune(st, 0.5);
  EXPECT_EQ(out.candidates.size(), 2u);
  EXPECT_EQ(out.rho, st.rho);
  EXPECT_EQ(out.b_diag, st.b_diag);
}

TEST(Prune, DropsSmallEntriesTogether) {
  SolverState st;
  st.candidates = CandidateSet({Position(0, 0, 0), Position(1, 0, 0)});
  st.rho = Eigen::Vector2d(1.0, 1e-9);
  st.b_diag = Eigen::Vector2d(0.1, 0.2);
  const SolverState out = prune(st, 1e-6);
  ASSERT_EQ(out.candidates.size(), 1u);
  EXPECT_EQ(out.candidates[0], Position(0, 0, 0));
  EXPECT_EQ(out.rho(0), 1.0);
  EXPECT_EQ(out.b_diag(0), 0.1);
  EXPECT_TRUE(prune(st, 10.0).candidates.empty());
}

TEST(Prune, ObjectiveChangeBoundedByPrunedContribution) {
  std::mt19937_64 rng(10);
  const auto scene = testing::random_scene(rng, 4, 2, 4);
  const Eigen::VectorXcd r = testing::exact_covariance_vector(scene.model, scene.emitters, scene.powers);
  SolverState st;
  st.candidates = CandidateSet(scene.emitters);
  st.rho = Eigen::Vector4d(1.0, 1e-4, 0.8, 3e-4);
  st.b_diag = Eigen::Vector4d::Ones();
  const SolverState small = prune(st, 1e-3);
  ASSERT_EQ(small.candidates.size(), 2u);
  const auto full_psi = build(scene.model.trajectory, st.candidates, scene.model.propagation).columns;
  const auto small_psi = build(scene.model.trajectory, small.candidates, scene.model.propagation).columns;
  const double lambda = 2.0, delta = 1e-3;
  const double g_full = objective(r, full_psi, st.rho, lambda, delta);
  const double g_small = objective(r, small_psi, small.rho, lambda, delta);
  Eigen::VectorXd dropped = st.rho;
  dropped(0) = dropped(2) = 0.0;
  const Eigen::VectorXcd removed = full_psi * dropped.cast<Complex>();
  const double res = (r - full_psi * st.rho.cast<Complex>()).norm();
  const double bound = lambda * (std::atan(1e-4 / delta) + std::atan(3e-4 / delta)) + 2 * res * removed.norm() +
                       removed.squaredNorm();
  EXPECT_LE(std::abs(g_full - g_small), bound * (1 + 1e-12));
}

// -- off-grid solver ------------------------------------------------------

TEST(SolveOffGrid, NoiseFreeSingleTarget) {
  const NoiseFree nf = noise_free_single();
  CovarianceMeasurement meas;
  meas.stacked = nf.r;
  const LocalizationResult res = solve_off_grid(meas, nf.model, nf.cfg);
  ASSERT_EQ(res.positions.size(), 1u);
  EXPECT_LT((res.positions[0] - nf.truth).norm(), 0.1);
  EXPECT_EQ(res.positions.size(), res.powers.size());
  for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
    EXPECT_LE(res.objective_history[i], res.objective_history[i - 1] * (1 + 1e-9));
  }
}

TEST(SolveOffGrid, EmptyModelReturnsNoTargets) {
  const NoiseFree nf = noise_free_single();
  CovarianceMeasurement meas;
  meas.stacked = Eigen::VectorXcd::Zero(nf.r.size());
  const LocalizationResult res = solve_off_grid(meas, nf.model, nf.cfg);
  EXPECT_TRUE(res.positions.empty());
  EXPECT_FALSE(res.converged);
}

TEST(SolveOffGrid, RejectsMismatchedMeasurement) {
  const NoiseFree nf = noise_free_single();
  CovarianceMeasurement meas;
  meas.stacked = Eigen::VectorXcd::Zero(5);
  EXPECT_THROW(solve_off_grid(meas, nf.model, nf.cfg), std::invalid_argument);
}

TEST(SolveOffGrid, ThreeTargetsAtHighSnr) {
  RunConfig cfg = load_config(COVLOC_CONFIG_DIR "/fig5_snr.json");
  ExperimentSpec spec = cfg.experiment;
  spec.on_grid_spacing.reset();
  const TrialRecord rec = run_trial(spec, 20.0, 0);
  EXPECT_TRUE(rec.off_grid.correct_count);
  EXPECT_TRUE(rec.off_grid.recovered);
}

TEST(SolverConfig, Validation) {
  SolverConfig c;
  c.grid = {0, 1, 0, 1, 0, 0, 0.5};
  EXPECT_NO_THROW(c.validate());
  SolverConfig bad = c;
  bad.lambda = -1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.line_search.shrink = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.grid.spacing = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

// -- on-grid baseline -----------------------------------------------------

struct GridCase {
  ArrayModel model;
  GridSpec grid;
  std::vector<Position> points;
};

GridCase grid_case() {
  const NoiseFree nf = noise_free_single();
  GridCase g;
  g.model = nf.model;
  g.grid = {1000, 1500, -2600, -2100, 0, 0, 50.0};
  g.points = g.grid.points();
  return g;
}

TEST(SolveOnGrid, ExactAtomRecoversItsPoint) {
  const GridCase g = grid_case();
  const Position target = g.points[37];
  CovarianceMeasurement meas;
  meas.stacked = 2.0 * atom(g.model.trajectory, target, g.model.propagation);
  OnGridConfig cfg;
  cfg.lambda = 1e-3;
  const LocalizationResult res = solve_on_grid(meas, g.model, CandidateSet(g.points), cfg, g.grid.spacing);
  ASSERT_EQ(res.positions.size(), 1u);
  EXPECT_EQ(res.positions[0], target);
  EXPECT_NEAR(res.powers[0], 2.0, 1e-3);
}

TEST(SolveOnGrid, LargeLambdaGivesNothing) {
  const GridCase g = grid_case();
  CovarianceMeasurement meas;
  meas.stacked = atom(g.model.trajectory, g.points[5], g.model.propagation);
  const auto psi = build(g.model.trajectory, CandidateSet(g.points), g.model.propagation).columns;
  OnGridConfig cfg;
  cfg.lambda = 2.0 * (psi.adjoint() * meas.stacked).real().cwiseAbs().maxCoeff() * 1.01;
  EXPECT_TRUE(solve_on_grid(meas, g.model, CandidateSet(g.points), cfg, g.grid.spacing).positions.empty());
}

TEST(SolveOnGrid, OffGridEmitterErrorAtLeastNearestPointDistance) {
  const GridCase g = grid_case();
  const Position target(1237.0, -2311.0, 0.0);
  CovarianceMeasurement meas;
  meas.stacked = atom(g.model.trajectory, target, g.model.propagation);
  const LocalizationResult res = solve_on_grid(meas, g.model, CandidateSet(g.points), OnGridConfig{}, g.grid.spacing);
  ASSERT_EQ(res.positions.size(), 1u);
  double nearest = INFINITY;
  for (const auto& p : g.points) nearest = std::min(nearest, (p - target).norm());
  EXPECT_GE((res.positions[0] - target).norm(), nearest - 1e-9);
  EXPECT_LE((res.positions[0] - target).norm(), 2 * g.grid.spacing);
}

// -- l0 oracle and fixed dictionary ---------------------------------------

TEST(L0Oracle, SingleAtomData) {
  std::mt19937_64 rng(11);
  Eigen::MatrixXcd psi = random_complex(rng, 16, 6);
  psi.colwise().normalize();
  const Eigen::VectorXcd r = 1.5 * psi.col(3);
  const L0Solution s = l0_oracle(r, psi, 1e-3, 2);
  ASSERT_EQ(s.support, std::vector<std::size_t>{3});
  EXPECT_NEAR(s.rho(3), 1.5, 1e-9);
}

TEST(L0Oracle, HugeLambdaGivesEmptySupport) {
  std::mt19937_64 rng(12);
  const Eigen::MatrixXcd psi = random_complex(rng, 16, 6);
  const Eigen::VectorXcd r = random_complex(rng, 16, 1);
  const L0Solution s = l0_oracle(r, psi, 1.01 * r.squaredNorm(), 3);
  EXPECT_TRUE(s.support.empty());
  EXPECT_NEAR(s.objective, r.squaredNorm(), 1e-12);
}

TEST(L0Oracle, MatchesBruteForceAndGuards) {
  std::mt19937_64 rng(13);
  const Eigen::MatrixXcd psi = random_complex(rng, 8, 5);
  const Eigen::VectorXcd r = psi.col(1) * 2.0 + psi.col(4) * 0.7 + 0.1 * random_complex(rng, 8, 1);
  const double lambda = 0.5;
  const L0Solution s = l0_oracle(r, psi, lambda, 2);
  // Independent enumeration of every support of size <= 2 by bitmask.
  double best = r.squaredNorm();
  for (int mask = 1; mask < 32; ++mask) {
    if (__builtin_popcount(mask) > 2) continue;
    std::vector<Eigen::Index> cols;
    for (int j = 0; j < 5; ++j)
      if (mask & (1 << j)) cols.push_back(j);
    Eigen::MatrixXd a(16, static_cast<Eigen::Index>(cols.size()));
    a << psi(Eigen::all, cols).real(), psi(Eigen::all, cols).imag();
    Eigen::VectorXd y(16);
    y << r.real(), r.imag();
    const Eigen::VectorXd x = a.colPivHouseholderQr().solve(y);
    best = std::min(best, lambda * cols.size() + (a * x - y).squaredNorm());
  }
  EXPECT_NEAR(s.objective, best, 1e-10);
  EXPECT_EQ(s.support, (std::vector<std::size_t>{1, 4}));
  EXPECT_THROW(l0_oracle(Eigen::VectorXcd::Zero(8), Eigen::MatrixXcd::Zero(8, 13), 1.0, 2), std::invalid_argument);
  EXPECT_THROW(l0_oracle(r, psi, 1.0, 5), std::invalid_argument);
}

TEST(SolveFixedDictionary, MonotoneAndFindsTrueSupport) {
  std::mt19937_64 rng(14);
  Eigen::MatrixXcd psi = random_complex(rng, 16, 6);
  psi.colwise().normalize();
  const Eigen::VectorXcd r = 1.6 * psi.col(0) + 1.2 * psi.col(5) + 0.02 * random_complex(rng, 16, 1);
  const double rinf = r.cwiseAbs().maxCoeff();
  const double delta = 1e-4 * rinf;
  const auto res = solve_fixed_dictionary(r, psi, 0.25 / (kPi / 2), delta, 1e-3 * delta, 500, 1e-12, 1e-12,
                                          1e-2 * rinf);
  EXPECT_EQ(res.support, (std::vector<std::size_t>{0, 5}));
  for (std::size_t i = 1; i < res.objective_history.size(); ++i) {
    EXPECT_LE(res.objective_history[i], res.objective_history[i - 1] * (1 + 1e-9));
  }
}

}  // namespace
}  // namespace covloc
