#include <random>

#include <gtest/gtest.h>

#include "dcm/controller.hpp"
#include "dcm/errors.hpp"
#include "dcm/simlab.hpp"
#include "oracles.hpp"

namespace dcm {
namespace {

using test::uniform;

ContactPrimitive plane(double stiffness, const Eigen::Vector3d& rest) {
  ContactPrimitive p;
  p.stiffness = Eigen::Vector3d(0.0, 0.0, stiffness);
  p.rest = rest;
  return p;
}

Eigen::VectorXd stacked(const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  Eigen::VectorXd x(q.size() + qd.size());
  x << q, qd;
  return x;
}

// Written from the law directly: finite-difference translational Jacobian
// from the transform chain, spring and damper per axis.
Eigen::VectorXd impedance_oracle(const RobotModel& model, const ImpedanceLaw& law, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qd) {
  const auto position = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return test::transform_chain(model, x).translation();
  };
  const Eigen::MatrixXd Jp = test::central_difference(position, q, 1e-7);
  const Eigen::Vector3d p = position(q);
  Eigen::Vector3d f;
  for (int k = 0; k < 3; ++k) f(k) = law.stiffness(k) * (p(k) - law.target(k)) + law.damping(k) * Jp.row(k).dot(qd);
  return -Jp.transpose() * f;
}

TEST(ImpedanceTorque, ZeroAtRestPositionAndStandstill) {
  const RobotModel model = RobotModel::arm6();
  const Eigen::VectorXd q = find_scenario("vertical-contact").initial_q;
  ImpedanceLaw law;
  law.target = forward_kinematics<double>(model, q).position;
  EXPECT_LT(impedance_torque(model, law, q, Eigen::VectorXd::Zero(6)).norm(), 1e-12);
}

TEST(ImpedanceTorque, SpringDisplacementGivesTransposedForce) {
  const RobotModel model = RobotModel::arm6();
  const Eigen::VectorXd q = find_scenario("vertical-contact").initial_q;
  ImpedanceLaw law;
  law.stiffness = Eigen::Vector3d::Constant(1000.0);
  law.target = forward_kinematics<double>(model, q).position - Eigen::Vector3d(0.01, 0.0, 0.0);
  const Eigen::MatrixXd Jp = jacobian<double>(model, q).position;
  const Eigen::VectorXd expected = Jp.transpose() * Eigen::Vector3d(-10.0, 0.0, 0.0);
  EXPECT_LT((impedance_torque(model, law, q, Eigen::VectorXd::Zero(6)) - expected).norm(), 1e-12);
}

TEST(ImpedanceTorque, MatchesTransformChainOracle) {
  std::mt19937_64 rng(11);
  const RobotModel model = RobotModel::arm6();
  for (int trial = 0; trial < 50; ++trial) {
    ImpedanceLaw law;
    law.stiffness = uniform(rng, 3, 100.0, 3000.0);
    law.damping = uniform(rng, 3, 0.0, 200.0);
    const Eigen::VectorXd q = uniform(rng, 6, -1.5, 1.5);
    const Eigen::VectorXd qd = uniform(rng, 6, -1.0, 1.0);
    law.target = forward_kinematics<double>(model, q).position + uniform(rng, 3, -0.05, 0.05);
    const Eigen::VectorXd tau = impedance_torque(model, law, q, qd);
    // The finite-difference oracle carries about 1e-9 relative truncation.
    EXPECT_LT(test::relative_error(tau, impedance_oracle(model, law, q, qd)), 1e-7) << trial;
  }
}

TEST(ImpedanceLaw, RejectsNegativeGains) {
  ImpedanceLaw law;
  law.stiffness(1) = -1.0;
  EXPECT_THROW(law.validate(), ConfigError);
  law = ImpedanceLaw{};
  law.damping(2) = -0.5;
  EXPECT_THROW(law.validate(), ConfigError);
}

TEST(BalancingTarget, SpringCancelsTheContactForce) {
  ImpedanceLaw law;
  law.stiffness = Eigen::Vector3d(1000.0, 500.0, 0.0);
  const Eigen::Vector3d p(0.3, -0.2, 0.1);
  const Eigen::Vector3d force(5.0, -2.0, 3.0);
  const Eigen::Vector3d target = balancing_target(law, p, force);
  const Eigen::Vector3d spring = law.stiffness.cwiseProduct(p - target);
  EXPECT_NEAR(spring(0), 5.0, 1e-12);
  EXPECT_NEAR(spring(1), -2.0, 1e-12);
  EXPECT_DOUBLE_EQ(target(2), p(2));  // no spring on that axis
}

TEST(MpcConfig, Validation) {
  MpcConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.horizon, 13);
  EXPECT_DOUBLE_EQ(cfg.h, 0.03);
  cfg.horizon = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MpcConfig{};
  cfg.h = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MpcConfig{};
  cfg.force_limit = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MpcConfig{};
  cfg.penalty_schedule.clear();
  EXPECT_THROW(cfg.validate(), ConfigError);
}

class StageCost : public ::testing::Test {
 protected:
  RobotModel model = RobotModel::arm6();
  Eigen::VectorXd q = find_scenario("vertical-contact").initial_q;
  Eigen::Vector3d p = forward_kinematics<double>(model, q).position;
  MpcConfig cfg;

  double oracle(const std::vector<ContactPrimitive>& prims, const Eigen::VectorXd& qq, const Eigen::VectorXd& qd) {
    const Eigen::Vector3d pos = test::transform_chain(model, qq).translation();
    const Eigen::Vector3d vel = jacobian<double>(model, qq).position * qd;
    double c = (pos - cfg.target).squaredNorm() + cfg.velocity_weight * vel.squaredNorm();
    for (const auto& prim : prims) {
      // Force K (x - attachment point) with the attachment at the TCP.
      const Eigen::Vector3d force = prim.stiffness.cwiseProduct(prim.rest - pos);
      Eigen::Vector3d desired = Eigen::Vector3d::Zero();
      if (prim.stiffness.norm() > 0.0) desired = cfg.desired_force * prim.stiffness.normalized();
      c += cfg.force_weight * (desired - force).squaredNorm();
    }
    return c;
  }
};

TEST_F(StageCost, ZeroAtTargetAtRestWithDesiredForce) {
  cfg.target = p;
  const double k = 2570.0;
  const std::vector<ContactPrimitive> prims = {plane(k, p + Eigen::Vector3d(0.0, 0.0, cfg.desired_force / k))};
  EXPECT_LT(stage_cost(model, cfg, prims, q, Eigen::VectorXd::Zero(6)), 1e-20);
}

TEST_F(StageCost, ForceTermIsLinearInItsWeight) {
  cfg.target = p;
  const std::vector<ContactPrimitive> prims = {plane(2000.0, p + Eigen::Vector3d(0.0, 0.0, 0.01))};
  const Eigen::VectorXd qd = Eigen::VectorXd::Zero(6);
  const double base = stage_cost(model, cfg, prims, q, qd);
  cfg.force_weight *= 2.0;
  const double doubled = stage_cost(model, cfg, prims, q, qd);
  cfg.force_weight = 0.0;
  const double none = stage_cost(model, cfg, prims, q, qd);
  EXPECT_NEAR(doubled - none, 2.0 * (base - none), 1e-12 * base);
  EXPECT_GT(base - none, 0.0);
}

TEST_F(StageCost, MatchesReimplementation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd qq = uniform(rng, 6, -1.5, 1.5);
    const Eigen::VectorXd qd = uniform(rng, 6, -1.0, 1.0);
    const Eigen::Vector3d pos = forward_kinematics<double>(model, qq).position;
    cfg.target = pos + uniform(rng, 3, -0.1, 0.1);
    cfg.force_weight = 1e-4;
    std::vector<ContactPrimitive> prims = {plane(2000.0, pos + uniform(rng, 3, -0.01, 0.01))};
    ContactPrimitive wall;
    wall.stiffness = Eigen::Vector3d(uniform(rng, 1, 100.0, 4000.0)(0), 0.0, 0.0);
    wall.rest = pos + uniform(rng, 3, -0.01, 0.01);
    prims.push_back(wall);
    const double value = stage_cost(model, cfg, prims, qq, qd);
    EXPECT_NEAR(value, oracle(prims, qq, qd), 1e-10 * std::max(1.0, value)) << trial;
  }
}

TEST(ImpedanceForceConstraint, LimitAtRestPositionAndZeroOnBoundary) {
  const RobotModel model = RobotModel::arm6();
  const Eigen::VectorXd q = find_scenario("vertical-contact").initial_q;
  const Eigen::Vector3d p = forward_kinematics<double>(model, q).position;
  ImpedanceLaw law;
  law.stiffness = Eigen::Vector3d(1000.0, 2000.0, 500.0);
  EXPECT_DOUBLE_EQ(impedance_force_constraint(model, q, p, law, 15.0), 15.0);
  // Spring force (9, 12, 0) has magnitude 15.
  const Eigen::Vector3d target = p - Eigen::Vector3d(0.009, 0.006, 0.0);
  EXPECT_NEAR(impedance_force_constraint(model, q, target, law, 15.0), 0.0, 1e-12);
  EXPECT_LT(impedance_force_constraint(model, q, p - Eigen::Vector3d(0.02, 0.0, 0.0), law, 15.0), 0.0);
  EXPECT_GT(impedance_force_constraint(model, q, p - Eigen::Vector3d(0.001, 0.0, 0.0), law, 15.0), 0.0);
}

// Arm held at the MPC target against a plane pressing with exactly F_d.
struct SteadyPlane {
  RobotModel model = RobotModel::arm6();
  ImpedanceLaw law;
  MpcConfig cfg;
  std::vector<ContactPrimitive> prims;
  Eigen::VectorXd state;
  Eigen::Vector3d hold;

  SteadyPlane() {
    const Scenario& sc = find_scenario("plane-slide");
    const Eigen::VectorXd q = sc.initial_q;
    const Eigen::Vector3d p = forward_kinematics<double>(model, q).position;
    law = sc.law;
    cfg = sc.mpc->mpc;
    cfg.target = p;
    const double k = 2570.0;
    prims = {plane(k, p + Eigen::Vector3d(0.0, 0.0, cfg.desired_force / k))};
    hold = balancing_target(law, p, Eigen::Vector3d(0.0, 0.0, cfg.desired_force));
    state = stacked(q, Eigen::VectorXd::Zero(6));
  }
};

TEST(MpcSolve, SteadyStateIsKept) {
  SteadyPlane s;
  const MpcSolution sol = mpc_solve(s.cfg, s.state, s.model, s.prims, s.law);
  ASSERT_EQ(static_cast<int>(sol.targets.size()), s.cfg.horizon);
  ASSERT_EQ(static_cast<int>(sol.states.size()), s.cfg.horizon + 1);
  EXPECT_LT((sol.targets.front() - s.hold).norm(), 1e-6);
  EXPECT_LT(sol.diagnostics.cost, 1e-12);
  EXPECT_TRUE(sol.diagnostics.converged);
}

TEST(MpcSolve, StatesAreConsistentRollouts) {
  SteadyPlane s;
  s.cfg.target += Eigen::Vector3d(0.03, -0.02, 0.0);
  const MpcSolution sol = mpc_solve(s.cfg, s.state, s.model, s.prims, s.law);
  EXPECT_LT(sol.diagnostics.max_defect, 1e-6);
  EXPECT_TRUE(sol.states.front().isApprox(s.state));
  // Reproduce the shooting states with the step used by the dynamics module.
  Eigen::VectorXd q = s.state.head(6), qd = s.state.tail(6);
  for (int i = 0; i < s.cfg.horizon; ++i) {
    ImpedanceLaw law = s.law;
    law.target = sol.targets[static_cast<std::size_t>(i)];
    const Eigen::VectorXd tau = impedance_torque(s.model, law, q, qd);
    const auto chain = chain_kinematics(s.model, q);
    const auto next = semi_implicit_step(s.model, chain, s.prims, q, qd, tau, s.cfg.h);
    q = next.q;
    qd = next.qd;
    EXPECT_LT((stacked(q, qd) - sol.states[static_cast<std::size_t>(i) + 1]).norm(), 1e-5) << i;
  }
}

TEST(MpcSolve, MovesTowardTheGoalWithoutViolatingTheLimit) {
  SteadyPlane s;
  const Eigen::Vector3d start = s.cfg.target;
  s.cfg.target += Eigen::Vector3d(0.0, -0.1, 0.0);
  const MpcSolution sol = mpc_solve(s.cfg, s.state, s.model, s.prims, s.law);
  EXPECT_LT(sol.targets.front().y(), start.y());
  if (sol.diagnostics.converged) {
    for (std::size_t i = 0; i < sol.targets.size(); ++i) {
      const double g = impedance_force_constraint(s.model, sol.states[i].head(6), sol.targets[i], s.law,
                                                  s.cfg.force_limit);
      EXPECT_GT(g, -1e-6) << i;
    }
  }
  EXPECT_LE(sol.diagnostics.max_violation, 1e-6);
}

TEST(MpcSolve, WarmStartNeverEndsAboveTheShiftedObjective) {
  SteadyPlane s;
  s.cfg.target += Eigen::Vector3d(0.02, -0.05, 0.0);
  MpcController controller(s.model, s.cfg, s.law);
  Eigen::VectorXd q = s.state.head(6), qd = s.state.tail(6);
  const double h = kDefaultSimulationStep;
  const int per_tick = static_cast<int>(std::lround(s.cfg.h / h));
  for (int tick = 0; tick < 15; ++tick) {
    const MpcSolution& sol = controller.solve(stacked(q, qd), s.prims);
    // The shifted start is a rollout, so its merit carries no defect term.
    EXPECT_LE(sol.diagnostics.objective, sol.diagnostics.shifted_objective + 1e-9) << tick;
    if (tick > 0) EXPECT_FALSE(sol.diagnostics.warm_start_reset) << tick;
    ImpedanceLaw law = s.law;
    law.target = sol.targets.front();
    for (int k = 0; k < per_tick; ++k) {
      const Eigen::VectorXd tau = impedance_torque(s.model, law, q, qd);
      const auto next = semi_implicit_step(s.model, chain_kinematics(s.model, q), s.prims, q, qd, tau, h);
      q = next.q;
      qd = next.qd;
    }
  }
}

TEST(MpcSolve, InjectedParametersDriveThePredictedForces) {
  SteadyPlane s;
  std::vector<ContactPrimitive> shifted = s.prims;
  shifted[0].rest.z() += 0.01;
  const MpcSolution a = mpc_solve(s.cfg, s.state, s.model, s.prims, s.law);
  const MpcSolution b = mpc_solve(s.cfg, s.state, s.model, shifted, s.law);
  double gap = 0.0;
  for (const auto* sol : {&a, &b}) {
    const auto& prims = sol == &a ? s.prims : shifted;
    ASSERT_EQ(sol->diagnostics.predicted_forces.size(), sol->targets.size());
    for (std::size_t i = 0; i < sol->targets.size(); ++i) {
      const Pose<double> pose = forward_kinematics<double>(s.model, sol->states[i + 1].head(6));
      const Eigen::Vector3d direct = contact_force(prims[0], pose);
      EXPECT_LT((sol->diagnostics.predicted_forces[i][0] - direct).norm(), 1e-12);
    }
  }
  for (std::size_t i = 0; i < a.targets.size(); ++i)
    gap = std::max(gap, (a.diagnostics.predicted_forces[i][0] - b.diagnostics.predicted_forces[i][0]).norm());
  EXPECT_GT(gap, 1.0);
  // The higher surface lets the solution lean further up to keep F_d.
  EXPECT_GT(b.targets.front().z(), a.targets.front().z());
}

TEST(MpcSolve, RejectsMalformedState) {
  SteadyPlane s;
  EXPECT_THROW(mpc_solve(s.cfg, Eigen::VectorXd::Zero(5), s.model, s.prims, s.law), ConfigError);
  Eigen::VectorXd bad = s.state;
  bad(0) = std::nan("");
  EXPECT_THROW(mpc_solve(s.cfg, bad, s.model, s.prims, s.law), ConfigError);
}

class PlaneClosedLoop : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    const Scenario& sc = find_scenario("plane-slide");
    with_estimation_ = new RunResult(run_closed_loop(sc, 3, true));
    without_estimation_ = new RunResult(run_closed_loop(sc, 3, false));
  }
  static void TearDownTestSuite() {
    delete with_estimation_;
    delete without_estimation_;
  }
  static RunResult* with_estimation_;
  static RunResult* without_estimation_;
};

RunResult* PlaneClosedLoop::with_estimation_ = nullptr;
RunResult* PlaneClosedLoop::without_estimation_ = nullptr;

TEST_F(PlaneClosedLoop, EstimationShrinksTheForceError) {
  const Scenario& sc = find_scenario("plane-slide");
  const double with = steady_state_force_error(with_estimation_->records, sc.truth, 3.0)[0];
  const double without = steady_state_force_error(without_estimation_->records, sc.truth, 3.0)[0];
  EXPECT_LT(with, 0.5);
  EXPECT_LT(with, 0.1 * without);
}

TEST_F(PlaneClosedLoop, ContactNormalForceSettlesAtTheDesiredValue) {
  const Scenario& sc = find_scenario("plane-slide");
  const auto& records = with_estimation_->records;
  double sum = 0.0;
  int count = 0;
  for (const auto& rec : records) {
    if (rec.t < sc.duration - 2.0) continue;
    sum += rec.truth_forces[0].z();
    ++count;
  }
  ASSERT_GT(count, 0);
  EXPECT_NEAR(sum / count, 3.0, 0.3);
}

TEST_F(PlaneClosedLoop, SpringForceStaysWithinTheLimitPlusSlack) {
  const Scenario& sc = find_scenario("plane-slide");
  const auto& records = with_estimation_->records;
  double worst = 0.0;
  for (const auto& rec : records) {
    if (rec.t < sc.mpc->start_time) continue;
    worst = std::max(worst, sc.law.stiffness.cwiseProduct(rec.truth_p - rec.target).norm());
  }
  EXPECT_LE(worst, sc.mpc->mpc.force_limit + 0.1);
}

TEST_F(PlaneClosedLoop, ConvergedSolvesSatisfyTheConstraint) {
  int converged = 0;
  for (const auto& tick : with_estimation_->ticks) {
    if (!tick.diagnostics.converged) continue;
    ++converged;
    EXPECT_LE(tick.diagnostics.max_violation, 1e-6) << tick.t;
  }
  EXPECT_GT(converged, static_cast<int>(with_estimation_->ticks.size()) * 9 / 10);
}

TEST_F(PlaneClosedLoop, WarmStartsNeverWorsenTheShiftedObjective) {
  for (const auto& tick : with_estimation_->ticks) {
    const MpcDiagnostics& d = tick.diagnostics;
    if (d.warm_start_reset) continue;
    EXPECT_LE(d.objective, d.shifted_objective + 1e-9) << tick.t;
  }
}

}  // namespace
}  // namespace dcm
