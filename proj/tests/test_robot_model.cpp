#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "dcm/errors.hpp"
#include "dcm/robot_io.hpp"
#include "dcm/robot_model.hpp"
#include "oracles.hpp"

namespace dcm {
namespace {

TEST(ForwardKinematics, TwoLinkStraight) {
  const RobotModel arm = test::two_link_arm();
  const Pose<double> pose = forward_kinematics<double>(arm, Eigen::Vector2d(0.0, 0.0));
  EXPECT_NEAR((pose.position - Eigen::Vector3d(2.0, 0.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, TwoLinkQuarterTurn) {
  const RobotModel arm = test::two_link_arm();
  const Pose<double> pose = forward_kinematics<double>(arm, Eigen::Vector2d(M_PI / 2.0, 0.0));
  EXPECT_NEAR((pose.position - Eigen::Vector3d(0.0, 2.0, 0.0)).norm(), 0.0, 1e-15);
}

TEST(ForwardKinematics, MatchesTransformChain) {
  std::mt19937_64 rng(11);
  for (const RobotModel& model : {RobotModel::arm6(), RobotModel::planar3()}) {
    for (int trial = 0; trial < 50; ++trial) {
      const Eigen::VectorXd q = test::uniform(rng, model.dof(), -M_PI, M_PI);
      const Pose<double> pose = forward_kinematics<double>(model, q);
      const Eigen::Isometry3d ref = test::transform_chain(model, q);
      EXPECT_LT((pose.position - ref.translation()).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((pose.rotation - ref.linear()).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(ForwardKinematics, RotationIsOrthonormal) {
  std::mt19937_64 rng(3);
  const RobotModel model = RobotModel::arm6();
  for (int trial = 0; trial < 100; ++trial) {
    const Pose<double> pose = forward_kinematics<double>(model, test::uniform(rng, 6, -M_PI, M_PI));
    EXPECT_LT((pose.rotation.transpose() * pose.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-10);
    EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-10);
  }
}

TEST(Jacobian, TwoLinkLeverArm) {
  const RobotModel arm = test::two_link_arm();
  const Jacobian<double> j = jacobian<double>(arm, Eigen::Vector2d(0.0, 0.0));
  EXPECT_NEAR((j.position.col(0) - Eigen::Vector3d(0.0, 2.0, 0.0)).norm(), 0.0, 1e-15);
  EXPECT_NEAR((j.position.col(1) - Eigen::Vector3d(0.0, 1.0, 0.0)).norm(), 0.0, 1e-15);
  EXPECT_EQ(j.full.topRows(3), j.position);
}

TEST(Jacobian, MatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (const RobotModel& model : {RobotModel::arm6(), RobotModel::planar3()}) {
    for (int trial = 0; trial < 30; ++trial) {
      const Eigen::VectorXd q = test::uniform(rng, model.dof(), -M_PI, M_PI);
      const Eigen::MatrixXd fd = test::central_difference(
          [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return forward_kinematics<double>(model, x).position; }, q);
      EXPECT_LT(test::relative_error(jacobian<double>(model, q).position, fd), 1e-6);
    }
  }
}

TEST(Jacobian, FrozenDuplicateJointGivesEqualColumns) {
  std::vector<Link> links(3);
  for (auto& l : links) {
    l.mass = 1.0;
    l.inertia = Eigen::Matrix3d::Identity() * 0.01;
    l.axis = Eigen::Vector3d::UnitZ();
  }
  links[0].com = Eigen::Vector3d(0.2, 0.0, 0.0);
  links[2].offset.translation = Eigen::Vector3d(0.0, 0.0, 0.0);  // zero-length link on the same axis
  links[1].offset.translation = Eigen::Vector3d(0.0, 0.0, 0.0);
  links[2].com = Eigen::Vector3d(0.3, 0.0, 0.0);
  RigidTransform tcp;
  tcp.translation = Eigen::Vector3d(0.5, 0.0, 0.0);
  const RobotModel model("dup", links, Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), tcp);
  const Jacobian<double> j = jacobian<double>(model, Eigen::Vector3d(0.3, -0.2, 0.7));
  EXPECT_LT((j.full.col(0) - j.full.col(1)).norm(), 1e-14);
  EXPECT_LT((j.full.col(1) - j.full.col(2)).norm(), 1e-14);
}

TEST(Dynamics, MassMatrixSymmetricPositiveDefinite) {
  std::mt19937_64 rng(17);
  for (const RobotModel& model : {RobotModel::arm6(), RobotModel::planar3()}) {
    for (int trial = 0; trial < 1000; ++trial) {
      const Eigen::VectorXd q = test::uniform(rng, model.dof(), -M_PI, M_PI);
      const Eigen::MatrixXd M = mass_matrix(model, chain_kinematics(model, q));
      ASSERT_LT((M - M.transpose()).cwiseAbs().maxCoeff(), 1e-12);
      ASSERT_GT(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(M).eigenvalues().minCoeff(), 0.0);
    }
  }
}

TEST(Dynamics, MotorInertiaOnDiagonal) {
  const RobotModel model = RobotModel::arm6();
  const RobotModel bare("bare", model.links(), model.damping(), Eigen::VectorXd::Zero(6), model.tcp());
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(6, -0.5, 0.5);
  const Eigen::MatrixXd diff = mass_matrix(model, chain_kinematics(model, q)) - mass_matrix(bare, chain_kinematics(bare, q));
  EXPECT_LT((diff - Eigen::MatrixXd(model.motor_inertia().asDiagonal())).norm(), 1e-12);
}

TEST(Dynamics, CoriolisVanishesAtRest) {
  std::mt19937_64 rng(2);
  const RobotModel model = RobotModel::arm6();
  const Eigen::VectorXd q = test::uniform(rng, 6, -M_PI, M_PI);
  EXPECT_EQ(dynamics_terms<double>(model, q, Eigen::VectorXd::Zero(6)).C.norm(), 0.0);
}

TEST(Dynamics, GravityOffGivesZeroG) {
  std::mt19937_64 rng(4);
  const RobotModel model = RobotModel::arm6().with_gravity(Eigen::Vector3d::Zero());
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd q = test::uniform(rng, 6, -M_PI, M_PI);
    EXPECT_EQ(dynamics_terms<double>(model, q, test::uniform(rng, 6, -1, 1)).G.norm(), 0.0);
  }
}

TEST(Dynamics, GravityIsPotentialGradient) {
  std::mt19937_64 rng(8);
  for (const RobotModel& model : {RobotModel::arm6(), RobotModel::planar3()}) {
    const Eigen::VectorXd q = test::uniform(rng, model.dof(), -M_PI, M_PI);
    const Eigen::MatrixXd grad = test::central_difference(
        [&](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, potential_energy(model, x)); }, q);
    const Eigen::VectorXd G = dynamics_terms<double>(model, q, Eigen::VectorXd::Zero(model.dof())).G;
    EXPECT_LT(test::relative_error(G, grad.transpose()), 1e-7);
  }
}

TEST(Dynamics, EnergyConservedWithoutDamping) {
  const RobotModel model = RobotModel::planar3().with_damping(Eigen::Vector3d::Zero());
  Eigen::VectorXd q(3), qd(3);
  q << 0.3, -0.5, 0.8;
  qd << 0.5, -0.2, 0.4;
  auto energy = [&] {
    const Eigen::MatrixXd M = mass_matrix(model, chain_kinematics(model, q));
    return 0.5 * qd.dot(M * qd) + potential_energy(model, q);
  };
  const double e0 = energy();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  for (int k = 0; k < 10000; ++k) test::rk4_step(model, {}, q, qd, zero, 1e-4);
  EXPECT_LT(std::abs(energy() - e0), 1e-6 * std::max(1.0, std::abs(e0)));
}

TEST(TorqueError, Identities) {
  std::mt19937_64 rng(9);
  const RobotModel model = RobotModel::arm6();
  const Eigen::VectorXd q = test::uniform(rng, 6, -M_PI, M_PI);
  const Eigen::VectorXd qd = test::uniform(rng, 6, -1, 1);
  const DynamicsTerms<double> terms = dynamics_terms<double>(model, q, qd);
  EXPECT_LT(torque_error<double>(model, q, qd, terms.C + terms.G).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(6);
  const Eigen::VectorXd g = dynamics_terms<double>(model, q, zero).G;
  EXPECT_LT((torque_error<double>(model, q, zero, zero) + g).cwiseAbs().maxCoeff(), 1e-12);
  const Eigen::VectorXd tau = test::uniform(rng, 6, -10, 10);
  EXPECT_LT((torque_error<double>(model, q, qd, tau) - (tau - terms.C - terms.G)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RobotModel, RejectsInvalidLinks) {
  std::vector<Link> links(1);
  links[0].mass = 0.0;
  links[0].inertia = Eigen::Matrix3d::Identity();
  EXPECT_THROW(RobotModel("bad", links, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), {}), ConfigError);
  links[0].mass = 1.0;
  EXPECT_THROW(RobotModel("bad", links, Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Zero(1), {}),
               ConfigError);
  links[0].inertia(0, 1) = 0.5;
  EXPECT_THROW(RobotModel("bad", links, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), {}), ConfigError);
  EXPECT_THROW(RobotModel::builtin("nope"), ConfigError);
}

TEST(RobotIo, ShippedFilesMatchBuiltins) {
  for (const std::string name : {"arm6", "planar3"}) {
    const RobotModel loaded = load_robot(std::string(DCM_ROBOTS_DIR) + "/" + name + ".yaml");
    const RobotModel builtin = RobotModel::builtin(name);
    const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(builtin.dof(), -0.4, 0.9);
    EXPECT_LT((mass_matrix(loaded, chain_kinematics(loaded, q)) - mass_matrix(builtin, chain_kinematics(builtin, q)))
                  .norm(),
              1e-12);
    EXPECT_LT((forward_kinematics<double>(loaded, q).position - forward_kinematics<double>(builtin, q).position).norm(),
              1e-12);
  }
}

TEST(RobotIo, YamlRoundTrip) {
  const RobotModel model = RobotModel::arm6();
  const RobotModel back = parse_robot(robot_to_yaml(model));
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(6, 0.1, 0.6);
  EXPECT_EQ(forward_kinematics<double>(back, q).position, forward_kinematics<double>(model, q).position);
  EXPECT_EQ(back.damping(), model.damping());
  EXPECT_EQ(back.motor_inertia(), model.motor_inertia());
}

TEST(RobotIo, MissingFieldReportsLine) {
  const std::string text =
      "name: broken\n"
      "damping: [0.1]\n"
      "motor_inertia: [0.0]\n"
      "links:\n"
      "  - mass: 1.0\n"
      "    com: [0, 0, 0]\n"
      "    axis: [0, 0, 1]\n";
  try {
    parse_robot(text, "broken.yaml");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("broken.yaml:5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("inertia"), std::string::npos) << msg;
  }
}

TEST(RobotIo, ResolvesNamesAndPaths) {
  EXPECT_EQ(resolve_robot("arm6").dof(), 6);
  EXPECT_EQ(resolve_robot(std::string(DCM_ROBOTS_DIR) + "/planar3.yaml").dof(), 3);
  EXPECT_THROW(resolve_robot("/nonexistent/robot.yaml"), ConfigError);
}

}  // namespace
}  // namespace dcm
