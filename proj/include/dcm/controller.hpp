#pragma once

#include <optional>
#include <vector>

#include "dcm/contact.hpp"
#include "dcm/robot_model.hpp"

namespace dcm {

/// Cartesian impedance law tau = -J_p^T (K_imp (p - x_d) + D_imp J_p qd) with
/// diagonal gains; the rest position x_d is the only control variable.
struct ImpedanceLaw {
  Eigen::Vector3d stiffness = Eigen::Vector3d::Constant(1000.0);  // N/m
  Eigen::Vector3d damping = Eigen::Vector3d::Constant(100.0);     // N s/m
  Eigen::Vector3d target = Eigen::Vector3d::Zero();               // x_d, m

  void validate() const;
};

template <class S>
VecX<S> impedance_torque(const ChainKinematics<S>& chain, const ImpedanceLaw& law, const VecX<S>& qd,
                         const Vec3<S>& target) {
  const MatX<S> Jp = point_jacobian(chain, chain.tcp.position);
  const Vec3<S> velocity = Jp * qd;
  const Vec3<S> force = law.stiffness.template cast<S>().cwiseProduct(chain.tcp.position - target) +
                        law.damping.template cast<S>().cwiseProduct(velocity);
  return -(Jp.transpose() * force);
}

Eigen::VectorXd impedance_torque(const RobotModel& model, const ImpedanceLaw& law, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qd);

/// Static rest position that balances `tcp_force` (applied to the robot) at TCP position p.
Eigen::Vector3d balancing_target(const ImpedanceLaw& law, const Eigen::Vector3d& p, const Eigen::Vector3d& tcp_force);

struct MpcConfig {
  int horizon = 13;
  double h = 0.03;
  Eigen::Vector3d target = Eigen::Vector3d::Zero();  // p_d
  double velocity_weight = 0.05;                     // Q_v
  double force_weight = 5e-5;                        // Q_f
  double desired_force = 3.0;                        // F_d, N
  double force_limit = 15.0;                         // impedance force limit, N
  int max_sqp_iterations = 20;                       // per penalty stage
  std::vector<double> penalty_schedule = {1e5, 1e6, 1e7};
  double tolerance = 1e-9;        // step size on x_d, m
  double merit_tolerance = 1e-6;      // relative merit decrease per SQP iteration
  double constraint_tolerance = 1e-6;  // max(-g) for a solve to count as converged, N
  double defect_weight = 10.0;  // L1 weight on shooting defects in the merit

  void validate() const;
};

/// |p - p_d|^2 + Q_v |J_p qd|^2 + sum_i Q_f |F_d n_i - F_i|^2, where n_i is the
/// contact normal of primitive i (target force zero when the normal is undefined).
double stage_cost(const RobotModel& model, const MpcConfig& cfg, const std::vector<ContactPrimitive>& prims,
                  const Eigen::VectorXd& q, const Eigen::VectorXd& qd);

/// F_limit - |K_imp (p - x_d)|_2.
double impedance_force_constraint(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::Vector3d& target,
                                  const ImpedanceLaw& law, double force_limit);

struct MpcDiagnostics {
  int iterations = 0;
  double cost = 0.0;       // stage costs only
  double objective = 0.0;  // cost + final-stage penalty
  double shifted_objective = 0.0;
  double max_violation = 0.0;  // max(-g, 0) over stages
  double max_defect = 0.0;
  bool converged = false;
  bool max_iterations_reached = false;
  bool warm_start_reset = false;  // the warm start could not be rolled out
  bool kept_shifted = false;      // the solve did not improve on the shifted warm start
  std::vector<std::vector<Eigen::Vector3d>> predicted_forces;  // [stage][primitive]
};

struct MpcSolution {
  std::vector<Eigen::Vector3d> targets;  // x_d per stage, H entries
  std::vector<Eigen::VectorXd> states;   // [q; qd] per stage, H + 1 entries
  MpcDiagnostics diagnostics;
};

/// Multiple-shooting MPC over the impedance rest position. The primitives
/// carry the current parameter estimate; they are held constant over the
/// horizon. `warm` is the previous solution, shifted by one stage before use.
/// Throws SolverFailure when neither the warm start nor the hold-position start
/// can be rolled out.
MpcSolution mpc_solve(const MpcConfig& cfg, const Eigen::VectorXd& state, const RobotModel& model,
                      const std::vector<ContactPrimitive>& prims, const ImpedanceLaw& law,
                      const MpcSolution* warm = nullptr);

/// Stateful receding-horizon wrapper that keeps the warm start between ticks.
class MpcController {
 public:
  MpcController(RobotModel model, MpcConfig cfg, ImpedanceLaw law);

  const MpcSolution& solve(const Eigen::VectorXd& state, const std::vector<ContactPrimitive>& prims);
  void reset() { previous_.reset(); }
  const MpcConfig& config() const { return cfg_; }
  const ImpedanceLaw& law() const { return law_; }

 private:
  RobotModel model_;
  MpcConfig cfg_;
  ImpedanceLaw law_;
  std::optional<MpcSolution> previous_;
};

}  // namespace dcm
