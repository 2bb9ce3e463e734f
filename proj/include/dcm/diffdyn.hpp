#pragma once

#include <variant>
#include <vector>

#include "dcm/contact.hpp"
#include "dcm/robot_model.hpp"

namespace dcm {

inline constexpr double kDefaultSimulationStep = 1e-3;  // s
inline constexpr double kDefaultMpcStep = 0.03;         // s

/// Net actuation tau_m - C - G, supplied directly.
struct TorqueError {
  Eigen::VectorXd value;
};
/// Motor torque tau_m; C and G are evaluated at the state being stepped, so
/// their state dependence enters the linearization.
struct MotorTorque {
  Eigen::VectorXd value;
};
using TorqueInput = std::variant<TorqueError, MotorTorque>;

/// One evaluation of the discretized dynamics. A, b and the impulse Jacobians
/// are only populated by linearize().
struct DiscreteStep {
  Eigen::VectorXd next_q;
  Eigen::VectorXd next_qd;
  Eigen::VectorXd impulse;  // delta, rad/s^2
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::MatrixXd d_impulse_dq;
  Eigen::MatrixXd d_impulse_dphi;
};

template <class S>
struct StepValues {
  VecX<S> q;
  VecX<S> qd;
  VecX<S> impulse;
};

/// Semi-implicit Euler step with implicit joint damping:
///   delta = (M + hB)^-1 (tau_err + tau_e - B qd)
///   qd+ = qd + h delta,  q+ = q + h qd+
/// Throws SingularInertia if M + hB is not positive definite.
template <class S>
StepValues<S> semi_implicit_step(const RobotModel& model, const ChainKinematics<S>& chain,
                                 const std::vector<BasicContactPrimitive<S>>& prims, const VecX<S>& q,
                                 const VecX<S>& qd, const VecX<S>& torque_error, double h);

/// Robot, contact primitive set, online-parameter layout and step size. The
/// state is xi = [q; qd; phi_est] with phi_est packed per `layout()`.
class CoupledDynamics {
 public:
  /// Layout selects every block whose role is estimate-online.
  CoupledDynamics(RobotModel model, std::vector<ContactPrimitive> prims, double h);
  CoupledDynamics(RobotModel model, std::vector<ContactPrimitive> prims, ParamLayout layout, double h);

  const RobotModel& model() const { return model_; }
  const std::vector<ContactPrimitive>& primitives() const { return prims_; }
  const ParamLayout& layout() const { return layout_; }
  double h() const { return h_; }
  int dof() const { return model_.dof(); }
  int param_dim() const { return layout_.size(); }
  int state_dim() const { return 2 * dof() + param_dim(); }

  Eigen::VectorXd pack_state(const Eigen::VectorXd& q, const Eigen::VectorXd& qd) const;
  /// Stored primitives with the estimated blocks replaced from xi.
  std::vector<ContactPrimitive> primitives_at(const Eigen::VectorXd& xi) const;
  CoupledDynamics with_primitives(std::vector<ContactPrimitive> prims) const;

  /// [q+; qd+; phi; delta] for scalar type S.
  template <class S>
  VecX<S> transition(const VecX<S>& xi, const TorqueInput& input) const;

  /// Values only, primitives as stored.
  DiscreteStep step(const Eigen::VectorXd& q, const Eigen::VectorXd& qd, const TorqueInput& input) const;
  /// xi -> xi+, parameter block passed through unchanged.
  Eigen::VectorXd step_nonlinear(const Eigen::VectorXd& xi, const TorqueInput& input) const;
  /// A = D_xi f, b = f(xi) - A xi, plus D_q delta and D_phi delta.
  DiscreteStep linearize(const Eigen::VectorXd& xi, const TorqueInput& input) const;

 private:
  RobotModel model_;
  std::vector<ContactPrimitive> prims_;
  ParamLayout layout_;
  double h_;
};

DiscreteStep step(const RobotModel& model, const std::vector<ContactPrimitive>& prims, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& qd, const Eigen::VectorXd& torque_error, double h);
Eigen::VectorXd step_nonlinear(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                               const Eigen::VectorXd& xi, const Eigen::VectorXd& torque_error, double h);
DiscreteStep linearize(const RobotModel& model, const std::vector<ContactPrimitive>& prims, const Eigen::VectorXd& xi,
                       const Eigen::VectorXd& torque_error, double h);

/// || (I + h M^-1 B)^-1 - (I - h (M + hB)^-1 B) ||_inf, both sides evaluated directly.
double matrix_identity_check(const Eigen::MatrixXd& M, const Eigen::MatrixXd& B, double h);

}  // namespace dcm
