#include "dcm/baseline.hpp"

#include "dcm/errors.hpp"

namespace dcm {

void MomentumObserverConfig::validate() const {
  if (!(gain > 0.0)) throw ConfigError("observer gain K_O must be positive");
  if (window < 1) throw ConfigError("stiffness window W must be at least 1");
}

MomentumObserver::MomentumObserver(MomentumObserverConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void MomentumObserver::reset(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  mass_ = mass_matrix(model, chain_kinematics(model, q));
  qd_ = qd;
  momentum_estimate_ = mass_ * qd;
  residual_ = Eigen::VectorXd::Zero(model.dof());
  ring_.clear();
}

const Eigen::VectorXd& MomentumObserver::step(const RobotModel& model, const Eigen::VectorXd& q,
                                              const Eigen::VectorXd& qd, const Eigen::VectorXd& torque_error,
                                              double h, const Eigen::VectorXd& contact_torque) {
  if (!(h > 0.0)) throw ConfigError("step size h must be positive");
  if (residual_.size() != model.dof()) throw ConfigError("momentum observer used before reset");
  const Eigen::MatrixXd mass = mass_matrix(model, chain_kinematics(model, q));
  switch (cfg_.form) {
    case ResidualForm::kMomentum: {
      // Over one semi-implicit step, M_t (qd+ - qd) = h (tau_err + tau_e - B qd+),
      // so p+ = M+ qd+ evolves exactly as below with r in place of tau_e.
      const Eigen::VectorXd damping_torque = model.damping().cwiseProduct(qd);
      momentum_estimate_ += (mass - mass_) * qd + h * (torque_error - damping_torque + residual_);
      residual_ = cfg_.gain * (mass * qd - momentum_estimate_);
      break;
    }
    case ResidualForm::kDisplayedContactTorque:
    case ResidualForm::kDisplayedTorqueError: {
      const bool contact = cfg_.form == ResidualForm::kDisplayedContactTorque;
      if (contact && contact_torque.size() != model.dof())
        throw ConfigError("contact-torque residual form needs the contact torque");
      const Eigen::VectorXd& tau = contact ? contact_torque : torque_error;
      residual_ = cfg_.gain * (mass_ * qd_ - h * (residual_ - tau));
      break;
    }
  }
  mass_ = mass;
  qd_ = qd;
  return residual_;
}

void MomentumObserver::record(const Eigen::Vector3d& position, const Eigen::Vector3d& force) {
  ring_.push_back({position, force});
  while (static_cast<int>(ring_.size()) > cfg_.window + 1) ring_.pop_front();
}

Eigen::VectorXd momentum_residual_step(MomentumObserver& obs, const RobotModel& model, const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& qd, const Eigen::VectorXd& torque_error, double h) {
  return obs.step(model, q, qd, torque_error, h);
}

Eigen::Vector3d residual_to_tcp_force(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& r) {
  if (r.size() != model.dof()) throw ConfigError("residual has the wrong dimension");
  const Eigen::MatrixXd Jt = jacobian(model, q).position.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jt, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() < 3 || s(2) < 1e-6) throw NearSingularJacobian("TCP position Jacobian is near singular");
  return svd.solve(r);
}

Eigen::Vector3d windowed_stiffness(const std::deque<ForceSample>& ring, int window) {
  if (window < 1) throw ConfigError("stiffness window W must be at least 1");
  if (static_cast<int>(ring.size()) < window + 1) throw ConfigError("stiffness window is not full");
  const ForceSample& newest = ring.back();
  const ForceSample& oldest = ring[ring.size() - 1 - static_cast<std::size_t>(window)];
  const Eigen::Vector3d travel = (newest.position - oldest.position).cwiseAbs().cwiseMax(kStiffnessDenominatorFloor);
  return (newest.force - oldest.force).cwiseQuotient(travel);
}

}  // namespace dcm
