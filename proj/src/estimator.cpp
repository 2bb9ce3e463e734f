#include "dcm/estimator.hpp"

#include <cmath>

#include "dcm/errors.hpp"

namespace dcm {

NoiseConfig NoiseConfig::defaults(int dof, const ParamLayout& layout) {
  NoiseConfig cfg;
  cfg.q_pos = Eigen::VectorXd::Constant(dof, 1e-1);
  cfg.q_vel = Eigen::VectorXd::Constant(dof, 1e4);
  cfg.r_pos = Eigen::VectorXd::Constant(dof, 5e-2);
  cfg.r_torque = Eigen::VectorXd::Constant(dof, 5.0);
  cfg.q_param.resize(layout.size());
  for (const auto& slot : layout.slots()) {
    const double v = slot.block == ParamBlock::kStiffness ? 1e2 : 1e-6;
    cfg.q_param.segment<3>(slot.offset).setConstant(v);
  }
  return cfg;
}

Eigen::MatrixXd NoiseConfig::process(int dof, int param_dim) const {
  Eigen::VectorXd diag(2 * dof + param_dim);
  diag << q_pos, q_vel, q_param;
  return diag.asDiagonal();
}

void NoiseConfig::validate(int dof, int param_dim) const {
  auto check = [](const Eigen::VectorXd& v, Eigen::Index size, const char* what) {
    if (v.size() != size)
      throw ConfigError(std::string("noise block ") + what + " has size " + std::to_string(v.size()) +
                        ", expected " + std::to_string(size));
    if (!(v.array() > 0.0).all()) throw ConfigError(std::string("noise block ") + what + " must be positive");
  };
  check(q_pos, dof, "Q_q");
  check(q_vel, dof, "Q_qd");
  check(q_param, param_dim, "Q_phi");
  check(r_pos, dof, "R_q");
  check(r_torque, dof, "R_tau");
}

std::pair<Eigen::VectorXd, Eigen::MatrixXd> ObservationModel::observe(const CoupledDynamics& dyn,
                                                                      const Eigen::VectorXd& xi) const {
  const int n = dyn.dof();
  const int p = dyn.param_dim();
  const int d = dyn.state_dim();
  Eigen::VectorXd predicted(measurement_dim(n));
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(measurement_dim(n), d);
  predicted.head(n) = xi.head(n);
  C.topLeftCorner(n, n).setIdentity();
  if (mode == ObservationMode::kPositionTorque) {
    Eigen::VectorXd arg(n + p);
    arg << xi.head(n), xi.tail(p);
    const auto lin = linearize_function(
        [&](const auto& x) {
          using S = typename std::decay_t<decltype(x)>::Scalar;
          const VecX<S> q = x.head(n);
          const VecX<S> phi = x.tail(p);
          return total_contact_torque(dyn.model(), dyn.layout().unpack<S>(dyn.primitives(), phi), q);
        },
        arg);
    predicted.tail(n) = lin.value;
    C.bottomLeftCorner(n, n) = lin.jacobian.leftCols(n);
    if (include_parameter_torque_jacobian) C.bottomRightCorner(n, p) = lin.jacobian.rightCols(p);
  }
  return {predicted, C};
}

Eigen::MatrixXd ObservationModel::noise(const NoiseConfig& cfg, int dof) const {
  Eigen::VectorXd diag(measurement_dim(dof));
  if (mode == ObservationMode::kPosition)
    diag = cfg.r_pos;
  else
    diag << cfg.r_pos, cfg.r_torque;
  return diag.asDiagonal();
}

Belief ekf_step(const Belief& belief, const Eigen::VectorXd& y, const Eigen::VectorXd& tau_m, const NoiseConfig& cfg,
                const ObservationModel& obs, const CoupledDynamics& dyn, const EkfOptions& options) {
  const int n = dyn.dof();
  const int p = dyn.param_dim();
  const int d = dyn.state_dim();
  if (belief.mean.size() != d) throw ConfigError("belief dimension does not match the dynamics state");
  if (y.size() != obs.measurement_dim(n)) throw ConfigError("measurement dimension does not match observation mode");

  const DiscreteStep lin = dyn.linearize(belief.mean, MotorTorque{tau_m});
  Eigen::VectorXd predicted(d);
  predicted << lin.next_q, lin.next_qd, belief.mean.tail(p);
  const Eigen::MatrixXd prior = lin.A * belief.covariance * lin.A.transpose() + cfg.process(n, p);

  const auto [expected, C] = obs.observe(dyn, predicted);
  const Eigen::MatrixXd R = obs.noise(cfg, n);
  const Eigen::MatrixXd PCt = prior * C.transpose();
  const Eigen::MatrixXd innovation_cov = C * PCt + R;
  Eigen::LLT<Eigen::MatrixXd> llt(innovation_cov);
  if (llt.info() != Eigen::Success || !innovation_cov.allFinite())
    throw SingularInnovation("innovation covariance is not positive definite");
  const Eigen::MatrixXd gain = llt.solve(PCt.transpose()).transpose();

  Belief out;
  out.time = belief.time + dyn.h();
  out.mean = predicted + gain * (y - expected);
  const Eigen::MatrixXd I_LC = Eigen::MatrixXd::Identity(d, d) - gain * C;
  if (options.joseph_form)
    out.covariance = I_LC * prior * I_LC.transpose() + gain * R * gain.transpose();
  else
    out.covariance = I_LC * prior;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
  return out;
}

Belief initial_belief(const CoupledDynamics& dyn, const Eigen::VectorXd& q, const Eigen::VectorXd& qd, double pos_var,
                      double vel_var, const Eigen::VectorXd& param_var) {
  const int n = dyn.dof();
  const int p = dyn.param_dim();
  Belief b;
  b.mean = dyn.pack_state(q, qd);
  Eigen::VectorXd diag(2 * n + p);
  diag.head(n).setConstant(pos_var);
  diag.segment(n, n).setConstant(vel_var);
  if (p > 0) {
    if (param_var.size() != p) throw ConfigError("initial parameter variance has the wrong size");
    diag.tail(p) = param_var;
  }
  b.covariance = diag.asDiagonal();
  return b;
}

int numerical_rank(const Eigen::MatrixXd& m, double relative_threshold) {
  if (m.size() == 0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const Eigen::VectorXd& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  return static_cast<int>((s.array() > relative_threshold * s(0)).count());
}

int equilibrated_rank(const Eigen::MatrixXd& m, double relative_threshold) {
  if (m.size() == 0) return 0;
  const Eigen::VectorXd norms = m.colwise().norm();
  const double largest = norms.maxCoeff();
  if (largest == 0.0) return 0;
  Eigen::MatrixXd scaled = Eigen::MatrixXd::Zero(m.rows(), m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    if (norms(j) > 1e-12 * largest) scaled.col(j) = m.col(j) / norms(j);
  return numerical_rank(scaled, relative_threshold);
}

ObservabilityReport observability_matrix(const CoupledDynamics& dyn, const Eigen::VectorXd& xi,
                                         const Eigen::VectorXd& torque_error) {
  const int n = dyn.dof();
  const int d = dyn.state_dim();
  const CoupledDynamics undamped(dyn.model().with_damping(Eigen::VectorXd::Zero(n)), dyn.primitives(), dyn.layout(),
                                 dyn.h());
  const Eigen::VectorXd tau = torque_error.size() == n ? torque_error : Eigen::VectorXd::Zero(n);
  const Eigen::MatrixXd A = undamped.linearize(xi, TorqueError{tau}).A;

  ObservabilityReport report;
  report.block_rows = std::max(4, (d + n - 1) / n);
  report.matrix.resize(report.block_rows * n, d);
  Eigen::MatrixXd row = Eigen::MatrixXd::Zero(n, d);
  row.leftCols(n).setIdentity();
  for (int k = 0; k < report.block_rows; ++k) {
    report.matrix.middleRows(k * n, n) = row;
    row = row * A;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(report.matrix);
  report.singular_values = svd.singularValues();
  report.rank = equilibrated_rank(report.matrix);
  return report;
}

ObservabilityReport observability_matrix(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                                         const Eigen::VectorXd& xi, double h) {
  return observability_matrix(CoupledDynamics(model, prims, h), xi);
}

SufficientConditionReport sufficient_condition_check(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                                                     const ParamLayout& layout, const Eigen::VectorXd& q) {
  const auto lin = linearize_function(
      [&](const auto& phi) {
        using S = typename std::decay_t<decltype(phi)>::Scalar;
        const VecX<S> qs = q.template cast<S>();
        return total_contact_torque(model, layout.unpack<S>(prims, phi), qs);
      },
      layout.pack(prims));
  SufficientConditionReport report;
  report.d_phi_tau = lin.jacobian;
  report.rank = numerical_rank(lin.jacobian);
  report.satisfied = report.rank == layout.size();
  return report;
}

Eigen::MatrixXd rest_position_torque_jacobian(const RobotModel& model, const ContactPrimitive& prim,
                                              const Eigen::VectorXd& q) {
  return contact_jacobian(model, prim, q).transpose() * prim.stiffness.asDiagonal();
}

}  // namespace dcm
