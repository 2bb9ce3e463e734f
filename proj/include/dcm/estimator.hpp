#pragma once

#include "dcm/diffdyn.hpp"

namespace dcm {

/// Gaussian belief over xi = [q; qd; phi_est].
struct Belief {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  double time = 0.0;
};

/// Diagonal process and measurement noise. Q = diag(q_pos, q_vel, q_param),
/// R = diag(r_pos[, r_torque]).
struct NoiseConfig {
  Eigen::VectorXd q_pos;
  Eigen::VectorXd q_vel;
  Eigen::VectorXd q_param;
  Eigen::VectorXd r_pos;
  Eigen::VectorXd r_torque;

  /// Q_q = 1e-1, Q_qd = 1e4, R_q = 5e-2, R_tau = 5; parameter random walk per
  /// block kind: stiffness 1e2, attachment 1e-6, rest position 1e-6.
  static NoiseConfig defaults(int dof, const ParamLayout& layout);
  Eigen::MatrixXd process(int dof, int param_dim) const;
  /// Throws ConfigError unless every entry is positive and sized for (dof, param_dim).
  void validate(int dof, int param_dim) const;
};

enum class ObservationMode { kPosition, kPositionTorque };

/// y = [q_m] or y = [q_m; tau_ext_m], where tau_ext_m is a measured external
/// joint torque modelled as tau_e(q, phi).
struct ObservationModel {
  ObservationMode mode = ObservationMode::kPosition;
  // The torque rows carry D_phi tau_e only when this is set; otherwise the
  // parameter block of C_tau is zero.
  bool include_parameter_torque_jacobian = false;

  int measurement_dim(int dof) const { return mode == ObservationMode::kPosition ? dof : 2 * dof; }
  /// Predicted measurement h(xi) and its observation matrix C.
  std::pair<Eigen::VectorXd, Eigen::MatrixXd> observe(const CoupledDynamics& dyn, const Eigen::VectorXd& xi) const;
  Eigen::MatrixXd noise(const NoiseConfig& cfg, int dof) const;
};

struct EkfOptions {
  bool joseph_form = false;
};

/// One predict/update cycle:
///   Sigma_bar = A Sigma A^T + Q
///   L = Sigma_bar C^T (C Sigma_bar C^T + R)^-1
///   mu+ = f(mu, tau_m) + L (y - h(f(mu, tau_m)))
///   Sigma+ = (I - L C) Sigma_bar   (symmetrized)
/// For position-only observations the mean update equals L y + (I - L C) f.
/// Throws SingularInnovation or SingularInertia.
Belief ekf_step(const Belief& belief, const Eigen::VectorXd& y, const Eigen::VectorXd& tau_m, const NoiseConfig& cfg,
                const ObservationModel& obs, const CoupledDynamics& dyn, const EkfOptions& options = {});

/// Initial belief: diagonal covariance with position, velocity and parameter variances.
Belief initial_belief(const CoupledDynamics& dyn, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                      double pos_var = 1e-4, double vel_var = 1e-2,
                      const Eigen::VectorXd& param_var = Eigen::VectorXd());

inline constexpr double kRankThreshold = 1e-8;

struct ObservabilityReport {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd singular_values;
  int rank = 0;
  int block_rows = 0;
  bool full_rank() const { return rank == matrix.cols(); }
};

/// [C_q; C_q A; ...; C_q A^(k-1)] with A linearized at xi under B = 0 and
/// k = max(4, ceil(dim / n)). The rank is taken after column equilibration
/// because parameter columns carry an h^2 factor.
ObservabilityReport observability_matrix(const CoupledDynamics& dyn, const Eigen::VectorXd& xi,
                                         const Eigen::VectorXd& torque_error = Eigen::VectorXd());
ObservabilityReport observability_matrix(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                                         const Eigen::VectorXd& xi, double h);

struct SufficientConditionReport {
  Eigen::MatrixXd d_phi_tau;  // D_phi tau_e, n x 3N_e
  int rank = 0;
  bool satisfied = false;
};

/// rank(D_phi tau_e) == 3 N_e with D_phi tau_e from the derivative engine.
SufficientConditionReport sufficient_condition_check(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                                                     const ParamLayout& layout, const Eigen::VectorXd& q);

/// Closed form D_{x_o} tau_e = J_i^T diag(K_i) for one primitive.
Eigen::MatrixXd rest_position_torque_jacobian(const RobotModel& model, const ContactPrimitive& prim,
                                              const Eigen::VectorXd& q);

int numerical_rank(const Eigen::MatrixXd& m, double relative_threshold = kRankThreshold);
/// Rank after scaling every column to unit norm; columns below 1e-12 of the
/// largest column norm count as zero.
int equilibrated_rank(const Eigen::MatrixXd& m, double relative_threshold = kRankThreshold);

}  // namespace dcm
