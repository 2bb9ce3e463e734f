#pragma once

#include <functional>
#include <vector>

#include "dcm/estimator.hpp"

namespace dcm {

struct MinimizeOptions {
  double gradient_tol = 1e-8;
  double step_tol = 1e-10;
  int max_iterations = 200;
};

/// objective(x) = ||r(x)||^2 + sum_j l1_weights_j |x_j| + constant
struct LeastSquaresProblem {
  int dim = 0;
  /// Fills the residual and, when `jacobian` is non-null, its Jacobian.
  std::function<void(const Eigen::VectorXd& x, Eigen::VectorXd& residual, Eigen::MatrixXd* jacobian)> residuals;
  Eigen::VectorXd l1_weights;  // empty: no L1 term
  double constant = 0.0;

  double objective(const Eigen::VectorXd& x) const;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  double gradient_norm = 0.0;  // minimum-norm subgradient
  int iterations = 0;
  bool converged = false;
};

/// Levenberg-Marquardt on the least-squares part with the L1 term handled
/// exactly inside each damped subproblem (coordinate descent with soft
/// thresholding). Never accepts a step that increases the objective. Throws
/// DivergedFit if the objective is non-finite at the start.
MinimizeResult gradient_minimize(const LeastSquaresProblem& problem, const Eigen::VectorXd& init,
                                 const MinimizeOptions& options = {});

struct FitConfig {
  double beta_stiffness = 1e-9;  // L1 weight on K
  double beta_attachment = 5.0;  // weight on |x|^2
  double rest_pull = 0.5;        // weight on |x_w - x_o|^2 per step
  int max_em_iterations = 8;
  double em_tolerance = 1e-8;  // relative objective decrease that ends EM
  MinimizeOptions optimizer;
  ObservationModel observation;  // E-step observation model
  NoiseConfig noise;             // E-step noise; empty means defaults
};

/// State means and applied motor torques for one trajectory.
struct FitData {
  std::vector<Eigen::VectorXd> means;  // [q; qd] per step
  std::vector<Eigen::VectorXd> torques;
};

/// Prediction-error objective over the parameters selected by `layout`:
///   sum_t |mu_{t+1} - f(mu_t, tau_t, phi)|^2 + rest_pull sum_t |x_w,t - x_o|^2
///   + beta_K |K|_1 + beta_x |x|^2
/// Regularization covers every primitive with at least one selected block.
class FitProblem {
 public:
  FitProblem(RobotModel model, std::vector<ContactPrimitive> prims, ParamLayout layout, double h, FitData data,
             FitConfig cfg);

  double objective(const Eigen::VectorXd& phi) const;
  /// Prediction part only.
  double data_term(const Eigen::VectorXd& phi) const;
  double regularization(const Eigen::VectorXd& phi) const;
  LeastSquaresProblem least_squares() const;
  const ParamLayout& layout() const { return layout_; }

  /// [prediction errors; sqrt(w) rest-pull; sqrt(beta_x) x] for the fitted primitives.
  template <class S>
  VecX<S> residuals(const VecX<S>& phi) const;

 private:
  Eigen::VectorXd l1_weights() const;
  // beta_K |K|_1 of fitted primitives whose K is held fixed.
  double constant_l1() const;

  RobotModel model_;
  std::vector<ContactPrimitive> prims_;
  ParamLayout layout_;
  double h_;
  FitData data_;
  FitConfig cfg_;
  std::vector<int> fitted_prims_;
  // Per transition: chain at mu_t, (M + hB)^-1 and tau_m - C - G - B qd.
  std::vector<ChainKinematics<double>> chains_;
  std::vector<Eigen::MatrixXd> inverse_;
  std::vector<Eigen::VectorXd> free_rhs_;
};

double fit_objective(const Eigen::VectorXd& phi, const FitData& data, const RobotModel& model,
                     const std::vector<ContactPrimitive>& prims, const FitConfig& cfg, double h);

struct FitResult {
  Eigen::VectorXd phi;
  std::vector<ContactPrimitive> primitives;  // input set with phi applied
  double objective = 0.0;
  std::vector<double> objective_trace;  // after each accepted M-step
  std::vector<int> m_step_iterations;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
};

/// Joint-position and motor-torque samples at a fixed step.
struct MeasuredTrajectory {
  double h = 0.0;
  std::vector<Eigen::VectorXd> q;
  std::vector<Eigen::VectorXd> tau;
};

/// Simplified EM: alternate an EKF pass with phi fixed (E-step) and
/// gradient_minimize of the fit objective with the means held fixed (M-step).
/// Parameters are the blocks whose role is fit-offline.
FitResult em_fit(const MeasuredTrajectory& traj, const Eigen::VectorXd& init_phi, const RobotModel& model,
                 const std::vector<ContactPrimitive>& prims, const FitConfig& cfg);

/// E-step alone: EKF means and covariances over [q; qd] with the primitives fixed.
std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::MatrixXd>> filter_states(
    const MeasuredTrajectory& traj, const RobotModel& model, const std::vector<ContactPrimitive>& prims,
    const ObservationModel& obs, const NoiseConfig& noise);

/// Data-driven starting point: K from a quasi-static force/displacement slope
/// along the axis with the largest TCP travel, x = 0, x_o = mean contact point.
Eigen::VectorXd initial_fit_guess(const MeasuredTrajectory& traj, const RobotModel& model,
                                  const std::vector<ContactPrimitive>& prims, const ParamLayout& layout);

}  // namespace dcm
