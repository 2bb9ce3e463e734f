#pragma once

#include <deque>

#include "dcm/robot_model.hpp"

namespace dcm {

inline constexpr double kStiffnessDenominatorFloor = 5e-4;  // m

enum class ResidualForm {
  // Discrete generalized-momentum observer matched to the semi-implicit step.
  kMomentum,
  // r+ = K_O (M q_dot - h (r - tau)) with tau the contact torque.
  kDisplayedContactTorque,
  // Same recursion with tau the torque error tau_m - C - G.
  kDisplayedTorqueError,
};

struct MomentumObserverConfig {
  double gain = 20.0;  // K_O, 1/s
  int window = 50;     // W, steps
  ResidualForm form = ResidualForm::kMomentum;

  void validate() const;
};

struct ForceSample {
  Eigen::Vector3d position;  // TCP, world
  Eigen::Vector3d force;     // F_mo
};

/// Residual-based external torque observer with a ring of the last W + 1
/// (TCP position, TCP force) samples for the windowed stiffness estimate.
class MomentumObserver {
 public:
  explicit MomentumObserver(MomentumObserverConfig cfg = {});

  /// Starts at (q, qd) with zero residual.
  void reset(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd);

  /// Advances one step. (q, qd) is the state reached after applying the torque
  /// error `torque_error` (evaluated at the previous state) for one step h.
  /// `contact_torque` is only read by kDisplayedContactTorque.
  const Eigen::VectorXd& step(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                              const Eigen::VectorXd& torque_error, double h,
                              const Eigen::VectorXd& contact_torque = Eigen::VectorXd());

  /// Pushes (TCP position, F_mo) for the current residual; the ring keeps W + 1 samples.
  void record(const Eigen::Vector3d& position, const Eigen::Vector3d& force);

  const Eigen::VectorXd& residual() const { return residual_; }
  const std::deque<ForceSample>& ring() const { return ring_; }
  const MomentumObserverConfig& config() const { return cfg_; }
  bool window_full() const { return static_cast<int>(ring_.size()) == cfg_.window + 1; }

 private:
  MomentumObserverConfig cfg_;
  Eigen::VectorXd residual_;
  Eigen::VectorXd momentum_estimate_;
  Eigen::MatrixXd mass_;  // M at the previous state
  Eigen::VectorXd qd_;    // previous velocity
  std::deque<ForceSample> ring_;
};

/// Free-function form of MomentumObserver::step.
Eigen::VectorXd momentum_residual_step(MomentumObserver& obs, const RobotModel& model, const Eigen::VectorXd& q,
                                       const Eigen::VectorXd& qd, const Eigen::VectorXd& torque_error, double h);

/// Minimum-norm F with J_p^T F = r at the TCP. Throws NearSingularJacobian when
/// the smallest singular value of J_p is below 1e-6.
Eigen::Vector3d residual_to_tcp_force(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::VectorXd& r);

/// (F_new - F_old) / max(|x_new - x_old|, 5e-4) per axis, using the oldest and
/// newest of the last W + 1 samples. Throws ConfigError on a short ring.
Eigen::Vector3d windowed_stiffness(const std::deque<ForceSample>& ring, int window);

}  // namespace dcm
