#pragma once

#include <string>
#include <vector>

#include "dcm/autodiff.hpp"
#include "dcm/types.hpp"

namespace dcm {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  /// Roll-pitch-yaw about fixed axes: R = Rz(yaw) Ry(pitch) Rx(roll).
  static RigidTransform from_xyz_rpy(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rpy);
};

/// One revolute joint and the rigid link it drives. Quantities are expressed
/// in the link frame, which is the parent frame composed with `offset` and the
/// joint rotation about `axis`.
struct Link {
  double mass = 0.0;
  Eigen::Vector3d com = Eigen::Vector3d::Zero();
  Eigen::Matrix3d inertia = Eigen::Matrix3d::Zero();  // about the COM
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  RigidTransform offset;
};

/// Immutable n-DOF serial arm. Validated at construction.
class RobotModel {
 public:
  RobotModel(std::string name, std::vector<Link> links, Eigen::VectorXd damping,
             Eigen::VectorXd motor_inertia, RigidTransform tcp,
             Eigen::Vector3d gravity = Eigen::Vector3d(0.0, 0.0, -9.81));

  int dof() const { return static_cast<int>(links_.size()); }
  const std::string& name() const { return name_; }
  const std::vector<Link>& links() const { return links_; }
  const Eigen::VectorXd& damping() const { return damping_; }
  const Eigen::VectorXd& motor_inertia() const { return motor_inertia_; }
  const RigidTransform& tcp() const { return tcp_; }
  const Eigen::Vector3d& gravity() const { return gravity_; }

  RobotModel with_gravity(const Eigen::Vector3d& g) const;
  RobotModel with_damping(const Eigen::VectorXd& b) const;

  /// Built-in 3-DOF arm moving in the world x-y plane, gravity along -y.
  static RobotModel planar3();
  /// Built-in 6-DOF spatial arm (yaw, shoulder, elbow, spherical-ish wrist).
  static RobotModel arm6();
  /// Looks up a built-in by name ("planar3", "arm6"); throws ConfigError.
  static RobotModel builtin(const std::string& name);

 private:
  std::string name_;
  std::vector<Link> links_;
  Eigen::VectorXd damping_;
  Eigen::VectorXd motor_inertia_;
  RigidTransform tcp_;
  Eigen::Vector3d gravity_;
};

template <class S>
struct Pose {
  Vec3<S> position;
  Mat3<S> rotation;
};

/// World-frame joint quantities along the chain, shared by kinematics,
/// Jacobians and the dynamics recursions.
template <class S>
struct ChainKinematics {
  std::vector<Mat3<S>> rotation;  // link frame orientation
  std::vector<Vec3<S>> origin;    // joint origin
  std::vector<Vec3<S>> axis;      // joint axis, world frame
  Pose<S> tcp;
};

template <class S>
ChainKinematics<S> chain_kinematics(const RobotModel& model, const VecX<S>& q);

template <class S>
Pose<S> forward_kinematics(const RobotModel& model, const VecX<S>& q);

template <class S>
struct Jacobian {
  MatX<S> full;      // 6 x n, rows [linear; angular]
  MatX<S> position;  // 3 x n, top rows of `full`
};

template <class S>
Jacobian<S> jacobian(const RobotModel& model, const VecX<S>& q);

/// 3 x n Jacobian of a world point rigidly attached to the last link.
template <class S>
MatX<S> point_jacobian(const ChainKinematics<S>& chain, const Vec3<S>& point);

template <class S>
struct DynamicsTerms {
  MatX<S> M;  // includes motor inertia on the diagonal
  VecX<S> C;  // Coriolis and centrifugal torque
  VecX<S> G;  // gravity torque
};

/// Composite-rigid-body inertia, including motor inertia.
template <class S>
MatX<S> mass_matrix(const RobotModel& model, const ChainKinematics<S>& chain);

/// Recursive Newton-Euler: M(q) qdd + C(q, qd) + G(q), without motor inertia
/// or damping. Gravity is applied only when `with_gravity`.
template <class S>
VecX<S> inverse_dynamics(const RobotModel& model, const ChainKinematics<S>& chain,
                         const VecX<S>& qd, const VecX<S>& qdd, bool with_gravity);

template <class S>
DynamicsTerms<S> dynamics_terms(const RobotModel& model, const VecX<S>& q, const VecX<S>& qd);

/// tau_m - C(q, qd) - G(q).
template <class S>
VecX<S> torque_error(const RobotModel& model, const VecX<S>& q, const VecX<S>& qd,
                     const VecX<S>& tau_m);

/// -sum_k m_k g . c_k, zero at the world origin.
double potential_energy(const RobotModel& model, const Eigen::VectorXd& q);

}  // namespace dcm
