#include "dcm/robot_model.hpp"

#include <cmath>

#include "dcm/errors.hpp"

namespace dcm {

namespace {

Eigen::Matrix3d rotation_about(const Eigen::Vector3d& axis, double angle) {
  return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

template <class S>
Mat3<S> rodrigues(const Eigen::Vector3d& axis, const S& angle) {
  const Mat3<S> k = skew<double>(axis).cast<S>();
  using std::cos;
  using std::sin;
  return Mat3<S>::Identity() + sin(angle) * k + (S(1.0) - cos(angle)) * (k * k);
}

void validate_link(const Link& link, std::size_t index) {
  const std::string where = "link " + std::to_string(index) + ": ";
  if (!(link.mass > 0.0)) throw ConfigError(where + "mass must be positive");
  if ((link.inertia - link.inertia.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw ConfigError(where + "inertia tensor is not symmetric");
  Eigen::LLT<Eigen::Matrix3d> llt(link.inertia);
  if (llt.info() != Eigen::Success) throw ConfigError(where + "inertia tensor is not positive definite");
  if (std::abs(link.axis.norm() - 1.0) > 1e-9) throw ConfigError(where + "joint axis must be a unit vector");
}

}  // namespace

RigidTransform RigidTransform::from_xyz_rpy(const Eigen::Vector3d& xyz, const Eigen::Vector3d& rpy) {
  RigidTransform t;
  t.rotation = rotation_about(Eigen::Vector3d::UnitZ(), rpy.z()) *
               rotation_about(Eigen::Vector3d::UnitY(), rpy.y()) *
               rotation_about(Eigen::Vector3d::UnitX(), rpy.x());
  t.translation = xyz;
  return t;
}

RobotModel::RobotModel(std::string name, std::vector<Link> links, Eigen::VectorXd damping,
                       Eigen::VectorXd motor_inertia, RigidTransform tcp, Eigen::Vector3d gravity)
    : name_(std::move(name)),
      links_(std::move(links)),
      damping_(std::move(damping)),
      motor_inertia_(std::move(motor_inertia)),
      tcp_(tcp),
      gravity_(gravity) {
  if (links_.empty()) throw ConfigError("robot must have at least one link");
  for (std::size_t i = 0; i < links_.size(); ++i) validate_link(links_[i], i);
  if (damping_.size() != dof()) throw ConfigError("damping vector length must equal the number of links");
  if (motor_inertia_.size() != dof())
    throw ConfigError("motor_inertia vector length must equal the number of links");
  if ((damping_.array() < 0.0).any()) throw ConfigError("damping entries must be non-negative");
  if ((motor_inertia_.array() < 0.0).any()) throw ConfigError("motor inertia entries must be non-negative");
}

RobotModel RobotModel::with_gravity(const Eigen::Vector3d& g) const {
  RobotModel copy = *this;
  copy.gravity_ = g;
  return copy;
}

RobotModel RobotModel::with_damping(const Eigen::VectorXd& b) const {
  return RobotModel(name_, links_, b, motor_inertia_, tcp_, gravity_);
}

RobotModel RobotModel::planar3() {
  auto rod = [](double mass, double length, double offset) {
    Link l;
    l.mass = mass;
    l.com = Eigen::Vector3d(length / 2.0, 0.0, 0.0);
    const double transverse = mass * length * length / 12.0;
    l.inertia = Eigen::Vector3d(1e-3 * mass, transverse, transverse).asDiagonal();
    l.axis = Eigen::Vector3d::UnitZ();
    l.offset.translation = Eigen::Vector3d(offset, 0.0, 0.0);
    return l;
  };
  std::vector<Link> links = {rod(2.0, 0.5, 0.0), rod(1.5, 0.4, 0.5), rod(0.8, 0.3, 0.4)};
  RigidTransform tcp;
  tcp.translation = Eigen::Vector3d(0.3, 0.0, 0.0);
  return RobotModel("planar3", std::move(links), Eigen::Vector3d::Constant(0.1),
                    Eigen::Vector3d(0.05, 0.03, 0.01), tcp, Eigen::Vector3d(0.0, -9.81, 0.0));
}

RobotModel RobotModel::arm6() {
  auto link = [](double mass, Eigen::Vector3d com, Eigen::Vector3d inertia, Eigen::Vector3d axis,
                 Eigen::Vector3d offset) {
    Link l;
    l.mass = mass;
    l.com = com;
    l.inertia = inertia.asDiagonal();
    l.axis = axis;
    l.offset.translation = offset;
    return l;
  };
  const Eigen::Vector3d x = Eigen::Vector3d::UnitX(), y = Eigen::Vector3d::UnitY(),
                        z = Eigen::Vector3d::UnitZ();
  std::vector<Link> links = {
      link(4.0, {0.0, 0.0, 0.05}, {0.020, 0.020, 0.015}, z, {0.0, 0.0, 0.15}),
      link(8.0, {0.20, 0.0, 0.0}, {0.020, 0.120, 0.120}, y, {0.0, 0.0, 0.10}),
      link(4.0, {0.18, 0.0, 0.0}, {0.008, 0.050, 0.050}, y, {0.40, 0.0, 0.0}),
      link(1.2, {0.02, 0.0, 0.0}, {0.002, 0.002, 0.002}, x, {0.38, 0.0, 0.0}),
      link(1.0, {0.02, 0.0, 0.0}, {0.0015, 0.0015, 0.0015}, y, {0.06, 0.0, 0.0}),
      link(0.5, {0.03, 0.0, 0.0}, {0.0008, 0.0008, 0.0008}, x, {0.06, 0.0, 0.0}),
  };
  RigidTransform tcp;
  tcp.translation = Eigen::Vector3d(0.10, 0.0, 0.0);
  Eigen::VectorXd damping = Eigen::VectorXd::Constant(6, 0.2);
  Eigen::VectorXd motor(6);
  motor << 1.0, 1.0, 0.5, 0.08, 0.08, 0.08;
  return RobotModel("arm6", std::move(links), damping, motor, tcp);
}

RobotModel RobotModel::builtin(const std::string& name) {
  if (name == "planar3") return planar3();
  if (name == "arm6") return arm6();
  throw ConfigError("unknown built-in robot '" + name + "' (valid: planar3, arm6)");
}

template <class S>
ChainKinematics<S> chain_kinematics(const RobotModel& model, const VecX<S>& q) {
  const int n = model.dof();
  ChainKinematics<S> chain;
  chain.rotation.reserve(n);
  chain.origin.reserve(n);
  chain.axis.reserve(n);
  Mat3<S> rot = Mat3<S>::Identity();
  Vec3<S> pos = Vec3<S>::Zero();
  for (int i = 0; i < n; ++i) {
    const Link& link = model.links()[i];
    pos += rot * link.offset.translation.cast<S>();
    rot = rot * link.offset.rotation.cast<S>();
    chain.axis.push_back(rot * link.axis.cast<S>());
    rot = rot * rodrigues(link.axis, q(i));
    chain.origin.push_back(pos);
    chain.rotation.push_back(rot);
  }
  chain.tcp.position = pos + rot * model.tcp().translation.cast<S>();
  chain.tcp.rotation = rot * model.tcp().rotation.cast<S>();
  return chain;
}

template <class S>
Pose<S> forward_kinematics(const RobotModel& model, const VecX<S>& q) {
  return chain_kinematics(model, q).tcp;
}

template <class S>
MatX<S> point_jacobian(const ChainKinematics<S>& chain, const Vec3<S>& point) {
  const int n = static_cast<int>(chain.axis.size());
  MatX<S> jac(3, n);
  for (int j = 0; j < n; ++j) jac.col(j) = chain.axis[j].cross(point - chain.origin[j]);
  return jac;
}

template <class S>
Jacobian<S> jacobian(const RobotModel& model, const VecX<S>& q) {
  const ChainKinematics<S> chain = chain_kinematics(model, q);
  const int n = model.dof();
  Jacobian<S> out;
  out.position = point_jacobian(chain, chain.tcp.position);
  out.full.resize(6, n);
  for (int j = 0; j < n; ++j) {
    out.full.template block<3, 1>(0, j) = out.position.col(j);
    out.full.template block<3, 1>(3, j) = chain.axis[j];
  }
  return out;
}

template <class S>
MatX<S> mass_matrix(const RobotModel& model, const ChainKinematics<S>& chain) {
  using Mat6 = Eigen::Matrix<S, 6, 6>;
  using Vec6 = Eigen::Matrix<S, 6, 1>;
  const int n = model.dof();
  std::vector<Vec6> motion(n);
  for (int j = 0; j < n; ++j) {
    motion[j].template head<3>() = chain.axis[j];
    motion[j].template tail<3>() = chain.origin[j].cross(chain.axis[j]);
  }
  MatX<S> M = MatX<S>::Zero(n, n);
  Mat6 composite = Mat6::Zero();
  for (int j = n - 1; j >= 0; --j) {
    // Spatial inertia of link j about the world origin, twist ordering (w, v_O).
    const Link& link = model.links()[j];
    const Mat3<S>& R = chain.rotation[j];
    const Vec3<S> c = chain.origin[j] + R * link.com.cast<S>();
    const Mat3<S> cx = skew(c);
    const S m(link.mass);
    const Mat3<S> inertia = R * link.inertia.cast<S>() * R.transpose();
    composite.template block<3, 3>(0, 0) += inertia - m * cx * cx;
    composite.template block<3, 3>(0, 3) += m * cx;
    composite.template block<3, 3>(3, 0) -= m * cx;
    composite.template block<3, 3>(3, 3) += m * Mat3<S>::Identity();

    const Vec6 force = composite * motion[j];
    for (int i = 0; i <= j; ++i) {
      M(i, j) = motion[i].dot(force);
      M(j, i) = M(i, j);
    }
    M(j, j) += S(model.motor_inertia()(j));
  }
  return M;
}

template <class S>
VecX<S> inverse_dynamics(const RobotModel& model, const ChainKinematics<S>& chain, const VecX<S>& qd,
                         const VecX<S>& qdd, bool with_gravity) {
  const int n = model.dof();
  std::vector<Vec3<S>> force(n), moment(n), com_offset(n);
  Vec3<S> omega = Vec3<S>::Zero(), omega_dot = Vec3<S>::Zero();
  Vec3<S> prev_origin = Vec3<S>::Zero();
  Vec3<S> accel = with_gravity ? Vec3<S>(-model.gravity().cast<S>()) : Vec3<S>::Zero();
  for (int i = 0; i < n; ++i) {
    const Link& link = model.links()[i];
    const Vec3<S> hop = chain.origin[i] - prev_origin;
    accel += omega_dot.cross(hop) + omega.cross(omega.cross(hop));
    const Vec3<S> spin = chain.axis[i] * qd(i);
    omega_dot += chain.axis[i] * qdd(i) + omega.cross(spin);
    omega += spin;
    prev_origin = chain.origin[i];

    const Mat3<S>& R = chain.rotation[i];
    const Vec3<S> r = R * link.com.cast<S>();
    const Vec3<S> accel_com = accel + omega_dot.cross(r) + omega.cross(omega.cross(r));
    const Mat3<S> inertia = R * link.inertia.cast<S>() * R.transpose();
    force[i] = S(link.mass) * accel_com;
    moment[i] = inertia * omega_dot + omega.cross(inertia * omega);
    com_offset[i] = r;
  }
  VecX<S> tau(n);
  Vec3<S> f_child = Vec3<S>::Zero(), n_child = Vec3<S>::Zero();
  for (int i = n - 1; i >= 0; --i) {
    Vec3<S> n_total = moment[i] + com_offset[i].cross(force[i]) + n_child;
    if (i + 1 < n) n_total += (chain.origin[i + 1] - chain.origin[i]).cross(f_child);
    f_child = force[i] + f_child;
    n_child = n_total;
    tau(i) = chain.axis[i].dot(n_total);
  }
  return tau;
}

template <class S>
DynamicsTerms<S> dynamics_terms(const RobotModel& model, const VecX<S>& q, const VecX<S>& qd) {
  const ChainKinematics<S> chain = chain_kinematics(model, q);
  const int n = model.dof();
  const VecX<S> zero = VecX<S>::Zero(n);
  DynamicsTerms<S> out;
  out.M = mass_matrix(model, chain);
  out.G = inverse_dynamics(model, chain, zero, zero, true);
  out.C = inverse_dynamics(model, chain, qd, zero, false);
  return out;
}

template <class S>
VecX<S> torque_error(const RobotModel& model, const VecX<S>& q, const VecX<S>& qd, const VecX<S>& tau_m) {
  const ChainKinematics<S> chain = chain_kinematics(model, q);
  const VecX<S> zero = VecX<S>::Zero(model.dof());
  return tau_m - inverse_dynamics(model, chain, qd, zero, true);
}

double potential_energy(const RobotModel& model, const Eigen::VectorXd& q) {
  const ChainKinematics<double> chain = chain_kinematics(model, q);
  double v = 0.0;
  for (int i = 0; i < model.dof(); ++i) {
    const Link& link = model.links()[i];
    const Eigen::Vector3d c = chain.origin[i] + chain.rotation[i] * link.com;
    v -= link.mass * model.gravity().dot(c);
  }
  return v;
}

#define DCM_INSTANTIATE(S)                                                                          \
  template ChainKinematics<S> chain_kinematics<S>(const RobotModel&, const VecX<S>&);              \
  template Pose<S> forward_kinematics<S>(const RobotModel&, const VecX<S>&);                       \
  template MatX<S> point_jacobian<S>(const ChainKinematics<S>&, const Vec3<S>&);                   \
  template Jacobian<S> jacobian<S>(const RobotModel&, const VecX<S>&);                             \
  template MatX<S> mass_matrix<S>(const RobotModel&, const ChainKinematics<S>&);                   \
  template VecX<S> inverse_dynamics<S>(const RobotModel&, const ChainKinematics<S>&, const VecX<S>&, \
                                       const VecX<S>&, bool);                                      \
  template DynamicsTerms<S> dynamics_terms<S>(const RobotModel&, const VecX<S>&, const VecX<S>&);  \
  template VecX<S> torque_error<S>(const RobotModel&, const VecX<S>&, const VecX<S>&, const VecX<S>&);

DCM_INSTANTIATE(double)
DCM_INSTANTIATE(Dual)

#undef DCM_INSTANTIATE

}  // namespace dcm
