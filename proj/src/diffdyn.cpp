#include "dcm/diffdyn.hpp"

#include "dcm/errors.hpp"

namespace dcm {

namespace {

// Dense Cholesky solve written out by hand: Eigen's triangular solvers skip
// right-hand-side entries that compare equal to zero, and Jet comparison looks
// only at the value, which drops derivatives carried by zero-valued entries.
template <class S>
bool cholesky_solve(MatX<S> a, VecX<S>& b) {
  using std::sqrt;
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j) {
    S d = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= a(j, k) * a(j, k);
    if (!(value_of(d) > 0.0)) return false;
    a(j, j) = sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      S v = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= a(i, k) * a(j, k);
      a(i, j) = v / a(j, j);
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index k = 0; k < i; ++k) b(i) -= a(i, k) * b(k);
    b(i) /= a(i, i);
  }
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    for (Eigen::Index k = i + 1; k < n; ++k) b(i) -= a(k, i) * b(k);
    b(i) /= a(i, i);
  }
  return true;
}

}  // namespace

template <class S>
StepValues<S> semi_implicit_step(const RobotModel& model, const ChainKinematics<S>& chain,
                                 const std::vector<BasicContactPrimitive<S>>& prims, const VecX<S>& q,
                                 const VecX<S>& qd, const VecX<S>& torque_error, double h) {
  const Eigen::VectorXd& damping = model.damping();
  MatX<S> lhs = mass_matrix(model, chain);
  VecX<S> rhs = torque_error + total_contact_torque(chain, prims);
  for (int i = 0; i < model.dof(); ++i) {
    lhs(i, i) += S(h * damping(i));
    rhs(i) -= S(damping(i)) * qd(i);
  }
  if (!cholesky_solve(lhs, rhs)) throw SingularInertia("M + hB is not positive definite");
  StepValues<S> out;
  out.impulse = rhs;
  out.qd = qd + S(h) * out.impulse;
  out.q = q + S(h) * out.qd;
  return out;
}

template StepValues<double> semi_implicit_step<double>(const RobotModel&, const ChainKinematics<double>&,
                                                       const std::vector<ContactPrimitive>&, const Eigen::VectorXd&,
                                                       const Eigen::VectorXd&, const Eigen::VectorXd&, double);
template StepValues<Dual> semi_implicit_step<Dual>(const RobotModel&, const ChainKinematics<Dual>&,
                                                   const std::vector<BasicContactPrimitive<Dual>>&, const VecX<Dual>&,
                                                   const VecX<Dual>&, const VecX<Dual>&, double);

CoupledDynamics::CoupledDynamics(RobotModel model, std::vector<ContactPrimitive> prims, double h)
    : CoupledDynamics(model, prims, ParamLayout::select(prims, ParamRole::kEstimateOnline), h) {}

CoupledDynamics::CoupledDynamics(RobotModel model, std::vector<ContactPrimitive> prims, ParamLayout layout, double h)
    : model_(std::move(model)), prims_(std::move(prims)), layout_(std::move(layout)), h_(h) {
  if (!(h_ > 0.0)) throw ConfigError("step size h must be positive");
  for (const auto& slot : layout_.slots())
    if (slot.primitive >= static_cast<int>(prims_.size()))
      throw ConfigError("parameter layout refers to a missing primitive");
}

Eigen::VectorXd CoupledDynamics::pack_state(const Eigen::VectorXd& q, const Eigen::VectorXd& qd) const {
  Eigen::VectorXd xi(state_dim());
  xi << q, qd, layout_.pack(prims_);
  return xi;
}

std::vector<ContactPrimitive> CoupledDynamics::primitives_at(const Eigen::VectorXd& xi) const {
  return layout_.unpack<double>(prims_, xi.tail(param_dim()));
}

CoupledDynamics CoupledDynamics::with_primitives(std::vector<ContactPrimitive> prims) const {
  return CoupledDynamics(model_, std::move(prims), layout_, h_);
}

template <class S>
VecX<S> CoupledDynamics::transition(const VecX<S>& xi, const TorqueInput& input) const {
  const int n = dof();
  const int p = param_dim();
  const VecX<S> q = xi.head(n);
  const VecX<S> qd = xi.segment(n, n);
  const VecX<S> phi = xi.tail(p);
  const auto prims = layout_.unpack<S>(prims_, phi);
  const ChainKinematics<S> chain = chain_kinematics(model_, q);

  VecX<S> tau_err;
  if (const auto* err = std::get_if<TorqueError>(&input)) {
    tau_err = err->value.template cast<S>();
  } else {
    const VecX<S> zero = VecX<S>::Zero(n);
    tau_err = std::get<MotorTorque>(input).value.template cast<S>() - inverse_dynamics(model_, chain, qd, zero, true);
  }
  const StepValues<S> next = semi_implicit_step(model_, chain, prims, q, qd, tau_err, h_);
  VecX<S> out(2 * n + p + n);
  out << next.q, next.qd, phi, next.impulse;
  return out;
}

template VecX<double> CoupledDynamics::transition<double>(const VecX<double>&, const TorqueInput&) const;
template VecX<Dual> CoupledDynamics::transition<Dual>(const VecX<Dual>&, const TorqueInput&) const;

DiscreteStep CoupledDynamics::step(const Eigen::VectorXd& q, const Eigen::VectorXd& qd,
                                   const TorqueInput& input) const {
  const int n = dof();
  const Eigen::VectorXd out = transition<double>(pack_state(q, qd), input);
  DiscreteStep s;
  s.next_q = out.head(n);
  s.next_qd = out.segment(n, n);
  s.impulse = out.tail(n);
  return s;
}

Eigen::VectorXd CoupledDynamics::step_nonlinear(const Eigen::VectorXd& xi, const TorqueInput& input) const {
  return transition<double>(xi, input).head(state_dim());
}

DiscreteStep CoupledDynamics::linearize(const Eigen::VectorXd& xi, const TorqueInput& input) const {
  const int n = dof();
  const int d = state_dim();
  const FunctionLinearization lin =
      linearize_function([&](const auto& x) { return transition(x, input); }, xi);
  DiscreteStep s;
  s.next_q = lin.value.head(n);
  s.next_qd = lin.value.segment(n, n);
  s.impulse = lin.value.tail(n);
  s.A = lin.jacobian.topRows(d);
  s.b = lin.value.head(d) - s.A * xi;
  s.d_impulse_dq = lin.jacobian.bottomRows(n).leftCols(n);
  s.d_impulse_dphi = lin.jacobian.bottomRows(n).middleCols(2 * n, param_dim());
  return s;
}

DiscreteStep step(const RobotModel& model, const std::vector<ContactPrimitive>& prims, const Eigen::VectorXd& q,
                  const Eigen::VectorXd& qd, const Eigen::VectorXd& torque_error, double h) {
  return CoupledDynamics(model, prims, ParamLayout{}, h).step(q, qd, TorqueError{torque_error});
}

Eigen::VectorXd step_nonlinear(const RobotModel& model, const std::vector<ContactPrimitive>& prims,
                               const Eigen::VectorXd& xi, const Eigen::VectorXd& torque_error, double h) {
  return CoupledDynamics(model, prims, h).step_nonlinear(xi, TorqueError{torque_error});
}

DiscreteStep linearize(const RobotModel& model, const std::vector<ContactPrimitive>& prims, const Eigen::VectorXd& xi,
                       const Eigen::VectorXd& torque_error, double h) {
  return CoupledDynamics(model, prims, h).linearize(xi, TorqueError{torque_error});
}

double matrix_identity_check(const Eigen::MatrixXd& M, const Eigen::MatrixXd& B, double h) {
  const Eigen::Index n = M.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd lhs = (I + h * M.llt().solve(B)).partialPivLu().inverse();
  const Eigen::MatrixXd rhs = I - h * (M + h * B).partialPivLu().solve(B);
  return (lhs - rhs).cwiseAbs().rowwise().sum().maxCoeff();
}

}  // namespace dcm
