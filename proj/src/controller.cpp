#include "dcm/controller.hpp"

#include <algorithm>
#include <cmath>
#include <utility>
#include <limits>

#include "dcm/diffdyn.hpp"
#include "dcm/errors.hpp"

namespace dcm {

void ImpedanceLaw::validate() const {
  if (!(stiffness.array() >= 0.0).all() || !(damping.array() >= 0.0).all())
    throw ConfigError("impedance gains must be non-negative");
  if (!target.allFinite()) throw ConfigError("impedance rest position must be finite");
}

Eigen::VectorXd impedance_torque(const RobotModel& model, const ImpedanceLaw& law, const Eigen::VectorXd& q,
                                 const Eigen::VectorXd& qd) {
  const Eigen::Vector3d target = law.target;
  return impedance_torque<double>(chain_kinematics(model, q), law, qd, target);
}

Eigen::Vector3d balancing_target(const ImpedanceLaw& law, const Eigen::Vector3d& p, const Eigen::Vector3d& tcp_force) {
  Eigen::Vector3d target = p;
  for (int k = 0; k < 3; ++k)
    if (law.stiffness(k) > 0.0) target(k) -= tcp_force(k) / law.stiffness(k);
  return target;
}

void MpcConfig::validate() const {
  if (horizon < 1) throw ConfigError("MPC horizon must be at least 1");
  if (!(h > 0.0)) throw ConfigError("MPC step must be positive");
  if (!(force_limit > 0.0)) throw ConfigError("impedance force limit must be positive");
  if (velocity_weight < 0.0 || force_weight < 0.0) throw ConfigError("MPC weights must be non-negative");
  if (max_sqp_iterations < 1) throw ConfigError("MPC needs at least one SQP iteration");
  if (penalty_schedule.empty()) throw ConfigError("MPC penalty schedule is empty");
  for (double rho : penalty_schedule)
    if (!(rho > 0.0)) throw ConfigError("MPC penalty weights must be positive");
  if (!target.allFinite()) throw ConfigError("MPC target must be finite");
  if (!(tolerance >= 0.0) || !(merit_tolerance >= 0.0) || !(constraint_tolerance >= 0.0)) throw ConfigError("MPC tolerances must be non-negative");
}

namespace {

template <class S>
S safe_norm(const Vec3<S>& v) {
  using std::sqrt;
  const S sq = v.squaredNorm();
  if (value_of(sq) < 1e-24) return S(0.0);
  return sqrt(sq);
}

std::vector<Eigen::Vector3d> force_targets(const MpcConfig& cfg, const std::vector<ContactPrimitive>& prims) {
  std::vector<Eigen::Vector3d> out;
  for (const auto& prim : prims) {
    const auto normal = contact_normal(prim);
    out.push_back(normal ? Eigen::Vector3d(cfg.desired_force * *normal) : Eigen::Vector3d::Zero());
  }
  return out;
}

class ShootingProblem {
 public:
  ShootingProblem(const RobotModel& model, const MpcConfig& cfg, const std::vector<ContactPrimitive>& prims,
                  const ImpedanceLaw& law)
      : model_(model), cfg_(cfg), prims_(prims), law_(law), targets_(force_targets(cfg, prims)), n_(model.dof()) {}

  int dof() const { return n_; }
  int residual_size() const { return 6 + 3 * static_cast<int>(prims_.size()); }

  // [q+; qd+; g] from z = [q; qd; x_d].
  template <class S>
  VecX<S> transition(const VecX<S>& z) const {
    const VecX<S> q = z.head(n_);
    const VecX<S> qd = z.segment(n_, n_);
    const Vec3<S> u = z.template tail<3>();
    const ChainKinematics<S> chain = chain_kinematics(model_, q);
    std::vector<BasicContactPrimitive<S>> prims;
    for (const auto& p : prims_) prims.push_back(p.template cast<S>());
    const VecX<S> tau = impedance_torque(chain, law_, qd, u);
    const StepValues<S> next = semi_implicit_step(model_, chain, prims, q, qd, tau, cfg_.h);
    VecX<S> out(2 * n_ + 1);
    out << next.q, next.qd,
        S(cfg_.force_limit) - safe_norm<S>(law_.stiffness.cast<S>().cwiseProduct(chain.tcp.position - u));
    return out;
  }

  template <class S>
  VecX<S> residual(const VecX<S>& x) const {
    const VecX<S> q = x.head(n_);
    const VecX<S> qd = x.tail(n_);
    const ChainKinematics<S> chain = chain_kinematics(model_, q);
    const MatX<S> Jp = point_jacobian(chain, chain.tcp.position);
    VecX<S> r(residual_size());
    r.template head<3>() = chain.tcp.position - cfg_.target.cast<S>();
    r.template segment<3>(3) = S(std::sqrt(cfg_.velocity_weight)) * (Jp * qd);
    const S root_f = S(std::sqrt(cfg_.force_weight));
    for (std::size_t i = 0; i < prims_.size(); ++i) {
      const Vec3<S> force = contact_force(prims_[i].template cast<S>(), chain.tcp);
      r.template segment<3>(6 + 3 * static_cast<Eigen::Index>(i)) = root_f * (targets_[i].cast<S>() - force);
    }
    return r;
  }

  // Spring force v = K_imp (p - x_d) and its Jacobian in z = [q; qd; x_d].
  std::pair<Eigen::Vector3d, Eigen::MatrixXd> spring_force(const Eigen::VectorXd& q, const Eigen::Vector3d& u) const {
    const ChainKinematics<double> chain = chain_kinematics(model_, q);
    const Eigen::MatrixXd Jp = point_jacobian(chain, chain.tcp.position);
    Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(3, 2 * n_ + 3);
    dv.leftCols(n_) = law_.stiffness.asDiagonal() * Jp;
    dv.rightCols(3) = -Eigen::Matrix3d(law_.stiffness.asDiagonal());
    return {law_.stiffness.cwiseProduct(chain.tcp.position - u), dv};
  }

  Eigen::VectorXd stage_input(const Eigen::VectorXd& x, const Eigen::Vector3d& u) const {
    Eigen::VectorXd z(2 * n_ + 3);
    z << x, u;
    return z;
  }

  struct Evaluation {
    double cost = 0.0;
    double penalty = 0.0;
    double defect_l1 = 0.0;
    double max_defect = 0.0;
    double max_violation = 0.0;
    double merit = 0.0;
  };

  // x has H + 1 states (x[0] fixed), u has H targets.
  Evaluation evaluate(const std::vector<Eigen::VectorXd>& x, const std::vector<Eigen::Vector3d>& u,
                      double rho) const {
    Evaluation e;
    for (std::size_t i = 0; i < u.size(); ++i) {
      const Eigen::VectorXd out = transition<double>(stage_input(x[i], u[i]));
      const Eigen::VectorXd defect = x[i + 1] - out.head(2 * n_);
      e.defect_l1 += defect.lpNorm<1>();
      e.max_defect = std::max(e.max_defect, defect.lpNorm<Eigen::Infinity>());
      const double g = out(2 * n_);
      if (g < 0.0) {
        e.penalty += rho * g * g;
        e.max_violation = std::max(e.max_violation, -g);
      }
      e.cost += residual<double>(x[i + 1]).squaredNorm();
    }
    e.merit = e.cost + e.penalty + cfg_.defect_weight * e.defect_l1;
    if (!std::isfinite(e.merit)) e.merit = std::numeric_limits<double>::infinity();
    return e;
  }

  // Forward simulation of u from x0; throws InfeasibleWarmStart on failure.
  std::vector<Eigen::VectorXd> rollout(const Eigen::VectorXd& x0, const std::vector<Eigen::Vector3d>& u) const {
    std::vector<Eigen::VectorXd> x{x0};
    try {
      for (const auto& target : u) {
        const Eigen::VectorXd out = transition<double>(stage_input(x.back(), target));
        if (!out.allFinite() || out.cwiseAbs().maxCoeff() > 1e6) throw InfeasibleWarmStart("rollout diverged");
        x.push_back(out.head(2 * n_));
      }
    } catch (const SingularInertia& e) {
      throw InfeasibleWarmStart(e.what());
    }
    return x;
  }

  std::vector<std::vector<Eigen::Vector3d>> forces(const std::vector<Eigen::VectorXd>& x) const {
    std::vector<std::vector<Eigen::Vector3d>> out;
    for (std::size_t i = 1; i < x.size(); ++i) {
      const Pose<double> pose = forward_kinematics<double>(model_, x[i].head(n_));
      std::vector<Eigen::Vector3d> stage;
      for (const auto& prim : prims_) stage.push_back(contact_force(prim, pose));
      out.push_back(std::move(stage));
    }
    return out;
  }

 private:
  const RobotModel& model_;
  const MpcConfig& cfg_;
  const std::vector<ContactPrimitive>& prims_;
  const ImpedanceLaw& law_;
  std::vector<Eigen::Vector3d> targets_;
  int n_;
};

std::vector<Eigen::Vector3d> hold_targets(const RobotModel& model, const MpcConfig& cfg,
                                          const std::vector<ContactPrimitive>& prims, const ImpedanceLaw& law,
                                          const Eigen::VectorXd& state) {
  const Pose<double> pose = forward_kinematics<double>(model, state.head(model.dof()));
  Eigen::Vector3d force = Eigen::Vector3d::Zero();
  for (const auto& prim : prims) force += contact_force(prim, pose);
  Eigen::Vector3d target = balancing_target(law, pose.position, force);
  const Eigen::Vector3d spring = law.stiffness.cwiseProduct(pose.position - target);
  const double limit = 0.999 * cfg.force_limit;
  if (spring.norm() > limit) target = pose.position - (pose.position - target) * (limit / spring.norm());
  return std::vector<Eigen::Vector3d>(static_cast<std::size_t>(cfg.horizon), target);
}

}  // namespace

double stage_cost(const RobotModel& model, const MpcConfig& cfg, const std::vector<ContactPrimitive>& prims,
                  const Eigen::VectorXd& q, const Eigen::VectorXd& qd) {
  const ImpedanceLaw law;
  const ShootingProblem problem(model, cfg, prims, law);
  Eigen::VectorXd x(2 * model.dof());
  x << q, qd;
  return problem.residual<double>(x).squaredNorm();
}

double impedance_force_constraint(const RobotModel& model, const Eigen::VectorXd& q, const Eigen::Vector3d& target,
                                  const ImpedanceLaw& law, double force_limit) {
  const Eigen::Vector3d p = forward_kinematics<double>(model, q).position;
  return force_limit - law.stiffness.cwiseProduct(p - target).norm();
}

MpcSolution mpc_solve(const MpcConfig& cfg, const Eigen::VectorXd& state, const RobotModel& model,
                      const std::vector<ContactPrimitive>& prims, const ImpedanceLaw& law, const MpcSolution* warm) {
  cfg.validate();
  law.validate();
  const int n = model.dof();
  const int H = cfg.horizon;
  if (state.size() != 2 * n || !state.allFinite()) throw ConfigError("MPC state must be a finite [q; qd]");
  const ShootingProblem problem(model, cfg, prims, law);
  const double final_rho = cfg.penalty_schedule.back();

  MpcSolution sol;
  bool have_shifted = false;
  double shifted_merit = 0.0;
  if (warm != nullptr && static_cast<int>(warm->targets.size()) == H) {
    std::vector<Eigen::Vector3d> shifted(warm->targets.begin() + 1, warm->targets.end());
    shifted.push_back(warm->targets.back());
    try {
      sol.states = problem.rollout(state, shifted);
      sol.targets = std::move(shifted);
      have_shifted = true;
      shifted_merit = problem.evaluate(sol.states, sol.targets, final_rho).merit;
    } catch (const InfeasibleWarmStart&) {
      sol.diagnostics.warm_start_reset = true;
    }
  }
  if (!have_shifted) {
    sol.targets = hold_targets(model, cfg, prims, law, state);
    try {
      sol.states = problem.rollout(state, sol.targets);
    } catch (const InfeasibleWarmStart& e) {
      throw SolverFailure(std::string("MPC hold-position start failed: ") + e.what());
    }
  }
  const MpcSolution shifted = sol;

  const int m = 3 * H;
  const int rdim = problem.residual_size();
  std::vector<Eigen::VectorXd>& x = sol.states;
  std::vector<Eigen::Vector3d>& u = sol.targets;
  bool converged = false;
  double lambda = 1e-9;
  for (double rho : cfg.penalty_schedule) {
    converged = false;
    ShootingProblem::Evaluation current = problem.evaluate(x, u, rho);
    for (int it = 0; it < cfg.max_sqp_iterations; ++it) {
      ++sol.diagnostics.iterations;
      // Condensed Gauss-Newton subproblem: dx_i = S_i du + s_i.
      Eigen::MatrixXd J(H * rdim, m);
      Eigen::VectorXd r(H * rdim);
      Eigen::MatrixXd constraint_rows = Eigen::MatrixXd::Zero(H, m);
      Eigen::MatrixXd constraint_curvature = Eigen::MatrixXd::Zero(m, m);
      Eigen::VectorXd constraint_values(H);
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(2 * n, m);
      Eigen::VectorXd s = Eigen::VectorXd::Zero(2 * n);
      std::vector<Eigen::MatrixXd> Ss{S};
      std::vector<Eigen::VectorXd> ss{s};
      for (int i = 0; i < H; ++i) {
        const FunctionLinearization stage = linearize_function(
            [&](const auto& z) { return problem.transition(z); }, problem.stage_input(x[i], u[i]));
        const Eigen::MatrixXd A = stage.jacobian.topLeftCorner(2 * n, 2 * n);
        const Eigen::MatrixXd B = stage.jacobian.topRightCorner(2 * n, 3);
        const Eigen::RowVectorXd gx = stage.jacobian.row(2 * n).head(2 * n);
        constraint_rows.row(i) = gx * S;
        constraint_rows.row(i).segment(3 * i, 3) += stage.jacobian.row(2 * n).tail(3);
        constraint_values(i) = stage.value(2 * n) + gx.dot(s);
        if (stage.value(2 * n) < 0.0) {
          // rho g D^2 g with D^2 g = -(I - v v^T / |v|^2) / |v| in spring-force
          // coordinates; positive semidefinite while g < 0.
          const auto [v, dv] = problem.spring_force(x[i].head(n), u[i]);
          Eigen::MatrixXd V = dv.leftCols(n) * S.topRows(n);
          V.middleCols(3 * i, 3) += dv.rightCols(3);
          const double norm = v.norm();
          const Eigen::Matrix3d tangent = Eigen::Matrix3d::Identity() - v * v.transpose() / (norm * norm);
          constraint_curvature.noalias() += (-stage.value(2 * n) / norm) * V.transpose() * tangent * V;
        }
        const Eigen::VectorXd defect = x[i + 1] - stage.value.head(2 * n);
        S = A * S;
        S.middleCols(3 * i, 3) += B;
        s = A * s - defect;
        Ss.push_back(S);
        ss.push_back(s);
        const FunctionLinearization res =
            linearize_function([&](const auto& v) { return problem.residual(v); }, x[i + 1]);
        J.middleRows(i * rdim, rdim) = res.jacobian * S;
        r.segment(i * rdim, rdim) = res.value + res.jacobian * s;
      }

      const Eigen::MatrixXd JtJ = J.transpose() * J;
      const Eigen::VectorXd Jtr = J.transpose() * r;
      const double diag_max = std::max(JtJ.diagonal().maxCoeff(), 1e-300);
      const Eigen::VectorXd scale = JtJ.diagonal().cwiseMax(1e-9 * diag_max);
      // The exterior penalty is piecewise quadratic; grow the set of active
      // stages until the linearized constraint holds on the inactive ones.
      const auto solve_step = [&](double damping) {
        std::vector<bool> active(static_cast<std::size_t>(H));
        for (int i = 0; i < H; ++i) active[static_cast<std::size_t>(i)] = constraint_values(i) < 0.0;
        Eigen::VectorXd du;
        for (int round = 0; round <= H; ++round) {
          Eigen::MatrixXd lhs = JtJ + rho * constraint_curvature;
          Eigen::VectorXd rhs = Jtr;
          for (int i = 0; i < H; ++i) {
            if (!active[static_cast<std::size_t>(i)]) continue;
            lhs.noalias() += rho * constraint_rows.row(i).transpose() * constraint_rows.row(i);
            rhs += rho * constraint_values(i) * constraint_rows.row(i).transpose();
          }
          lhs.diagonal() += damping * scale;
          du = -lhs.ldlt().solve(rhs);
          bool grown = false;
          const Eigen::VectorXd predicted = constraint_values + constraint_rows * du;
          for (int i = 0; i < H; ++i) {
            if (!active[static_cast<std::size_t>(i)] && predicted(i) < 0.0) {
              active[static_cast<std::size_t>(i)] = true;
              grown = true;
            }
          }
          if (!grown) break;
        }
        return du;
      };

      const double previous_merit = current.merit;
      bool accepted = false;
      double step = 0.0;
      double step_alpha = 0.0;
      while (!accepted && lambda < 1e3) {
        const Eigen::VectorXd du = solve_step(lambda);
        for (double alpha = 1.0; alpha > 1e-3; alpha *= 0.5) {
          std::vector<Eigen::VectorXd> tx = x;
          std::vector<Eigen::Vector3d> tu = u;
          for (int i = 0; i < H; ++i) {
            tu[i] += alpha * du.segment<3>(3 * i);
            tx[i + 1] += alpha * (Ss[i + 1] * du + ss[i + 1]);
          }
          ShootingProblem::Evaluation trial = problem.evaluate(tx, tu, rho);
          if (!(trial.merit < current.merit)) {
            // Second-order correction: close the defects by simulating the trial targets.
            try {
              std::vector<Eigen::VectorXd> corrected = problem.rollout(x[0], tu);
              const ShootingProblem::Evaluation eval = problem.evaluate(corrected, tu, rho);
              if (eval.merit < trial.merit) {
                tx = std::move(corrected);
                trial = eval;
              }
            } catch (const InfeasibleWarmStart&) {
            }
          }
          if (trial.merit < current.merit) {
            x = std::move(tx);
            u = std::move(tu);
            current = trial;
            step = alpha * du.lpNorm<Eigen::Infinity>();
            step_alpha = alpha;
            accepted = true;
            break;
          }
        }
        if (!accepted)
          lambda *= 100.0;
        else if (step_alpha == 1.0)
          lambda = std::max(lambda * 0.3, 1e-12);
        else
          lambda = std::max(lambda * 3.0, 1e-6);
      }
      const double decrease = previous_merit - current.merit;
      if (!accepted || step < cfg.tolerance || decrease < cfg.merit_tolerance * std::max(1.0, previous_merit)) {
        converged = current.max_defect < 1e-8;
        break;
      }
    }
  }

  ShootingProblem::Evaluation final_eval = problem.evaluate(x, u, final_rho);
  if (have_shifted && final_eval.merit > shifted_merit) {
    const int iterations = sol.diagnostics.iterations;
    sol = shifted;
    sol.diagnostics.iterations = iterations;
    sol.diagnostics.kept_shifted = true;
    final_eval = problem.evaluate(sol.states, sol.targets, final_rho);
  }
  MpcDiagnostics& d = sol.diagnostics;
  d.converged = converged && final_eval.max_violation <= cfg.constraint_tolerance;
  d.max_iterations_reached = !d.converged;
  d.cost = final_eval.cost;
  d.objective = final_eval.cost + final_eval.penalty;
  d.shifted_objective = have_shifted ? shifted_merit : final_eval.merit;
  d.max_violation = final_eval.max_violation;
  d.max_defect = final_eval.max_defect;
  d.predicted_forces = problem.forces(sol.states);
  return sol;
}

MpcController::MpcController(RobotModel model, MpcConfig cfg, ImpedanceLaw law)
    : model_(std::move(model)), cfg_(std::move(cfg)), law_(law) {
  cfg_.validate();
  law_.validate();
}

const MpcSolution& MpcController::solve(const Eigen::VectorXd& state, const std::vector<ContactPrimitive>& prims) {
  MpcSolution next = mpc_solve(cfg_, state, model_, prims, law_, previous_ ? &*previous_ : nullptr);
  previous_ = std::move(next);
  return *previous_;
}

}  // namespace dcm
