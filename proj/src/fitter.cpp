#include "dcm/fitter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcm/errors.hpp"

namespace dcm {
namespace {

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

double l1_term(const Eigen::VectorXd& weights, const Eigen::VectorXd& x) {
  if (weights.size() == 0) return 0.0;
  return weights.cwiseProduct(x.cwiseAbs()).sum();
}

// Minimum-norm element of the subdifferential of g^T x + sum w |x|.
Eigen::VectorXd min_norm_subgradient(const Eigen::VectorXd& g, const Eigen::VectorXd& x, const Eigen::VectorXd& w) {
  Eigen::VectorXd out = g;
  if (w.size() == 0) return out;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    if (w(j) == 0.0) continue;
    if (x(j) > 0.0)
      out(j) = g(j) + w(j);
    else if (x(j) < 0.0)
      out(j) = g(j) - w(j);
    else
      out(j) = soft_threshold(g(j), w(j));
  }
  return out;
}

// argmin_d g^T d + 1/2 d^T A d + sum w |x + d|, A positive definite.
Eigen::VectorXd solve_subproblem(const Eigen::VectorXd& g, const Eigen::MatrixXd& A, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& w) {
  const Eigen::VectorXd newton = -A.ldlt().solve(g);
  if (w.size() == 0 || (w.array() == 0.0).all()) return newton;
  Eigen::VectorXd z = x + newton;
  for (int sweep = 0; sweep < 500; ++sweep) {
    double change = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double slope = g(j) + A.row(j).dot(z - x);
      const double updated = soft_threshold(z(j) - slope / A(j, j), w(j) / A(j, j));
      change = std::max(change, std::abs(updated - z(j)) / (1.0 + std::abs(z(j))));
      z(j) = updated;
    }
    if (change < 1e-15) break;
  }
  return z - x;
}

template <class S>
ChainKinematics<S> cast_chain(const ChainKinematics<double>& c) {
  ChainKinematics<S> out;
  for (const auto& r : c.rotation) out.rotation.push_back(r.cast<S>());
  for (const auto& o : c.origin) out.origin.push_back(o.cast<S>());
  for (const auto& a : c.axis) out.axis.push_back(a.cast<S>());
  out.tcp.position = c.tcp.position.cast<S>();
  out.tcp.rotation = c.tcp.rotation.cast<S>();
  return out;
}

NoiseConfig resolve_noise(const NoiseConfig& requested, int dof) {
  if (requested.q_pos.size() == 0) return NoiseConfig::defaults(dof, ParamLayout{});
  NoiseConfig out = requested;
  out.q_param.resize(0);
  return out;
}

}  // namespace

double LeastSquaresProblem::objective(const Eigen::VectorXd& x) const {
  Eigen::VectorXd r;
  residuals(x, r, nullptr);
  return r.squaredNorm() + l1_term(l1_weights, x) + constant;
}

MinimizeResult gradient_minimize(const LeastSquaresProblem& problem, const Eigen::VectorXd& init,
                                 const MinimizeOptions& options) {
  if (init.size() != problem.dim) throw ConfigError("initial point has the wrong dimension");
  const Eigen::VectorXd& w = problem.l1_weights;
  if (w.size() != 0 && w.size() != problem.dim) throw ConfigError("L1 weights have the wrong dimension");

  MinimizeResult out;
  out.x = init;
  Eigen::VectorXd r;
  Eigen::MatrixXd J;
  problem.residuals(out.x, r, &J);
  out.objective = r.squaredNorm() + l1_term(w, out.x) + problem.constant;
  if (!std::isfinite(out.objective)) throw DivergedFit("objective is not finite at the initial point");

  double lambda = 1e-3;
  Eigen::VectorXd trial_r;
  while (true) {
    const Eigen::VectorXd g = 2.0 * J.transpose() * r;
    const Eigen::MatrixXd H = 2.0 * J.transpose() * J;
    out.gradient_norm = min_norm_subgradient(g, out.x, w).norm();
    if (out.gradient_norm <= options.gradient_tol) {
      out.converged = true;
      break;
    }
    if (out.iterations >= options.max_iterations) break;

    Eigen::VectorXd scale = H.diagonal();
    const double floor = std::max(1e-12 * scale.maxCoeff(), std::numeric_limits<double>::min());
    if (scale.maxCoeff() <= 0.0) scale.setOnes();
    scale = scale.cwiseMax(floor);

    bool accepted = false;
    Eigen::VectorXd delta;
    while (lambda < 1e20) {
      Eigen::MatrixXd A = H;
      A.diagonal() += lambda * scale;
      delta = solve_subproblem(g, A, out.x, w);
      const Eigen::VectorXd trial = out.x + delta;
      problem.residuals(trial, trial_r, nullptr);
      const double trial_objective = trial_r.squaredNorm() + l1_term(w, trial) + problem.constant;
      if (std::isfinite(trial_objective) && trial_objective < out.objective) {
        out.x = trial;
        out.objective = trial_objective;
        lambda = std::max(lambda * 0.3, 1e-15);
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) break;  // no descent direction left at working precision
    ++out.iterations;
    problem.residuals(out.x, r, &J);
    if (delta.norm() <= options.step_tol * (out.x.norm() + options.step_tol)) {
      out.gradient_norm = min_norm_subgradient(2.0 * J.transpose() * r, out.x, w).norm();
      out.converged = true;
      break;
    }
  }
  return out;
}

FitProblem::FitProblem(RobotModel model, std::vector<ContactPrimitive> prims, ParamLayout layout, double h,
                       FitData data, FitConfig cfg)
    : model_(std::move(model)),
      prims_(std::move(prims)),
      layout_(std::move(layout)),
      h_(h),
      data_(std::move(data)),
      cfg_(std::move(cfg)) {
  if (!(h_ > 0.0)) throw ConfigError("step size h must be positive");
  if (data_.means.size() < 2) throw ConfigError("fit needs a trajectory of at least two samples");
  if (data_.torques.size() + 1 < data_.means.size())
    throw ConfigError("fit needs one motor torque per transition");
  if (cfg_.beta_stiffness < 0.0 || cfg_.beta_attachment < 0.0 || cfg_.rest_pull < 0.0)
    throw ConfigError("fit weights must be non-negative");
  const int n = model_.dof();
  for (const auto& mu : data_.means)
    if (mu.size() != 2 * n) throw ConfigError("state mean has the wrong dimension");
  for (const auto& slot : layout_.slots()) {
    if (slot.primitive >= static_cast<int>(prims_.size()))
      throw ConfigError("parameter layout refers to a missing primitive");
    if (std::find(fitted_prims_.begin(), fitted_prims_.end(), slot.primitive) == fitted_prims_.end())
      fitted_prims_.push_back(slot.primitive);
  }
  std::sort(fitted_prims_.begin(), fitted_prims_.end());

  const std::size_t steps = data_.means.size() - 1;
  chains_.reserve(steps);
  inverse_.reserve(steps);
  free_rhs_.reserve(steps);
  const Eigen::VectorXd& damping = model_.damping();
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::VectorXd q = data_.means[t].head(n);
    const Eigen::VectorXd qd = data_.means[t].tail(n);
    ChainKinematics<double> chain = chain_kinematics(model_, q);
    Eigen::MatrixXd lhs = mass_matrix(model_, chain);
    lhs.diagonal() += h_ * damping;
    Eigen::LLT<Eigen::MatrixXd> llt(lhs);
    if (llt.info() != Eigen::Success) throw SingularInertia("M + hB is not positive definite");
    inverse_.push_back(llt.solve(Eigen::MatrixXd::Identity(n, n)));
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd bias = inverse_dynamics(model_, chain, qd, zero, true);
    free_rhs_.push_back(data_.torques[t] - bias - damping.cwiseProduct(qd));
    chains_.push_back(std::move(chain));
  }
}

template <class S>
VecX<S> FitProblem::residuals(const VecX<S>& phi) const {
  const int n = model_.dof();
  const std::size_t steps = chains_.size();
  const auto prims = layout_.unpack<S>(prims_, phi);
  const Eigen::Index fitted = static_cast<Eigen::Index>(fitted_prims_.size());
  const Eigen::Index pred_rows = static_cast<Eigen::Index>(steps) * 2 * n;
  const Eigen::Index rest_rows = cfg_.rest_pull > 0.0 ? static_cast<Eigen::Index>(steps) * 3 * fitted : 0;
  VecX<S> r(pred_rows + rest_rows + 3 * fitted);

  const S root_pull = S(std::sqrt(cfg_.rest_pull));
  for (std::size_t t = 0; t < steps; ++t) {
    const ChainKinematics<S> chain = cast_chain<S>(chains_[t]);
    const VecX<S> tau_e = total_contact_torque(chain, prims);
    const VecX<S> impulse = inverse_[t].cast<S>() * (free_rhs_[t].cast<S>() + tau_e);
    const VecX<S> qd_next = data_.means[t].tail(n).cast<S>() + S(h_) * impulse;
    const VecX<S> q_next = data_.means[t].head(n).cast<S>() + S(h_) * qd_next;
    const Eigen::Index row = static_cast<Eigen::Index>(t) * 2 * n;
    r.segment(row, n) = data_.means[t + 1].head(n).cast<S>() - q_next;
    r.segment(row + n, n) = data_.means[t + 1].tail(n).cast<S>() - qd_next;
    if (rest_rows > 0) {
      for (Eigen::Index k = 0; k < fitted; ++k) {
        const auto& prim = prims[fitted_prims_[k]];
        const Eigen::Index at = pred_rows + (static_cast<Eigen::Index>(t) * fitted + k) * 3;
        r.template segment<3>(at) = root_pull * (contact_point_world(prim, chain.tcp) - prim.rest);
      }
    }
  }
  const S root_beta = S(std::sqrt(cfg_.beta_attachment));
  for (Eigen::Index k = 0; k < fitted; ++k)
    r.template segment<3>(pred_rows + rest_rows + 3 * k) = root_beta * prims[fitted_prims_[k]].attachment;
  return r;
}

template VecX<double> FitProblem::residuals<double>(const VecX<double>&) const;
template VecX<Dual> FitProblem::residuals<Dual>(const VecX<Dual>&) const;

Eigen::VectorXd FitProblem::l1_weights() const {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(layout_.size());
  for (const auto& slot : layout_.slots())
    if (slot.block == ParamBlock::kStiffness) w.segment<3>(slot.offset).setConstant(cfg_.beta_stiffness);
  return w;
}

double FitProblem::constant_l1() const {
  double total = 0.0;
  for (int i : fitted_prims_)
    if (!layout_.offset_of(i, ParamBlock::kStiffness)) total += cfg_.beta_stiffness * prims_[i].stiffness.lpNorm<1>();
  return total;
}

double FitProblem::objective(const Eigen::VectorXd& phi) const { return least_squares().objective(phi); }

double FitProblem::data_term(const Eigen::VectorXd& phi) const {
  const Eigen::Index rows = static_cast<Eigen::Index>(chains_.size()) * 2 * model_.dof();
  return residuals<double>(phi).head(rows).squaredNorm();
}

double FitProblem::regularization(const Eigen::VectorXd& phi) const { return objective(phi) - data_term(phi); }

LeastSquaresProblem FitProblem::least_squares() const {
  LeastSquaresProblem ls;
  ls.dim = layout_.size();
  ls.l1_weights = l1_weights();
  ls.constant = constant_l1();
  ls.residuals = [this](const Eigen::VectorXd& x, Eigen::VectorXd& r, Eigen::MatrixXd* J) {
    if (J == nullptr) {
      r = residuals<double>(x);
      return;
    }
    FunctionLinearization lin = linearize_function([this](const auto& v) { return residuals(v); }, x);
    r = std::move(lin.value);
    *J = std::move(lin.jacobian);
  };
  return ls;
}

double fit_objective(const Eigen::VectorXd& phi, const FitData& data, const RobotModel& model,
                     const std::vector<ContactPrimitive>& prims, const FitConfig& cfg, double h) {
  const ParamLayout layout = ParamLayout::select(prims, ParamRole::kFitOffline);
  return FitProblem(model, prims, layout, h, data, cfg).objective(phi);
}

std::pair<std::vector<Eigen::VectorXd>, std::vector<Eigen::MatrixXd>> filter_states(
    const MeasuredTrajectory& traj, const RobotModel& model, const std::vector<ContactPrimitive>& prims,
    const ObservationModel& obs, const NoiseConfig& noise) {
  const int n = model.dof();
  if (traj.q.size() < 2) throw ConfigError("trajectory needs at least two samples");
  const CoupledDynamics dyn(model, prims, ParamLayout{}, traj.h);
  const NoiseConfig cfg = resolve_noise(noise, n);
  cfg.validate(n, 0);
  if (obs.mode != ObservationMode::kPosition) throw ConfigError("the fit E-step uses position observations only");

  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  means.reserve(traj.q.size());
  covs.reserve(traj.q.size());
  Belief belief = initial_belief(dyn, traj.q.front(), Eigen::VectorXd::Zero(n));
  means.push_back(belief.mean);
  covs.push_back(belief.covariance);
  for (std::size_t t = 0; t + 1 < traj.q.size(); ++t) {
    belief = ekf_step(belief, traj.q[t + 1], traj.tau[t], cfg, obs, dyn);
    means.push_back(belief.mean);
    covs.push_back(belief.covariance);
  }
  return {std::move(means), std::move(covs)};
}

FitResult em_fit(const MeasuredTrajectory& traj, const Eigen::VectorXd& init_phi, const RobotModel& model,
                 const std::vector<ContactPrimitive>& prims, const FitConfig& cfg) {
  const ParamLayout layout = ParamLayout::select(prims, ParamRole::kFitOffline);
  if (layout.size() == 0) throw ConfigError("no contact parameter is marked for fitting");
  if (init_phi.size() != layout.size()) throw ConfigError("initial parameters have the wrong dimension");
  if (!init_phi.allFinite()) throw DivergedFit("initial parameters are not finite");
  if (traj.q.size() < 2 || traj.tau.size() + 1 < traj.q.size())
    throw ConfigError("trajectory needs at least two samples and one torque per transition");

  FitResult result;
  result.phi = init_phi;
  for (int k = 0; k < std::max(1, cfg.max_em_iterations); ++k) {
    auto [means, covs] = filter_states(traj, model, layout.unpack<double>(prims, result.phi), cfg.observation, cfg.noise);
    const FitProblem problem(model, prims, layout, traj.h, FitData{means, traj.tau}, cfg);
    result.means = std::move(means);
    result.covariances = std::move(covs);

    const LeastSquaresProblem ls = problem.least_squares();
    const double before = ls.objective(result.phi);
    if (!std::isfinite(before)) throw DivergedFit("fit objective is not finite");
    const MinimizeResult m = gradient_minimize(ls, result.phi, cfg.optimizer);
    if (!std::isfinite(m.objective)) throw DivergedFit("fit objective is not finite");

    if (!result.objective_trace.empty() && m.objective >= result.objective_trace.back()) break;
    const double previous = result.objective_trace.empty() ? before : result.objective_trace.back();
    result.phi = m.x;
    result.objective = m.objective;
    result.objective_trace.push_back(m.objective);
    result.m_step_iterations.push_back(m.iterations);
    if (result.objective_trace.size() > 1 && previous - m.objective < cfg.em_tolerance * std::max(1.0, std::abs(previous)))
      break;
  }
  result.primitives = layout.unpack<double>(prims, result.phi);
  return result;
}

Eigen::VectorXd initial_fit_guess(const MeasuredTrajectory& traj, const RobotModel& model,
                                  const std::vector<ContactPrimitive>& prims, const ParamLayout& layout) {
  const int n = model.dof();
  if (traj.q.empty()) throw ConfigError("trajectory is empty");
  const std::size_t stride = std::max<std::size_t>(1, traj.q.size() / 2000);
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> forces;
  for (std::size_t t = 0; t < traj.q.size() && t < traj.tau.size(); t += stride) {
    const Eigen::VectorXd& q = traj.q[t];
    const Eigen::MatrixXd Jp = jacobian(model, q).position;
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
    const Eigen::VectorXd gravity = inverse_dynamics(model, chain_kinematics(model, q), zero, zero, true);
    const Eigen::VectorXd tau_e = gravity - traj.tau[t];
    positions.push_back(forward_kinematics(model, q).position);
    forces.push_back(Jp.transpose().completeOrthogonalDecomposition().solve(tau_e));
  }
  if (positions.empty()) positions.push_back(forward_kinematics(model, traj.q.front()).position);

  Eigen::Vector3d lo = positions.front(), hi = positions.front(), mean = Eigen::Vector3d::Zero();
  for (const auto& p : positions) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    mean += p;
  }
  mean /= static_cast<double>(positions.size());
  Eigen::Index axis = 0;
  (hi - lo).maxCoeff(&axis);

  double slope = 0.0;
  if (forces.size() > 1) {
    double mean_f = 0.0;
    for (const auto& f : forces) mean_f += f(axis);
    mean_f /= static_cast<double>(forces.size());
    double cov = 0.0, var = 0.0;
    for (std::size_t i = 0; i < forces.size(); ++i) {
      const double dp = positions[i](axis) - mean(axis);
      cov += dp * (forces[i](axis) - mean_f);
      var += dp * dp;
    }
    if (var > 0.0) slope = -cov / var;
  }
  const double stiffness = std::isfinite(slope) ? std::max(std::abs(slope), 1.0) : 1.0;

  Eigen::VectorXd phi = layout.pack(prims);
  for (const auto& slot : layout.slots()) {
    switch (slot.block) {
      case ParamBlock::kStiffness:
        phi.segment<3>(slot.offset).setZero();
        phi(slot.offset + axis) = stiffness;
        break;
      case ParamBlock::kAttachment:
        phi.segment<3>(slot.offset).setZero();
        break;
      case ParamBlock::kRest:
        phi.segment<3>(slot.offset) = mean;
        break;
    }
  }
  return phi;
}

}  // namespace dcm
