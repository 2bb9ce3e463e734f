#include "dcm/simlab.hpp"

#include <chrono>
#include <cmath>
#include <random>

#include "dcm/errors.hpp"

namespace dcm {

JogProfile::JogProfile(Eigen::Vector3d start, std::vector<MinJerkSegment> segments)
    : start_(std::move(start)), segments_(std::move(segments)) {
  for (const auto& s : segments_)
    if (!(s.duration > 0.0)) throw ConfigError("jog segment duration must be positive");
}

Eigen::Vector3d JogProfile::at(double t) const {
  Eigen::Vector3d from = start_;
  double begin = 0.0;
  for (const auto& s : segments_) {
    if (t < begin + s.duration) {
      const double tau = std::max(0.0, (t - begin) / s.duration);
      const double blend = tau * tau * tau * (10.0 - 15.0 * tau + 6.0 * tau * tau);
      return from + blend * (s.target - from);
    }
    from = s.target;
    begin += s.duration;
  }
  return from;
}

double JogProfile::duration() const {
  double total = 0.0;
  for (const auto& s : segments_) total += s.duration;
  return total;
}

NoiseConfig EstimatorSettings::resolved_noise(int dof, const ParamLayout& layout) const {
  NoiseConfig out = NoiseConfig::defaults(dof, layout);
  if (noise.q_pos.size() != 0) {
    out.q_pos = noise.q_pos;
    out.q_vel = noise.q_vel;
    out.r_pos = noise.r_pos;
    out.r_torque = noise.r_torque;
    if (noise.q_param.size() == layout.size()) out.q_param = noise.q_param;
  }
  return out;
}

Eigen::VectorXd EstimatorSettings::resolved_param_var(const ParamLayout& layout) const {
  if (initial_param_var.size() == layout.size()) return initial_param_var;
  Eigen::VectorXd var(layout.size());
  for (const auto& slot : layout.slots())
    var.segment<3>(slot.offset).setConstant(slot.block == ParamBlock::kStiffness ? 1e6 : 1e-4);
  return var;
}

int Scenario::step_count() const {
  const double steps = duration / h;
  const long rounded = std::lround(steps);
  if (rounded < 1 || std::abs(steps - static_cast<double>(rounded)) > 1e-6)
    throw ConfigError("scenario duration must be a positive multiple of the step h");
  return static_cast<int>(rounded);
}

void Scenario::validate() const {
  if (!(h > 0.0)) throw ConfigError("scenario step h must be positive");
  step_count();
  if (substeps < 1) throw ConfigError("truth substeps must be at least 1");
  if (noise.position < 0.0 || noise.torque < 0.0) throw ConfigError("noise levels must be non-negative");
  if (initial_q.size() != robot.dof()) throw ConfigError("initial joint position has the wrong dimension");
  if (truth.size() != nominal.size()) throw ConfigError("truth and nominal primitive sets differ in size");
  law.validate();
  if (mpc) {
    mpc->mpc.validate();
    if (mpc->resolve_every < 1) throw ConfigError("MPC resolve period must be at least one step");
  }
}

Eigen::VectorXd truth_parameters(const std::vector<ContactPrimitive>& prims) {
  Eigen::VectorXd out(9 * prims.size());
  for (std::size_t i = 0; i < prims.size(); ++i)
    out.segment<9>(9 * static_cast<Eigen::Index>(i)) << prims[i].stiffness, prims[i].attachment, prims[i].rest;
  return out;
}

namespace {

RunResult run_internal(const Scenario& sc, std::uint64_t seed, bool closed_loop, bool estimation) {
  sc.validate();
  const RobotModel& robot = sc.robot;
  const int n = robot.dof();
  const int steps = sc.step_count();
  const CoupledDynamics truth(robot, sc.truth, ParamLayout{}, sc.h / sc.substeps);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto noisy = [&](const Eigen::VectorXd& v, double sigma) {
    Eigen::VectorXd out = v;
    for (Eigen::Index i = 0; i < out.size(); ++i) out(i) += sigma * normal(rng);
    return out;
  };

  RunResult result;
  std::optional<CoupledDynamics> filter;
  std::optional<MpcController> mpc;
  NoiseConfig filter_noise;
  Belief belief;
  int mpc_start = steps + 1;
  if (closed_loop) {
    result.layout = estimation ? ParamLayout::select(sc.nominal, ParamRole::kEstimateOnline) : ParamLayout{};
    filter.emplace(robot, sc.nominal, result.layout, sc.h);
    filter_noise = sc.estimator.resolved_noise(n, result.layout);
    if (sc.mpc) {
      mpc.emplace(robot, sc.mpc->mpc, sc.law);
      mpc_start = static_cast<int>(std::ceil(sc.mpc->start_time / sc.h - 1e-9));
    }
  }

  Eigen::VectorXd q = sc.initial_q;
  Eigen::VectorXd qd = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd previous_tau;
  Eigen::Vector3d target = sc.jog.at(0.0);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(n);
  result.records.reserve(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) {
    const double t = k * sc.h;
    const ChainKinematics<double> chain = chain_kinematics(robot, q);
    TrajectoryRecord rec;
    rec.t = t;
    rec.truth_q = q;
    rec.truth_qd = qd;
    rec.truth_p = chain.tcp.position;
    rec.truth_R = chain.tcp.rotation;
    for (const auto& prim : sc.truth) rec.truth_forces.push_back(contact_force(prim, chain.tcp));
    rec.q = noisy(q, sc.noise.position);
    rec.tau_ext = noisy(total_contact_torque(chain, sc.truth), sc.noise.torque);

    if (closed_loop) {
      if (k == 0) {
        belief = initial_belief(*filter, rec.q, zero, sc.estimator.initial_position_var,
                                sc.estimator.initial_velocity_var, sc.estimator.resolved_param_var(result.layout));
      } else {
        Eigen::VectorXd y = rec.q;
        if (sc.estimator.observation.mode == ObservationMode::kPositionTorque) {
          y.resize(2 * n);
          y << rec.q, rec.tau_ext;
        }
        belief = ekf_step(belief, y, previous_tau, filter_noise, sc.estimator.observation, *filter);
      }
      result.estimates.push_back({t, belief.mean, belief.covariance.diagonal()});
      if (mpc && k >= mpc_start && (k - mpc_start) % sc.mpc->resolve_every == 0) {
        const auto start = std::chrono::steady_clock::now();
        const MpcSolution& sol = mpc->solve(belief.mean.head(2 * n), filter->primitives_at(belief.mean));
        const auto stop = std::chrono::steady_clock::now();
        target = sol.targets.front();
        result.ticks.push_back({t, target, sol.diagnostics, std::chrono::duration<double>(stop - start).count()});
      } else if (!mpc || k < mpc_start) {
        target = sc.jog.at(t);
      }
    } else {
      target = sc.jog.at(t);
    }

    const Eigen::VectorXd command =
        impedance_torque<double>(chain, sc.law, qd, target) + inverse_dynamics(robot, chain, qd, zero, true);
    rec.target = target;
    rec.tau = noisy(command, sc.noise.torque);
    previous_tau = rec.tau;
    result.records.push_back(std::move(rec));
    if (k == steps) break;

    for (int s = 0; s < sc.substeps; ++s) {
      const DiscreteStep next = truth.step(q, qd, MotorTorque{command});
      q = next.next_q;
      qd = next.next_qd;
    }
    if (!q.allFinite() || !qd.allFinite() || q.cwiseAbs().maxCoeff() > 1e6 || qd.cwiseAbs().maxCoeff() > 1e6)
      throw SimulationDiverged("simulation diverged at t = " + std::to_string(t + sc.h) + " s");
  }
  return result;
}

}  // namespace

std::vector<TrajectoryRecord> run_scenario(const Scenario& sc, std::uint64_t seed) {
  return run_internal(sc, seed, sc.mpc.has_value(), true).records;
}

RunResult run_closed_loop(const Scenario& sc, std::uint64_t seed, bool estimation) {
  if (!sc.mpc) throw ConfigError("scenario '" + sc.name + "' has no MPC task");
  return run_internal(sc, seed, true, estimation);
}

Eigen::VectorXd solve_position_ik(const RobotModel& model, const Eigen::Vector3d& target, const Eigen::VectorXd& seed) {
  const int n = model.dof();
  Eigen::VectorXd q = seed;
  for (int it = 0; it < 500; ++it) {
    const Eigen::Vector3d error = target - forward_kinematics<double>(model, q).position;
    if (error.norm() < 1e-13) return q;
    const Eigen::MatrixXd J = jacobian<double>(model, q).position;
    const Eigen::MatrixXd JJt = J * J.transpose() + 1e-10 * Eigen::Matrix3d::Identity();
    const Eigen::MatrixXd pinv = J.transpose() * JJt.inverse();
    const Eigen::MatrixXd null = Eigen::MatrixXd::Identity(n, n) - pinv * J;
    q += pinv * error + 0.1 * null * (seed - q);
  }
  const Eigen::Vector3d error = target - forward_kinematics<double>(model, q).position;
  if (error.norm() > 1e-9) throw ConfigError("target position is out of reach");
  return q;
}

namespace {

ContactPrimitive make_primitive(const Eigen::Vector3d& stiffness, const Eigen::Vector3d& rest) {
  ContactPrimitive p;
  p.stiffness = stiffness;
  p.rest = rest;
  return p;
}

NoiseConfig diagonal_noise(int dof, double q_pos, double q_vel, double r_pos, double r_torque,
                           const Eigen::VectorXd& q_param) {
  NoiseConfig cfg;
  cfg.q_pos = Eigen::VectorXd::Constant(dof, q_pos);
  cfg.q_vel = Eigen::VectorXd::Constant(dof, q_vel);
  cfg.r_pos = Eigen::VectorXd::Constant(dof, r_pos);
  cfg.r_torque = Eigen::VectorXd::Constant(dof, r_torque);
  cfg.q_param = q_param;
  return cfg;
}

Scenario vertical_contact() {
  Scenario sc;
  sc.name = "vertical-contact";
  const Eigen::Vector3d start(0.5, 0.0, 0.15);
  Eigen::VectorXd seed(6);
  seed << 0.0, -0.3, 1.4, 0.0, 0.5, 0.0;
  sc.initial_q = solve_position_ik(sc.robot, start, seed);
  const double k_contact = 28300.0;
  sc.truth = {make_primitive({0.0, 0.0, k_contact}, start)};
  ContactPrimitive nominal = make_primitive({0.0, 0.0, 5000.0}, start);
  nominal.set_role(ParamBlock::kStiffness, ParamRole::kEstimateOnline);
  sc.nominal = {nominal};
  sc.law.stiffness = Eigen::Vector3d::Constant(3000.0);
  sc.law.damping = Eigen::Vector3d::Constant(200.0);

  // Rest-position depth giving a static contact force F through the series springs.
  auto depth = [&](double force) {
    const double k_imp = sc.law.stiffness.z();
    return force * (k_imp + k_contact) / (k_imp * k_contact);
  };
  auto pressed = [&](double force) { return Eigen::Vector3d(start - Eigen::Vector3d(0.0, 0.0, depth(force))); };
  sc.jog = JogProfile(start, {{1.0, start},
                              {0.4, pressed(105.0)},
                              {2.6, pressed(105.0)},
                              {0.4, pressed(50.0)},
                              {1.6, pressed(50.0)},
                              {0.4, pressed(105.0)},
                              {2.6, pressed(105.0)},
                              {0.4, start},
                              {2.6, start}});
  sc.duration = 12.0;
  sc.estimator.observation.mode = ObservationMode::kPosition;
  sc.estimator.noise = diagonal_noise(6, 1e-12, 1e-6, 1e-8, 1.0, Eigen::Vector3d::Constant(1e2));
  sc.estimator.initial_param_var = Eigen::Vector3d::Constant(1e6);
  return sc;
}

Scenario plane_slide() {
  Scenario sc;
  sc.name = "plane-slide";
  const double k_plane = 2570.0;
  const double desired = 3.0;
  const Eigen::Vector3d goal(0.35, -0.35, 0.01);
  const double nominal_height = goal.z() + desired / k_plane;
  const double true_height = nominal_height + 0.01;
  const Eigen::Vector3d start(0.35, -0.2, true_height - desired / k_plane);
  Eigen::VectorXd seed(6);
  seed << -0.6, -0.3, 1.6, 0.0, 0.4, 0.0;
  sc.initial_q = solve_position_ik(sc.robot, start, seed);
  sc.truth = {make_primitive({0.0, 0.0, k_plane}, {goal.x(), goal.y(), true_height})};
  ContactPrimitive nominal = make_primitive({0.0, 0.0, k_plane}, {goal.x(), goal.y(), nominal_height});
  nominal.set_role(ParamBlock::kRest, ParamRole::kEstimateOnline);
  sc.nominal = {nominal};
  sc.law.stiffness = Eigen::Vector3d::Constant(1000.0);
  sc.law.damping = Eigen::Vector3d::Constant(100.0);
  sc.jog = JogProfile(balancing_target(sc.law, start, Eigen::Vector3d(0.0, 0.0, desired)), {});

  MpcTask task;
  task.mpc.target = goal;
  task.mpc.force_weight = 5e-5;
  task.mpc.velocity_weight = 0.05;
  task.mpc.desired_force = desired;
  task.mpc.force_limit = 15.0;
  sc.mpc = task;
  sc.duration = 15.0;
  sc.estimator.observation.mode = ObservationMode::kPositionTorque;
  sc.estimator.observation.include_parameter_torque_jacobian = true;
  sc.estimator.noise = diagonal_noise(6, 1e-12, 1e-6, 1e-8, 1e-2, Eigen::Vector3d::Constant(1e-6));
  sc.estimator.initial_param_var = Eigen::Vector3d::Constant(1e-4);
  return sc;
}

Scenario pivot_hinge() {
  Scenario sc;
  sc.name = "pivot-hinge";
  const Eigen::Vector3d k_floor(0.0, 0.0, 2570.0);
  const Eigen::Vector3d k_wall(3300.0, 0.0, 0.0);
  const double desired = 15.0;
  const double offset = 0.03;
  const Eigen::Vector3d goal(0.32, -0.6, -0.15);
  const Eigen::Vector3d floor_nominal(goal.x(), goal.y(), goal.z() + desired / k_floor.z());
  const Eigen::Vector3d wall_nominal(goal.x() + desired / k_wall.x(), goal.y(), goal.z());
  const Eigen::Vector3d floor_true = floor_nominal + Eigen::Vector3d(0.0, 0.0, offset);
  const Eigen::Vector3d wall_true = wall_nominal + Eigen::Vector3d(offset, 0.0, 0.0);
  const Eigen::Vector3d start(wall_true.x() - desired / k_wall.x(), -0.5, floor_true.z() - desired / k_floor.z());
  Eigen::VectorXd seed(6);
  seed << -0.9, 0.0, 1.6, 0.0, 0.3, 0.0;
  sc.initial_q = solve_position_ik(sc.robot, start, seed);
  sc.truth = {make_primitive(k_floor, floor_true), make_primitive(k_wall, wall_true)};
  ContactPrimitive floor = make_primitive(k_floor, floor_nominal);
  ContactPrimitive wall = make_primitive(k_wall, wall_nominal);
  floor.set_role(ParamBlock::kRest, ParamRole::kEstimateOnline);
  wall.set_role(ParamBlock::kRest, ParamRole::kEstimateOnline);
  sc.nominal = {floor, wall};
  sc.law.stiffness = Eigen::Vector3d::Constant(1000.0);
  sc.law.damping = Eigen::Vector3d::Constant(100.0);
  sc.jog = JogProfile(balancing_target(sc.law, start, Eigen::Vector3d(desired, 0.0, desired)), {});

  MpcTask task;
  task.mpc.target = goal;
  task.mpc.force_weight = 2e-5;
  task.mpc.velocity_weight = 0.05;
  task.mpc.desired_force = desired;
  task.mpc.force_limit = 30.0;
  sc.mpc = task;
  sc.duration = 15.0;
  sc.estimator.observation.mode = ObservationMode::kPositionTorque;
  sc.estimator.observation.include_parameter_torque_jacobian = true;
  sc.estimator.noise = diagonal_noise(6, 1e-12, 1e-6, 1e-8, 1e-2, Eigen::VectorXd::Constant(6, 1e-6));
  sc.estimator.initial_param_var = Eigen::VectorXd::Constant(6, 1e-4);
  return sc;
}

}  // namespace

const std::map<std::string, Scenario>& scenario_library() {
  static const std::map<std::string, Scenario> library = [] {
    std::map<std::string, Scenario> out;
    for (Scenario sc : {vertical_contact(), plane_slide(), pivot_hinge()}) out.emplace(sc.name, std::move(sc));
    return out;
  }();
  return library;
}

const Scenario& find_scenario(const std::string& name) {
  const auto& lib = scenario_library();
  const auto it = lib.find(name);
  if (it == lib.end()) {
    std::string names;
    for (const auto& [key, value] : lib) names += (names.empty() ? "" : ", ") + key;
    throw ConfigError("unknown scenario '" + name + "' (valid: " + names + ")");
  }
  return it->second;
}

std::vector<double> steady_state_force_error(const std::vector<TrajectoryRecord>& records,
                                             const std::vector<ContactPrimitive>& prims, double desired_force,
                                             double window) {
  if (records.empty()) throw ConfigError("trajectory is empty");
  const double begin = records.back().t - window;
  std::vector<double> out;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    const auto normal = contact_normal(prims[i]);
    const Eigen::Vector3d axis = normal ? *normal : Eigen::Vector3d::Zero();
    double sum = 0.0;
    int count = 0;
    for (const auto& rec : records) {
      if (rec.t < begin - 1e-12) continue;
      sum += rec.truth_forces[i].dot(axis);
      ++count;
    }
    out.push_back(std::abs(sum / count - (normal ? desired_force : 0.0)));
  }
  return out;
}

}  // namespace dcm
