#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dcm/controller.hpp"
#include "dcm/estimator.hpp"

namespace dcm {

struct NoiseLevels {
  double position = 1e-4;  // rad
  double torque = 0.1;     // N m
};

struct MinJerkSegment {
  double duration = 1.0;  // s
  Eigen::Vector3d target = Eigen::Vector3d::Zero();
};

/// Piecewise minimum-jerk Cartesian path for the impedance rest position.
/// Each segment moves from the previous target to its own; the path holds
/// the last target afterwards.
class JogProfile {
 public:
  JogProfile() = default;
  JogProfile(Eigen::Vector3d start, std::vector<MinJerkSegment> segments);

  Eigen::Vector3d at(double t) const;
  double duration() const;
  const Eigen::Vector3d& start() const { return start_; }
  const std::vector<MinJerkSegment>& segments() const { return segments_; }

 private:
  Eigen::Vector3d start_ = Eigen::Vector3d::Zero();
  std::vector<MinJerkSegment> segments_;
};

/// Online estimator used by closed-loop runs and observer replays.
struct EstimatorSettings {
  ObservationModel observation;
  NoiseConfig noise;  // empty q_pos: built-in defaults
  double initial_position_var = 1e-4;
  double initial_velocity_var = 1e-2;
  Eigen::VectorXd initial_param_var;  // empty: 1e6 for stiffness, 1e-4 otherwise

  NoiseConfig resolved_noise(int dof, const ParamLayout& layout) const;
  Eigen::VectorXd resolved_param_var(const ParamLayout& layout) const;
};

struct MpcTask {
  MpcConfig mpc;
  double start_time = 5.0;  // s
  int resolve_every = 30;   // simulation steps between solves
};

struct Scenario {
  std::string name;
  RobotModel robot = RobotModel::arm6();
  std::vector<ContactPrimitive> truth;    // ground truth
  std::vector<ContactPrimitive> nominal;  // estimator and controller view, with roles
  NoiseLevels noise;
  ImpedanceLaw law;  // gains; the rest position comes from the command script
  Eigen::VectorXd initial_q;
  double duration = 1.0;
  double h = kDefaultSimulationStep;
  int substeps = 10;
  JogProfile jog;  // commands for jog scenarios; MPC scenarios hold jog.start() until the MPC starts
  std::optional<MpcTask> mpc;
  EstimatorSettings estimator;

  int step_count() const;
  void validate() const;
};

struct TrajectoryRecord {
  double t = 0.0;
  Eigen::VectorXd q;        // measured joint position
  Eigen::VectorXd tau;      // measured motor torque, applied over [t, t + h)
  Eigen::VectorXd tau_ext;  // measured external joint torque
  Eigen::Vector3d target = Eigen::Vector3d::Zero();  // commanded x_d
  std::vector<Eigen::Vector3d> truth_forces;
  Eigen::Vector3d truth_p = Eigen::Vector3d::Zero();
  Eigen::Matrix3d truth_R = Eigen::Matrix3d::Identity();
  Eigen::VectorXd truth_q;
  Eigen::VectorXd truth_qd;
};

struct MpcTick {
  double t = 0.0;
  Eigen::Vector3d applied = Eigen::Vector3d::Zero();
  MpcDiagnostics diagnostics;
  double wall_time = 0.0;  // s
};

struct EstimateSample {
  double t = 0.0;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;  // diag(Sigma)
};

struct RunResult {
  std::vector<TrajectoryRecord> records;
  std::vector<MpcTick> ticks;
  std::vector<EstimateSample> estimates;
  ParamLayout layout;  // of the estimated parameters
};

/// Integrates the truth dynamics at h / substeps with the motor torque held
/// over each measurement interval, sampling noisy measurements at h.
/// Jog scenarios follow the jog profile; MPC scenarios run the closed loop
/// with online estimation. Deterministic in (sc, seed). Throws
/// SimulationDiverged when a state exceeds 1e6 in magnitude.
std::vector<TrajectoryRecord> run_scenario(const Scenario& sc, std::uint64_t seed);

/// Closed-loop MPC run; with `estimation` false the MPC uses the nominal
/// parameters and the filter estimates only [q; qd].
RunResult run_closed_loop(const Scenario& sc, std::uint64_t seed, bool estimation);

/// Packed truth parameters [K; x; x_o] per primitive.
Eigen::VectorXd truth_parameters(const std::vector<ContactPrimitive>& prims);

const std::map<std::string, Scenario>& scenario_library();
/// Throws ConfigError naming the valid scenarios.
const Scenario& find_scenario(const std::string& name);

/// Position-only damped least-squares IK biased toward `seed`.
Eigen::VectorXd solve_position_ik(const RobotModel& model, const Eigen::Vector3d& target, const Eigen::VectorXd& seed);

/// |mean(F_i . n_i) - F_d| over the last `window` seconds, per primitive; the
/// target is zero for primitives without a contact normal.
std::vector<double> steady_state_force_error(const std::vector<TrajectoryRecord>& records,
                                             const std::vector<ContactPrimitive>& prims, double desired_force,
                                             double window = 2.0);

}  // namespace dcm
