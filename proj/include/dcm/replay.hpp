#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "dcm/baseline.hpp"
#include "dcm/fitter.hpp"
#include "dcm/simlab.hpp"

namespace dcm {

/// Per-step force and stiffness estimates of one observer over a log.
struct ObserverTimeline {
  std::string name;
  std::vector<double> t;
  std::vector<Eigen::Vector3d> force;      // total contact force on the robot, N
  std::vector<Eigen::Vector3d> stiffness;  // N/m; NaN where the observer has no estimate
};

struct EkfReplay {
  ObserverTimeline timeline;
  std::vector<EstimateSample> estimates;
  ParamLayout layout;
};

/// Runs the EKF over a recorded log, estimating the blocks of `prims` whose
/// role is estimate-online. Torque observations need the tau_ext channel.
/// The stiffness timeline is primitive 0's K at the mean.
EkfReplay ekf_replay(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                     const std::vector<ContactPrimitive>& prims, const EstimatorSettings& settings,
                     const std::string& name = "ekf");

/// Momentum observer over a recorded log. Joint velocities are backward
/// differences of the measured positions; the torque error uses the previous
/// sample's state and motor torque.
ObserverTimeline momentum_replay(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                                 const MomentumObserverConfig& cfg, const std::string& name = "momentum");

/// Mean power of the components of `signal` above `cutoff` Hz, so that the
/// sum over all bands equals the mean square of the mean-removed signal.
double high_frequency_power(const std::vector<double>& signal, double h, double cutoff);

/// Time from `onset` until `values` enters and then stays inside
/// |v - reference| <= band |reference|; NaN when it never settles.
double settling_time(const std::vector<double>& t, const std::vector<double>& values, double reference, double band,
                     double onset);

struct ObserverMetrics {
  std::string name;
  Eigen::Vector3d rmse = Eigen::Vector3d::Zero();  // per axis against the truth force
  double normal_rmse = 0.0;
  double noise_power = 0.0;  // normal-axis error above the cutoff, N^2
  double rise_time = std::numeric_limits<double>::quiet_NaN();  // s after contact onset
  double final_stiffness = std::numeric_limits<double>::quiet_NaN();  // normal axis, N/m
};

struct ComparisonConfig {
  EstimatorSettings estimator;
  MomentumObserverConfig momentum;
  double cutoff = 10.0;      // Hz
  double band = 0.1;         // relative settling band for the rise time
  double onset_force = 1.0;  // N, truth normal force that marks contact onset
  int jobs = 1;
};

struct ComparisonReport {
  std::vector<ObserverTimeline> timelines;  // ekf-fitted, ekf-online, momentum
  std::vector<ObserverMetrics> metrics;
  int normal_axis = 2;
  double contact_onset = std::numeric_limits<double>::quiet_NaN();
  double reference_stiffness = std::numeric_limits<double>::quiet_NaN();
};

/// Axis with the largest mean-square truth contact force over the log.
int dominant_force_axis(const std::vector<TrajectoryRecord>& log);

/// Replays the EKF with `fitted` (all blocks fixed), the EKF with `online`
/// (its estimate-online blocks estimated) and the momentum observer on the
/// same log. The normal axis is the dominant truth-force axis.
/// The rise-time reference is `reference_stiffness` when finite, else the
/// final estimate. Throws ObserverDiverged on a non-finite estimate.
ComparisonReport compare_observers(const std::vector<TrajectoryRecord>& log, const RobotModel& model,
                                   const std::vector<ContactPrimitive>& fitted,
                                   const std::vector<ContactPrimitive>& online, const ComparisonConfig& cfg,
                                   double reference_stiffness = std::numeric_limits<double>::quiet_NaN());

ObserverMetrics observer_metrics(const ObserverTimeline& timeline, const std::vector<TrajectoryRecord>& log,
                                 int normal_axis, double h, const ComparisonConfig& cfg, double reference_stiffness);

/// Columns t, then {name}_F_x/y/z and {name}_K_x/y/z per observer.
std::string timelines_csv(const std::vector<ObserverTimeline>& timelines);

MeasuredTrajectory measured_trajectory(const std::vector<TrajectoryRecord>& log, double h);

/// Offline fit of the blocks of `prims` marked fit-offline, starting from the
/// data-driven guess (or from `prims` when `init_from_prims`).
FitResult fit_log(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                  const std::vector<ContactPrimitive>& prims, const FitConfig& cfg, bool init_from_prims = false);

/// Copy with every block of role `from` switched to `to`.
std::vector<ContactPrimitive> with_roles(std::vector<ContactPrimitive> prims, ParamRole from, ParamRole to);

/// Runs the jobs on up to `jobs` threads; rethrows the first failure in job order.
void run_jobs(int jobs, const std::vector<std::function<void()>>& tasks);

}  // namespace dcm
