#include "dcm/replay.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "dcm/errors.hpp"
#include "dcm/logio.hpp"

namespace dcm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// FFTW planning is not thread-safe.
std::mutex fftw_mutex;

Eigen::Vector3d total_force(const std::vector<Eigen::Vector3d>& forces) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  for (const auto& f : forces) sum += f;
  return sum;
}

void check_finite(const ObserverTimeline& tl) {
  for (std::size_t k = 0; k < tl.force.size(); ++k)
    if (!tl.force[k].allFinite())
      throw ObserverDiverged(tl.name + " produced a non-finite force at t = " + format_double(tl.t[k]) + " s");
}

}  // namespace

MeasuredTrajectory measured_trajectory(const std::vector<TrajectoryRecord>& log, double h) {
  MeasuredTrajectory tr;
  tr.h = h;
  for (const auto& r : log) {
    tr.q.push_back(r.q);
    tr.tau.push_back(r.tau);
  }
  return tr;
}

EkfReplay ekf_replay(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                     const std::vector<ContactPrimitive>& prims, const EstimatorSettings& settings,
                     const std::string& name) {
  if (log.empty()) throw ConfigError("log has no records");
  const int n = model.dof();
  if (log.front().q.size() != n) throw ConfigError("log joint count does not match the robot");
  const bool torque = settings.observation.mode == ObservationMode::kPositionTorque;
  EkfReplay out;
  out.layout = ParamLayout::select(prims, ParamRole::kEstimateOnline);
  out.timeline.name = name;
  const CoupledDynamics dyn(model, prims, out.layout, h);
  const NoiseConfig noise = settings.resolved_noise(n, out.layout);
  Belief belief;
  for (std::size_t k = 0; k < log.size(); ++k) {
    const TrajectoryRecord& r = log[k];
    if (k == 0) {
      belief = initial_belief(dyn, r.q, Eigen::VectorXd::Zero(n), settings.initial_position_var,
                              settings.initial_velocity_var, settings.resolved_param_var(out.layout));
    } else {
      Eigen::VectorXd y = r.q;
      if (torque) {
        if (r.tau_ext.size() != n) throw ConfigError("torque observations need the tau_ext channel (JSONL log)");
        y.resize(2 * n);
        y << r.q, r.tau_ext;
      }
      belief = ekf_step(belief, y, log[k - 1].tau, noise, settings.observation, dyn);
    }
    out.estimates.push_back({r.t, belief.mean, belief.covariance.diagonal()});
    const std::vector<ContactPrimitive> current = dyn.primitives_at(belief.mean);
    const Pose<double> pose = forward_kinematics<double>(model, belief.mean.head(n));
    Eigen::Vector3d force = Eigen::Vector3d::Zero();
    for (const auto& p : current) force += contact_force(p, pose);
    out.timeline.t.push_back(r.t);
    out.timeline.force.push_back(force);
    out.timeline.stiffness.push_back(current.empty() ? Eigen::Vector3d::Constant(kNaN) : current.front().stiffness);
  }
  check_finite(out.timeline);
  return out;
}

ObserverTimeline momentum_replay(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                                 const MomentumObserverConfig& cfg, const std::string& name) {
  if (log.empty()) throw ConfigError("log has no records");
  const int n = model.dof();
  if (log.front().q.size() != n) throw ConfigError("log joint count does not match the robot");
  MomentumObserver obs(cfg);
  ObserverTimeline tl;
  tl.name = name;
  Eigen::VectorXd qd_prev = Eigen::VectorXd::Zero(n);
  obs.reset(model, log.front().q, qd_prev);
  for (std::size_t k = 0; k < log.size(); ++k) {
    const TrajectoryRecord& r = log[k];
    Eigen::Vector3d force = Eigen::Vector3d::Zero();
    if (k > 0) {
      const TrajectoryRecord& prev = log[k - 1];
      const Eigen::VectorXd qd = (r.q - prev.q) / h;
      const Eigen::VectorXd err = torque_error<double>(model, prev.q, qd_prev, prev.tau);
      obs.step(model, r.q, qd, err, h);
      force = residual_to_tcp_force(model, r.q, obs.residual());
      qd_prev = qd;
    }
    obs.record(forward_kinematics<double>(model, r.q).position, force);
    tl.t.push_back(r.t);
    tl.force.push_back(force);
    tl.stiffness.push_back(obs.window_full() ? windowed_stiffness(obs.ring(), cfg.window)
                                             : Eigen::Vector3d::Constant(kNaN));
  }
  check_finite(tl);
  return tl;
}

double high_frequency_power(const std::vector<double>& signal, double h, double cutoff) {
  const int n = static_cast<int>(signal.size());
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : signal) mean += v;
  mean /= n;
  std::vector<double> in(signal.size());
  for (int i = 0; i < n; ++i) in[static_cast<std::size_t>(i)] = signal[static_cast<std::size_t>(i)] - mean;
  std::vector<fftw_complex> out(static_cast<std::size_t>(n / 2 + 1));
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    plan = fftw_plan_dft_r2c_1d(n, in.data(), out.data(), FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex);
    fftw_destroy_plan(plan);
  }
  double power = 0.0;
  for (int k = 1; k <= n / 2; ++k) {
    const double freq = k / (n * h);
    if (freq <= cutoff) continue;
    const auto& c = out[static_cast<std::size_t>(k)];
    // Bins other than DC and Nyquist stand for a conjugate pair.
    const double weight = (2 * k == n) ? 1.0 : 2.0;
    power += weight * (c[0] * c[0] + c[1] * c[1]);
  }
  return power / (static_cast<double>(n) * n);
}

double settling_time(const std::vector<double>& t, const std::vector<double>& values, double reference, double band,
                     double onset) {
  if (!std::isfinite(reference) || !std::isfinite(onset) || t.empty()) return kNaN;
  const double tol = band * std::abs(reference);
  std::size_t settled = t.size();
  for (std::size_t k = t.size(); k-- > 0;) {
    if (t[k] < onset) break;
    if (!(std::abs(values[k] - reference) <= tol)) break;
    settled = k;
  }
  if (settled == t.size()) return kNaN;
  return t[settled] - onset;
}

ObserverMetrics observer_metrics(const ObserverTimeline& timeline, const std::vector<TrajectoryRecord>& log,
                                 int normal_axis, double h, const ComparisonConfig& cfg, double reference_stiffness) {
  ObserverMetrics m;
  m.name = timeline.name;
  const std::size_t count = std::min(timeline.force.size(), log.size());
  std::vector<double> normal_error;
  double onset = kNaN;
  for (std::size_t k = 0; k < count; ++k) {
    const Eigen::Vector3d truth = total_force(log[k].truth_forces);
    const Eigen::Vector3d err = timeline.force[k] - truth;
    m.rmse += err.cwiseAbs2();
    normal_error.push_back(err(normal_axis));
    if (std::isnan(onset) && std::abs(truth(normal_axis)) > cfg.onset_force) onset = log[k].t;
  }
  if (count) m.rmse = (m.rmse / static_cast<double>(count)).cwiseSqrt();
  m.normal_rmse = m.rmse(normal_axis);
  m.noise_power = high_frequency_power(normal_error, h, cfg.cutoff);

  std::vector<double> k_normal;
  for (std::size_t k = 0; k < count; ++k) k_normal.push_back(timeline.stiffness[k](normal_axis));
  if (!k_normal.empty()) m.final_stiffness = k_normal.back();
  const double reference = std::isfinite(reference_stiffness) ? reference_stiffness : m.final_stiffness;
  m.rise_time = settling_time(timeline.t, k_normal, reference, cfg.band, onset);
  return m;
}

int dominant_force_axis(const std::vector<TrajectoryRecord>& log) {
  Eigen::Vector3d power = Eigen::Vector3d::Zero();
  for (const auto& r : log) power += total_force(r.truth_forces).cwiseAbs2();
  Eigen::Index axis = 2;
  power.maxCoeff(&axis);
  return static_cast<int>(axis);
}

ComparisonReport compare_observers(const std::vector<TrajectoryRecord>& log, const RobotModel& model,
                                   const std::vector<ContactPrimitive>& fitted,
                                   const std::vector<ContactPrimitive>& online, const ComparisonConfig& cfg,
                                   double reference_stiffness) {
  if (log.size() < 2) throw ConfigError("log needs at least two records");
  if (fitted.empty() || online.empty()) throw ConfigError("observer comparison needs at least one primitive");
  const double h = log_step(log);
  ComparisonReport report;
  report.reference_stiffness = reference_stiffness;
  report.normal_axis = dominant_force_axis(log);

  const auto fixed = with_roles(with_roles(fitted, ParamRole::kEstimateOnline, ParamRole::kFixed),
                                ParamRole::kFitOffline, ParamRole::kFixed);
  report.timelines.resize(3);
  run_jobs(cfg.jobs, {
                         [&] { report.timelines[0] = ekf_replay(log, h, model, fixed, cfg.estimator, "ekf_fitted").timeline; },
                         [&] { report.timelines[1] = ekf_replay(log, h, model, online, cfg.estimator, "ekf_online").timeline; },
                         [&] { report.timelines[2] = momentum_replay(log, h, model, cfg.momentum, "momentum"); },
                     });

  for (const auto& tl : report.timelines)
    report.metrics.push_back(observer_metrics(tl, log, report.normal_axis, h, cfg, reference_stiffness));
  for (const auto& r : log) {
    if (std::abs(total_force(r.truth_forces)(report.normal_axis)) > cfg.onset_force) {
      report.contact_onset = r.t;
      break;
    }
  }
  return report;
}

std::string timelines_csv(const std::vector<ObserverTimeline>& timelines) {
  std::string out = "t";
  for (const auto& tl : timelines) {
    for (const char* a : {"x", "y", "z"}) out += "," + tl.name + "_F_" + a;
    for (const char* a : {"x", "y", "z"}) out += "," + tl.name + "_K_" + a;
  }
  out += '\n';
  if (timelines.empty()) return out;
  const std::size_t count = timelines.front().t.size();
  for (std::size_t k = 0; k < count; ++k) {
    out += format_double(timelines.front().t[k]);
    for (const auto& tl : timelines) {
      for (int a = 0; a < 3; ++a) out += "," + format_double(tl.force[k](a));
      for (int a = 0; a < 3; ++a) out += "," + format_double(tl.stiffness[k](a));
    }
    out += '\n';
  }
  return out;
}

FitResult fit_log(const std::vector<TrajectoryRecord>& log, double h, const RobotModel& model,
                  const std::vector<ContactPrimitive>& prims, const FitConfig& cfg, bool init_from_prims) {
  const MeasuredTrajectory traj = measured_trajectory(log, h);
  const ParamLayout layout = ParamLayout::select(prims, ParamRole::kFitOffline);
  if (layout.size() == 0) throw ConfigError("no parameter block is marked for fitting");
  const Eigen::VectorXd init = init_from_prims ? layout.pack(prims) : initial_fit_guess(traj, model, prims, layout);
  return em_fit(traj, init, model, prims, cfg);
}

std::vector<ContactPrimitive> with_roles(std::vector<ContactPrimitive> prims, ParamRole from, ParamRole to) {
  for (auto& p : prims)
    for (ParamBlock b : kAllBlocks)
      if (p.role(b) == from) p.set_role(b, to);
  return prims;
}

void run_jobs(int jobs, const std::vector<std::function<void()>>& tasks) {
  std::vector<std::exception_ptr> errors(tasks.size());
  const auto run = [&](std::size_t i) {
    try {
      tasks[i]();
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (jobs <= 1 || tasks.size() <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run(i);
  } else {
    std::mutex mutex;
    std::size_t next = 0;
    const auto worker = [&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> lock(mutex);
          if (next == tasks.size()) return;
          i = next++;
        }
        run(i);
      }
    };
    std::vector<std::thread> threads;
    const std::size_t count = std::min(tasks.size(), static_cast<std::size_t>(jobs));
    for (std::size_t i = 0; i < count; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace dcm
