#include "dcm/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dcm/errors.hpp"
#include "dcm/logio.hpp"
#include "dcm/replay.hpp"
#include "dcm/robot_io.hpp"
#include "yaml_util.hpp"

namespace dcm {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const SimulationDiverged*>(&e)) return kExitDiverged;
  if (dynamic_cast<const Error*>(&e)) return kExitNumerical;
  return kExitInternal;
}

namespace {

const std::set<std::string> kObservers = {"ekf-sensorless", "ekf-torque", "momentum"};

struct RunConfig {
  std::string command;
  std::vector<std::string> scenarios;
  std::string robot;
  std::string observer = "ekf-sensorless";
  std::string log;
  std::string params;
  std::string out = "out";
  std::uint64_t seed = 1;
  int jobs = 1;
  bool timing = false;

  // Scenario overrides.
  std::optional<double> duration;
  std::optional<double> noise_position;
  std::optional<double> noise_torque;
  std::optional<double> initial_position_var;
  std::optional<double> initial_velocity_var;

  FitConfig fit;
  std::string fit_init = "data";  // data | nominal
  std::vector<std::string> fit_blocks;

  MomentumObserverConfig momentum;
  double cutoff = 10.0;

  std::optional<int> horizon;
  std::optional<double> mpc_h;
  std::optional<int> max_sqp_iterations;
  std::optional<double> start_time;
  std::optional<int> resolve_every;
  std::optional<double> force_limit;
};

// ---------------------------------------------------------------------------
// Config file

void check_keys(const yaml::Source& src, const YAML::Node& node, const std::set<std::string>& allowed,
                const std::string& what) {
  if (!node.IsMap()) src.fail(node, what + " must be a mapping");
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!allowed.count(key)) src.fail(kv.first, "unknown key '" + key + "' in " + what);
  }
}

std::string text(const yaml::Source& src, const YAML::Node& node, const std::string& what) {
  if (!node.IsScalar()) src.fail(node, what + " must be a string");
  return node.as<std::string>();
}

int integer(const yaml::Source& src, const YAML::Node& node, const std::string& what) {
  const double v = src.scalar(node, what);
  if (v != std::floor(v) || std::abs(v) > 1e9) src.fail(node, what + " must be an integer");
  return static_cast<int>(v);
}

bool boolean(const yaml::Source& src, const YAML::Node& node, const std::string& what) {
  try {
    return node.as<bool>();
  } catch (const YAML::Exception&) {
    src.fail(node, what + " must be true or false");
  }
}

void read_scenario_block(const yaml::Source& src, const YAML::Node& node, RunConfig& cfg) {
  if (node.IsScalar()) {
    cfg.scenarios = {node.as<std::string>()};
    return;
  }
  check_keys(src, node, {"name", "duration", "noise", "initial_position_var", "initial_velocity_var"}, "scenario");
  cfg.scenarios = {text(src, src.require(node, "name", "scenario"), "scenario name")};
  if (node["duration"]) cfg.duration = src.scalar(node["duration"], "scenario duration");
  if (const YAML::Node noise = node["noise"]) {
    check_keys(src, noise, {"position", "torque"}, "noise");
    if (noise["position"]) cfg.noise_position = src.scalar(noise["position"], "position noise");
    if (noise["torque"]) cfg.noise_torque = src.scalar(noise["torque"], "torque noise");
  }
  if (node["initial_position_var"]) cfg.initial_position_var = src.scalar(node["initial_position_var"], "variance");
  if (node["initial_velocity_var"]) cfg.initial_velocity_var = src.scalar(node["initial_velocity_var"], "variance");
}

void read_config_file(const std::string& path, RunConfig& cfg) {
  const yaml::Source src{path};
  const YAML::Node root = yaml::load_file(path);
  if (!root || root.IsNull()) return;
  check_keys(src, root,
             {"seed", "out", "jobs", "robot", "scenario", "observer", "log", "params", "timing", "fit", "momentum",
              "compare", "mpc"},
             "config");
  if (root["seed"]) {
    const double s = src.scalar(root["seed"], "seed");
    if (s < 0 || s != std::floor(s)) src.fail(root["seed"], "seed must be a non-negative integer");
    cfg.seed = static_cast<std::uint64_t>(s);
  }
  if (root["out"]) cfg.out = text(src, root["out"], "out");
  if (root["jobs"]) cfg.jobs = integer(src, root["jobs"], "jobs");
  if (root["robot"]) cfg.robot = text(src, root["robot"], "robot");
  if (root["scenario"]) read_scenario_block(src, root["scenario"], cfg);
  if (root["observer"]) cfg.observer = text(src, root["observer"], "observer");
  if (root["log"]) cfg.log = text(src, root["log"], "log");
  if (root["params"]) cfg.params = text(src, root["params"], "params");
  if (root["timing"]) cfg.timing = boolean(src, root["timing"], "timing");
  if (const YAML::Node fit = root["fit"]) {
    check_keys(src, fit,
               {"beta_stiffness", "beta_attachment", "rest_pull", "max_em_iterations", "em_tolerance", "init",
                "blocks", "gradient_tol", "step_tol", "max_iterations"},
               "fit");
    if (fit["beta_stiffness"]) cfg.fit.beta_stiffness = src.scalar(fit["beta_stiffness"], "beta_stiffness");
    if (fit["beta_attachment"]) cfg.fit.beta_attachment = src.scalar(fit["beta_attachment"], "beta_attachment");
    if (fit["rest_pull"]) cfg.fit.rest_pull = src.scalar(fit["rest_pull"], "rest_pull");
    if (fit["max_em_iterations"]) cfg.fit.max_em_iterations = integer(src, fit["max_em_iterations"], "max_em_iterations");
    if (fit["em_tolerance"]) cfg.fit.em_tolerance = src.scalar(fit["em_tolerance"], "em_tolerance");
    if (fit["gradient_tol"]) cfg.fit.optimizer.gradient_tol = src.scalar(fit["gradient_tol"], "gradient_tol");
    if (fit["step_tol"]) cfg.fit.optimizer.step_tol = src.scalar(fit["step_tol"], "step_tol");
    if (fit["max_iterations"]) cfg.fit.optimizer.max_iterations = integer(src, fit["max_iterations"], "max_iterations");
    if (fit["init"]) cfg.fit_init = text(src, fit["init"], "fit init");
    if (const YAML::Node blocks = fit["blocks"]) {
      if (!blocks.IsSequence()) src.fail(blocks, "fit blocks must be a list");
      cfg.fit_blocks.clear();
      for (const auto& b : blocks) cfg.fit_blocks.push_back(text(src, b, "fit block"));
    }
  }
  if (const YAML::Node mo = root["momentum"]) {
    check_keys(src, mo, {"gain", "window", "form"}, "momentum");
    if (mo["gain"]) cfg.momentum.gain = src.scalar(mo["gain"], "momentum gain");
    if (mo["window"]) cfg.momentum.window = integer(src, mo["window"], "momentum window");
    if (mo["form"]) {
      const std::string form = text(src, mo["form"], "momentum form");
      if (form == "momentum") cfg.momentum.form = ResidualForm::kMomentum;
      else if (form == "displayed-contact") cfg.momentum.form = ResidualForm::kDisplayedContactTorque;
      else if (form == "displayed-error") cfg.momentum.form = ResidualForm::kDisplayedTorqueError;
      else src.fail(mo["form"], "momentum form must be momentum, displayed-contact or displayed-error");
    }
  }
  if (const YAML::Node cmp = root["compare"]) {
    check_keys(src, cmp, {"cutoff"}, "compare");
    if (cmp["cutoff"]) cfg.cutoff = src.scalar(cmp["cutoff"], "cutoff");
  }
  if (const YAML::Node mpc = root["mpc"]) {
    check_keys(src, mpc, {"horizon", "h", "max_sqp_iterations", "start_time", "resolve_every", "force_limit"}, "mpc");
    if (mpc["horizon"]) cfg.horizon = integer(src, mpc["horizon"], "horizon");
    if (mpc["h"]) cfg.mpc_h = src.scalar(mpc["h"], "mpc h");
    if (mpc["max_sqp_iterations"]) cfg.max_sqp_iterations = integer(src, mpc["max_sqp_iterations"], "max_sqp_iterations");
    if (mpc["start_time"]) cfg.start_time = src.scalar(mpc["start_time"], "start_time");
    if (mpc["resolve_every"]) cfg.resolve_every = integer(src, mpc["resolve_every"], "resolve_every");
    if (mpc["force_limit"]) cfg.force_limit = src.scalar(mpc["force_limit"], "force_limit");
  }
}

void validate(const RunConfig& cfg) {
  if (!kObservers.count(cfg.observer))
    throw ConfigError("unknown observer '" + cfg.observer + "' (valid: ekf-sensorless, ekf-torque, momentum)");
  if (cfg.jobs < 1) throw ConfigError("jobs must be at least 1");
  if (cfg.fit_init != "data" && cfg.fit_init != "nominal") throw ConfigError("fit init must be 'data' or 'nominal'");
  if (cfg.fit.beta_stiffness < 0 || cfg.fit.beta_attachment < 0 || cfg.fit.rest_pull < 0)
    throw ConfigError("fit weights must be non-negative");
  if (cfg.fit.max_em_iterations < 1) throw ConfigError("max_em_iterations must be at least 1");
  for (const auto& b : cfg.fit_blocks) parse_block(b);
  cfg.momentum.validate();
  if (!(cfg.cutoff > 0)) throw ConfigError("cutoff must be positive");
  for (const auto& name : cfg.scenarios) find_scenario(name);
}

// ---------------------------------------------------------------------------
// Scenario resolution

Scenario resolve_scenario(const RunConfig& cfg, const std::string& name) {
  Scenario sc = find_scenario(name);
  if (!cfg.robot.empty()) sc.robot = resolve_robot(cfg.robot);
  if (cfg.duration) sc.duration = *cfg.duration;
  if (cfg.noise_position) sc.noise.position = *cfg.noise_position;
  if (cfg.noise_torque) sc.noise.torque = *cfg.noise_torque;
  if (cfg.initial_position_var) sc.estimator.initial_position_var = *cfg.initial_position_var;
  if (cfg.initial_velocity_var) sc.estimator.initial_velocity_var = *cfg.initial_velocity_var;
  if (sc.mpc) {
    if (cfg.horizon) sc.mpc->mpc.horizon = *cfg.horizon;
    if (cfg.mpc_h) sc.mpc->mpc.h = *cfg.mpc_h;
    if (cfg.max_sqp_iterations) sc.mpc->mpc.max_sqp_iterations = *cfg.max_sqp_iterations;
    if (cfg.start_time) sc.mpc->start_time = *cfg.start_time;
    if (cfg.resolve_every) sc.mpc->resolve_every = *cfg.resolve_every;
    if (cfg.force_limit) sc.mpc->mpc.force_limit = *cfg.force_limit;
    sc.mpc->mpc.validate();
    if (sc.mpc->resolve_every < 1) throw ConfigError("resolve_every must be at least 1");
  }
  sc.validate();
  if (sc.initial_q.size() != sc.robot.dof()) throw ConfigError("robot '" + sc.robot.name() + "' does not fit scenario '" + name + "'");
  return sc;
}

std::string log_scenario(const RunConfig& cfg) { return cfg.scenarios.empty() ? "vertical-contact" : cfg.scenarios.front(); }

// ---------------------------------------------------------------------------
// Output helpers

std::string effective_config(const RunConfig& cfg) {
  const auto num = [](double v) { return format_double(v); };
  const auto opt = [&](const auto& v) { return v ? num(static_cast<double>(*v)) : std::string("default"); };
  std::ostringstream s;
  s << "command: " << cfg.command << "\n";
  s << "seed: " << cfg.seed << "\n";
  s << "jobs: " << cfg.jobs << "\n";
  s << "scenario: [";
  for (std::size_t i = 0; i < cfg.scenarios.size(); ++i) s << (i ? ", " : "") << cfg.scenarios[i];
  s << "]\n";
  s << "robot: " << (cfg.robot.empty() ? "default" : cfg.robot) << "\n";
  s << "observer: " << cfg.observer << "\n";
  s << "log: " << (cfg.log.empty() ? "none" : cfg.log) << "\n";
  s << "params: " << (cfg.params.empty() ? "none" : cfg.params) << "\n";
  s << "timing: " << (cfg.timing ? "true" : "false") << "\n";
  s << "scenario_overrides:\n";
  s << "  duration: " << opt(cfg.duration) << "\n";
  s << "  noise: {position: " << opt(cfg.noise_position) << ", torque: " << opt(cfg.noise_torque) << "}\n";
  s << "  initial_position_var: " << opt(cfg.initial_position_var) << "\n";
  s << "  initial_velocity_var: " << opt(cfg.initial_velocity_var) << "\n";
  s << "fit:\n";
  s << "  beta_stiffness: " << num(cfg.fit.beta_stiffness) << "\n";
  s << "  beta_attachment: " << num(cfg.fit.beta_attachment) << "\n";
  s << "  rest_pull: " << num(cfg.fit.rest_pull) << "\n";
  s << "  max_em_iterations: " << cfg.fit.max_em_iterations << "\n";
  s << "  em_tolerance: " << num(cfg.fit.em_tolerance) << "\n";
  s << "  gradient_tol: " << num(cfg.fit.optimizer.gradient_tol) << "\n";
  s << "  step_tol: " << num(cfg.fit.optimizer.step_tol) << "\n";
  s << "  max_iterations: " << cfg.fit.optimizer.max_iterations << "\n";
  s << "  init: " << cfg.fit_init << "\n";
  s << "  blocks: [";
  for (std::size_t i = 0; i < cfg.fit_blocks.size(); ++i) s << (i ? ", " : "") << cfg.fit_blocks[i];
  s << "]\n";
  s << "momentum:\n";
  s << "  gain: " << num(cfg.momentum.gain) << "\n";
  s << "  window: " << cfg.momentum.window << "\n";
  s << "  form: "
    << (cfg.momentum.form == ResidualForm::kMomentum           ? "momentum"
        : cfg.momentum.form == ResidualForm::kDisplayedContactTorque ? "displayed-contact"
                                                                     : "displayed-error")
    << "\n";
  s << "compare:\n  cutoff: " << num(cfg.cutoff) << "\n";
  s << "mpc:\n";
  s << "  horizon: " << opt(cfg.horizon) << "\n";
  s << "  h: " << opt(cfg.mpc_h) << "\n";
  s << "  max_sqp_iterations: " << opt(cfg.max_sqp_iterations) << "\n";
  s << "  start_time: " << opt(cfg.start_time) << "\n";
  s << "  resolve_every: " << opt(cfg.resolve_every) << "\n";
  s << "  force_limit: " << opt(cfg.force_limit) << "\n";
  return s.str();
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number_or_null(v(i)));
  return out;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

fs::path prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir.string() + "': " + ec.message());
  return dir;
}

TrajectoryLog require_log(const RunConfig& cfg) {
  if (cfg.log.empty()) throw ConfigError(cfg.command + " needs --log");
  TrajectoryLog log = load_trajectory(cfg.log);
  if (log.records.size() < 2) throw ConfigError(cfg.log + ": log needs at least two records");
  return log;
}

std::vector<ContactPrimitive> base_primitives(const RunConfig& cfg, const Scenario& sc) {
  return cfg.params.empty() ? sc.nominal : load_primitives(cfg.params);
}

void check_log_fits(const TrajectoryLog& log, const RobotModel& model) {
  if (log.records.front().q.size() != model.dof())
    throw ConfigError("log has " + std::to_string(log.records.front().q.size()) + " joints but robot '" +
                      model.name() + "' has " + std::to_string(model.dof()));
}

/// Truth stiffness of primitive 0 along `axis` from the packed truth parameters.
double truth_stiffness(const TrajectoryLog& log, int axis) {
  if (log.truth_phi.size() < 3) return std::numeric_limits<double>::quiet_NaN();
  return log.truth_phi(axis);
}

json metrics_json(const ObserverMetrics& m) {
  return {{"rmse", vec_json(m.rmse)},
          {"normal_rmse", m.normal_rmse},
          {"noise_power", m.noise_power},
          {"rise_time", number_or_null(m.rise_time)},
          {"final_stiffness", number_or_null(m.final_stiffness)}};
}

EstimatorSettings settings_for(const Scenario& sc, const std::string& observer) {
  EstimatorSettings s = sc.estimator;
  if (observer == "ekf-torque") {
    s.observation.mode = ObservationMode::kPositionTorque;
    s.observation.include_parameter_torque_jacobian = true;
  } else {
    s.observation.mode = ObservationMode::kPosition;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_simulate(const RunConfig& cfg, std::ostream& out) {
  if (cfg.scenarios.empty()) throw ConfigError("simulate needs --scenario");
  const fs::path root = prepare_dir(cfg.out);
  std::vector<Scenario> scenarios;
  for (const auto& name : cfg.scenarios) scenarios.push_back(resolve_scenario(cfg, name));
  std::vector<std::vector<TrajectoryRecord>> logs(scenarios.size());
  std::vector<std::function<void()>> tasks;
  for (std::size_t i = 0; i < scenarios.size(); ++i)
    tasks.push_back([&, i] { logs[i] = run_scenario(scenarios[i], cfg.seed); });
  run_jobs(cfg.jobs, tasks);

  write_text_file((root / "config.yaml").string(), effective_config(cfg));
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    const Scenario& sc = scenarios[i];
    const fs::path dir = scenarios.size() == 1 ? root : prepare_dir(root / sc.name);
    const auto& records = logs[i];
    write_text_file((dir / "trajectory.csv").string(), trajectory_csv(records));
    write_text_file((dir / "trajectory.jsonl").string(), trajectory_jsonl(records, truth_parameters(sc.truth)));
    json peaks = json::array();
    for (std::size_t p = 0; p < sc.truth.size(); ++p) {
      double peak = 0.0;
      for (const auto& r : records) peak = std::max(peak, r.truth_forces[p].norm());
      peaks.push_back(peak);
    }
    write_json(dir / "summary.json", {{"command", "simulate"},
                                      {"scenario", sc.name},
                                      {"seed", cfg.seed},
                                      {"records", records.size()},
                                      {"h", sc.h},
                                      {"duration", sc.duration},
                                      {"peak_force", peaks},
                                      {"final_tcp", vec_json(records.back().truth_p)}});
    out << "simulate: " << sc.name << " seed " << cfg.seed << " -> " << (dir / "trajectory.csv").string() << " ("
        << records.size() << " records)\n";
  }
  return kExitOk;
}

std::string fit_report(const RunConfig& cfg, const FitResult& res, const ParamLayout& layout,
                       const Eigen::VectorXd& init, const TrajectoryLog& log, const std::vector<ContactPrimitive>& base) {
  std::ostringstream s;
  s << "offline fit\n";
  s << "log: " << cfg.log << " (" << log.records.size() << " records)\n";
  s << "em iterations: " << res.objective_trace.size() << "\n";
  s << "final objective: " << format_double(res.objective) << "\n";
  s << "objective trace:";
  for (double v : res.objective_trace) s << " " << format_double(v);
  s << "\nm-step iterations:";
  for (int v : res.m_step_iterations) s << " " << v;
  s << "\n\nparameter  initial  fitted";
  const bool truth = log.truth_phi.size() == 9 * static_cast<Eigen::Index>(base.size());
  if (truth) s << "  truth  relative_error";
  s << "\n";
  for (int i = 0; i < layout.size(); ++i) {
    s << layout.label(i) << "  " << format_double(init(i)) << "  " << format_double(res.phi(i));
    if (truth) {
      const auto& slot = layout.slots()[static_cast<std::size_t>(i / 3)];
      const double t = log.truth_phi(9 * slot.primitive + 3 * static_cast<int>(slot.block) + i % 3);
      s << "  " << format_double(t) << "  ";
      s << (t != 0.0 ? format_double(std::abs(res.phi(i) - t) / std::abs(t)) : std::string("n/a"));
    }
    s << "\n";
  }
  return s.str();
}

std::vector<ContactPrimitive> fit_template(const RunConfig& cfg, const std::vector<ContactPrimitive>& base) {
  if (cfg.fit_blocks.empty()) return with_roles(base, ParamRole::kEstimateOnline, ParamRole::kFitOffline);
  std::vector<ContactPrimitive> prims = base;
  for (auto& p : prims) {
    for (ParamBlock b : kAllBlocks) p.set_role(b, ParamRole::kFixed);
    for (const auto& name : cfg.fit_blocks) p.set_role(parse_block(name), ParamRole::kFitOffline);
  }
  return prims;
}

struct FitOutcome {
  FitResult result;
  ParamLayout layout;
  Eigen::VectorXd init;
};

FitOutcome run_fit(const RunConfig& cfg, const TrajectoryLog& log, const Scenario& sc,
                   const std::vector<ContactPrimitive>& base) {
  const double h = log_step(log.records);
  const std::vector<ContactPrimitive> prims = fit_template(cfg, base);
  FitOutcome o;
  o.layout = ParamLayout::select(prims, ParamRole::kFitOffline);
  if (o.layout.size() == 0) throw ConfigError("no parameter block is marked for fitting");
  const MeasuredTrajectory traj = measured_trajectory(log.records, h);
  o.init = cfg.fit_init == "nominal" ? o.layout.pack(prims) : initial_fit_guess(traj, sc.robot, prims, o.layout);
  FitConfig fc = cfg.fit;
  fc.observation.mode = ObservationMode::kPosition;
  // The E-step filters with the scenario's tuned state noise.
  if (fc.noise.q_pos.size() == 0) fc.noise = sc.estimator.noise;
  o.result = em_fit(traj, o.init, sc.robot, prims, fc);
  return o;
}

void write_fit_outputs(const RunConfig& cfg, const fs::path& dir, const FitOutcome& o, const TrajectoryLog& log,
                       const std::vector<ContactPrimitive>& base, json& summary) {
  write_text_file((dir / "params.out").string(), primitives_yaml(o.result.primitives));
  write_text_file((dir / "fit_report.txt").string(), fit_report(cfg, o.result, o.layout, o.init, log, base));
  json phi = json::object();
  for (int i = 0; i < o.layout.size(); ++i) phi[o.layout.label(i)] = o.result.phi(i);
  summary["fit"] = {{"phi", phi},
                    {"objective", o.result.objective},
                    {"objective_trace", o.result.objective_trace},
                    {"m_step_iterations", o.result.m_step_iterations}};
}

int cmd_fit(const RunConfig& cfg, std::ostream& out) {
  const TrajectoryLog log = require_log(cfg);
  const Scenario sc = resolve_scenario(cfg, log_scenario(cfg));
  check_log_fits(log, sc.robot);
  const std::vector<ContactPrimitive> base = base_primitives(cfg, sc);
  const FitOutcome o = run_fit(cfg, log, sc, base);

  const fs::path dir = prepare_dir(cfg.out);
  write_text_file((dir / "config.yaml").string(), effective_config(cfg));
  json summary = {{"command", "fit"}, {"records", log.records.size()}};
  write_fit_outputs(cfg, dir, o, log, base, summary);

  std::vector<EstimateSample> samples;
  for (std::size_t k = 0; k < o.result.means.size(); ++k)
    samples.push_back({log.records[k].t, o.result.means[k], o.result.covariances[k].diagonal()});
  write_text_file((dir / "estimates.csv").string(), estimates_csv(samples, sc.robot.dof(), ParamLayout{}));
  write_json(dir / "summary.json", summary);
  out << "fit: objective " << format_double(o.result.objective) << " after " << o.result.objective_trace.size()
      << " EM iterations -> " << (dir / "params.out").string() << "\n";
  return kExitOk;
}

int cmd_estimate(const RunConfig& cfg, std::ostream& out) {
  const TrajectoryLog log = require_log(cfg);
  const Scenario sc = resolve_scenario(cfg, log_scenario(cfg));
  check_log_fits(log, sc.robot);
  const std::vector<ContactPrimitive> prims = base_primitives(cfg, sc);
  if (prims.empty()) throw ConfigError("estimation needs at least one primitive");
  const double h = log_step(log.records);
  const fs::path dir = prepare_dir(cfg.out);

  ComparisonConfig cc;
  cc.cutoff = cfg.cutoff;
  const int axis = dominant_force_axis(log.records);
  const double reference = truth_stiffness(log, axis);

  ObserverTimeline timeline;
  json summary = {{"command", "estimate"}, {"observer", cfg.observer}, {"records", log.records.size()}};
  if (cfg.observer == "momentum") {
    timeline = momentum_replay(log.records, h, sc.robot, cfg.momentum);
  } else {
    if (cfg.observer == "ekf-torque" && !log.has_tau_ext)
      throw ConfigError("observer ekf-torque needs a JSONL log with the tau_ext channel");
    const EkfReplay rep = ekf_replay(log.records, h, sc.robot, prims, settings_for(sc, cfg.observer), cfg.observer);
    timeline = rep.timeline;
    write_text_file((dir / "estimates.csv").string(), estimates_csv(rep.estimates, sc.robot.dof(), rep.layout));
    json phi = json::object();
    const Eigen::VectorXd& last = rep.estimates.back().mean;
    for (int i = 0; i < rep.layout.size(); ++i) phi[rep.layout.label(i)] = last(2 * sc.robot.dof() + i);
    summary["final_phi"] = phi;
  }
  const ObserverMetrics m = observer_metrics(timeline, log.records, axis, h, cc, reference);
  summary["normal_axis"] = axis;
  summary["metrics"] = metrics_json(m);
  write_text_file((dir / "config.yaml").string(), effective_config(cfg));
  write_text_file((dir / "timeline.csv").string(), timelines_csv({timeline}));
  write_json(dir / "summary.json", summary);
  out << "estimate: " << cfg.observer << " normal-axis RMSE " << format_double(m.normal_rmse) << " N -> "
      << dir.string() << "\n";
  return kExitOk;
}

int cmd_compare(const RunConfig& cfg, std::ostream& out) {
  const TrajectoryLog log = require_log(cfg);
  const Scenario sc = resolve_scenario(cfg, log_scenario(cfg));
  check_log_fits(log, sc.robot);
  const fs::path dir = prepare_dir(cfg.out);
  json summary = {{"command", "compare-observers"}, {"records", log.records.size()}};

  std::vector<ContactPrimitive> fitted;
  if (!cfg.params.empty()) {
    fitted = load_primitives(cfg.params);
  } else {
    const FitOutcome o = run_fit(cfg, log, sc, sc.nominal);
    write_fit_outputs(cfg, dir, o, log, sc.nominal, summary);
    fitted = o.result.primitives;
  }
  const std::vector<ContactPrimitive>& online = sc.nominal;
  if (fitted.size() != online.size()) throw ConfigError("parameter file and scenario differ in primitive count");

  ComparisonConfig cc;
  cc.estimator = settings_for(sc, "ekf-sensorless");
  cc.momentum = cfg.momentum;
  cc.cutoff = cfg.cutoff;
  cc.jobs = cfg.jobs;
  const ComparisonReport rep = compare_observers(log.records, sc.robot, fitted, online, cc,
                                                 truth_stiffness(log, dominant_force_axis(log.records)));

  json observers = json::object();
  for (const auto& m : rep.metrics) observers[m.name] = metrics_json(m);
  const ObserverMetrics& f = rep.metrics[0];
  const ObserverMetrics& o = rep.metrics[1];
  const ObserverMetrics& mo = rep.metrics[2];
  summary["normal_axis"] = rep.normal_axis;
  summary["contact_onset"] = number_or_null(rep.contact_onset);
  summary["reference_stiffness"] = number_or_null(rep.reference_stiffness);
  summary["observers"] = observers;
  summary["ordering"] = {{"fitted_below_online", f.normal_rmse < o.normal_rmse},
                         {"online_within_momentum", o.normal_rmse <= 1.2 * mo.normal_rmse},
                         {"ekf_noise_below_momentum",
                          f.noise_power < mo.noise_power && o.noise_power < mo.noise_power}};

  std::ostringstream report;
  report << "observer comparison on " << cfg.log << "\n";
  report << "normal axis: " << "xyz"[rep.normal_axis] << ", contact onset: " << format_double(rep.contact_onset)
         << " s\n\n";
  report << "observer  normal_rmse_N  noise_power_N2  rise_time_s  final_stiffness_N_per_m\n";
  for (const auto& m : rep.metrics)
    report << m.name << "  " << format_double(m.normal_rmse) << "  " << format_double(m.noise_power) << "  "
           << format_double(m.rise_time) << "  " << format_double(m.final_stiffness) << "\n";

  write_text_file((dir / "config.yaml").string(), effective_config(cfg));
  write_text_file((dir / "observers.csv").string(), timelines_csv(rep.timelines));
  write_text_file((dir / "comparison_report.txt").string(), report.str());
  write_json(dir / "summary.json", summary);
  out << report.str();
  return kExitOk;
}

json closed_loop_summary(const Scenario& sc, const RunResult& run) {
  const double desired = sc.mpc->mpc.desired_force;
  const std::vector<double> err = steady_state_force_error(run.records, sc.truth, desired);
  int converged = 0;
  double violation = 0.0;
  for (const auto& tick : run.ticks) {
    if (!tick.diagnostics.converged) continue;
    ++converged;
    violation = std::max(violation, tick.diagnostics.max_violation);
  }
  double peak = 0.0;
  for (const auto& r : run.records) {
    if (r.t < sc.mpc->start_time) continue;
    peak = std::max(peak, sc.law.stiffness.cwiseProduct(r.truth_p - r.target).norm());
  }
  return {{"steady_state_error", err},
          {"ticks", run.ticks.size()},
          {"converged_ticks", converged},
          {"max_violation_converged", violation},
          {"peak_impedance_force", peak}};
}

int cmd_mpc(const RunConfig& cfg, std::ostream& out) {
  if (cfg.scenarios.empty()) throw ConfigError("mpc needs --scenario (plane-slide or pivot-hinge)");
  const Scenario sc = resolve_scenario(cfg, cfg.scenarios.front());
  if (!sc.mpc) throw ConfigError("scenario '" + sc.name + "' has no MPC task");
  RunResult with, without;
  run_jobs(cfg.jobs, {[&] { with = run_closed_loop(sc, cfg.seed, true); },
                      [&] { without = run_closed_loop(sc, cfg.seed, false); }});

  const fs::path root = prepare_dir(cfg.out);
  write_text_file((root / "config.yaml").string(), effective_config(cfg));
  const Eigen::VectorXd truth_phi = truth_parameters(sc.truth);
  for (const auto& [name, run] : {std::pair<std::string, const RunResult*>{"with_estimation", &with},
                                  std::pair<std::string, const RunResult*>{"without_estimation", &without}}) {
    const fs::path dir = prepare_dir(root / name);
    write_text_file((dir / "trajectory.csv").string(), trajectory_csv(run->records));
    write_text_file((dir / "trajectory.jsonl").string(), trajectory_jsonl(run->records, truth_phi));
    write_text_file((dir / "estimates.csv").string(), estimates_csv(run->estimates, sc.robot.dof(), run->layout));
    write_text_file((dir / "mpc_ticks.jsonl").string(), mpc_ticks_jsonl(run->ticks, cfg.timing));
  }
  const json a = closed_loop_summary(sc, with);
  const json b = closed_loop_summary(sc, without);
  json delta = json::array();
  for (std::size_t i = 0; i < sc.truth.size(); ++i)
    delta.push_back(b["steady_state_error"][i].get<double>() - a["steady_state_error"][i].get<double>());
  write_json(root / "summary.json", {{"command", "mpc"},
                                     {"scenario", sc.name},
                                     {"seed", cfg.seed},
                                     {"desired_force", sc.mpc->mpc.desired_force},
                                     {"with_estimation", a},
                                     {"without_estimation", b},
                                     {"error_reduction", delta}});
  out << "mpc: " << sc.name << " steady-state force error with estimation " << a["steady_state_error"].dump()
      << ", without " << b["steady_state_error"].dump() << " -> " << root.string() << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Contact-model simulation, fitting, estimation and MPC"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, robot, log, params, observer;
  std::optional<int> jobs;
  std::vector<std::string> scenarios;
  bool timing = false;
  app.add_option("--config", config_path, "YAML run configuration");
  app.add_option("--seed", seed, "random seed");
  app.add_option("-o,--out", out_dir, "output directory");
  app.add_option("--jobs", jobs, "parallel jobs");
  app.add_option("--scenario", scenarios, "scenario name (simulate accepts several)");
  app.add_option("--robot", robot, "built-in robot name or chain-description file");
  app.add_option("--log", log, "trajectory log (.csv or .jsonl)");
  app.add_option("--params", params, "parameter file written by fit");
  app.add_option("--observer", observer, "ekf-sensorless, ekf-torque or momentum");
  app.add_flag("--timing", timing, "record MPC wall time in mpc_ticks.jsonl");

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"simulate", "run scenarios and write trajectory logs"},
      {"fit", "fit contact parameters offline from a log"},
      {"estimate", "run one observer over a log"},
      {"compare-observers", "replay three observers on one log and compare them"},
      {"mpc", "closed-loop MPC with and without online estimation"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    RunConfig cfg;
    cfg.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) read_config_file(config_path, cfg);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    if (jobs) cfg.jobs = *jobs;
    if (!scenarios.empty()) cfg.scenarios = scenarios;
    if (robot) cfg.robot = *robot;
    if (log) cfg.log = *log;
    if (params) cfg.params = *params;
    if (observer) cfg.observer = *observer;
    if (timing) cfg.timing = true;
    validate(cfg);

    if (cfg.command == "simulate") return cmd_simulate(cfg, out);
    if (cfg.command == "fit") return cmd_fit(cfg, out);
    if (cfg.command == "estimate") return cmd_estimate(cfg, out);
    if (cfg.command == "compare-observers") return cmd_compare(cfg, out);
    return cmd_mpc(cfg, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}

}  // namespace dcm
