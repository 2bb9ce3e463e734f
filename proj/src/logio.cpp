#include "dcm/logio.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "dcm/errors.hpp"
#include "yaml_util.hpp"

namespace dcm {

using nlohmann::json;

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

namespace {

void append_row(std::string& out, const std::vector<double>& values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_double(values[i]);
  }
  out += '\n';
}

std::string join(const std::vector<std::string>& cols) {
  std::string out;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out += ',';
    out += cols[i];
  }
  out += '\n';
  return out;
}

json to_json(const Eigen::VectorXd& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }
json to_json(const Eigen::Vector3d& v) { return json({v.x(), v.y(), v.z()}); }

Eigen::VectorXd vector_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected a list of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(where + ": expected a list of numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Eigen::Vector3d vec3_from(const json& j, const std::string& where) {
  const Eigen::VectorXd v = vector_from(j, where);
  if (v.size() != 3) throw ConfigError(where + ": expected 3 numbers");
  return v;
}

double parse_number(const std::string& cell, const std::string& where) {
  double value = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  const auto res = std::from_chars(begin, end, value);
  if (res.ec != std::errc() || res.ptr != end) throw ConfigError(where + ": '" + cell + "' is not a number");
  return value;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

void check_records(const TrajectoryLog& log, const std::string& source) {
  if (log.records.empty()) throw ConfigError(source + ": log has no records");
  for (std::size_t k = 1; k < log.records.size(); ++k)
    if (!(log.records[k].t > log.records[k - 1].t)) throw ConfigError(source + ": timestamps are not increasing");
}

}  // namespace

std::string trajectory_csv(const std::vector<TrajectoryRecord>& records) {
  const int n = records.empty() ? 0 : static_cast<int>(records.front().q.size());
  const std::size_t prims = records.empty() ? 0 : records.front().truth_forces.size();
  std::vector<std::string> cols = {"t"};
  for (int i = 0; i < n; ++i) cols.push_back("q" + std::to_string(i));
  for (int i = 0; i < n; ++i) cols.push_back("tau" + std::to_string(i));
  for (const char* a : {"x", "y", "z"}) cols.push_back(std::string("xd_") + a);
  for (std::size_t p = 0; p < prims; ++p)
    for (const char* a : {"x", "y", "z"}) cols.push_back("truth_F" + std::to_string(p) + "_" + a);
  for (const char* a : {"x", "y", "z"}) cols.push_back(std::string("truth_p_") + a);

  std::string out = join(cols);
  std::vector<double> row;
  for (const auto& r : records) {
    row.clear();
    row.push_back(r.t);
    for (int i = 0; i < n; ++i) row.push_back(r.q(i));
    for (int i = 0; i < n; ++i) row.push_back(r.tau(i));
    for (int a = 0; a < 3; ++a) row.push_back(r.target(a));
    for (const auto& f : r.truth_forces)
      for (int a = 0; a < 3; ++a) row.push_back(f(a));
    for (int a = 0; a < 3; ++a) row.push_back(r.truth_p(a));
    append_row(out, row);
  }
  return out;
}

std::string trajectory_jsonl(const std::vector<TrajectoryRecord>& records, const Eigen::VectorXd& truth_phi) {
  std::string out;
  for (const auto& r : records) {
    json forces = json::array();
    for (const auto& f : r.truth_forces) forces.push_back(to_json(f));
    json rotation = json::array();
    for (int i = 0; i < 3; ++i) rotation.push_back(to_json(Eigen::Vector3d(r.truth_R.row(i).transpose())));
    json truth = {{"F", forces}, {"p", to_json(r.truth_p)}, {"R", rotation}};
    if (r.truth_q.size()) truth["q"] = to_json(r.truth_q);
    if (r.truth_qd.size()) truth["qd"] = to_json(r.truth_qd);
    if (truth_phi.size()) truth["phi"] = to_json(truth_phi);
    json line = {{"t", r.t}, {"q", to_json(r.q)}, {"tau", to_json(r.tau)}, {"xd", to_json(r.target)}};
    if (r.tau_ext.size()) line["tau_ext"] = to_json(r.tau_ext);
    line["truth"] = truth;
    out += line.dump();
    out += '\n';
  }
  return out;
}

TrajectoryLog parse_trajectory_csv(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(source + ": log is empty");
  const std::vector<std::string> header = split(line);
  int n = 0;
  int prims = 0;
  {
    const std::regex q_col("q[0-9]+");
    const std::regex f_col("truth_F[0-9]+_x");
    for (const auto& c : header) {
      if (std::regex_match(c, q_col)) ++n;
      if (std::regex_match(c, f_col)) ++prims;
    }
  }
  // Rebuild the expected header and compare, so a reordered or foreign file is rejected.
  const std::string expected = trajectory_csv([&] {
    TrajectoryRecord r;
    r.q = Eigen::VectorXd::Zero(n);
    r.tau = Eigen::VectorXd::Zero(n);
    r.truth_forces.assign(static_cast<std::size_t>(prims), Eigen::Vector3d::Zero());
    return std::vector<TrajectoryRecord>{r};
  }());
  if (n == 0 || expected.substr(0, expected.find('\n')) != line)
    throw ConfigError(source + ": unexpected CSV header");

  const std::size_t width = header.size();
  TrajectoryLog log;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (cells.size() != width) throw ConfigError(where + ": expected " + std::to_string(width) + " columns");
    std::vector<double> v(width);
    for (std::size_t i = 0; i < width; ++i) v[i] = parse_number(cells[i], where);
    TrajectoryRecord r;
    std::size_t c = 0;
    r.t = v[c++];
    r.q.resize(n);
    r.tau.resize(n);
    for (int i = 0; i < n; ++i) r.q(i) = v[c++];
    for (int i = 0; i < n; ++i) r.tau(i) = v[c++];
    for (int a = 0; a < 3; ++a) r.target(a) = v[c++];
    for (int p = 0; p < prims; ++p) {
      Eigen::Vector3d f;
      for (int a = 0; a < 3; ++a) f(a) = v[c++];
      r.truth_forces.push_back(f);
    }
    for (int a = 0; a < 3; ++a) r.truth_p(a) = v[c++];
    log.records.push_back(std::move(r));
  }
  check_records(log, source);
  return log;
}

TrajectoryLog parse_trajectory_jsonl(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  TrajectoryLog log;
  log.has_tau_ext = true;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
    try {
      TrajectoryRecord r;
      r.t = j.at("t").get<double>();
      r.q = vector_from(j.at("q"), where + " q");
      r.tau = vector_from(j.at("tau"), where + " tau");
      if (r.tau.size() != r.q.size()) throw ConfigError(where + ": q and tau differ in size");
      r.target = vec3_from(j.at("xd"), where + " xd");
      if (j.contains("tau_ext")) {
        r.tau_ext = vector_from(j["tau_ext"], where + " tau_ext");
      } else {
        log.has_tau_ext = false;
      }
      const json& truth = j.at("truth");
      for (const auto& f : truth.at("F")) r.truth_forces.push_back(vec3_from(f, where + " truth.F"));
      r.truth_p = vec3_from(truth.at("p"), where + " truth.p");
      if (truth.contains("R")) {
        const json& rot = truth["R"];
        if (!rot.is_array() || rot.size() != 3) throw ConfigError(where + ": truth.R must be 3x3");
        for (int i = 0; i < 3; ++i) r.truth_R.row(i) = vec3_from(rot[i], where + " truth.R").transpose();
      }
      if (truth.contains("q")) r.truth_q = vector_from(truth["q"], where + " truth.q");
      if (truth.contains("qd")) r.truth_qd = vector_from(truth["qd"], where + " truth.qd");
      if (truth.contains("phi") && log.truth_phi.size() == 0) log.truth_phi = vector_from(truth["phi"], where);
      log.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  check_records(log, source);
  return log;
}

TrajectoryLog load_trajectory(const std::string& path) {
  const std::string text = read_text_file(path);
  const auto ends_with = [&](const std::string& suffix) {
    return path.size() >= suffix.size() && path.compare(path.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  if (ends_with(".jsonl")) return parse_trajectory_jsonl(text, path);
  if (ends_with(".csv")) return parse_trajectory_csv(text, path);
  throw ConfigError(path + ": log must end in .csv or .jsonl");
}

double log_step(const std::vector<TrajectoryRecord>& records) {
  if (records.size() < 2) throw ConfigError("log needs at least two records");
  const double h = records[1].t - records[0].t;
  if (!(h > 0.0)) throw ConfigError("log timestamps are not increasing");
  return h;
}

std::string estimates_csv(const std::vector<EstimateSample>& samples, int dof, const ParamLayout& layout) {
  std::vector<std::string> names;
  for (int i = 0; i < dof; ++i) names.push_back("q" + std::to_string(i));
  for (int i = 0; i < dof; ++i) names.push_back("dq" + std::to_string(i));
  for (int i = 0; i < layout.size(); ++i) names.push_back(layout.label(i));
  std::vector<std::string> cols = {"t"};
  cols.insert(cols.end(), names.begin(), names.end());
  for (const auto& name : names) cols.push_back("var_" + name);

  const std::size_t dim = names.size();
  std::string out = join(cols);
  std::vector<double> row;
  for (const auto& s : samples) {
    if (static_cast<std::size_t>(s.mean.size()) != dim || static_cast<std::size_t>(s.variance.size()) != dim)
      throw ConfigError("estimate sample does not match the state layout");
    row.assign(1, s.t);
    for (Eigen::Index i = 0; i < s.mean.size(); ++i) row.push_back(s.mean(i));
    for (Eigen::Index i = 0; i < s.variance.size(); ++i) row.push_back(s.variance(i));
    append_row(out, row);
  }
  return out;
}

std::string primitives_yaml(const std::vector<ContactPrimitive>& prims) {
  const auto list = [](const Eigen::Vector3d& v) {
    return "[" + format_double(v.x()) + ", " + format_double(v.y()) + ", " + format_double(v.z()) + "]";
  };
  std::string out = "primitives:\n";
  for (const auto& p : prims) {
    out += "  - stiffness: " + list(p.stiffness) + "\n";
    out += "    attachment: " + list(p.attachment) + "\n";
    out += "    rest: " + list(p.rest) + "\n";
    out += "    roles: {";
    for (std::size_t b = 0; b < kAllBlocks.size(); ++b) {
      if (b) out += ", ";
      out += std::string(block_name(kAllBlocks[b])) + ": " + role_name(p.role(kAllBlocks[b]));
    }
    out += "}\n";
    out += std::string("    unilateral: ") + (p.unilateral ? "true" : "false") + "\n";
  }
  return out;
}

std::vector<ContactPrimitive> parse_primitives(const std::string& yaml_text, const std::string& source) {
  const yaml::Source src{source};
  const YAML::Node root = yaml::load_string(yaml_text, source);
  if (!root || !root.IsMap()) throw ConfigError(source + ": expected a mapping with 'primitives'");
  const YAML::Node list = src.require(root, "primitives", "parameter file");
  if (!list.IsSequence()) src.fail(list, "primitives must be a list");
  std::vector<ContactPrimitive> prims;
  for (const auto& node : list) {
    ContactPrimitive p;
    p.stiffness = src.vec3(src.require(node, "stiffness", "primitive"), "stiffness");
    if (node["attachment"]) p.attachment = src.vec3(node["attachment"], "attachment");
    p.rest = src.vec3(src.require(node, "rest", "primitive"), "rest");
    if (const YAML::Node roles = node["roles"]) {
      if (!roles.IsMap()) src.fail(roles, "roles must be a mapping");
      for (const auto& kv : roles) {
        try {
          p.set_role(parse_block(kv.first.as<std::string>()), parse_role(kv.second.as<std::string>()));
        } catch (const ConfigError& e) {
          src.fail(kv.first, e.what());
        }
      }
    }
    if (const YAML::Node uni = node["unilateral"]) {
      try {
        p.unilateral = uni.as<bool>();
      } catch (const YAML::Exception&) {
        src.fail(uni, "unilateral must be true or false");
      }
    }
    if (!p.stiffness.allFinite() || !p.attachment.allFinite() || !p.rest.allFinite())
      src.fail(node, "primitive values must be finite");
    prims.push_back(p);
  }
  return prims;
}

std::vector<ContactPrimitive> load_primitives(const std::string& path) {
  return parse_primitives(read_text_file(path), path);
}

std::string mpc_ticks_jsonl(const std::vector<MpcTick>& ticks, bool timing) {
  std::string out;
  for (const auto& tick : ticks) {
    const MpcDiagnostics& d = tick.diagnostics;
    json forces = json::array();
    if (!d.predicted_forces.empty())
      for (const auto& f : d.predicted_forces.front()) forces.push_back(to_json(f));
    json line = {{"t", tick.t},
                 {"xd", to_json(tick.applied)},
                 {"iterations", d.iterations},
                 {"cost", d.cost},
                 {"objective", d.objective},
                 {"shifted_objective", d.shifted_objective},
                 {"max_violation", d.max_violation},
                 {"max_defect", d.max_defect},
                 {"converged", d.converged},
                 {"max_iterations_reached", d.max_iterations_reached},
                 {"warm_start_reset", d.warm_start_reset},
                 {"kept_shifted", d.kept_shifted},
                 {"predicted_forces", forces}};
    if (timing) line["wall_time"] = tick.wall_time;
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("failed writing '" + path + "'");
}

}  // namespace dcm
