#pragma once

#include <string>
#include <vector>

#include "dcm/simlab.hpp"

namespace dcm {

/// Shortest decimal that parses back to the same double.
std::string format_double(double value);

/// A trajectory log as read back from disk. Channels absent from the file
/// format are left empty (the CSV carries no tau_ext, truth_q, truth_qd or R).
struct TrajectoryLog {
  std::vector<TrajectoryRecord> records;
  Eigen::VectorXd truth_phi;  // packed [K; x; x_o] per truth primitive, JSONL only
  bool has_tau_ext = false;
};

/// CSV columns: t, q0.., tau0.., xd_x, xd_y, xd_z, truth_F{i}_x/y/z.., truth_p_x/y/z.
std::string trajectory_csv(const std::vector<TrajectoryRecord>& records);
/// One JSON object per line with every channel, including the truth parameters.
std::string trajectory_jsonl(const std::vector<TrajectoryRecord>& records, const Eigen::VectorXd& truth_phi);

TrajectoryLog parse_trajectory_csv(const std::string& text, const std::string& source = "<csv>");
TrajectoryLog parse_trajectory_jsonl(const std::string& text, const std::string& source = "<jsonl>");
/// Dispatches on the extension (.csv or .jsonl). Throws ConfigError on a
/// missing, malformed or empty log.
TrajectoryLog load_trajectory(const std::string& path);

/// Step size of a log from its first two timestamps.
double log_step(const std::vector<TrajectoryRecord>& records);

/// Columns t, q0.., dq0.., parameter labels, then var_ columns for diag(Sigma).
std::string estimates_csv(const std::vector<EstimateSample>& samples, int dof, const ParamLayout& layout);

/// Primitive set as YAML:
///   primitives:
///     - {stiffness: [..], attachment: [..], rest: [..], roles: {K: fit, x: fixed, xo: fixed}, unilateral: false}
std::string primitives_yaml(const std::vector<ContactPrimitive>& prims);
std::vector<ContactPrimitive> parse_primitives(const std::string& yaml_text, const std::string& source = "<params>");
std::vector<ContactPrimitive> load_primitives(const std::string& path);

/// One JSON object per MPC tick; wall time only when `timing` is set.
std::string mpc_ticks_jsonl(const std::vector<MpcTick>& ticks, bool timing);

std::string read_text_file(const std::string& path);
/// Writes bytes exactly (LF line endings preserved). Throws ConfigError on failure.
void write_text_file(const std::string& path, const std::string& text);

}  // namespace dcm
