#pragma once

#include <string>

#include "dcm/robot_model.hpp"

namespace dcm {

/// Chain-description file (YAML):
///
///   name: arm6
///   gravity: [0, 0, -9.81]            # optional, m/s^2
///   damping: [0.2, ...]               # N m s/rad, one per joint
///   motor_inertia: [1.0, ...]         # kg m^2, added to diag(M)
///   tcp: {xyz: [...], rpy: [...]}     # optional
///   links:
///     - mass: 4.0                     # kg
///       com: [0, 0, 0.05]             # m, link frame
///       inertia: [[..],[..],[..]]     # kg m^2 about the COM
///       axis: [0, 0, 1]
///       offset: {xyz: [...], rpy: [...]}
///
/// Missing fields raise ConfigError with the offending line number.
RobotModel load_robot(const std::string& path);
RobotModel parse_robot(const std::string& yaml_text, const std::string& source_name = "<string>");
std::string robot_to_yaml(const RobotModel& model);

/// Resolves a built-in name or a path to a chain-description file.
RobotModel resolve_robot(const std::string& name_or_path);

}  // namespace dcm
