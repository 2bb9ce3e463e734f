#include "dcm/robot_io.hpp"

#include <filesystem>

#include "yaml_util.hpp"

namespace dcm {

namespace {

RigidTransform parse_transform(const yaml::Source& src, const YAML::Node& node, const std::string& what) {
  if (!node.IsMap()) src.fail(node, what + " must be a mapping with xyz and rpy");
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero(), rpy = Eigen::Vector3d::Zero();
  if (node["xyz"]) xyz = src.vec3(node["xyz"], what + ".xyz");
  if (node["rpy"]) rpy = src.vec3(node["rpy"], what + ".rpy");
  return RigidTransform::from_xyz_rpy(xyz, rpy);
}

RobotModel parse_node(const YAML::Node& root, const yaml::Source& src) {
  if (!root.IsMap()) src.fail(root, "robot description must be a mapping");
  const std::string name = root["name"] ? root["name"].as<std::string>() : std::string("robot");
  const YAML::Node links_node = src.require(root, "links", "robot description");
  if (!links_node.IsSequence() || links_node.size() == 0) src.fail(links_node, "links must be a non-empty list");

  std::vector<Link> links;
  for (std::size_t i = 0; i < links_node.size(); ++i) {
    const YAML::Node ln = links_node[i];
    const std::string what = "link " + std::to_string(i);
    Link link;
    link.mass = src.scalar(src.require(ln, "mass", what), what + ".mass");
    link.com = src.vec3(src.require(ln, "com", what), what + ".com");
    link.inertia = src.mat3(src.require(ln, "inertia", what), what + ".inertia");
    link.axis = src.vec3(src.require(ln, "axis", what), what + ".axis");
    link.offset = parse_transform(src, src.require(ln, "offset", what), what + ".offset");
    if (link.axis.norm() < 1e-12) src.fail(ln["axis"], what + ".axis must be non-zero");
    link.axis.normalize();
    links.push_back(link);
  }
  const int n = static_cast<int>(links.size());
  const Eigen::VectorXd damping = src.vector(src.require(root, "damping", "robot description"), "damping", n);
  const Eigen::VectorXd motor =
      src.vector(src.require(root, "motor_inertia", "robot description"), "motor_inertia", n);
  RigidTransform tcp;
  if (root["tcp"]) tcp = parse_transform(src, root["tcp"], "tcp");
  Eigen::Vector3d gravity(0.0, 0.0, -9.81);
  if (root["gravity"]) gravity = src.vec3(root["gravity"], "gravity");
  try {
    return RobotModel(name, std::move(links), damping, motor, tcp, gravity);
  } catch (const ConfigError& e) {
    src.fail(root, e.what());
  }
}

YAML::Node transform_node(const RigidTransform& t) {
  YAML::Node node;
  node["xyz"] = yaml::seq(t.translation);
  const Eigen::Vector3d ypr = t.rotation.eulerAngles(2, 1, 0);
  node["rpy"] = yaml::seq(Eigen::Vector3d(ypr.z(), ypr.y(), ypr.x()));
  return node;
}

}  // namespace

RobotModel parse_robot(const std::string& yaml_text, const std::string& source_name) {
  return parse_node(yaml::load_string(yaml_text, source_name), yaml::Source{source_name});
}

RobotModel load_robot(const std::string& path) {
  return parse_node(yaml::load_file(path), yaml::Source{path});
}

std::string robot_to_yaml(const RobotModel& model) {
  YAML::Node root;
  root["name"] = model.name();
  root["gravity"] = yaml::seq(model.gravity());
  root["damping"] = yaml::seq(model.damping());
  root["motor_inertia"] = yaml::seq(model.motor_inertia());
  root["tcp"] = transform_node(model.tcp());
  for (const Link& link : model.links()) {
    YAML::Node ln;
    ln["mass"] = link.mass;
    ln["com"] = yaml::seq(link.com);
    YAML::Node inertia(YAML::NodeType::Sequence);
    for (int r = 0; r < 3; ++r) inertia.push_back(yaml::seq(Eigen::Vector3d(link.inertia.row(r).transpose())));
    ln["inertia"] = inertia;
    ln["axis"] = yaml::seq(link.axis);
    ln["offset"] = transform_node(link.offset);
    root["links"].push_back(ln);
  }
  YAML::Emitter out;
  out << root;
  return std::string(out.c_str()) + "\n";
}

RobotModel resolve_robot(const std::string& name_or_path) {
  if (name_or_path == "planar3" || name_or_path == "arm6") return RobotModel::builtin(name_or_path);
  if (std::filesystem::exists(name_or_path)) return load_robot(name_or_path);
  throw ConfigError("robot '" + name_or_path + "' is neither a built-in (planar3, arm6) nor an existing file");
}

}  // namespace dcm
