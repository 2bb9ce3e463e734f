#pragma once

// Internal helpers for reading YAML documents with line-numbered errors.

#include <yaml-cpp/yaml.h>

#include <Eigen/Dense>
#include <string>

#include "dcm/errors.hpp"

namespace dcm::yaml {

/// Context for error messages: the source name (usually a file path).
struct Source {
  std::string name;

  [[noreturn]] void fail(const YAML::Node& node, const std::string& message) const {
    const YAML::Mark mark = node.Mark();
    if (mark.line >= 0) throw ConfigError(name + ":" + std::to_string(mark.line + 1) + ": " + message);
    throw ConfigError(name + ": " + message);
  }

  YAML::Node require(const YAML::Node& parent, const std::string& key, const std::string& what) const {
    if (!parent.IsMap()) fail(parent, what + " must be a mapping");
    YAML::Node child = parent[key];
    if (!child) fail(parent, what + " is missing field '" + key + "'");
    return child;
  }

  double scalar(const YAML::Node& node, const std::string& what) const {
    try {
      return node.as<double>();
    } catch (const YAML::Exception&) {
      fail(node, what + " must be a number");
    }
  }

  Eigen::VectorXd vector(const YAML::Node& node, const std::string& what, int expected = -1) const {
    if (!node.IsSequence()) fail(node, what + " must be a list of numbers");
    if (expected >= 0 && static_cast<int>(node.size()) != expected)
      fail(node, what + " must have " + std::to_string(expected) + " entries");
    Eigen::VectorXd v(node.size());
    for (std::size_t i = 0; i < node.size(); ++i) v(i) = scalar(node[i], what);
    return v;
  }

  Eigen::Vector3d vec3(const YAML::Node& node, const std::string& what) const { return vector(node, what, 3); }

  Eigen::Matrix3d mat3(const YAML::Node& node, const std::string& what) const {
    if (!node.IsSequence() || node.size() != 3) fail(node, what + " must be a 3x3 nested list");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) m.row(r) = vec3(node[r], what).transpose();
    return m;
  }
};

inline YAML::Node load_file(const std::string& path) {
  try {
    return YAML::LoadFile(path);
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot open '" + path + "'");
  } catch (const YAML::ParserException& e) {
    throw ConfigError(path + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

inline YAML::Node load_string(const std::string& text, const std::string& name) {
  try {
    return YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(name + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
}

template <class Derived>
YAML::Node seq(const Eigen::MatrixBase<Derived>& v) {
  YAML::Node node(YAML::NodeType::Sequence);
  node.SetStyle(YAML::EmitterStyle::Flow);
  for (Eigen::Index i = 0; i < v.size(); ++i) node.push_back(v(i));
  return node;
}

}  // namespace dcm::yaml
