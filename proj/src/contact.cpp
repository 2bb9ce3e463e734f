#include "dcm/contact.hpp"

#include <set>

#include "dcm/errors.hpp"

namespace dcm {

const char* block_name(ParamBlock block) {
  switch (block) {
    case ParamBlock::kStiffness:
      return "K";
    case ParamBlock::kAttachment:
      return "x";
    case ParamBlock::kRest:
      return "xo";
  }
  return "?";
}

const char* role_name(ParamRole role) {
  switch (role) {
    case ParamRole::kFixed:
      return "fixed";
    case ParamRole::kFitOffline:
      return "fit";
    case ParamRole::kEstimateOnline:
      return "estimate";
  }
  return "?";
}

ParamBlock parse_block(const std::string& name) {
  if (name == "K") return ParamBlock::kStiffness;
  if (name == "x") return ParamBlock::kAttachment;
  if (name == "xo" || name == "x_o") return ParamBlock::kRest;
  throw ConfigError("unknown parameter block '" + name + "' (valid: K, x, xo)");
}

ParamRole parse_role(const std::string& name) {
  if (name == "fixed") return ParamRole::kFixed;
  if (name == "fit" || name == "fit-offline") return ParamRole::kFitOffline;
  if (name == "estimate" || name == "estimate-online") return ParamRole::kEstimateOnline;
  throw ConfigError("unknown parameter role '" + name + "' (valid: fixed, fit, estimate)");
}

std::optional<Eigen::Vector3d> contact_normal(const ContactPrimitive& prim) {
  const double norm = prim.stiffness.norm();
  if (norm <= 1e-9) return std::nullopt;
  return Eigen::Vector3d(prim.stiffness / norm);
}

ParamLayout ParamLayout::select(const std::vector<ContactPrimitive>& prims, ParamRole role) {
  std::vector<std::pair<int, ParamBlock>> blocks;
  for (int i = 0; i < static_cast<int>(prims.size()); ++i)
    for (ParamBlock b : kAllBlocks)
      if (prims[i].role(b) == role) blocks.emplace_back(i, b);
  return from_slots(blocks);
}

ParamLayout ParamLayout::from_slots(const std::vector<std::pair<int, ParamBlock>>& blocks) {
  ParamLayout layout;
  std::set<std::pair<int, int>> seen;
  for (const auto& [prim, block] : blocks) {
    if (prim < 0) throw ConfigError("negative primitive index in parameter layout");
    if (!seen.emplace(prim, static_cast<int>(block)).second)
      throw ConfigError("parameter block selected twice in layout");
    layout.slots_.push_back(Slot{prim, block, 3 * static_cast<int>(layout.slots_.size())});
  }
  return layout;
}

std::optional<int> ParamLayout::offset_of(int primitive, ParamBlock block) const {
  for (const Slot& s : slots_)
    if (s.primitive == primitive && s.block == block) return s.offset;
  return std::nullopt;
}

Eigen::VectorXd ParamLayout::pack(const std::vector<ContactPrimitive>& prims) const {
  Eigen::VectorXd phi(size());
  for (const Slot& s : slots_) {
    if (s.primitive >= static_cast<int>(prims.size())) throw ConfigError("parameter layout refers to a missing primitive");
    phi.segment<3>(s.offset) = prims[s.primitive].block(s.block);
  }
  return phi;
}

std::string ParamLayout::label(int index) const {
  const Slot& s = slots_.at(index / 3);
  static const char* axes[] = {"_x", "_y", "_z"};
  return std::string(block_name(s.block)) + std::to_string(s.primitive) + axes[index % 3];
}

double spring_energy(const std::vector<ContactPrimitive>& prims, const Pose<double>& pose) {
  double e = 0.0;
  for (const auto& p : prims) {
    const Eigen::Vector3d d = p.rest - contact_point_world(p, pose);
    e += 0.5 * d.dot(p.stiffness.cwiseProduct(d));
  }
  return e;
}

}  // namespace dcm
