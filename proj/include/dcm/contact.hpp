#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dcm/robot_model.hpp"

namespace dcm {

enum class ParamBlock { kStiffness = 0, kAttachment = 1, kRest = 2 };
enum class ParamRole { kFixed, kFitOffline, kEstimateOnline };

inline constexpr std::array<ParamBlock, 3> kAllBlocks = {ParamBlock::kStiffness, ParamBlock::kAttachment,
                                                         ParamBlock::kRest};

const char* block_name(ParamBlock block);  // "K", "x", "xo"
const char* role_name(ParamRole role);     // "fixed", "fit", "estimate"
ParamBlock parse_block(const std::string& name);
ParamRole parse_role(const std::string& name);

/// Compliant point contact exerting F = diag(K) (x_o - x_w) on the robot, where
/// x_w = p + R x is the attachment point in world coordinates.
///
/// stiffness  K, N/m, world frame; its direction is the contact normal.
/// attachment x, m, TCP frame.
/// rest       x_o, m, world frame.
template <class S>
struct BasicContactPrimitive {
  Vec3<S> stiffness = Vec3<S>::Zero();
  Vec3<S> attachment = Vec3<S>::Zero();
  Vec3<S> rest = Vec3<S>::Zero();
  std::array<ParamRole, 3> roles = {ParamRole::kFixed, ParamRole::kFixed, ParamRole::kFixed};
  // Opt-in: zero force whenever the spring would pull the robot toward the surface.
  bool unilateral = false;

  const Vec3<S>& block(ParamBlock b) const {
    return b == ParamBlock::kStiffness ? stiffness : b == ParamBlock::kAttachment ? attachment : rest;
  }
  Vec3<S>& block(ParamBlock b) {
    return b == ParamBlock::kStiffness ? stiffness : b == ParamBlock::kAttachment ? attachment : rest;
  }
  ParamRole role(ParamBlock b) const { return roles[static_cast<int>(b)]; }
  void set_role(ParamBlock b, ParamRole r) { roles[static_cast<int>(b)] = r; }

  template <class T>
  BasicContactPrimitive<T> cast() const {
    BasicContactPrimitive<T> out;
    out.stiffness = stiffness.template cast<T>();
    out.attachment = attachment.template cast<T>();
    out.rest = rest.template cast<T>();
    out.roles = roles;
    out.unilateral = unilateral;
    return out;
  }
};

using ContactPrimitive = BasicContactPrimitive<double>;

/// Unit normal K / |K|; undefined (nullopt) when |K| <= 1e-9 N/m.
std::optional<Eigen::Vector3d> contact_normal(const ContactPrimitive& prim);

/// Packing table between a primitive set and a flat parameter vector phi.
/// Each selected (primitive, block) pair owns three consecutive entries.
class ParamLayout {
 public:
  struct Slot {
    int primitive;
    ParamBlock block;
    int offset;
  };

  ParamLayout() = default;
  /// Every block whose role equals `role`, in primitive-then-block order.
  static ParamLayout select(const std::vector<ContactPrimitive>& prims, ParamRole role);
  static ParamLayout from_slots(const std::vector<std::pair<int, ParamBlock>>& blocks);

  int size() const { return 3 * static_cast<int>(slots_.size()); }
  int block_count() const { return static_cast<int>(slots_.size()); }
  const std::vector<Slot>& slots() const { return slots_; }
  std::optional<int> offset_of(int primitive, ParamBlock block) const;

  Eigen::VectorXd pack(const std::vector<ContactPrimitive>& prims) const;

  /// Copies `base` into scalar type S and overwrites the selected blocks from phi.
  template <class S>
  std::vector<BasicContactPrimitive<S>> unpack(const std::vector<ContactPrimitive>& base,
                                               const VecX<S>& phi) const {
    std::vector<BasicContactPrimitive<S>> out;
    out.reserve(base.size());
    for (const auto& p : base) out.push_back(p.template cast<S>());
    for (const Slot& s : slots_) out[s.primitive].block(s.block) = phi.template segment<3>(s.offset);
    return out;
  }

  /// Column label for entry i, e.g. "K0_z" or "xo1_x".
  std::string label(int index) const;

 private:
  std::vector<Slot> slots_;
};

template <class S>
Vec3<S> contact_point_world(const BasicContactPrimitive<S>& prim, const Pose<S>& pose) {
  return pose.position + pose.rotation * prim.attachment;
}

template <class S>
Vec3<S> contact_force(const BasicContactPrimitive<S>& prim, const Pose<S>& pose) {
  const Vec3<S> stretch = prim.rest - contact_point_world(prim, pose);
  if (prim.unilateral && value_of(prim.stiffness.dot(stretch)) < 0.0) return Vec3<S>::Zero();
  return prim.stiffness.cwiseProduct(stretch);
}

/// J_i = D_q(p + R x_i), 3 x n.
template <class S>
MatX<S> contact_jacobian(const RobotModel& model, const BasicContactPrimitive<S>& prim, const VecX<S>& q) {
  const ChainKinematics<S> chain = chain_kinematics(model, q);
  return point_jacobian(chain, contact_point_world(prim, chain.tcp));
}

/// tau_e = sum_i J_i^T F_i using precomputed chain kinematics.
template <class S>
VecX<S> total_contact_torque(const ChainKinematics<S>& chain, const std::vector<BasicContactPrimitive<S>>& prims) {
  VecX<S> tau = VecX<S>::Zero(static_cast<Eigen::Index>(chain.axis.size()));
  for (const auto& prim : prims) {
    const Vec3<S> point = contact_point_world(prim, chain.tcp);
    tau += point_jacobian(chain, point).transpose() * contact_force(prim, chain.tcp);
  }
  return tau;
}

template <class S>
VecX<S> total_contact_torque(const RobotModel& model, const std::vector<BasicContactPrimitive<S>>& prims,
                             const VecX<S>& q) {
  return total_contact_torque(chain_kinematics(model, q), prims);
}

/// Elastic energy sum_i 1/2 (x_o - x_w)^T diag(K) (x_o - x_w).
double spring_energy(const std::vector<ContactPrimitive>& prims, const Pose<double>& pose);

}  // namespace dcm
