#pragma once

#include <array>
#include <filesystem>
#include <numbers>
#include <optional>
#include <string>

#include "jenkins/common.hpp"

namespace jenkins::kinematics {

inline constexpr int kJoints = 6;

using JointAngles = std::array<double, kJoints>;

struct Joint {
  Vec3 axis = Vec3::UnitZ();
  double lo = -std::numbers::pi;
  double hi = std::numbers::pi;
  /// Translation from this joint to the next one, in this joint's rotated frame.
  Vec3 offset = Vec3::Zero();
  /// Passive joints (the gripper) never move during IK.
  bool passive = false;
};

struct Workspace {
  double shoulder_radius = 0.0;
  double shoulder_height = 0.0;
  double arm_length = 0.0;

  double outer_radius(double z) const;
  double inner_radius() const { return shoulder_radius + 0.4 * arm_length; }
};

class KinematicChain {
 public:
  std::array<Joint, kJoints> joints;
  double working_height = 0.0;
  Vec2 anchor{230.0, 0.0};
  double decay = 0.95;
  /// Bent, non-singular pose used to seed IK.
  JointAngles ready{0.0, 0.5, -1.0, 0.5, 0.0, 0.0};

  /// Koch-style follower: base yaw, shoulder/elbow/wrist pitch, wrist roll, gripper.
  static KinematicChain koch_follower();

  /// Text format, one joint per line:
  ///   ax ay az lo_deg hi_deg ox oy oz [passive]
  /// plus optional `working_height = z`, `anchor = x y` and `lambda = l` lines.
  /// '#' starts a comment.
  static KinematicChain parse(const std::string& text, const std::string& source = "<chain>");
  static KinematicChain load(const std::filesystem::path& path);
  std::string to_text() const;

  void validate() const;
  double total_reach() const;
  Workspace workspace() const;
  JointAngles clamp_to_limits(const JointAngles& q) const;
  bool within_limits(const JointAngles& q) const;
  JointAngles ready_pose() const;
};

Vec3 forward_kinematics(const KinematicChain& chain, const JointAngles& angles);

/// Radial projection onto the annulus at the target's height. A target on the
/// base axis takes its bearing from `previous` (or +x when none is given).
Vec3 clamp_to_workspace(const KinematicChain& chain, const Vec3& target,
                        const std::optional<Vec3>& previous = std::nullopt);

struct IkOptions {
  double damping = 0.01;
  int max_iterations = 200;
  double tolerance_mm = 0.5;
  double converged_mm = 1e-9;
  double jacobian_step = 1e-6;
  double max_step_rad = 0.2;
};

struct IkResult {
  JointAngles angles{};
  double residual_mm = 0.0;
  int iterations = 0;
  Vec3 target = Vec3::Zero();
};

class IkError : public Error {
 public:
  IkError(const std::string& what, IkResult best) : Error(what), best_(best) {}
  const IkResult& best() const { return best_; }

 private:
  IkResult best_;
};

/// 3 x 6 central-difference Jacobian of the end-effector position.
Eigen::Matrix<double, 3, kJoints> numeric_jacobian(const KinematicChain& chain, const JointAngles& q, double step);

/// Damped least squares from `initial` towards the workspace-clamped target.
/// Throws IkError when the best residual stays above the tolerance.
IkResult inverse_kinematics(const KinematicChain& chain, const Vec3& target, const JointAngles& initial,
                            const IkOptions& options = {});

struct ArmState {
  Vec2 position{230.0, 0.0};
  Vec2 anchor{230.0, 0.0};
  double decay = 0.95;
  double dt = kBinSeconds;
  JointAngles angles{};

  static ArmState at_anchor(const KinematicChain& chain);
};

/// p_t = anchor + decay * ((p_{t-1} - anchor) + v * dt)
Vec2 integrate_velocity(ArmState& state, const Vec2& velocity);

/// Closed-form steady-state offset from the anchor under constant velocity.
inline Vec2 steady_state_offset(double decay, const Vec2& velocity, double dt = kBinSeconds) {
  return decay * velocity * dt / (1.0 - decay);
}

}  // namespace jenkins::kinematics
