#include "jenkins/kinematics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include <Eigen/Geometry>

namespace jenkins::kinematics {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Joint make_joint(const Vec3& axis, double lo_deg, double hi_deg, const Vec3& offset, bool passive = false) {
  Joint j;
  j.axis = axis;
  j.lo = lo_deg * kDeg;
  j.hi = hi_deg * kDeg;
  j.offset = offset;
  j.passive = passive;
  return j;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(const std::string& token, const std::string& source, std::size_t line) {
  double v = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError(source, line, "expected a number, got '" + token + "'");
  }
  return v;
}

}  // namespace

double Workspace::outer_radius(double z) const {
  const double dz = z - shoulder_height;
  if (std::abs(dz) >= arm_length) return shoulder_radius;
  return shoulder_radius + std::sqrt(arm_length * arm_length - dz * dz);
}

KinematicChain KinematicChain::koch_follower() {
  KinematicChain c;
  c.joints = {
      make_joint(Vec3::UnitZ(), -170, 170, {30, 0, 0}),
      make_joint(Vec3::UnitY(), -100, 100, {110, 0, 0}),
      make_joint(Vec3::UnitY(), -170, 170, {110, 0, 0}),
      make_joint(Vec3::UnitY(), -135, 135, {60, 0, 0}),
      make_joint(Vec3::UnitX(), -180, 180, {30, 0, 0}),
      make_joint(Vec3::UnitX(), -45, 45, {0, 0, 0}, true),
  };
  return c;
}

KinematicChain KinematicChain::parse(const std::string& text, const std::string& source) {
  KinematicChain c;
  int joint = 0;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (const auto eq = line.find('='); eq != std::string::npos) {
      const std::string key = trim(line.substr(0, eq));
      std::istringstream values(line.substr(eq + 1));
      std::vector<double> nums;
      for (std::string tok; values >> tok;) nums.push_back(parse_number(tok, source, line_no));
      if (key == "working_height" && nums.size() == 1) {
        c.working_height = nums[0];
      } else if (key == "anchor" && nums.size() == 2) {
        c.anchor = Vec2(nums[0], nums[1]);
      } else if (key == "lambda" && nums.size() == 1) {
        c.decay = nums[0];
      } else {
        throw ParseError(source, line_no, "unknown or malformed setting '" + key + "'");
      }
      continue;
    }
    std::istringstream fields(line);
    std::vector<std::string> toks;
    for (std::string tok; fields >> tok;) toks.push_back(tok);
    const bool passive = toks.size() == 9 && toks[8] == "passive";
    if (toks.size() != 8 && !passive) {
      throw ParseError(source, line_no, "expected 'ax ay az lo_deg hi_deg ox oy oz [passive]'");
    }
    if (joint >= kJoints) throw ParseError(source, line_no, "more than 6 joints");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = parse_number(toks[std::size_t(i)], source, line_no);
    c.joints[std::size_t(joint++)] = make_joint({v[0], v[1], v[2]}, v[3], v[4], {v[5], v[6], v[7]}, passive);
  }
  if (joint != kJoints) {
    throw ParseError(source, line_no, "expected 6 joints, found " + std::to_string(joint));
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ParseError(source, line_no, e.what());
  }
  return c;
}

KinematicChain KinematicChain::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open chain file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

std::string KinematicChain::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "# ax ay az lo_deg hi_deg ox oy oz [passive]\n";
  for (const auto& j : joints) {
    out << j.axis.x() << ' ' << j.axis.y() << ' ' << j.axis.z() << ' ' << j.lo / kDeg << ' ' << j.hi / kDeg << ' '
        << j.offset.x() << ' ' << j.offset.y() << ' ' << j.offset.z() << (j.passive ? " passive" : "") << '\n';
  }
  out << "working_height = " << working_height << '\n';
  out << "anchor = " << anchor.x() << ' ' << anchor.y() << '\n';
  out << "lambda = " << decay << '\n';
  return out.str();
}

void KinematicChain::validate() const {
  for (int i = 0; i < kJoints; ++i) {
    const auto& j = joints[std::size_t(i)];
    if (std::abs(j.axis.norm() - 1.0) > 1e-9) {
      throw Error("joint " + std::to_string(i) + ": axis is not unit length");
    }
    if (!(j.lo <= j.hi)) throw Error("joint " + std::to_string(i) + ": lower limit exceeds upper limit");
    if (!j.offset.allFinite()) throw Error("joint " + std::to_string(i) + ": non-finite offset");
  }
  if (!(total_reach() > 0.0)) throw Error("chain has zero reach");
  if (!(decay > 0.0 && decay <= 1.0)) throw Error("lambda must be in (0, 1]");
  if (!anchor.allFinite() || !std::isfinite(working_height)) throw Error("non-finite anchor or working height");
}

double KinematicChain::total_reach() const {
  double r = 0.0;
  for (const auto& j : joints) r += j.offset.norm();
  return r;
}

Workspace KinematicChain::workspace() const {
  Workspace w;
  w.shoulder_radius = joints[0].offset.head<2>().norm();
  w.shoulder_height = joints[0].offset.z();
  for (int i = 1; i < kJoints; ++i) w.arm_length += joints[std::size_t(i)].offset.norm();
  return w;
}

JointAngles KinematicChain::clamp_to_limits(const JointAngles& q) const {
  JointAngles out;
  for (int i = 0; i < kJoints; ++i) {
    out[std::size_t(i)] = std::clamp(q[std::size_t(i)], joints[std::size_t(i)].lo, joints[std::size_t(i)].hi);
  }
  return out;
}

bool KinematicChain::within_limits(const JointAngles& q) const {
  for (int i = 0; i < kJoints; ++i) {
    if (q[std::size_t(i)] < joints[std::size_t(i)].lo || q[std::size_t(i)] > joints[std::size_t(i)].hi) return false;
  }
  return true;
}

JointAngles KinematicChain::ready_pose() const { return clamp_to_limits(ready); }

Vec3 forward_kinematics(const KinematicChain& chain, const JointAngles& angles) {
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  Vec3 p = Vec3::Zero();
  for (int i = 0; i < kJoints; ++i) {
    const auto& j = chain.joints[std::size_t(i)];
    r = r * Eigen::AngleAxisd(angles[std::size_t(i)], j.axis).toRotationMatrix();
    p += r * j.offset;
  }
  return p;
}

Vec3 clamp_to_workspace(const KinematicChain& chain, const Vec3& target, const std::optional<Vec3>& previous) {
  if (!target.allFinite()) throw Error("clamp_to_workspace: non-finite target");
  const Workspace ws = chain.workspace();
  Vec3 out = target;
  out.z() = std::clamp(target.z(), ws.shoulder_height - ws.arm_length, ws.shoulder_height + ws.arm_length);
  const double outer = ws.outer_radius(out.z());
  const double inner = std::min(ws.inner_radius(), outer);
  const double r = target.head<2>().norm();
  if (r >= inner && r <= outer) return out;
  Vec2 bearing;
  if (r > 0.0) {
    bearing = target.head<2>() / r;
  } else if (previous && previous->head<2>().norm() > 0.0) {
    bearing = previous->head<2>().normalized();
  } else {
    bearing = Vec2::UnitX();
  }
  out.head<2>() = bearing * std::clamp(r, inner, outer);
  return out;
}

Eigen::Matrix<double, 3, kJoints> numeric_jacobian(const KinematicChain& chain, const JointAngles& q, double step) {
  Eigen::Matrix<double, 3, kJoints> jac;
  for (int i = 0; i < kJoints; ++i) {
    JointAngles plus = q;
    JointAngles minus = q;
    plus[std::size_t(i)] += step;
    minus[std::size_t(i)] -= step;
    jac.col(i) = (forward_kinematics(chain, plus) - forward_kinematics(chain, minus)) / (2.0 * step);
  }
  return jac;
}

IkResult inverse_kinematics(const KinematicChain& chain, const Vec3& target, const JointAngles& initial,
                            const IkOptions& options) {
  if (!target.allFinite()) throw Error("inverse_kinematics: non-finite target");
  IkResult best;
  best.target = clamp_to_workspace(chain, target, forward_kinematics(chain, initial));
  JointAngles q = chain.clamp_to_limits(initial);
  Vec3 err = best.target - forward_kinematics(chain, q);
  double residual = err.norm();
  best.angles = q;
  best.residual_mm = residual;

  const double damping_sq = options.damping * options.damping;
  int it = 0;
  for (; it < options.max_iterations && residual > options.converged_mm; ++it) {
    Eigen::Matrix<double, 3, kJoints> jac = numeric_jacobian(chain, q, options.jacobian_step);
    for (int i = 0; i < kJoints; ++i) {
      if (chain.joints[std::size_t(i)].passive) jac.col(i).setZero();
    }
    Eigen::Matrix<double, kJoints, 1> dq;
    // Joints pinned at a limit and pushed outward drop out, then the step is re-solved.
    for (int pass = 0; pass <= kJoints; ++pass) {
      const Eigen::Matrix3d jjt = jac * jac.transpose() + damping_sq * Eigen::Matrix3d::Identity();
      dq = jac.transpose() * jjt.ldlt().solve(err);
      bool pinned = false;
      for (int i = 0; i < kJoints; ++i) {
        const auto& j = chain.joints[std::size_t(i)];
        const double qi = q[std::size_t(i)];
        if (jac.col(i).isZero(0.0)) continue;
        if ((qi <= j.lo && dq[i] < 0.0) || (qi >= j.hi && dq[i] > 0.0)) {
          jac.col(i).setZero();
          pinned = true;
        }
      }
      if (!pinned) break;
    }

    // Cap the largest joint move, then backtrack so the residual never grows.
    double scale = std::min(1.0, options.max_step_rad / std::max(dq.cwiseAbs().maxCoeff(), 1e-300));
    JointAngles next = q;
    Vec3 next_err = err;
    double next_residual = residual;
    for (int halving = 0; halving < 12; ++halving, scale *= 0.5) {
      for (int i = 0; i < kJoints; ++i) next[std::size_t(i)] = q[std::size_t(i)] + scale * dq[i];
      next = chain.clamp_to_limits(next);
      next_err = best.target - forward_kinematics(chain, next);
      next_residual = next_err.norm();
      if (next_residual < residual) break;
    }
    if (!(next_residual < residual)) break;
    q = next;
    err = next_err;
    residual = next_residual;
    best.angles = q;
    best.residual_mm = residual;
  }
  best.iterations = it;
  if (!(best.residual_mm <= options.tolerance_mm)) {
    std::ostringstream msg;
    msg << "inverse kinematics did not converge: residual " << best.residual_mm << " mm after " << it
        << " iterations";
    throw IkError(msg.str(), best);
  }
  return best;
}

ArmState ArmState::at_anchor(const KinematicChain& chain) {
  ArmState s;
  s.anchor = chain.anchor;
  s.position = chain.anchor;
  s.decay = chain.decay;
  const Vec3 target(chain.anchor.x(), chain.anchor.y(), chain.working_height);
  s.angles = inverse_kinematics(chain, target, chain.ready_pose()).angles;
  return s;
}

Vec2 integrate_velocity(ArmState& state, const Vec2& velocity) {
  if (!velocity.allFinite()) throw Error("integrate_velocity: non-finite velocity");
  state.position = state.anchor + state.decay * ((state.position - state.anchor) + velocity * state.dt);
  return state.position;
}

}  // namespace jenkins::kinematics
