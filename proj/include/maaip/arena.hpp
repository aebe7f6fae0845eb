#pragma once

// Planar duel simulation: two articulated top-down fighters (torso, head and
// two 2-link arms with fists), PD-servoed joints, a velocity-servoed root and
// penalty contacts between the fighters' part circles.
//
// Dynamics use a decoupled joint-space model: the root is a rigid body with
// the fighter's total mass and rest-pose inertia, each joint has a constant
// effective inertia, and a contact force on an arm part acts both on the root
// and (through the chain Jacobian transpose) on every joint above the part.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maaip/error.hpp"
#include "maaip/vec2.hpp"

namespace maaip {

inline constexpr int kNumParts = 8;
inline constexpr int kNumJoints = 4;
inline constexpr int kActionDim = 7;
inline constexpr int kNumAgents = 2;

enum class BodyPart : std::uint8_t {
  Torso,
  Head,
  UpperArmL,
  ForearmL,
  FistL,
  UpperArmR,
  ForearmR,
  FistR,
};

inline constexpr std::array<const char*, kNumParts> kPartNames = {
    "torso", "head", "upper_arm_l", "forearm_l", "fist_l", "upper_arm_r", "forearm_r", "fist_r"};

// Joint order used by every joint-sized array.
enum Joint : int { ShoulderL = 0, ShoulderR = 1, ElbowL = 2, ElbowR = 3 };

// Action layout: desired root velocity in the local frame (forward, left),
// desired yaw rate, then joint targets in Joint order.
using ActionVector = std::array<double, kActionDim>;

inline constexpr bool is_damage_part(BodyPart p) {
  return p == BodyPart::Head || p == BodyPart::Torso;
}

struct PdGains {
  double kp = 0.0;  // N·m/rad
  double kd = 0.0;  // N·m·s/rad
  friend bool operator==(const PdGains&, const PdGains&) = default;
};

struct JointLimit {
  double lo = 0.0;
  double hi = 0.0;
  friend bool operator==(const JointLimit&, const JointLimit&) = default;
};

struct LinkLengths {
  double shoulder_offset = 0.20;  // lateral distance torso center -> shoulder
  double head_offset = 0.06;      // forward distance torso center -> head
  double upper_arm = 0.28;
  double forearm = 0.26;
  friend bool operator==(const LinkLengths&, const LinkLengths&) = default;
};

struct ArenaConfig {
  double arena_halfextent = 4.0;
  double dt_sim = 1.0 / 60.0;
  int substeps = 2;
  double control_hz = 30.0;
  std::array<double, kNumParts> part_radii = {0.20, 0.11, 0.06, 0.05, 0.06, 0.06, 0.05, 0.06};
  LinkLengths links;
  std::array<double, kNumParts> masses = {30.0, 5.0, 2.5, 1.5, 0.5, 2.5, 1.5, 0.5};
  std::array<PdGains, kNumJoints> pd_gains = {{{60.0, 6.0}, {60.0, 6.0}, {30.0, 2.0}, {30.0, 2.0}}};
  double joint_armature = 0.02;  // kg·m² added to every effective joint inertia
  double k_lin = 400.0;          // N·s/m
  double k_ang = 40.0;           // N·m·s/rad
  double torque_limit = 60.0;
  double contact_stiffness = 1000.0;
  double contact_damping = 10.0;
  double wall_stiffness = 4000.0;
  double wall_damping = 200.0;
  double max_linvel_cmd = 2.0;
  double max_yawrate_cmd = 4.0;
  // Kinematic bounds enforced after every substep.
  double max_linvel = 4.0;
  double max_angvel = 12.0;
  double max_joint_vel = 40.0;
  std::array<JointLimit, kNumJoints> joint_limits = {{{-2.5, 2.5}, {-2.5, 2.5}, {0.0, 2.6}, {0.0, 2.6}}};
  int episode_len = 300;
  double min_spawn_separation = 0.6;

  void validate() const {
    const auto positive = [](double v, const char* what) {
      if (!(v > 0.0)) throw ConfigError(std::string("arena: ") + what + " must be > 0");
    };
    positive(arena_halfextent, "arena_halfextent");
    positive(dt_sim, "dt_sim");
    positive(control_hz, "control_hz");
    positive(contact_stiffness, "contact_stiffness");
    positive(torque_limit, "torque_limit");
    for (double r : part_radii) positive(r, "part radius");
    for (double m : masses) positive(m, "part mass");
    if (contact_damping < 0.0) throw ConfigError("arena: contact_damping must be >= 0");
    const double ratio = (1.0 / control_hz) / dt_sim;
    if (substeps < 1 || std::abs(ratio - std::round(ratio)) > 1e-9 ||
        static_cast<int>(std::lround(ratio)) != substeps) {
      throw ConfigError("arena: control period must be exactly `substeps` physics steps (got ratio " +
                        std::to_string(ratio) + ", substeps " + std::to_string(substeps) + ")");
    }
    for (const auto& l : joint_limits) {
      if (!(l.lo < l.hi)) throw ConfigError("arena: joint limit lo must be < hi");
    }
    if (episode_len < 2) throw ConfigError("arena: episode_len must be >= 2");
  }

  friend bool operator==(const ArenaConfig&, const ArenaConfig&) = default;

  double total_mass() const {
    double m = 0.0;
    for (double v : masses) m += v;
    return m;
  }
};

struct FighterState {
  Vec2 root_pos;
  double root_heading = 0.0;
  Vec2 root_linvel;
  double root_angvel = 0.0;
  std::array<double, kNumJoints> joint_angles{};
  std::array<double, kNumJoints> joint_vels{};
  std::array<double, kNumJoints> pd_targets{};
  Vec2 root_cmd_linvel;  // local frame: x forward, y left
  double root_cmd_yawrate = 0.0;

  friend bool operator==(const FighterState&, const FighterState&) = default;
};

struct PartPose {
  Vec2 pos;
  double angle = 0.0;
  Vec2 linvel;
  double angvel = 0.0;
};

using PartPoses = std::array<PartPose, kNumParts>;

struct PartRef {
  int agent = 0;
  BodyPart part = BodyPart::Torso;
  friend bool operator==(PartRef, PartRef) = default;
};

// Force applied by `src` onto `dst`; `normal` is the direction of that force.
struct ContactEvent {
  PartRef src;
  PartRef dst;
  Vec2 normal;
  double force_mag = 0.0;
  Vec2 point;
};

struct ArenaState {
  ArenaConfig config;
  std::array<FighterState, kNumAgents> fighters;
  // Inactive fighters are neither integrated nor collided.
  std::array<bool, kNumAgents> active = {true, true};
  std::int64_t step = 0;

  friend bool operator==(const ArenaState& a, const ArenaState& b) {
    return a.fighters == b.fighters && a.active == b.active && a.step == b.step;
  }
};

struct StepResult {
  std::vector<ContactEvent> contacts;
};

// ---------------------------------------------------------------------------
// Kinematics

namespace detail {

// d(world link angle)/d(joint angle) for each joint; the right arm mirrors
// the left, and positive elbow angles bend the forearm toward the midline.
inline constexpr std::array<double, kNumJoints> kJointSign = {1.0, -1.0, -1.0, 1.0};

struct ArmChain {
  Vec2 shoulder, elbow, wrist;
  double upper_angle, fore_angle;
  double upper_rate, fore_rate;
  Vec2 shoulder_vel, elbow_vel, wrist_vel;
};

inline ArmChain arm_chain(const FighterState& f, const LinkLengths& links, bool left) {
  const double side = left ? 1.0 : -1.0;
  const int sj = left ? ShoulderL : ShoulderR;
  const int ej = left ? ElbowL : ElbowR;
  const Vec2 lateral = unit_from_angle(f.root_heading + 1.5707963267948966);
  ArmChain c{};
  const Vec2 r_sh = side * links.shoulder_offset * lateral;
  c.shoulder = f.root_pos + r_sh;
  c.shoulder_vel = f.root_linvel + cross(f.root_angvel, r_sh);
  c.upper_angle = f.root_heading + kJointSign[sj] * f.joint_angles[sj];
  c.upper_rate = f.root_angvel + kJointSign[sj] * f.joint_vels[sj];
  const Vec2 r_up = links.upper_arm * unit_from_angle(c.upper_angle);
  c.elbow = c.shoulder + r_up;
  c.elbow_vel = c.shoulder_vel + cross(c.upper_rate, r_up);
  c.fore_angle = c.upper_angle + kJointSign[ej] * f.joint_angles[ej];
  c.fore_rate = c.upper_rate + kJointSign[ej] * f.joint_vels[ej];
  const Vec2 r_fo = links.forearm * unit_from_angle(c.fore_angle);
  c.wrist = c.elbow + r_fo;
  c.wrist_vel = c.elbow_vel + cross(c.fore_rate, r_fo);
  return c;
}

}  // namespace detail

// World pose and velocity of each part. Arm segments sit at their link
// midpoints; fists sit at the wrist.
inline PartPoses forward_kinematics(const FighterState& f, const ArenaConfig& config) {
  PartPoses out{};
  out[static_cast<int>(BodyPart::Torso)] = {f.root_pos, f.root_heading, f.root_linvel, f.root_angvel};
  const Vec2 r_head = config.links.head_offset * unit_from_angle(f.root_heading);
  out[static_cast<int>(BodyPart::Head)] = {f.root_pos + r_head, f.root_heading,
                                           f.root_linvel + cross(f.root_angvel, r_head), f.root_angvel};
  for (bool left : {true, false}) {
    const auto c = detail::arm_chain(f, config.links, left);
    const int base = left ? static_cast<int>(BodyPart::UpperArmL) : static_cast<int>(BodyPart::UpperArmR);
    const Vec2 up_mid = 0.5 * (c.shoulder + c.elbow);
    const Vec2 fo_mid = 0.5 * (c.elbow + c.wrist);
    out[base] = {up_mid, c.upper_angle, c.shoulder_vel + cross(c.upper_rate, up_mid - c.shoulder), c.upper_rate};
    out[base + 1] = {fo_mid, c.fore_angle, c.elbow_vel + cross(c.fore_rate, fo_mid - c.elbow), c.fore_rate};
    out[base + 2] = {c.wrist, c.fore_angle, c.wrist_vel, c.fore_rate};
  }
  return out;
}

// Effective inertia of each joint, evaluated at the straight-arm rest pose.
inline std::array<double, kNumJoints> joint_inertias(const ArenaConfig& cfg) {
  const auto& m = cfg.masses;
  const auto& l = cfg.links;
  std::array<double, kNumJoints> out{};
  for (bool left : {true, false}) {
    const int up = left ? 2 : 5;
    const double shoulder = m[up] * std::pow(0.5 * l.upper_arm, 2) +
                            m[up + 1] * std::pow(l.upper_arm + 0.5 * l.forearm, 2) +
                            m[up + 2] * std::pow(l.upper_arm + l.forearm, 2);
    const double elbow = m[up + 1] * std::pow(0.5 * l.forearm, 2) + m[up + 2] * std::pow(l.forearm, 2);
    out[left ? ShoulderL : ShoulderR] = shoulder + cfg.joint_armature;
    out[left ? ElbowL : ElbowR] = elbow + cfg.joint_armature;
  }
  return out;
}

// Yaw inertia of the whole fighter about the root at the rest pose.
inline double root_inertia(const ArenaConfig& cfg) {
  FighterState rest;
  const auto parts = forward_kinematics(rest, cfg);
  double inertia = 0.5 * cfg.masses[0] * cfg.part_radii[0] * cfg.part_radii[0];
  for (int p = 1; p < kNumParts; ++p) {
    inertia += cfg.masses[p] * dot(parts[p].pos, parts[p].pos);
  }
  return inertia;
}

inline double pd_torque(const PdGains& gains, double target, double angle, double velocity) {
  return gains.kp * (target - angle) - gains.kd * velocity;
}

// Penalty normal force for an overlap `depth` (> 0 when overlapping) and
// separation rate `separation_rate` (negative when closing).
inline double penalty_contact_force(double depth, double separation_rate, double stiffness, double damping) {
  if (depth <= 0.0) return 0.0;
  return stiffness * depth + damping * std::max(0.0, -separation_rate);
}

// ---------------------------------------------------------------------------
// Spawning

// Joint poses to sample from when spawning from demonstrations.
using JointPose = std::array<double, kNumJoints>;

struct SpawnOptions {
  // Overrides config.min_spawn_separation when > 0.
  double min_separation = 0.0;
  // Non-empty: joint poses are sampled from this pool (demo initialization).
  std::span<const JointPose> pose_pool;
  bool from_demo = false;
  // Keeps roots this far from the walls.
  double wall_margin = 0.8;
};

inline ArenaState spawn_arena(const ArenaConfig& config, std::uint64_t seed, const SpawnOptions& opts = {}) {
  config.validate();
  if (opts.from_demo && opts.pose_pool.empty()) {
    throw ConfigError("spawn_arena: demo initialization requested with an empty dataset");
  }
  const double extent = config.arena_halfextent - opts.wall_margin;
  if (!(extent > 0.0)) {
    throw ConfigError("spawn_arena: over-constrained config, arena too small for the wall margin");
  }
  const double min_sep = opts.min_separation > 0.0 ? opts.min_separation : config.min_spawn_separation;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(-extent, extent);
  std::uniform_real_distribution<double> ang(-3.14159265358979323846, 3.14159265358979323846);

  ArenaState state;
  state.config = config;
  bool placed = false;
  Vec2 p0, p1;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    p0 = {pos(rng), pos(rng)};
    p1 = {pos(rng), pos(rng)};
    placed = norm(p1 - p0) >= min_sep;
  }
  if (!placed) {
    throw ConfigError("spawn_arena: over-constrained config, could not place fighters " +
                      std::to_string(min_sep) + " m apart after 100 tries");
  }
  state.fighters[0].root_pos = p0;
  state.fighters[1].root_pos = p1;
  for (auto& f : state.fighters) {
    f.root_heading = ang(rng);
    if (opts.from_demo) {
      std::uniform_int_distribution<std::size_t> pick(0, opts.pose_pool.size() - 1);
      f.joint_angles = opts.pose_pool[pick(rng)];
      for (int j = 0; j < kNumJoints; ++j) {
        f.joint_angles[j] = std::clamp(f.joint_angles[j], config.joint_limits[j].lo, config.joint_limits[j].hi);
      }
    }
    f.pd_targets = f.joint_angles;
  }
  return state;
}

// ---------------------------------------------------------------------------
// Control

inline void apply_action(FighterState& f, const ActionVector& a, const ArenaConfig& config) {
  for (double v : a) {
    if (!std::isfinite(v)) throw InvalidInput("apply_actions: non-finite action entry");
  }
  Vec2 cmd{a[0], a[1]};
  const double speed = norm(cmd);
  if (speed > config.max_linvel_cmd) cmd *= config.max_linvel_cmd / speed;
  f.root_cmd_linvel = cmd;
  f.root_cmd_yawrate = std::clamp(a[2], -config.max_yawrate_cmd, config.max_yawrate_cmd);
  for (int j = 0; j < kNumJoints; ++j) {
    f.pd_targets[j] = std::clamp(a[3 + j], config.joint_limits[j].lo, config.joint_limits[j].hi);
  }
}

inline void apply_actions(ArenaState& state, const std::array<ActionVector, kNumAgents>& actions) {
  for (int i = 0; i < kNumAgents; ++i) apply_action(state.fighters[i], actions[i], state.config);
}

// ---------------------------------------------------------------------------
// Integration

namespace detail {

struct Wrench {
  Vec2 force;
  double torque = 0.0;                     // about the root
  std::array<double, kNumJoints> joint{};  // generalized joint torques from contacts
};

// Applies a world force at `point` on part `part` of fighter `f`.
inline void accumulate_part_force(Wrench& w, const FighterState& f, const ArenaConfig& cfg, BodyPart part,
                                  Vec2 point, Vec2 force) {
  w.force += force;
  w.torque += cross(point - f.root_pos, force);
  const int p = static_cast<int>(part);
  if (p < static_cast<int>(BodyPart::UpperArmL)) return;
  const bool left = p <= static_cast<int>(BodyPart::FistL);
  const int seg = left ? p - static_cast<int>(BodyPart::UpperArmL) : p - static_cast<int>(BodyPart::UpperArmR);
  const auto c = arm_chain(f, cfg.links, left);
  const int sj = left ? ShoulderL : ShoulderR;
  const int ej = left ? ElbowL : ElbowR;
  w.joint[sj] += kJointSign[sj] * cross(point - c.shoulder, force);
  if (seg >= 1) w.joint[ej] += kJointSign[ej] * cross(point - c.elbow, force);
}

inline void check_finite(const FighterState& f, int agent) {
  const std::string who = "fighter " + std::to_string(agent) + " ";
  if (!is_finite(f.root_pos)) throw SimulationDiverged(who + "root_pos");
  if (!std::isfinite(f.root_heading)) throw SimulationDiverged(who + "root_heading");
  if (!is_finite(f.root_linvel)) throw SimulationDiverged(who + "root_linvel");
  if (!std::isfinite(f.root_angvel)) throw SimulationDiverged(who + "root_angvel");
  for (int j = 0; j < kNumJoints; ++j) {
    if (!std::isfinite(f.joint_angles[j])) throw SimulationDiverged(who + "joint_angles");
    if (!std::isfinite(f.joint_vels[j])) throw SimulationDiverged(who + "joint_vels");
  }
}

inline void substep(ArenaState& state, std::vector<ContactEvent>& events) {
  const ArenaConfig& cfg = state.config;
  const double dt = cfg.dt_sim;
  std::array<Wrench, kNumAgents> wrench{};
  std::array<PartPoses, kNumAgents> parts{};
  for (int i = 0; i < kNumAgents; ++i) {
    if (state.active[i]) parts[i] = forward_kinematics(state.fighters[i], cfg);
  }

  if (state.active[0] && state.active[1]) {
    for (int pa = 0; pa < kNumParts; ++pa) {
      for (int pb = 0; pb < kNumParts; ++pb) {
        const PartPose& a = parts[0][pa];
        const PartPose& b = parts[1][pb];
        const Vec2 delta = b.pos - a.pos;
        const double dist = norm(delta);
        const double depth = cfg.part_radii[pa] + cfg.part_radii[pb] - dist;
        if (depth <= 0.0) continue;
        const Vec2 n = dist > 1e-12 ? (1.0 / dist) * delta : Vec2{1.0, 0.0};
        const double sep_rate = dot(b.linvel - a.linvel, n);
        const double f = penalty_contact_force(depth, sep_rate, cfg.contact_stiffness, cfg.contact_damping);
        const Vec2 point = a.pos + (cfg.part_radii[pa] - 0.5 * depth) * n;
        const PartRef ra{0, static_cast<BodyPart>(pa)};
        const PartRef rb{1, static_cast<BodyPart>(pb)};
        events.push_back({ra, rb, n, f, point});
        events.push_back({rb, ra, -n, f, point});
        accumulate_part_force(wrench[1], state.fighters[1], cfg, rb.part, point, f * n);
        accumulate_part_force(wrench[0], state.fighters[0], cfg, ra.part, point, -f * n);
      }
    }
  }

  const double mass = cfg.total_mass();
  const double yaw_inertia = root_inertia(cfg);
  const auto inertia = joint_inertias(cfg);
  const double wall = cfg.arena_halfextent - cfg.part_radii[0];

  for (int i = 0; i < kNumAgents; ++i) {
    if (!state.active[i]) continue;
    FighterState& f = state.fighters[i];
    Wrench& w = wrench[i];

    const Vec2 v_des = rotate(f.root_cmd_linvel, f.root_heading);
    w.force += cfg.k_lin * (v_des - f.root_linvel);
    w.torque += cfg.k_ang * (f.root_cmd_yawrate - f.root_angvel);
    // Walls push the torso back into the arena.
    const auto wall_force = [&](double pos, double vel) {
      if (pos > wall) return -cfg.wall_stiffness * (pos - wall) - cfg.wall_damping * std::max(0.0, vel);
      if (pos < -wall) return cfg.wall_stiffness * (-wall - pos) - cfg.wall_damping * std::min(0.0, vel);
      return 0.0;
    };
    w.force += Vec2{wall_force(f.root_pos.x, f.root_linvel.x), wall_force(f.root_pos.y, f.root_linvel.y)};

    f.root_linvel += (dt / mass) * w.force;
    f.root_angvel += (dt / yaw_inertia) * w.torque;
    const double speed = norm(f.root_linvel);
    if (speed > cfg.max_linvel) f.root_linvel *= cfg.max_linvel / speed;
    f.root_angvel = std::clamp(f.root_angvel, -cfg.max_angvel, cfg.max_angvel);
    f.root_pos += dt * f.root_linvel;
    f.root_heading = wrap_angle(f.root_heading + dt * f.root_angvel);
    for (int axis = 0; axis < 2; ++axis) {
      double& p = axis == 0 ? f.root_pos.x : f.root_pos.y;
      double& v = axis == 0 ? f.root_linvel.x : f.root_linvel.y;
      const double bound = cfg.arena_halfextent;
      if (p > bound || p < -bound) {
        p = std::clamp(p, -bound, bound);
        v = 0.0;
      }
    }

    for (int j = 0; j < kNumJoints; ++j) {
      const double tau = std::clamp(pd_torque(cfg.pd_gains[j], f.pd_targets[j], f.joint_angles[j], f.joint_vels[j]),
                                    -cfg.torque_limit, cfg.torque_limit) +
                         w.joint[j];
      double& qd = f.joint_vels[j];
      double& q = f.joint_angles[j];
      qd = std::clamp(qd + dt * tau / inertia[j], -cfg.max_joint_vel, cfg.max_joint_vel);
      q += dt * qd;
      const JointLimit& lim = cfg.joint_limits[j];
      if (q < lim.lo) {
        q = lim.lo;
        qd = std::max(0.0, qd);
      } else if (q > lim.hi) {
        q = lim.hi;
        qd = std::min(0.0, qd);
      }
    }
    check_finite(f, i);
  }
}

}  // namespace detail

// Advances one control step (config.substeps physics steps) and returns every
// contact event generated during it.
inline StepResult step_physics(ArenaState& state) {
  StepResult result;
  for (int s = 0; s < state.config.substeps; ++s) detail::substep(state, result.contacts);
  ++state.step;
  return result;
}

// The bounds the integrator maintains: finite values, inside the arena,
// wrapped heading, speeds and joint angles within their limits.
inline void check_fighter_state(const FighterState& f, const ArenaConfig& cfg) {
  detail::check_finite(f, 0);
  const double slack = 1e-9;
  const auto fail = [](const std::string& what) { throw InvalidInput("fighter state: " + what); };
  if (std::abs(f.root_pos.x) > cfg.arena_halfextent + slack || std::abs(f.root_pos.y) > cfg.arena_halfextent + slack) {
    fail("root outside the arena");
  }
  if (std::abs(f.root_heading) > 3.141592653589793 + slack) fail("heading not wrapped");
  if (norm(f.root_linvel) > cfg.max_linvel + slack) fail("root speed above max_linvel");
  if (std::abs(f.root_angvel) > cfg.max_angvel + slack) fail("yaw rate above max_angvel");
  for (int j = 0; j < kNumJoints; ++j) {
    if (f.joint_angles[j] < cfg.joint_limits[j].lo - slack || f.joint_angles[j] > cfg.joint_limits[j].hi + slack) {
      fail("joint angle outside its limit");
    }
    if (std::abs(f.joint_vels[j]) > cfg.max_joint_vel + slack) fail("joint speed above max_joint_vel");
  }
}

// Opponent-applied normal force on the receiver's damage parts (head, torso).
inline double damage_tally(std::span<const ContactEvent> contacts, int receiver) {
  double total = 0.0;
  for (const ContactEvent& c : contacts) {
    if (c.src.agent != receiver && c.dst.agent == receiver && is_damage_part(c.dst.part)) total += c.force_mag;
  }
  return total;
}

}  // namespace maaip
