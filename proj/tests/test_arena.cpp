#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maaip/arena.hpp"

using namespace maaip;

namespace {

ArenaState two_apart(double separation) {
  ArenaState s;
  s.fighters[0].root_pos = {-0.5 * separation, 0.0};
  s.fighters[1].root_pos = {0.5 * separation, 0.0};
  s.fighters[1].root_heading = 3.141592653589793;
  return s;
}

ActionVector random_action(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  ActionVector a{};
  for (double& v : a) v = u(rng);
  return a;
}

}  // namespace

TEST(Arena, SpawnIsDeterministic) {
  const ArenaConfig cfg;
  const ArenaState a = spawn_arena(cfg, 42);
  const ArenaState b = spawn_arena(cfg, 42);
  EXPECT_EQ(a.fighters, b.fighters);
  EXPECT_NE(spawn_arena(cfg, 43).fighters, a.fighters);
}

TEST(Arena, SpawnRespectsBoundsAndSeparation) {
  const ArenaConfig cfg;
  for (std::uint64_t seed = 1; seed < 200; ++seed) {
    const ArenaState s = spawn_arena(cfg, seed);
    for (const auto& f : s.fighters) {
      EXPECT_LE(std::abs(f.root_pos.x), cfg.arena_halfextent);
      EXPECT_LE(std::abs(f.root_pos.y), cfg.arena_halfextent);
    }
    EXPECT_GE(norm(s.fighters[0].root_pos - s.fighters[1].root_pos), cfg.min_spawn_separation);
  }
}

TEST(Arena, SpawnFromEmptyDemoPoolFails) {
  SpawnOptions opts;
  opts.from_demo = true;
  EXPECT_THROW(spawn_arena(ArenaConfig{}, 1, opts), ConfigError);
}

TEST(Arena, SpawnOverConstrainedFails) {
  ArenaConfig cfg;
  cfg.arena_halfextent = 1.0;
  SpawnOptions opts;
  opts.min_separation = 5.0;
  opts.wall_margin = 0.2;
  EXPECT_THROW(spawn_arena(cfg, 1, opts), ConfigError);
}

TEST(Arena, SpawnFromDemoUsesPoolPoses) {
  const std::vector<JointPose> pool = {{0.3, 0.4, 1.0, 1.2}};
  SpawnOptions opts;
  opts.from_demo = true;
  opts.pose_pool = pool;
  const ArenaState s = spawn_arena(ArenaConfig{}, 5, opts);
  for (const auto& f : s.fighters) {
    EXPECT_EQ(f.joint_angles, pool[0]);
    EXPECT_EQ(f.pd_targets, pool[0]);
  }
}

TEST(Arena, PdTorqueFormula) {
  EXPECT_DOUBLE_EQ(pd_torque({60.0, 6.0}, 0.7, 0.7, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(pd_torque({1.0, 0.0}, 1.0, 0.0, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(pd_torque({2.0, 0.5}, 1.0, 0.5, 2.0), 0.0);
}

TEST(Arena, ApplyActionClampsTargetsAndCommands) {
  ArenaState s = two_apart(2.0);
  ActionVector a{};
  a[0] = 10.0;
  a[2] = -100.0;
  a[3] = 10.0;   // shoulder L
  a[5] = -1.0;   // elbow L below its lower limit
  apply_actions(s, {a, ActionVector{}});
  const auto& f = s.fighters[0];
  EXPECT_DOUBLE_EQ(f.pd_targets[ShoulderL], 2.5);
  EXPECT_DOUBLE_EQ(f.pd_targets[ElbowL], 0.0);
  EXPECT_DOUBLE_EQ(norm(f.root_cmd_linvel), s.config.max_linvel_cmd);
  EXPECT_DOUBLE_EQ(f.root_cmd_yawrate, -s.config.max_yawrate_cmd);
}

TEST(Arena, ApplyActionRejectsNonFinite) {
  ArenaState s = two_apart(2.0);
  ActionVector a{};
  a[4] = std::nan("");
  EXPECT_THROW(apply_actions(s, {a, ActionVector{}}), InvalidInput);
  a[4] = INFINITY;
  EXPECT_THROW(apply_actions(s, {ActionVector{}, a}), InvalidInput);
}

TEST(Arena, IsolatedFighterAtRestStaysAtRest) {
  ArenaState s = two_apart(3.0);
  const auto before = s.fighters;
  for (int k = 0; k < 50; ++k) {
    const StepResult r = step_physics(s);
    EXPECT_TRUE(r.contacts.empty());
  }
  EXPECT_EQ(s.fighters, before);
  EXPECT_EQ(s.step, 50);
}

TEST(Arena, PenaltyContactFormula) {
  // Radii 0.1 m at 0.15 m: 0.05 m overlap.
  EXPECT_NEAR(penalty_contact_force(0.2 - 0.15, 0.0, 1000.0, 10.0), 50.0, 1e-12);
  EXPECT_NEAR(penalty_contact_force(0.05, -2.0, 1000.0, 10.0), 70.0, 1e-12);
  EXPECT_DOUBLE_EQ(penalty_contact_force(0.05, 2.0, 1000.0, 10.0), 50.0);
  EXPECT_DOUBLE_EQ(penalty_contact_force(0.0, -5.0, 1000.0, 10.0), 0.0);
  EXPECT_DOUBLE_EQ(penalty_contact_force(-0.1, -5.0, 1000.0, 10.0), 0.0);
  double prev = 0.0;
  for (double d = 0.001; d < 0.2; d += 0.001) {
    const double f = penalty_contact_force(d, -0.3, 1000.0, 10.0);
    EXPECT_GT(f, prev);
    prev = f;
  }
}

TEST(Arena, TorsoContactMatchesPenaltyModel) {
  ArenaConfig cfg;
  cfg.part_radii[0] = 0.1;
  ArenaState s = two_apart(0.15);
  s.config = cfg;
  // Fold both arms back so only the torsos (and heads) can touch.
  for (auto& f : s.fighters) {
    f.joint_angles = {2.5, 2.5, 0.0, 0.0};
    f.pd_targets = f.joint_angles;
    // Heads point away from each other.
    f.root_heading += 3.141592653589793;
  }
  ArenaState probe = s;
  std::vector<ContactEvent> events;
  detail::substep(probe, events);
  bool found = false;
  for (const auto& e : events) {
    if (e.src.part == BodyPart::Torso && e.dst.part == BodyPart::Torso && e.src.agent == 0) {
      EXPECT_NEAR(e.force_mag, 50.0, 1e-9);
      found = true;
    }
  }
  EXPECT_TRUE(found);
}

TEST(Arena, ContactEventsArePaired) {
  ArenaState s = two_apart(0.5);
  std::mt19937_64 rng(3);
  int seen = 0;
  for (int k = 0; k < 300; ++k) {
    apply_actions(s, {random_action(rng), random_action(rng)});
    const StepResult r = step_physics(s);
    ASSERT_EQ(r.contacts.size() % 2, 0u);
    for (std::size_t i = 0; i < r.contacts.size(); i += 2) {
      const auto& a = r.contacts[i];
      const auto& b = r.contacts[i + 1];
      EXPECT_EQ(a.src, b.dst);
      EXPECT_EQ(a.dst, b.src);
      EXPECT_EQ(a.force_mag, b.force_mag);
      EXPECT_EQ(a.normal.x, -b.normal.x);
      EXPECT_EQ(a.normal.y, -b.normal.y);
      EXPECT_GE(a.force_mag, 0.0);
      EXPECT_NEAR(norm(a.normal), 1.0, 1e-12);
      ++seen;
    }
  }
  EXPECT_GT(seen, 0);
}

TEST(Arena, ContactForcesSumToZero) {
  ArenaState s = two_apart(0.5);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 300; ++k) {
    apply_actions(s, {random_action(rng), random_action(rng)});
    const StepResult r = step_physics(s);
    Vec2 total;
    for (const auto& e : r.contacts) total += e.force_mag * e.normal;
    EXPECT_NEAR(total.x, 0.0, 1e-9);
    EXPECT_NEAR(total.y, 0.0, 1e-9);
  }
}

TEST(Arena, RandomActionsStayBoundedAndFinite) {
  ArenaState s = spawn_arena(ArenaConfig{}, 9);
  const ArenaConfig& c = s.config;
  std::mt19937_64 rng(11);
  for (int k = 0; k < 10000; ++k) {
    apply_actions(s, {random_action(rng), random_action(rng)});
    ASSERT_NO_THROW(step_physics(s));
    for (const auto& f : s.fighters) {
      ASSERT_LE(std::abs(f.root_pos.x), c.arena_halfextent);
      ASSERT_LE(std::abs(f.root_pos.y), c.arena_halfextent);
      ASSERT_LE(norm(f.root_linvel), c.max_linvel + 1e-9);
      ASSERT_LE(std::abs(f.root_angvel), c.max_angvel);
      for (int j = 0; j < kNumJoints; ++j) {
        ASSERT_GE(f.joint_angles[j], c.joint_limits[j].lo);
        ASSERT_LE(f.joint_angles[j], c.joint_limits[j].hi);
        ASSERT_LE(std::abs(f.joint_vels[j]), c.max_joint_vel);
      }
    }
  }
}

TEST(Arena, TrajectoriesAreBitIdentical) {
  const auto run = [] {
    ArenaState s = spawn_arena(ArenaConfig{}, 77);
    std::mt19937_64 rng(5);
    std::vector<ArenaState> traj;
    for (int k = 0; k < 500; ++k) {
      apply_actions(s, {random_action(rng), random_action(rng)});
      step_physics(s);
      traj.push_back(s);
    }
    return traj;
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t k = 0; k < a.size(); ++k) ASSERT_EQ(a[k].fighters, b[k].fighters);
}

TEST(Arena, NonFiniteStateRaisesDivergence) {
  ArenaState s = two_apart(2.0);
  s.fighters[1].joint_vels[ElbowR] = std::nan("");
  try {
    step_physics(s);
    FAIL() << "expected divergence";
  } catch (const SimulationDiverged& e) {
    EXPECT_NE(e.quantity().find("joint"), std::string::npos);
  }
}

TEST(Arena, TwoSubstepsPerControlStep) {
  const ArenaConfig cfg;
  EXPECT_EQ(cfg.substeps, 2);
  EXPECT_NEAR(cfg.substeps * cfg.dt_sim, 1.0 / cfg.control_hz, 1e-15);
  ArenaConfig bad;
  bad.substeps = 3;
  EXPECT_THROW(bad.validate(), ConfigError);
  // Manual substeps reproduce step_physics exactly.
  ArenaState a = spawn_arena(cfg, 3), b = a;
  std::mt19937_64 rng(1);
  const std::array<ActionVector, 2> act = {random_action(rng), random_action(rng)};
  apply_actions(a, act);
  apply_actions(b, act);
  step_physics(a);
  std::vector<ContactEvent> ev;
  detail::substep(b, ev);
  detail::substep(b, ev);
  EXPECT_EQ(a.fighters, b.fighters);
}

TEST(Arena, DamageTally) {
  EXPECT_DOUBLE_EQ(damage_tally({}, 0), 0.0);
  const ContactEvent fist_head{{1, BodyPart::FistL}, {0, BodyPart::Head}, {1, 0}, 50.0, {}};
  const ContactEvent fist_fist{{1, BodyPart::FistL}, {0, BodyPart::FistR}, {1, 0}, 80.0, {}};
  const ContactEvent fist_torso{{1, BodyPart::FistR}, {0, BodyPart::Torso}, {1, 0}, 5.0, {}};
  const std::vector<ContactEvent> one = {fist_head};
  EXPECT_DOUBLE_EQ(damage_tally(one, 0), 50.0);
  EXPECT_DOUBLE_EQ(damage_tally(one, 1), 0.0);
  const std::vector<ContactEvent> fists = {fist_fist};
  EXPECT_DOUBLE_EQ(damage_tally(fists, 0), 0.0);
  const std::vector<ContactEvent> mix = {fist_head, fist_fist, fist_torso};
  EXPECT_DOUBLE_EQ(damage_tally(mix, 0), 55.0);
}

TEST(Arena, RestPoseForwardKinematics) {
  const ArenaConfig cfg;
  const FighterState f;
  const auto p = forward_kinematics(f, cfg);
  const double reach = cfg.links.upper_arm + cfg.links.forearm;
  const double off = cfg.links.shoulder_offset;
  EXPECT_NEAR(p[static_cast<int>(BodyPart::FistL)].pos.x, reach, 1e-15);
  EXPECT_NEAR(p[static_cast<int>(BodyPart::FistL)].pos.y, off, 1e-15);
  EXPECT_NEAR(p[static_cast<int>(BodyPart::FistR)].pos.x, reach, 1e-15);
  EXPECT_NEAR(p[static_cast<int>(BodyPart::FistR)].pos.y, -off, 1e-15);
  EXPECT_NEAR(p[static_cast<int>(BodyPart::Head)].pos.x, cfg.links.head_offset, 1e-15);
  EXPECT_NEAR(p[static_cast<int>(BodyPart::UpperArmL)].pos.x, 0.5 * cfg.links.upper_arm, 1e-15);
}

TEST(Arena, ForwardKinematicsIsRigidlyEquivariant) {
  const ArenaConfig cfg;
  FighterState f;
  f.joint_angles = {0.4, -0.3, 1.1, 0.5};
  f.joint_vels = {1.0, -2.0, 0.5, 0.2};
  f.root_linvel = {0.3, -0.1};
  f.root_angvel = 0.7;
  const auto base = forward_kinematics(f, cfg);

  FighterState moved = f;
  moved.root_pos = {1.0, 2.0};
  const auto t = forward_kinematics(moved, cfg);
  for (int k = 0; k < kNumParts; ++k) {
    EXPECT_NEAR(t[k].pos.x, base[k].pos.x + 1.0, 1e-12);
    EXPECT_NEAR(t[k].pos.y, base[k].pos.y + 2.0, 1e-12);
  }

  FighterState turned = f;
  turned.root_heading = 1.5707963267948966;
  turned.root_linvel = rotate(f.root_linvel, turned.root_heading);
  const auto r = forward_kinematics(turned, cfg);
  for (int k = 0; k < kNumParts; ++k) {
    const Vec2 expect = rotate(base[k].pos, turned.root_heading);
    EXPECT_NEAR(r[k].pos.x, expect.x, 1e-12);
    EXPECT_NEAR(r[k].pos.y, expect.y, 1e-12);
    const Vec2 ev = rotate(base[k].linvel, turned.root_heading);
    EXPECT_NEAR(r[k].linvel.x, ev.x, 1e-12);
    EXPECT_NEAR(r[k].linvel.y, ev.y, 1e-12);
  }
}

TEST(Arena, PartVelocitiesMatchFiniteDifferences) {
  const ArenaConfig cfg;
  FighterState f;
  f.root_pos = {0.2, -0.4};
  f.root_heading = 0.6;
  f.root_linvel = {0.5, 0.25};
  f.root_angvel = -0.8;
  f.joint_angles = {0.3, 0.9, 1.2, 0.4};
  f.joint_vels = {1.5, -0.7, 2.0, -1.0};
  const double h = 1e-6;
  const auto advance = [&](double dt) {
    FighterState g = f;
    g.root_pos += dt * f.root_linvel;
    g.root_heading += dt * f.root_angvel;
    for (int j = 0; j < kNumJoints; ++j) g.joint_angles[j] += dt * f.joint_vels[j];
    return forward_kinematics(g, cfg);
  };
  const auto p0 = advance(-h), p1 = advance(h), mid = forward_kinematics(f, cfg);
  for (int k = 0; k < kNumParts; ++k) {
    EXPECT_NEAR((p1[k].pos.x - p0[k].pos.x) / (2 * h), mid[k].linvel.x, 1e-6);
    EXPECT_NEAR((p1[k].pos.y - p0[k].pos.y) / (2 * h), mid[k].linvel.y, 1e-6);
    EXPECT_NEAR((p1[k].angle - p0[k].angle) / (2 * h), mid[k].angvel, 1e-6);
  }
}

TEST(Arena, RootServoTracksCommand) {
  ArenaState s = two_apart(6.0);
  ActionVector a{};
  a[0] = 1.0;
  apply_actions(s, {a, ActionVector{}});
  for (int k = 0; k < 40; ++k) step_physics(s);
  EXPECT_NEAR(s.fighters[0].root_linvel.x, 1.0, 1e-3);
  EXPECT_NEAR(s.fighters[0].root_linvel.y, 0.0, 1e-9);
}

TEST(Arena, InactiveFighterIsFrozen) {
  ArenaState s = two_apart(0.3);
  s.active = {true, false};
  const auto ghost = s.fighters[1];
  std::mt19937_64 rng(2);
  for (int k = 0; k < 30; ++k) {
    apply_actions(s, {random_action(rng), random_action(rng)});
    EXPECT_TRUE(step_physics(s).contacts.empty());
  }
  EXPECT_EQ(s.fighters[1].root_pos, ghost.root_pos);
}
