#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "maaip/features.hpp"

using namespace maaip;

namespace {

constexpr double kPi = 3.141592653589793;

FighterState random_fighter(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  FighterState f;
  f.root_pos = {2.0 * u(rng), 2.0 * u(rng)};
  f.root_heading = kPi * u(rng);
  f.root_linvel = {u(rng), u(rng)};
  f.root_angvel = 2.0 * u(rng);
  for (int j = 0; j < kNumJoints; ++j) {
    f.joint_angles[j] = j < 2 ? 2.0 * u(rng) : 1.3 + u(rng);
    f.joint_vels[j] = 3.0 * u(rng);
  }
  return f;
}

// Applies a rigid motion of the plane to a fighter.
FighterState transform(const FighterState& f, double angle, Vec2 shift) {
  FighterState g = f;
  g.root_pos = rotate(f.root_pos, angle) + shift;
  g.root_linvel = rotate(f.root_linvel, angle);
  g.root_heading = f.root_heading + angle;
  return g;
}

}  // namespace

TEST(Features, WorldToLocal) {
  Vec2 v = world_to_local({0, 0}, 0.0, {1, 0}, FrameKind::Point);
  EXPECT_DOUBLE_EQ(v.x, 1.0);
  EXPECT_DOUBLE_EQ(v.y, 0.0);
  v = world_to_local({0, 0}, kPi / 2, {1, 0}, FrameKind::Point);
  EXPECT_NEAR(v.x, 0.0, 1e-15);
  EXPECT_NEAR(v.y, -1.0, 1e-15);
  v = world_to_local({1, 1}, 0.0, {0, 1}, FrameKind::Vector);
  EXPECT_DOUBLE_EQ(v.x, 0.0);
  EXPECT_DOUBLE_EQ(v.y, 1.0);
  v = world_to_local({1, 1}, 0.0, {0, 1}, FrameKind::Point);
  EXPECT_DOUBLE_EQ(v.x, -1.0);
  EXPECT_DOUBLE_EQ(v.y, 0.0);
}

TEST(Features, Dimensions) {
  EXPECT_EQ(kSelfObsDim, 56);
  EXPECT_EQ(kOppObsDim, 23);
  EXPECT_EQ(kMotionTransitionDim, 112);
  EXPECT_EQ(kInteractionTransitionDim, 135);
  EXPECT_EQ(policy_obs_dim(false), 79);
  EXPECT_EQ(policy_obs_dim(true), 81);
}

TEST(Features, OpponentAheadIsAtLocalX) {
  FighterState a, b;
  a.root_pos = {1.0, 1.0};
  a.root_heading = kPi / 2;
  b.root_pos = {1.0, 2.0};
  const auto o = build_observation(a, b, ArenaConfig{});
  EXPECT_NEAR(o.opp[0], 1.0, 1e-15);
  EXPECT_NEAR(o.opp[1], 0.0, 1e-15);
}

TEST(Features, StationarySceneHasZeroVelocities) {
  std::mt19937_64 rng(1);
  FighterState a = random_fighter(rng), b = random_fighter(rng);
  for (auto* f : {&a, &b}) {
    f->root_linvel = {};
    f->root_angvel = 0.0;
    f->joint_vels = {};
  }
  const auto o = build_observation(a, b, ArenaConfig{});
  for (int p = 0; p < kNumParts; ++p) {
    EXPECT_EQ(o.self[7 * p + 4], 0.0);
    EXPECT_EQ(o.self[7 * p + 5], 0.0);
    EXPECT_EQ(o.self[7 * p + 6], 0.0);
  }
  for (int k : {4, 5, 6, 9, 10, 13, 14, 17, 18, 21, 22}) EXPECT_EQ(o.opp[k], 0.0);
}

TEST(Features, OrientationPairsAreUnit) {
  std::mt19937_64 rng(2);
  for (int n = 0; n < 50; ++n) {
    const auto o = build_observation(random_fighter(rng), random_fighter(rng), ArenaConfig{});
    for (int p = 0; p < kNumParts; ++p) {
      EXPECT_NEAR(o.self[7 * p + 2] * o.self[7 * p + 2] + o.self[7 * p + 3] * o.self[7 * p + 3], 1.0, 1e-14);
    }
    EXPECT_NEAR(o.opp[2] * o.opp[2] + o.opp[3] * o.opp[3], 1.0, 1e-14);
  }
}

TEST(Features, FrameInvariance) {
  std::mt19937_64 rng(3);
  const ArenaConfig cfg;
  for (int n = 0; n < 20; ++n) {
    const FighterState a = random_fighter(rng), b = random_fighter(rng);
    const double ang = 0.37 * n - 2.0;
    const Vec2 shift{0.1 * n, -0.3 * n};
    const auto o1 = build_observation(a, b, cfg, Vec2{0.6, 0.8});
    const auto o2 = build_observation(transform(a, ang, shift), transform(b, ang, shift), cfg,
                                      rotate(Vec2{0.6, 0.8}, ang));
    for (int k = 0; k < kSelfObsDim; ++k) EXPECT_NEAR(o1.self[k], o2.self[k], 1e-12) << k;
    for (int k = 0; k < kOppObsDim; ++k) EXPECT_NEAR(o1.opp[k], o2.opp[k], 1e-12) << k;
    EXPECT_NEAR(o1.heading->x, o2.heading->x, 1e-12);
    EXPECT_NEAR(o1.heading->y, o2.heading->y, 1e-12);
  }
}

TEST(Features, MirrorSymmetricFaceOff) {
  // Fighter 1 is fighter 0 reflected through the origin (a half turn), so
  // each sees the other identically.
  std::mt19937_64 rng(4);
  const ArenaConfig cfg;
  FighterState a = random_fighter(rng);
  FighterState b = transform(a, kPi, {0.0, 0.0});
  const auto oa = build_observation(a, b, cfg);
  const auto ob = build_observation(b, a, cfg);
  for (int k = 0; k < kOppObsDim; ++k) EXPECT_NEAR(oa.opp[k], ob.opp[k], 1e-12) << k;
  for (int k = 0; k < kSelfObsDim; ++k) EXPECT_NEAR(oa.self[k], ob.self[k], 1e-12) << k;

  // Left/right mirror: reflect across the x axis and swap arms.
  FighterState m0, m1;
  m0.root_pos = {-1.0, 0.0};
  m1.root_pos = {1.0, 0.0};
  m1.root_heading = kPi;
  m0.joint_angles = {0.4, 0.9, 1.5, 0.3};
  m1.joint_angles = {0.9, 0.4, 0.3, 1.5};
  const auto p0 = build_observation(m0, m1, cfg);
  const auto p1 = build_observation(m1, m0, cfg);
  // Opponent root: identical; key parts: fistL <-> fistR with y negated.
  EXPECT_NEAR(p0.opp[0], p1.opp[0], 1e-12);
  EXPECT_NEAR(p0.opp[1], -p1.opp[1], 1e-12);
  EXPECT_NEAR(p0.opp[15], p1.opp[19], 1e-12);
  EXPECT_NEAR(p0.opp[16], -p1.opp[20], 1e-12);
}

TEST(Features, TransitionLayouts) {
  SelfObs a{}, b{};
  for (int k = 0; k < kSelfObsDim; ++k) {
    a[k] = k;
    b[k] = 100 + k;
  }
  const auto m = motion_transition(a, b);
  for (int k = 0; k < kSelfObsDim; ++k) {
    EXPECT_EQ(m[k], a[k]);
    EXPECT_EQ(m[kSelfObsDim + k], b[k]);
  }
  const auto zero = motion_transition(SelfObs{}, SelfObs{});
  for (double v : zero) EXPECT_EQ(v, 0.0);

  ObservationPair o;
  o.self = a;
  for (int k = 0; k < kOppObsDim; ++k) o.opp[k] = 50 + k;
  o.heading = Vec2{1.0, 0.0};
  const auto it = interaction_transition(o, b);
  ASSERT_EQ(it.size(), 135u);
  for (int k = 0; k < 56; ++k) EXPECT_EQ(it[k], a[k]);
  for (int k = 0; k < 23; ++k) EXPECT_EQ(it[56 + k], o.opp[k]);
  for (int k = 0; k < 56; ++k) EXPECT_EQ(it[79 + k], b[k]);

  ObservationPair o2 = o;
  o2.opp[3] = -7.0;
  const auto it2 = interaction_transition(o2, b);
  for (int k = 0; k < 135; ++k) {
    if (k == 59) EXPECT_NE(it[k], it2[k]);
    else EXPECT_EQ(it[k], it2[k]);
  }
}

TEST(Features, PolicyObsAppendsHeading) {
  ObservationPair o;
  o.self[0] = 1.0;
  o.opp[22] = 2.0;
  o.heading = Vec2{0.0, 1.0};
  std::vector<double> out(81);
  write_policy_obs(o, true, out);
  EXPECT_EQ(out[0], 1.0);
  EXPECT_EQ(out[78], 2.0);
  EXPECT_EQ(out[79], 0.0);
  EXPECT_EQ(out[80], 1.0);
  EXPECT_THROW(write_policy_obs(o, false, out), DimensionError);
}

TEST(Features, ExpMap) {
  auto r = exp_map_to_axis_angle({kPi / 2, 0, 0});
  EXPECT_DOUBLE_EQ(r.axis[0], 1.0);
  EXPECT_DOUBLE_EQ(r.angle, kPi / 2);
  r = exp_map_to_axis_angle({0, 0, kPi});
  EXPECT_DOUBLE_EQ(r.axis[2], 1.0);
  EXPECT_DOUBLE_EQ(r.angle, kPi);
  r = exp_map_to_axis_angle({0, 0, 0});
  EXPECT_EQ(r.axis[0], 1.0);
  EXPECT_EQ(r.angle, 0.0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int n = 0; n < 100; ++n) {
    const std::array<double, 3> q = {u(rng), u(rng), u(rng)};
    r = exp_map_to_axis_angle(q);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(r.axis[k] * r.angle, q[k], 1e-12);
  }
}

TEST(Features, NormalizerFreshIsIdentity) {
  RunningNormalizer n(3);
  Eigen::MatrixXd x(1, 3);
  x << 0.5, -1.0, 2.0;
  EXPECT_TRUE(n.apply(x).isApprox(x, 1e-7));
}

TEST(Features, NormalizerMeanVariance) {
  RunningNormalizer n(1);
  Eigen::MatrixXd x(2, 1);
  x << 1.0, 3.0;
  n.update(x);
  EXPECT_DOUBLE_EQ(n.mean()(0), 2.0);
  EXPECT_DOUBLE_EQ(n.variance()(0), 1.0);
}

TEST(Features, NormalizerConstantBatches) {
  RunningNormalizer n(2);
  Eigen::MatrixXd x = Eigen::MatrixXd::Constant(10, 2, 4.0);
  for (int k = 0; k < 3; ++k) n.update(x);
  EXPECT_NEAR(n.variance()(0), 0.0, 1e-15);
  EXPECT_TRUE(n.apply(x).isZero(1e-12));
}

TEST(Features, NormalizerMatchesTwoPassOracle) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(3.0, 2.0);
  Eigen::MatrixXd data(1000, 5);
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c) data(r, c) = g(rng) * (c + 1) + c;
  }
  RunningNormalizer n(5);
  // Uneven chunks, including single rows.
  Eigen::Index at = 0;
  for (Eigen::Index chunk : {1, 7, 100, 1, 391, 500}) {
    n.update(data.middleRows(at, chunk));
    at += chunk;
  }
  ASSERT_EQ(at, 1000);
  const Eigen::VectorXd mean = data.colwise().mean().transpose();
  Eigen::VectorXd var(5);
  for (int c = 0; c < 5; ++c) var(c) = (data.col(c).array() - mean(c)).square().sum() / 1000.0;
  for (int c = 0; c < 5; ++c) {
    EXPECT_NEAR(n.mean()(c), mean(c), 1e-8);
    EXPECT_NEAR(n.variance()(c), var(c), 1e-8);
  }
}

TEST(Features, NormalizerClipsAndInverts) {
  RunningNormalizer n(2, 5.0);
  Eigen::MatrixXd x(3, 2);
  x << 0, 0, 1, 2, 2, 4;
  n.update(x);
  Eigen::MatrixXd probe(2, 2);
  probe << 0.3, 1.7, 1000.0, -1000.0;
  const Eigen::MatrixXd y = n.apply(probe);
  EXPECT_DOUBLE_EQ(y(1, 0), 5.0);
  EXPECT_DOUBLE_EQ(y(1, 1), -5.0);
  const Eigen::MatrixXd back = n.invert(y.topRows(1));
  EXPECT_NEAR(back(0, 0), 0.3, 1e-10);
  EXPECT_NEAR(back(0, 1), 1.7, 1e-10);
  EXPECT_THROW(n.update(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
  EXPECT_THROW(n.apply(Eigen::MatrixXd::Zero(2, 3)), DimensionError);
}
