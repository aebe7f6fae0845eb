#pragma once

// Observation features. Every quantity is expressed in the observing
// fighter's root frame (x forward, y left). Layout is documented in
// docs/observation-layout.md and versioned by kLayoutVersion.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/error.hpp"
#include "maaip/vec2.hpp"

namespace maaip {

inline constexpr int kLayoutVersion = 1;
inline constexpr int kSelfObsDim = 56;
inline constexpr int kOppObsDim = 23;
inline constexpr int kObsDim = kSelfObsDim + kOppObsDim;
inline constexpr int kHeadingDim = 2;
inline constexpr int kAgentIdDim = 2;
inline constexpr int kMotionTransitionDim = 2 * kSelfObsDim;
inline constexpr int kInteractionTransitionDim = kObsDim + kSelfObsDim;

using SelfObs = std::array<double, kSelfObsDim>;
using OppObs = std::array<double, kOppObsDim>;
using MotionTransition = std::array<double, kMotionTransitionDim>;
using InteractionTransition = std::array<double, kInteractionTransitionDim>;

struct ObservationPair {
  SelfObs self{};
  OppObs opp{};
  std::optional<Vec2> heading;  // local frame unit vector
};

enum class FrameKind { Point, Vector };

inline Vec2 world_to_local(Vec2 root_pos, double root_heading, Vec2 v, FrameKind kind) {
  const Vec2 d = kind == FrameKind::Point ? v - root_pos : v;
  const double c = std::cos(root_heading), s = std::sin(root_heading);
  return {c * d.x + s * d.y, -s * d.x + c * d.y};
}

// Opponent parts exposed in OppObs, in order.
inline constexpr std::array<BodyPart, 4> kOppKeyParts = {BodyPart::Head, BodyPart::Torso, BodyPart::FistL,
                                                         BodyPart::FistR};

// Per part: local position (2), (cos, sin) of the part angle relative to the
// root heading (2), local linear velocity (2), angular velocity (1).
// Not inlined: copies inlined at different call sites got different sin/cos
// lowering and disagreed in the last bit.
[[gnu::noinline]] inline SelfObs build_self_obs(const FighterState& f, const ArenaConfig& config) {
  const PartPoses parts = forward_kinematics(f, config);
  SelfObs o{};
  int k = 0;
  for (const PartPose& p : parts) {
    const Vec2 pos = world_to_local(f.root_pos, f.root_heading, p.pos, FrameKind::Point);
    const Vec2 vel = world_to_local(f.root_pos, f.root_heading, p.linvel, FrameKind::Vector);
    const double rel = p.angle - f.root_heading;
    o[k++] = pos.x;
    o[k++] = pos.y;
    o[k++] = std::cos(rel);
    o[k++] = std::sin(rel);
    o[k++] = vel.x;
    o[k++] = vel.y;
    o[k++] = p.angvel;
  }
  return o;
}

[[gnu::noinline]] inline OppObs build_opp_obs(const FighterState& self, const FighterState& opp, const ArenaConfig& config) {
  const PartPoses parts = forward_kinematics(opp, config);
  OppObs o{};
  const auto pt = [&](Vec2 p) { return world_to_local(self.root_pos, self.root_heading, p, FrameKind::Point); };
  const auto vec = [&](Vec2 v) { return world_to_local(self.root_pos, self.root_heading, v, FrameKind::Vector); };
  const Vec2 pos = pt(opp.root_pos);
  const Vec2 vel = vec(opp.root_linvel);
  const double rel = opp.root_heading - self.root_heading;
  o[0] = pos.x;
  o[1] = pos.y;
  o[2] = std::cos(rel);
  o[3] = std::sin(rel);
  o[4] = vel.x;
  o[5] = vel.y;
  o[6] = opp.root_angvel;
  int k = 7;
  for (BodyPart bp : kOppKeyParts) {
    const PartPose& p = parts[static_cast<int>(bp)];
    const Vec2 lp = pt(p.pos);
    const Vec2 lv = vec(p.linvel);
    o[k++] = lp.x;
    o[k++] = lp.y;
    o[k++] = lv.x;
    o[k++] = lv.y;
  }
  return o;
}

// `heading_world` is a world-frame unit vector; it is stored in the self frame.
inline ObservationPair build_observation(const FighterState& self, const FighterState& opp, const ArenaConfig& config,
                                         std::optional<Vec2> heading_world = std::nullopt) {
  ObservationPair o;
  o.self = build_self_obs(self, config);
  o.opp = build_opp_obs(self, opp, config);
  if (heading_world) {
    Vec2 h = world_to_local(self.root_pos, self.root_heading, *heading_world, FrameKind::Vector);
    o.heading = (1.0 / norm(h)) * h;
  }
  return o;
}

inline MotionTransition motion_transition(const SelfObs& now, const SelfObs& next) {
  MotionTransition t{};
  std::copy(now.begin(), now.end(), t.begin());
  std::copy(next.begin(), next.end(), t.begin() + kSelfObsDim);
  return t;
}

// Heading is never part of a discriminator input.
inline InteractionTransition interaction_transition(const ObservationPair& now, const SelfObs& next) {
  InteractionTransition t{};
  auto it = std::copy(now.self.begin(), now.self.end(), t.begin());
  it = std::copy(now.opp.begin(), now.opp.end(), it);
  std::copy(next.begin(), next.end(), it);
  return t;
}

inline int policy_obs_dim(bool heading) { return kObsDim + (heading ? kHeadingDim : 0); }

// [o_self, o_opp, heading?] flattened; the agent id is appended later.
inline void write_policy_obs(const ObservationPair& o, bool heading, std::span<double> out) {
  if (static_cast<int>(out.size()) != policy_obs_dim(heading)) throw DimensionError("policy obs: wrong output size");
  std::copy(o.opp.begin(), o.opp.end(), std::copy(o.self.begin(), o.self.end(), out.begin()));
  if (heading) {
    const Vec2 h = o.heading.value_or(Vec2{1.0, 0.0});
    out[kObsDim] = h.x;
    out[kObsDim + 1] = h.y;
  }
}

// ---------------------------------------------------------------------------

struct AxisAngle {
  std::array<double, 3> axis{1.0, 0.0, 0.0};
  double angle = 0.0;
};

inline AxisAngle exp_map_to_axis_angle(const std::array<double, 3>& q) {
  const double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
  if (n < 1e-8) return {};
  return {{q[0] / n, q[1] / n, q[2] / n}, n};
}

// ---------------------------------------------------------------------------

// Running mean/variance (population) with Chan's batch combination.
class RunningNormalizer {
 public:
  RunningNormalizer() = default;
  explicit RunningNormalizer(int dim, double clip = 5.0)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)), clip_(clip) {}

  int dim() const { return static_cast<int>(mean_.size()); }
  double count() const { return count_; }
  double clip() const { return clip_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::VectorXd& m2() const { return m2_; }

  // Variance; identity scaling (1) before any data is seen.
  Eigen::VectorXd variance() const {
    if (count_ <= 0.0) return Eigen::VectorXd::Ones(dim());
    return (m2_ / count_).cwiseMax(0.0);
  }

  // Rows of `batch` are samples.
  void update(const Eigen::Ref<const Eigen::MatrixXd>& batch) {
    if (batch.cols() != dim()) throw DimensionError("normalizer: batch width does not match dimension");
    const double n = static_cast<double>(batch.rows());
    if (n == 0.0) return;
    const Eigen::VectorXd bmean = batch.colwise().mean().transpose();
    const Eigen::VectorXd bm2 = (batch.rowwise() - bmean.transpose()).colwise().squaredNorm().transpose();
    const double total = count_ + n;
    const Eigen::VectorXd delta = bmean - mean_;
    mean_ += delta * (n / total);
    m2_ += bm2 + delta.cwiseProduct(delta) * (count_ * n / total);
    count_ = total;
  }

  Eigen::VectorXd scale() const { return (variance().array() + 1e-8).sqrt().matrix(); }

  void apply_inplace(Eigen::Ref<Eigen::MatrixXd> x) const {
    if (x.cols() != dim()) throw DimensionError("normalizer: input width does not match dimension");
    const Eigen::RowVectorXd inv = scale().cwiseInverse().transpose();
    const Eigen::RowVectorXd m = mean_.transpose();
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      x.row(r) = ((x.row(r) - m).cwiseProduct(inv)).cwiseMax(-clip_).cwiseMin(clip_);
    }
  }

  Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
    Eigen::MatrixXd out = x;
    apply_inplace(out);
    return out;
  }

  Eigen::MatrixXd invert(const Eigen::Ref<const Eigen::MatrixXd>& xhat) const {
    if (xhat.cols() != dim()) throw DimensionError("normalizer: input width does not match dimension");
    Eigen::MatrixXd out = xhat;
    const Eigen::RowVectorXd s = scale().transpose();
    const Eigen::RowVectorXd m = mean_.transpose();
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) = out.row(r).cwiseProduct(s) + m;
    return out;
  }

  // Restores raw accumulators (deserialization).
  void restore(double count, Eigen::VectorXd mean, Eigen::VectorXd m2, double clip) {
    if (mean.size() != m2.size()) throw DimensionError("normalizer: mean/m2 size mismatch");
    count_ = count;
    mean_ = std::move(mean);
    m2_ = std::move(m2);
    clip_ = clip;
  }

 private:
  double count_ = 0.0;
  Eigen::VectorXd mean_;
  Eigen::VectorXd m2_;
  double clip_ = 5.0;
};

}  // namespace maaip
