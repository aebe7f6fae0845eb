#pragma once

// Synthetic demonstrations. Scripted finite-state experts with distinct
// styles fight in the arena (interaction clips) or shadow-box a
// non-reactive virtual target (single-actor clips). Clips are stored as
// JSON Lines; see docs/dataset-format.md.

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/error.hpp"
#include "maaip/features.hpp"
#include "maaip/tensorcore.hpp"

namespace maaip {

inline constexpr int kDemoFps = 30;

struct StyleSpec {
  std::string id;
  double engage_distance = 1.0;     // preferred root-to-root distance, m
  double jab_weight = 0.5;
  double hook_weight = 0.5;
  double attack_rate = 0.1;         // per-step attack probability when in range
  double guard_hold_prob = 0.5;     // idle: guard vs circle
  double dodge_distance = 0.4;      // opponent fist to own head, m
  double footwork_amplitude = 0.6;  // lateral speed while circling, m/s
  double guard_shoulder = 0.5;
  double guard_elbow = 2.0;
  double torso_twist = 0.0;         // extra yaw rate during hooks, rad/s

  void validate() const {
    const auto prob = [&](double p, const char* what) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("style " + id + ": " + what + " must be in [0,1]");
    };
    prob(jab_weight, "jab_weight");
    prob(hook_weight, "hook_weight");
    prob(attack_rate, "attack_rate");
    prob(guard_hold_prob, "guard_hold_prob");
    if (!(engage_distance > 0.0) || !(dodge_distance > 0.0)) {
      throw ConfigError("style " + id + ": distances must be > 0");
    }
    if (jab_weight + hook_weight <= 0.0) throw ConfigError("style " + id + ": attack weights sum to 0");
  }
};

// Long range, straight punches, long guard.
inline StyleSpec out_fighter_style() {
  return {"out-fighter", 1.05, 0.85, 0.15, 0.09, 0.35, 0.50, 0.9, 0.25, 1.5, 0.0};
}

// Close range, hooks, tight guard.
inline StyleSpec swarmer_style() {
  return {"swarmer", 0.62, 0.2, 0.8, 0.13, 0.7, 0.32, 0.4, 0.7, 2.35, 0.0};
}

// Mid range with large torso rotation on every hook.
inline StyleSpec full_commit_style() {
  return {"full-commit", 0.82, 0.45, 0.55, 0.11, 0.5, 0.40, 0.6, 0.5, 1.9, 3.0};
}

inline StyleSpec style_by_id(const std::string& id) {
  for (const StyleSpec& s : {out_fighter_style(), swarmer_style(), full_commit_style()}) {
    if (s.id == id) return s;
  }
  throw ConfigError("unknown style '" + id + "' (expected out-fighter|swarmer|full-commit)");
}

// ---------------------------------------------------------------------------
// Expert controller

enum class ExpertState : std::uint8_t { Approach, Circle, Guard, Jab, Hook, Dodge, Retreat };
inline constexpr int kNumExpertStates = 7;
inline constexpr std::array<const char*, kNumExpertStates> kExpertStateNames = {
    "approach", "circle", "guard", "jab", "hook", "dodge", "retreat"};

struct ExpertFsm {
  ExpertState state = ExpertState::Approach;
  int timer = 0;       // remaining steps of a timed state
  int duration = 0;    // total steps of the current timed state
  int arm = 0;         // 0 left, 1 right
  double lateral = 1.0;
};

namespace detail {

inline constexpr int kJabSteps = 8;
inline constexpr int kHookSteps = 10;
inline constexpr int kDodgeSteps = 8;

inline Vec2 opp_root(const ObservationPair& o) { return {o.opp[0], o.opp[1]}; }
inline Vec2 opp_part(const ObservationPair& o, int key) { return {o.opp[7 + 4 * key], o.opp[8 + 4 * key]}; }
inline Vec2 opp_part_vel(const ObservationPair& o, int key) { return {o.opp[9 + 4 * key], o.opp[10 + 4 * key]}; }

inline bool fist_incoming(const StyleSpec& style, const ObservationPair& o) {
  const Vec2 head{o.self[7 * static_cast<int>(BodyPart::Head)], o.self[7 * static_cast<int>(BodyPart::Head) + 1]};
  const Vec2 self_vel{o.self[4], o.self[5]};
  for (int key : {2, 3}) {
    const Vec2 fist = opp_part(o, key);
    const Vec2 to_head = head - fist;
    const double dist = norm(to_head);
    if (dist > style.dodge_distance) continue;
    const Vec2 rel = opp_part_vel(o, key) - self_vel;
    if (dist > 1e-9 && dot(rel, (1.0 / dist) * to_head) > 0.3) return true;
  }
  return false;
}

inline void guard_pose(const StyleSpec& s, ActionVector& a) {
  a[3 + ShoulderL] = s.guard_shoulder;
  a[3 + ShoulderR] = s.guard_shoulder;
  a[3 + ElbowL] = s.guard_elbow;
  a[3 + ElbowR] = s.guard_elbow;
}

}  // namespace detail

// One control step of the scripted expert. Deterministic given `rng`.
inline ActionVector expert_step(const StyleSpec& style, ExpertFsm& fsm, const ObservationPair& obs,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const Vec2 opp = detail::opp_root(obs);
  const double dist = norm(opp);
  const double bearing = std::atan2(opp.y, opp.x);

  const bool timed = fsm.timer > 0 && (fsm.state == ExpertState::Jab || fsm.state == ExpertState::Hook ||
                                       fsm.state == ExpertState::Dodge);
  if (!timed) {
    const auto enter_timed = [&](ExpertState s, int steps) {
      fsm.state = s;
      fsm.timer = fsm.duration = steps;
    };
    if (detail::fist_incoming(style, obs)) {
      enter_timed(ExpertState::Dodge, detail::kDodgeSteps);
      fsm.lateral = u01(rng) < 0.5 ? -1.0 : 1.0;
    } else if (dist > style.engage_distance + 0.35) {
      fsm.state = ExpertState::Approach;
    } else if (dist < style.engage_distance - 0.25) {
      fsm.state = ExpertState::Retreat;
    } else if (u01(rng) < style.attack_rate) {
      const bool jab = u01(rng) * (style.jab_weight + style.hook_weight) < style.jab_weight;
      enter_timed(jab ? ExpertState::Jab : ExpertState::Hook, jab ? detail::kJabSteps : detail::kHookSteps);
      fsm.arm = u01(rng) < 0.5 ? 0 : 1;
    } else {
      const bool idle = fsm.state == ExpertState::Guard || fsm.state == ExpertState::Circle;
      if (!idle || u01(rng) < 0.08) {
        fsm.state = u01(rng) < style.guard_hold_prob ? ExpertState::Guard : ExpertState::Circle;
        fsm.lateral = u01(rng) < 0.5 ? -1.0 : 1.0;
      }
    }
  }

  ActionVector a{};
  detail::guard_pose(style, a);
  a[2] = 4.0 * bearing;
  const double range_error = dist - style.engage_distance;
  const int phase = fsm.duration - fsm.timer;
  switch (fsm.state) {
    case ExpertState::Approach:
      a[0] = std::min(1.6, 1.5 * range_error);
      break;
    case ExpertState::Retreat:
      a[0] = -1.0;
      break;
    case ExpertState::Guard:
      a[0] = std::clamp(1.0 * range_error, -0.6, 0.6);
      break;
    case ExpertState::Circle:
      a[0] = std::clamp(1.0 * range_error, -0.6, 0.6);
      a[1] = fsm.lateral * style.footwork_amplitude;
      break;
    case ExpertState::Dodge:
      a[0] = -0.3;
      a[1] = fsm.lateral * 1.5;
      a[3 + ElbowL] = a[3 + ElbowR] = 2.5;
      break;
    case ExpertState::Jab: {
      if (phase < detail::kJabSteps / 2) {
        const Vec2 target = detail::opp_part(obs, 0);
        const bool left = fsm.arm == 0;
        const double aim = std::atan2(target.y - (left ? 0.2 : -0.2), target.x);
        a[3 + (left ? ShoulderL : ShoulderR)] = left ? aim : -aim;
        a[3 + (left ? ElbowL : ElbowR)] = 0.0;
        if (dist > 0.7) a[0] = 1.2;
      }
      break;
    }
    case ExpertState::Hook: {
      const bool left = fsm.arm == 0;
      const int sj = left ? ShoulderL : ShoulderR;
      const int ej = left ? ElbowL : ElbowR;
      const double twist = (left ? -1.0 : 1.0) * style.torso_twist;
      if (phase < 4) {
        a[3 + sj] = style.guard_shoulder + 0.9;
        a[3 + ej] = 1.4;
        a[2] -= 0.5 * twist;
      } else if (phase < 8) {
        a[3 + sj] = -0.5;
        a[3 + ej] = 1.4;
        a[2] += twist;
        if (dist > 0.5) a[0] = 0.8;
      }
      break;
    }
  }
  if (fsm.timer > 0) --fsm.timer;
  return a;
}

// ---------------------------------------------------------------------------
// Dataset types

struct CharacterFrame {
  Vec2 root_pos;
  double heading = 0.0;
  Vec2 linvel;
  double angvel = 0.0;
  std::array<double, kNumJoints> q{};
  std::array<double, kNumJoints> qd{};

  friend bool operator==(const CharacterFrame&, const CharacterFrame&) = default;
};

inline CharacterFrame to_frame(const FighterState& f) {
  return {f.root_pos, f.root_heading, f.root_linvel, f.root_angvel, f.joint_angles, f.joint_vels};
}

inline FighterState to_fighter(const CharacterFrame& c) {
  FighterState f;
  f.root_pos = c.root_pos;
  f.root_heading = c.heading;
  f.root_linvel = c.linvel;
  f.root_angvel = c.angvel;
  f.joint_angles = c.q;
  f.joint_vels = c.qd;
  f.pd_targets = c.q;
  return f;
}

struct DemoClip {
  std::string clip_id;
  std::vector<std::string> styles;  // one per character
  int fps = kDemoFps;
  int layout_version = kLayoutVersion;
  // tracks[c][t]
  std::vector<std::vector<CharacterFrame>> tracks;
  // Optional expert state per character per frame (empty when unknown).
  std::vector<std::vector<ExpertState>> labels;

  int n_characters() const { return static_cast<int>(tracks.size()); }
  int n_frames() const { return tracks.empty() ? 0 : static_cast<int>(tracks.front().size()); }

  void validate() const {
    if (fps != kDemoFps) {
      throw ParseError("clip " + clip_id + ": fps " + std::to_string(fps) + " != control rate " +
                       std::to_string(kDemoFps));
    }
    if (n_characters() < 1 || n_characters() > 2) throw ParseError("clip " + clip_id + ": need 1 or 2 characters");
    if (n_frames() < 2) throw ParseError("clip " + clip_id + ": needs at least 2 frames");
    for (const auto& t : tracks) {
      if (static_cast<int>(t.size()) != n_frames()) throw ParseError("clip " + clip_id + ": ragged tracks");
    }
  }

  friend bool operator==(const DemoClip&, const DemoClip&) = default;
};

struct DemoDataset {
  std::vector<DemoClip> clips;

  bool empty() const { return clips.empty(); }
  std::size_t total_frames() const {
    std::size_t n = 0;
    for (const auto& c : clips) n += static_cast<std::size_t>(c.n_frames());
    return n;
  }
  friend bool operator==(const DemoDataset&, const DemoDataset&) = default;
};

// Every recorded joint pose, for demo-frame initialization.
inline std::vector<JointPose> joint_pose_pool(const DemoDataset& d) {
  std::vector<JointPose> pool;
  for (const auto& c : d.clips) {
    for (const auto& track : c.tracks) {
      for (const auto& f : track) pool.push_back(f.q);
    }
  }
  return pool;
}

inline ArenaState spawn_arena(const ArenaConfig& config, std::uint64_t seed, const DemoDataset& demos) {
  const auto pool = joint_pose_pool(demos);
  SpawnOptions opts;
  opts.from_demo = true;
  opts.pose_pool = pool;
  return spawn_arena(config, seed, opts);
}

// ---------------------------------------------------------------------------
// Generation

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(master ^ splitmix64(index + 0x51ED2701ull));
}

namespace detail {

// Slow random walk with periodic kinematic jabs; it never reacts to the expert.
struct VirtualTarget {
  Vec2 vel;
  int retarget = 0;
  int punch_timer = 0;
  int next_punch = 60;
  double turn = 0.0;

  void step(FighterState& f, const ArenaConfig& cfg, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double dt = 1.0 / cfg.control_hz;
    if (retarget-- <= 0) {
      const double ang = 6.283185307179586 * u01(rng);
      vel = 0.4 * u01(rng) * unit_from_angle(ang);
      turn = 0.6 * (u01(rng) - 0.5);
      retarget = 45 + static_cast<int>(60 * u01(rng));
    }
    const double bound = 0.5 * cfg.arena_halfextent;
    if (std::abs(f.root_pos.x) > bound && f.root_pos.x * vel.x > 0) vel.x = -vel.x;
    if (std::abs(f.root_pos.y) > bound && f.root_pos.y * vel.y > 0) vel.y = -vel.y;
    f.root_linvel = vel;
    f.root_angvel = turn;
    f.root_pos += dt * vel;
    f.root_heading = wrap_angle(f.root_heading + dt * turn);
    std::array<double, kNumJoints> q = {0.5, 0.5, 2.0, 2.0};
    if (punch_timer > 0) {
      q[ShoulderL] = 0.0;
      q[ElbowL] = 0.0;
      --punch_timer;
    } else if (next_punch-- <= 0) {
      punch_timer = 6;
      next_punch = 40 + static_cast<int>(50 * u01(rng));
    }
    for (int j = 0; j < kNumJoints; ++j) {
      f.joint_vels[j] = (q[j] - f.joint_angles[j]) / dt;
      f.joint_angles[j] = q[j];
    }
    f.pd_targets = f.joint_angles;
  }
};

inline DemoClip record_single_clip(const StyleSpec& style, int n_frames, std::uint64_t seed, const ArenaConfig& cfg,
                                   const std::string& clip_id) {
  std::mt19937_64 rng(seed);
  SpawnOptions opts;
  opts.min_separation = 1.5;
  ArenaState arena = spawn_arena(cfg, rng(), opts);
  arena.active = {true, false};
  VirtualTarget target;
  ExpertFsm fsm;
  DemoClip clip;
  clip.clip_id = clip_id;
  clip.styles = {style.id};
  clip.tracks.resize(1);
  clip.labels.resize(1);
  for (int t = 0; t < n_frames; ++t) {
    const auto obs = build_observation(arena.fighters[0], arena.fighters[1], cfg);
    const ActionVector a = expert_step(style, fsm, obs, rng);
    clip.tracks[0].push_back(to_frame(arena.fighters[0]));
    clip.labels[0].push_back(fsm.state);
    if (t + 1 == n_frames) break;
    apply_action(arena.fighters[0], a, cfg);
    step_physics(arena);
    target.step(arena.fighters[1], cfg, rng);
  }
  return clip;
}

}  // namespace detail

inline DemoDataset generate_single_dataset(const StyleSpec& style, double seconds, std::uint64_t seed,
                                           const ArenaConfig& cfg = {}) {
  style.validate();
  if (!(seconds > 0.0)) throw InvalidInput("generate_single_dataset: seconds must be > 0");
  const int total = static_cast<int>(std::lround(seconds * kDemoFps));
  DemoDataset d;
  std::mt19937_64 lengths(seed);
  std::uniform_int_distribution<int> clip_seconds(10, 30);
  int remaining = total;
  for (std::uint64_t k = 0; remaining >= 2; ++k) {
    const int frames = std::min(remaining, clip_seconds(lengths) * kDemoFps);
    d.clips.push_back(detail::record_single_clip(style, frames, derive_seed(seed, k), cfg,
                                                 style.id + "-single-" + std::to_string(k)));
    remaining -= frames;
  }
  return d;
}

inline DemoClip record_interaction_clip(const StyleSpec& a, const StyleSpec& b, int n_frames, std::uint64_t seed,
                                        const ArenaConfig& cfg, const std::string& clip_id) {
  std::mt19937_64 rng(seed);
  SpawnOptions opts;
  opts.min_separation = 2.5;
  ArenaState arena = spawn_arena(cfg, rng(), opts);
  std::array<ExpertFsm, 2> fsm;
  const std::array<const StyleSpec*, 2> style = {&a, &b};
  DemoClip clip;
  clip.clip_id = clip_id;
  clip.styles = {a.id, b.id};
  clip.tracks.resize(2);
  clip.labels.resize(2);
  for (int t = 0; t < n_frames; ++t) {
    std::array<ActionVector, 2> act{};
    for (int i = 0; i < 2; ++i) {
      const auto obs = build_observation(arena.fighters[i], arena.fighters[1 - i], cfg);
      act[i] = expert_step(*style[i], fsm[i], obs, rng);
      clip.tracks[i].push_back(to_frame(arena.fighters[i]));
      clip.labels[i].push_back(fsm[i].state);
    }
    if (t + 1 == n_frames) break;
    apply_actions(arena, act);
    step_physics(arena);
  }
  return clip;
}

// Character 0 always plays `a`.
inline DemoDataset generate_interaction_dataset(const StyleSpec& a, const StyleSpec& b, int rounds,
                                                std::uint64_t seed, const ArenaConfig& cfg = {},
                                                double round_seconds = 30.0) {
  a.validate();
  b.validate();
  if (rounds < 1) throw InvalidInput("generate_interaction_dataset: rounds must be >= 1");
  const int frames = static_cast<int>(std::lround(round_seconds * kDemoFps));
  DemoDataset d;
  for (int k = 0; k < rounds; ++k) {
    d.clips.push_back(record_interaction_clip(a, b, frames, derive_seed(seed, static_cast<std::uint64_t>(k)), cfg,
                                              a.id + "-vs-" + b.id + "-" + std::to_string(k)));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Transitions

struct SingleRole {};
struct InteractionRole {
  int agent_index = 0;
};
using DemoRole = std::variant<SingleRole, InteractionRole>;

// Observations are rebuilt from the recorded poses with the simulator's
// feature pipeline; transitions never cross clip boundaries.
inline Matrix demo_to_transitions(const DemoDataset& d, const DemoRole& role, const ArenaConfig& cfg = {}) {
  const bool single = std::holds_alternative<SingleRole>(role);
  const int self = single ? 0 : std::get<InteractionRole>(role).agent_index;
  if (!single && (self < 0 || self > 1)) throw InvalidInput("demo_to_transitions: agent index must be 0 or 1");
  std::size_t rows = 0;
  for (const auto& c : d.clips) {
    if (c.layout_version != kLayoutVersion) {
      throw VersionError("clip " + c.clip_id + ": layout version " + std::to_string(c.layout_version) +
                         " != features layout version " + std::to_string(kLayoutVersion));
    }
    if (!single && c.n_characters() != 2) {
      throw InvalidInput("demo_to_transitions: interaction role needs two-character clips");
    }
    rows += static_cast<std::size_t>(std::max(0, c.n_frames() - 1));
  }
  const int width = single ? kMotionTransitionDim : kInteractionTransitionDim;
  Matrix out(static_cast<Eigen::Index>(rows), width);
  Eigen::Index r = 0;
  for (const auto& c : d.clips) {
    for (int t = 0; t + 1 < c.n_frames(); ++t) {
      const FighterState now = to_fighter(c.tracks[self][t]);
      const FighterState next = to_fighter(c.tracks[self][t + 1]);
      if (single) {
        const auto tr = motion_transition(build_self_obs(now, cfg), build_self_obs(next, cfg));
        for (int k = 0; k < width; ++k) out(r, k) = tr[k];
      } else {
        const FighterState opp = to_fighter(c.tracks[1 - self][t]);
        const auto tr = interaction_transition(build_observation(now, opp, cfg), build_self_obs(next, cfg));
        for (int k = 0; k < width; ++k) out(r, k) = tr[k];
      }
      ++r;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON Lines I/O

namespace detail {

inline nlohmann::json frame_json(const CharacterFrame& f) {
  return {{"root", {f.root_pos.x, f.root_pos.y, f.heading}},
          {"vel", {f.linvel.x, f.linvel.y, f.angvel}},
          {"q", f.q},
          {"qd", f.qd}};
}

inline CharacterFrame frame_from_json(const nlohmann::json& j) {
  CharacterFrame f;
  const auto root = j.at("root").get<std::array<double, 3>>();
  const auto vel = j.at("vel").get<std::array<double, 3>>();
  f.root_pos = {root[0], root[1]};
  f.heading = root[2];
  f.linvel = {vel[0], vel[1]};
  f.angvel = vel[2];
  f.q = j.at("q").get<std::array<double, kNumJoints>>();
  f.qd = j.at("qd").get<std::array<double, kNumJoints>>();
  return f;
}

inline ExpertState expert_state_from_string(const std::string& s) {
  for (int i = 0; i < kNumExpertStates; ++i) {
    if (s == kExpertStateNames[i]) return static_cast<ExpertState>(i);
  }
  throw ParseError("unknown behavior label '" + s + "'");
}

}  // namespace detail

inline void write_dataset(std::ostream& os, const DemoDataset& d) {
  for (const DemoClip& c : d.clips) {
    c.validate();
    nlohmann::json header = {{"type", "header"},         {"clip_id", c.clip_id},
                             {"styles", c.styles},       {"fps", c.fps},
                             {"n_frames", c.n_frames()}, {"n_characters", c.n_characters()},
                             {"layout_version", c.layout_version}};
    os << header.dump() << '\n';
    const bool labelled = static_cast<int>(c.labels.size()) == c.n_characters();
    for (int t = 0; t < c.n_frames(); ++t) {
      nlohmann::json chars = nlohmann::json::array();
      for (int k = 0; k < c.n_characters(); ++k) chars.push_back(detail::frame_json(c.tracks[k][t]));
      nlohmann::json frame = {{"type", "frame"}, {"t", t}, {"chars", std::move(chars)}};
      if (labelled) {
        nlohmann::json labels = nlohmann::json::array();
        for (int k = 0; k < c.n_characters(); ++k) labels.push_back(kExpertStateNames[static_cast<int>(c.labels[k][t])]);
        frame["labels"] = std::move(labels);
      }
      os << frame.dump() << '\n';
    }
  }
}

inline void write_dataset(const std::string& path, const DemoDataset& d) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_dataset(os, d);
  if (!os) throw Error("write to '" + path + "' failed");
}

inline DemoDataset read_dataset(std::istream& is) {
  DemoDataset d;
  std::string line;
  std::size_t line_no = 0;
  DemoClip* clip = nullptr;
  int expected_frames = 0;
  bool labelled = false;
  const auto close_clip = [&]() {
    if (!clip) return;
    if (clip->n_frames() != expected_frames) {
      throw ParseError("clip " + clip->clip_id + ": header announced " + std::to_string(expected_frames) +
                       " frames, found " + std::to_string(clip->n_frames()));
    }
    if (!labelled) clip->labels.clear();
    clip->validate();
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + "malformed JSON (" + e.what() + ")");
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        close_clip();
        DemoClip c;
        c.clip_id = j.at("clip_id").get<std::string>();
        c.styles = j.at("styles").get<std::vector<std::string>>();
        c.fps = j.at("fps").get<int>();
        c.layout_version = j.at("layout_version").get<int>();
        if (c.layout_version != kLayoutVersion) {
          throw VersionError(where + "layout_version " + std::to_string(c.layout_version) + " is not " +
                             std::to_string(kLayoutVersion));
        }
        if (c.fps != kDemoFps) {
          throw ParseError(where + "fps " + std::to_string(c.fps) + " is not the control rate " +
                           std::to_string(kDemoFps));
        }
        const int nc = j.at("n_characters").get<int>();
        if (nc < 1 || nc > 2) throw ParseError(where + "n_characters must be 1 or 2");
        expected_frames = j.at("n_frames").get<int>();
        c.tracks.resize(nc);
        c.labels.resize(nc);
        labelled = true;
        d.clips.push_back(std::move(c));
        clip = &d.clips.back();
      } else if (type == "frame") {
        if (!clip) throw ParseError(where + "frame before any header");
        const auto& chars = j.at("chars");
        if (static_cast<int>(chars.size()) != clip->n_characters()) {
          throw ParseError(where + "character count does not match header");
        }
        for (int k = 0; k < clip->n_characters(); ++k) clip->tracks[k].push_back(detail::frame_from_json(chars[k]));
        if (j.contains("labels")) {
          const auto& labels = j.at("labels");
          for (int k = 0; k < clip->n_characters(); ++k) {
            clip->labels[k].push_back(detail::expert_state_from_string(labels.at(k).get<std::string>()));
          }
        } else {
          labelled = false;
        }
      } else {
        throw ParseError(where + "unknown record type '" + type + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const ParseError& e) {
      const std::string msg = e.what();
      throw ParseError(msg.rfind("line ", 0) == 0 ? msg : where + msg);
    }
  }
  if (d.clips.empty()) throw ParseError("dataset is empty");
  close_clip();
  return d;
}

inline DemoDataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(is);
}

}  // namespace maaip
