#pragma once

// Live rollout for human steering: the JSON wire protocol and the
// simulation session that consumes commands and produces frames. The
// WebSocket transport lives in livebridge_server.hpp. Protocol reference:
// docs/wire-protocol.md.

#include "json.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/demos.hpp"
#include "maaip/error.hpp"
#include "maaip/evalkit.hpp"
#include "maaip/features.hpp"
#include "maaip/orchestrator.hpp"
#include "maaip/priors.hpp"

namespace maaip {

inline constexpr int kWireVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 8192;

// Rejected client input. The message goes back to the sender only.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Messages

struct WireContact {
  int src_agent = 0;
  BodyPart src_part = BodyPart::Torso;
  int dst_agent = 1;
  BodyPart dst_part = BodyPart::Torso;
  double force = 0.0;  // N, strongest substep
  Vec2 point;
  friend bool operator==(const WireContact&, const WireContact&) = default;
};

struct AgentFrame {
  std::string checkpoint;
  std::array<std::array<double, 3>, kNumParts> parts{};  // x, y, angle
  Vec2 root_vel;
  Vec2 heading{1.0, 0.0};  // world frame, unit
  // r^M, r^I, r^C of the step
  std::optional<std::array<double, 3>> rewards;
  friend bool operator==(const AgentFrame&, const AgentFrame&) = default;
};

struct FrameMessage {
  std::int64_t step = 0;
  int episode_step = 0;
  bool episode_start = false;
  std::array<AgentFrame, kNumAgents> agents;
  std::vector<WireContact> contacts;
  int contacts_dropped = 0;
  friend bool operator==(const FrameMessage&, const FrameMessage&) = default;
};

enum class CommandType { SetHeading, Pause, Resume, Reset, LoadCheckpoint, SetSpeed, Release };

inline constexpr std::array<const char*, 7> kCommandNames = {"set_heading",     "pause",     "resume", "reset",
                                                             "load_checkpoint", "set_speed", "release"};

struct CommandMessage {
  CommandType type = CommandType::Pause;
  int agent = -1;  // -1: both
  double dx = 0.0, dy = 0.0;
  std::uint64_t seed = 0;
  std::string checkpoint;
  double speed = 1.0;
  friend bool operator==(const CommandMessage&, const CommandMessage&) = default;
};

namespace detail {

inline const char* part_name(BodyPart p) { return kPartNames[static_cast<std::size_t>(p)]; }

inline BodyPart part_from_name(const std::string& s) {
  for (int k = 0; k < kNumParts; ++k) {
    if (s == kPartNames[static_cast<std::size_t>(k)]) return static_cast<BodyPart>(k);
  }
  throw ProtocolError("unknown body part '" + s + "'");
}

// Four decimals is sub-millimetre; the shortest printed form of the rounded
// double parses back to the same double, so JSON round trips are exact.
inline double quantize(double x) { return std::round(x * 1e4) / 1e4; }

inline void check_version(const nlohmann::json& j) {
  if (!j.contains("v")) throw ProtocolError("missing protocol version field \"v\"");
  if (!j["v"].is_number_integer() || j["v"].get<int>() != kWireVersion) {
    throw ProtocolError("protocol version mismatch: got v=" + j["v"].dump() + ", server speaks v=" +
                        std::to_string(kWireVersion));
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ProtocolError(std::string("missing field \"") + key + "\"");
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(std::string("field \"") + key + "\" has the wrong type");
  }
}

}  // namespace detail

inline nlohmann::json frame_to_json(const FrameMessage& f) {
  nlohmann::json j{{"v", kWireVersion}, {"type", "frame"}, {"step", f.step}, {"episode_step", f.episode_step},
                   {"episode_start", f.episode_start}};
  j["agents"] = nlohmann::json::array();
  for (const AgentFrame& a : f.agents) {
    nlohmann::json ja{{"checkpoint", a.checkpoint},
                      {"parts", a.parts},
                      {"root_vel", {a.root_vel.x, a.root_vel.y}},
                      {"heading", {a.heading.x, a.heading.y}}};
    ja["rewards"] = a.rewards ? nlohmann::json{{"motion", (*a.rewards)[0]},
                                               {"interaction", (*a.rewards)[1]},
                                               {"control", (*a.rewards)[2]}}
                              : nlohmann::json();
    j["agents"].push_back(ja);
  }
  j["contacts"] = nlohmann::json::array();
  for (const WireContact& c : f.contacts) {
    j["contacts"].push_back({{"src", {c.src_agent, detail::part_name(c.src_part)}},
                             {"dst", {c.dst_agent, detail::part_name(c.dst_part)}},
                             {"force", c.force},
                             {"point", {c.point.x, c.point.y}}});
  }
  j["contacts_dropped"] = f.contacts_dropped;
  return j;
}

inline std::string encode_frame(const FrameMessage& f) { return frame_to_json(f).dump(); }

inline FrameMessage decode_frame(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  detail::check_version(j);
  if (j.value("type", "") != "frame") throw ProtocolError("not a frame message");
  FrameMessage f;
  f.step = j["step"].get<std::int64_t>();
  f.episode_step = j["episode_step"].get<int>();
  f.episode_start = j["episode_start"].get<bool>();
  for (int i = 0; i < kNumAgents; ++i) {
    const auto& ja = j["agents"].at(static_cast<std::size_t>(i));
    AgentFrame& a = f.agents[i];
    a.checkpoint = ja["checkpoint"].get<std::string>();
    a.parts = ja["parts"].get<std::array<std::array<double, 3>, kNumParts>>();
    a.root_vel = {ja["root_vel"][0].get<double>(), ja["root_vel"][1].get<double>()};
    a.heading = {ja["heading"][0].get<double>(), ja["heading"][1].get<double>()};
    if (!ja["rewards"].is_null()) {
      a.rewards = std::array<double, 3>{ja["rewards"]["motion"].get<double>(), ja["rewards"]["interaction"].get<double>(),
                                        ja["rewards"]["control"].get<double>()};
    }
  }
  for (const auto& jc : j["contacts"]) {
    WireContact c;
    c.src_agent = jc["src"][0].get<int>();
    c.src_part = detail::part_from_name(jc["src"][1].get<std::string>());
    c.dst_agent = jc["dst"][0].get<int>();
    c.dst_part = detail::part_from_name(jc["dst"][1].get<std::string>());
    c.force = jc["force"].get<double>();
    c.point = {jc["point"][0].get<double>(), jc["point"][1].get<double>()};
    f.contacts.push_back(c);
  }
  f.contacts_dropped = j["contacts_dropped"].get<int>();
  return f;
}

inline nlohmann::json command_to_json(const CommandMessage& c) {
  nlohmann::json j{{"v", kWireVersion}, {"type", kCommandNames[static_cast<std::size_t>(c.type)]}};
  switch (c.type) {
    case CommandType::SetHeading:
      j["agent"] = c.agent < 0 ? nlohmann::json("both") : nlohmann::json(c.agent);
      j["dx"] = c.dx;
      j["dy"] = c.dy;
      break;
    case CommandType::Reset:
      j["seed"] = c.seed;
      break;
    case CommandType::LoadCheckpoint:
      j["id"] = c.checkpoint;
      j["agent"] = c.agent < 0 ? nlohmann::json("both") : nlohmann::json(c.agent);
      break;
    case CommandType::SetSpeed:
      j["multiplier"] = c.speed;
      break;
    default:
      break;
  }
  return j;
}

inline std::string encode_command(const CommandMessage& c) { return command_to_json(c).dump(); }

// Throws ProtocolError with a message meant for the sending client.
inline CommandMessage decode_command(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProtocolError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw ProtocolError("message must be a JSON object");
  detail::check_version(j);
  const auto type = detail::field<std::string>(j, "type");
  CommandMessage c;
  bool known = false;
  for (std::size_t k = 0; k < kCommandNames.size(); ++k) {
    if (type == kCommandNames[k]) {
      c.type = static_cast<CommandType>(k);
      known = true;
    }
  }
  if (!known) throw ProtocolError("unknown command type '" + type + "'");
  const auto agent = [&]() {
    if (!j.contains("agent") || (j["agent"].is_string() && j["agent"] == "both")) return -1;
    if (j["agent"].is_number_integer()) {
      const int a = j["agent"].get<int>();
      if (a == 0 || a == 1) return a;
    }
    throw ProtocolError("agent must be 0, 1 or \"both\"");
  };
  switch (c.type) {
    case CommandType::SetHeading:
      c.agent = agent();
      c.dx = detail::field<double>(j, "dx");
      c.dy = detail::field<double>(j, "dy");
      break;
    case CommandType::Reset:
      c.seed = detail::field<std::uint64_t>(j, "seed");
      break;
    case CommandType::LoadCheckpoint:
      c.checkpoint = detail::field<std::string>(j, "id");
      c.agent = agent();
      break;
    case CommandType::SetSpeed:
      c.speed = detail::field<double>(j, "multiplier");
      break;
    default:
      break;
  }
  return c;
}

inline std::string encode_error(const std::string& message) {
  return nlohmann::json{{"v", kWireVersion}, {"type", "error"}, {"message", message}}.dump();
}

inline std::string encode_ack(const CommandMessage& c) {
  return nlohmann::json{{"v", kWireVersion}, {"type", "ack"}, {"command", kCommandNames[static_cast<std::size_t>(c.type)]}}
      .dump();
}

// ---------------------------------------------------------------------------
// Session

struct LiveCheckpoint {
  std::string id;
  std::shared_ptr<const TrainState> state;
};

// One arena driven by the active checkpoint of each agent. Not thread-safe;
// the server owns it from the simulation thread.
class LiveSession {
 public:
  // `stochastic` samples actions instead of taking the policy mean.
  LiveSession(std::vector<LiveCheckpoint> checkpoints, std::uint64_t seed = 0, bool stochastic = false) : seed_(seed) {
    if (checkpoints.empty()) throw ConfigError("livebridge: at least one checkpoint is required");
    for (auto& c : checkpoints) {
      if (!c.state) throw ConfigError("livebridge: checkpoint '" + c.id + "' is empty");
      require_same_arena(checkpoints.front().state->config, c.state->config);
      for (const auto& e : entries_) {
        if (e.id == c.id) throw ConfigError("livebridge: duplicate checkpoint id '" + c.id + "'");
      }
      entries_.push_back({c.id, c.state, std::make_shared<PolicyController>(*c.state, c.id, stochastic ? ActMode::Stochastic : ActMode::Mean)});
    }
    scene_ = entries_.front().state->config;
    active_ = {0, entries_.size() > 1 ? std::size_t{1} : std::size_t{0}};
    respawn(seed_);
  }

  // Applies a decoded command; throws ProtocolError when it is rejected, in
  // which case nothing changed.
  void apply(const CommandMessage& c) {
    switch (c.type) {
      case CommandType::SetHeading: {
        const double n = std::hypot(c.dx, c.dy);
        if (!std::isfinite(n) || n < 1e-9) throw ProtocolError("set_heading: direction (0, 0) cannot be normalized");
        for (int i : targets(c.agent)) {
          if (!entries_[active_[i]].policy->heading_conditioned()) {
            throw ProtocolError("set_heading: checkpoint '" + entries_[active_[i]].id + "' of agent " +
                                std::to_string(i) + " is not heading-conditioned");
          }
        }
        for (int i : targets(c.agent)) heading_[i] = {c.dx / n, c.dy / n};
        break;
      }
      case CommandType::Pause:
        paused_ = true;
        break;
      case CommandType::Resume:
        paused_ = false;
        break;
      case CommandType::Reset:
        seed_ = c.seed;
        episode_ = 0;
        respawn(seed_);
        break;
      case CommandType::LoadCheckpoint: {
        const std::size_t k = find(c.checkpoint);
        for (int i : targets(c.agent)) active_[i] = k;
        break;
      }
      case CommandType::SetSpeed:
        if (!(c.speed > 0.0 && c.speed <= 16.0)) throw ProtocolError("set_speed: multiplier must be in (0, 16]");
        speed_ = c.speed;
        break;
      case CommandType::Release:
        break;  // role handling belongs to the transport
    }
  }

  // One control step; nothing happens while paused.
  std::optional<FrameMessage> tick() {
    if (paused_) return std::nullopt;
    const ArenaState& a = arena_;
    std::array<ActionVector, kNumAgents> act{};
    std::array<ObservationPair, kNumAgents> obs;
    for (int i = 0; i < kNumAgents; ++i) {
      const Entry& e = entries_[active_[i]];
      std::optional<Vec2> h;
      if (e.policy->heading_conditioned()) h = heading_[i];
      obs[i] = build_observation(a.fighters[i], a.fighters[1 - i], scene_.arena, h);
      last_obs_[i] = e.policy->raw_obs(obs[i]);
      act[i] = e.policy->act(i, obs[i], rng_);
    }
    FrameMessage f;
    bool restart = episode_start_;
    episode_start_ = false;
    StepResult step;
    try {
      apply_actions(arena_, act);
      step = step_physics(arena_);
    } catch (const SimulationDiverged&) {
      respawn(derive_seed(seed_, ++episode_));
      restart = true;
    }
    ++step_;
    ++episode_step_;
    f.step = step_;
    f.episode_step = episode_step_;
    f.episode_start = restart;
    for (int i = 0; i < kNumAgents; ++i) {
      const Entry& e = entries_[active_[i]];
      AgentFrame& af = f.agents[i];
      af.checkpoint = e.id;
      const PartPoses poses = forward_kinematics(arena_.fighters[i], scene_.arena);
      for (int p = 0; p < kNumParts; ++p) {
        af.parts[p] = {detail::quantize(poses[p].pos.x), detail::quantize(poses[p].pos.y),
                       detail::quantize(poses[p].angle)};
      }
      af.root_vel = {detail::quantize(arena_.fighters[i].root_linvel.x), detail::quantize(arena_.fighters[i].root_linvel.y)};
      af.heading = heading_[i];
      if (!restart) af.rewards = rewards(e, i, obs[i], step);
    }
    f.contacts = merge_contacts(step.contacts, f.contacts_dropped);
    if (episode_step_ >= scene_.arena.episode_len) {
      respawn(derive_seed(seed_, ++episode_));
    }
    return f;
  }

  bool paused() const { return paused_; }
  double speed() const { return speed_; }
  std::int64_t step() const { return step_; }
  Vec2 heading(int agent) const { return heading_.at(static_cast<std::size_t>(agent)); }
  const std::string& active_checkpoint(int agent) const { return entries_[active_.at(static_cast<std::size_t>(agent))].id; }
  // The un-normalized policy observation used for the last action.
  const std::vector<double>& last_policy_obs(int agent) const { return last_obs_.at(static_cast<std::size_t>(agent)); }
  const ArenaState& arena() const { return arena_; }

  nlohmann::json checkpoint_list() const {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : entries_) {
      j.push_back({{"id", e.id},
                   {"heading", e.policy->heading_conditioned()},
                   {"control", to_string(e.state->config.control)}});
    }
    return j;
  }

 private:
  struct Entry {
    std::string id;
    std::shared_ptr<const TrainState> state;
    std::shared_ptr<PolicyController> policy;
  };

  std::vector<int> targets(int agent) const {
    if (agent < 0) return {0, 1};
    return {agent};
  }

  std::size_t find(const std::string& id) const {
    for (std::size_t k = 0; k < entries_.size(); ++k) {
      if (entries_[k].id == id) return k;
    }
    throw ProtocolError("load_checkpoint: unknown checkpoint id '" + id + "'");
  }

  void respawn(std::uint64_t seed) {
    SpawnOptions so;
    so.min_separation = 2.5;
    arena_ = spawn_arena(scene_.arena, seed, so);
    rng_.seed(splitmix64(seed));
    episode_step_ = 0;
    episode_start_ = true;
  }

  std::array<double, 3> rewards(const Entry& e, int i, const ObservationPair& before, const StepResult& step) const {
    const TrainConfig& c = e.state->config;
    const RewardShape shape{c.lsgan_u, c.lsgan_v};
    const SelfObs next = build_self_obs(arena_.fighters[i], scene_.arena);
    std::array<double, 3> r{};
    if (c.single_motion_prior) {
      const auto m = motion_transition(before.self, next);
      r[0] = disc_reward(e.state->motion_disc, Eigen::Map<const Eigen::RowVectorXd>(m.data(), kMotionTransitionDim), shape)(0);
    }
    const auto it = interaction_transition(before, next);
    r[1] = disc_reward(e.state->interaction_disc[i], Eigen::Map<const Eigen::RowVectorXd>(it.data(), kInteractionTransitionDim), shape)(0);
    ControlInputs in;
    in.damage_received = damage_tally(step.contacts, i);
    in.damage_dealt = damage_tally(step.contacts, 1 - i);
    in.heading = heading_[i];
    in.root_vel = arena_.fighters[i].root_linvel;
    r[2] = control_reward(ControlParams::from(c), in);
    for (double& v : r) v = detail::quantize(v);
    return r;
  }

  // One entry per (src part, dst part) pair with its strongest substep
  // force; the weakest are dropped when the frame would exceed its budget.
  static std::vector<WireContact> merge_contacts(const std::vector<ContactEvent>& events, int& dropped) {
    std::vector<WireContact> out;
    for (const ContactEvent& e : events) {
      auto it = std::find_if(out.begin(), out.end(), [&](const WireContact& w) {
        return w.src_agent == e.src.agent && w.src_part == e.src.part && w.dst_agent == e.dst.agent &&
               w.dst_part == e.dst.part;
      });
      if (it == out.end()) {
        out.push_back({e.src.agent, e.src.part, e.dst.agent, e.dst.part, 0.0, {}});
        it = std::prev(out.end());
      }
      if (e.force_mag >= it->force) {
        it->force = e.force_mag;
        it->point = e.point;
      }
    }
    for (auto& w : out) {
      w.force = detail::quantize(w.force);
      w.point = {detail::quantize(w.point.x), detail::quantize(w.point.y)};
    }
    std::stable_sort(out.begin(), out.end(), [](const WireContact& a, const WireContact& b) { return a.force > b.force; });
    // Agents and poses take about 1.2 KiB; each contact about 90 bytes.
    constexpr std::size_t kMaxContacts = 64;
    dropped = 0;
    if (out.size() > kMaxContacts) {
      dropped = static_cast<int>(out.size() - kMaxContacts);
      out.resize(kMaxContacts);
    }
    return out;
  }

  std::vector<Entry> entries_;
  TrainConfig scene_;
  std::array<std::size_t, kNumAgents> active_{};
  std::array<Vec2, kNumAgents> heading_ = {Vec2{1.0, 0.0}, Vec2{1.0, 0.0}};
  std::array<std::vector<double>, kNumAgents> last_obs_;
  ArenaState arena_;
  std::mt19937_64 rng_;
  std::uint64_t seed_ = 0;
  std::uint64_t episode_ = 0;
  std::int64_t step_ = 0;
  int episode_step_ = 0;
  bool episode_start_ = true;
  bool paused_ = false;
  double speed_ = 1.0;
};

}  // namespace maaip
