#pragma once

// Evaluation protocols: damage tables, heading-task return, style statistics
// and cross-style pairings. Every rollout uses mean actions and is fully
// determined by the seed. See docs/eval-report.md for the report schema.

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/config.hpp"
#include "maaip/demos.hpp"
#include "maaip/error.hpp"
#include "maaip/features.hpp"
#include "maaip/marl.hpp"
#include "maaip/orchestrator.hpp"

namespace maaip {

inline constexpr int kEvalSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Controllers

class Controller {
 public:
  virtual ~Controller() = default;
  // `agent` is the arena slot; it selects the policy's agent one-hot.
  // `rng` belongs to the episode, so controllers stay stateless.
  virtual ActionVector act(int agent, const ObservationPair& obs, std::mt19937_64& rng) const = 0;
  virtual bool heading_conditioned() const { return false; }
  virtual std::string label() const = 0;
};

// A trained policy; mean actions unless built with ActMode::Stochastic.
class PolicyController : public Controller {
 public:
  explicit PolicyController(const TrainState& s, std::string label = "policy", ActMode mode = ActMode::Mean)
      : policy_(s.policy), norm_(s.obs_norm), config_(s.config), label_(std::move(label)), mode_(mode) {}

  ActionVector act(int agent, const ObservationPair& obs, std::mt19937_64& rng) const override {
    const ActResult r = mode_ == ActMode::Mean ? policy_act(policy_, inputs(agent, obs), {}, ActMode::Mean)
                                               : policy_act(policy_, inputs(agent, obs), std::span(&rng, 1), mode_);
    return to_action(r.actions.row(0));
  }
  // Un-normalized policy observation (79 or 81 values).
  std::vector<double> raw_obs(const ObservationPair& obs) const {
    std::vector<double> row(static_cast<std::size_t>(policy_.obs_dim()));
    write_policy_obs(obs, policy_.heading, row);
    return row;
  }
  // Full network input: normalized observation plus agent one-hot.
  Matrix inputs(int agent, const ObservationPair& obs) const {
    const std::vector<double> row = raw_obs(obs);
    Matrix raw(1, static_cast<Eigen::Index>(row.size()));
    for (std::size_t k = 0; k < row.size(); ++k) raw(0, static_cast<Eigen::Index>(k)) = row[k];
    const int id[1] = {agent};
    return policy_inputs(norm_.apply(raw), id);
  }
  bool heading_conditioned() const override { return policy_.heading; }
  std::string label() const override { return label_; }
  const TrainConfig& config() const { return config_; }

 private:
  PolicyNet policy_;
  RunningNormalizer norm_;
  TrainConfig config_;
  std::string label_;
  ActMode mode_;
};

class ZeroController : public Controller {
 public:
  ActionVector act(int, const ObservationPair&, std::mt19937_64&) const override { return {}; }
  std::string label() const override { return "zero"; }
};

// Uniform over the command box and joint limits.
class RandomController : public Controller {
 public:
  explicit RandomController(ArenaConfig cfg = {}) : cfg_(cfg) {}
  ActionVector act(int, const ObservationPair&, std::mt19937_64& rng) const override {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    ActionVector a{};
    a[0] = cfg_.max_linvel_cmd * u(rng);
    a[1] = cfg_.max_linvel_cmd * u(rng);
    a[2] = cfg_.max_yawrate_cmd * u(rng);
    for (int j = 0; j < kNumJoints; ++j) {
      const JointLimit& l = cfg_.joint_limits[j];
      a[3 + j] = l.lo + 0.5 * (u(rng) + 1.0) * (l.hi - l.lo);
    }
    return a;
  }
  std::string label() const override { return "random"; }

 private:
  ArenaConfig cfg_;
};

// Scripted mover: commands the target velocity along the observed heading.
class HeadingOracle : public Controller {
 public:
  explicit HeadingOracle(double target_speed = 1.0) : speed_(target_speed) {}
  ActionVector act(int, const ObservationPair& obs, std::mt19937_64&) const override {
    if (!obs.heading) throw InvalidInput("heading oracle: observation carries no heading");
    ActionVector a{};
    a[0] = speed_ * obs.heading->x;
    a[1] = speed_ * obs.heading->y;
    return a;
  }
  bool heading_conditioned() const override { return true; }
  std::string label() const override { return "heading_oracle"; }

 private:
  double speed_;
};

// ---------------------------------------------------------------------------
// Style statistics
//
// Features, 16 bins each:
//   joint usage          per joint, angle over [lo, hi] of its limit
//   engagement distance  root-to-root distance over [0, 4) m, last bin open
//   attack-contact rate  fraction of steps in each 30-step window with a fist
//                        touching the opponent's head or torso, over [0, 1]
// Two-character frames feed all three; single-character frames only joints.

inline constexpr int kStyleBins = 16;
inline constexpr double kEngageRange = 4.0;
inline constexpr int kAttackWindow = 30;

inline bool fist_touches(const FighterState& self, const FighterState& opp, const ArenaConfig& cfg) {
  const PartPoses a = forward_kinematics(self, cfg);
  const PartPoses b = forward_kinematics(opp, cfg);
  for (BodyPart fist : {BodyPart::FistL, BodyPart::FistR}) {
    for (BodyPart target : {BodyPart::Head, BodyPart::Torso}) {
      const auto fi = static_cast<int>(fist);
      const auto ti = static_cast<int>(target);
      if (norm(a[fi].pos - b[ti].pos) < cfg.part_radii[fi] + cfg.part_radii[ti]) return true;
    }
  }
  return false;
}

struct StyleStats {
  std::array<double, kNumJoints * kStyleBins> joint{};
  std::array<double, kStyleBins> distance{};
  std::array<double, kStyleBins> attack_rate{};
  double frames = 0.0;
  double paired_frames = 0.0;
  double attack_frames = 0.0;

  double attack_contact_rate() const { return paired_frames > 0.0 ? attack_frames / paired_frames : 0.0; }

  void merge(const StyleStats& o) {
    for (std::size_t k = 0; k < joint.size(); ++k) joint[k] += o.joint[k];
    for (int k = 0; k < kStyleBins; ++k) {
      distance[k] += o.distance[k];
      attack_rate[k] += o.attack_rate[k];
    }
    frames += o.frames;
    paired_frames += o.paired_frames;
    attack_frames += o.attack_frames;
  }
};

inline int style_bin(double x, double lo, double hi) {
  const double u = (x - lo) / (hi - lo);
  return std::clamp(static_cast<int>(std::floor(u * kStyleBins)), 0, kStyleBins - 1);
}

// Accumulates one character's frames in order.
class StyleTracker {
 public:
  explicit StyleTracker(const ArenaConfig& cfg) : cfg_(cfg) {}

  void add(const FighterState& self, const FighterState* opp) {
    for (int j = 0; j < kNumJoints; ++j) {
      const JointLimit& l = cfg_.joint_limits[j];
      stats_.joint[static_cast<std::size_t>(j * kStyleBins + style_bin(self.joint_angles[j], l.lo, l.hi))] += 1.0;
    }
    stats_.frames += 1.0;
    if (!opp) return;
    stats_.distance[style_bin(norm(opp->root_pos - self.root_pos), 0.0, kEngageRange)] += 1.0;
    const bool hit = fist_touches(self, *opp, cfg_);
    stats_.paired_frames += 1.0;
    stats_.attack_frames += hit ? 1.0 : 0.0;
    window_hits_ += hit ? 1 : 0;
    if (++window_len_ == kAttackWindow) {
      stats_.attack_rate[style_bin(static_cast<double>(window_hits_) / kAttackWindow, 0.0, 1.0 + 1e-9)] += 1.0;
      window_len_ = window_hits_ = 0;
    }
  }

  // Drops a partial attack window at a sequence boundary.
  void end_sequence() { window_len_ = window_hits_ = 0; }
  const StyleStats& stats() const { return stats_; }

 private:
  ArenaConfig cfg_;
  StyleStats stats_;
  int window_len_ = 0;
  int window_hits_ = 0;
};

// `character` < 0 pools every character; otherwise only that track index.
inline StyleStats dataset_style_stats(const DemoDataset& d, int character = -1, const ArenaConfig& cfg = {}) {
  StyleStats total;
  for (const DemoClip& c : d.clips) {
    for (int ch = 0; ch < c.n_characters(); ++ch) {
      if (character >= 0 && ch != character && c.n_characters() == 2) continue;
      StyleTracker tr(cfg);
      for (int t = 0; t < c.n_frames(); ++t) {
        const FighterState self = to_fighter(c.tracks[ch][t]);
        if (c.n_characters() == 2) {
          const FighterState opp = to_fighter(c.tracks[1 - ch][t]);
          tr.add(self, &opp);
        } else {
          tr.add(self, nullptr);
        }
      }
      total.merge(tr.stats());
    }
  }
  return total;
}

namespace detail {

template <std::size_t N>
std::optional<double> hist_l1(const std::array<double, N>& a, const std::array<double, N>& b) {
  double sa = 0.0, sb = 0.0;
  for (std::size_t k = 0; k < N; ++k) {
    sa += a[k];
    sb += b[k];
  }
  if (sa <= 0.0 || sb <= 0.0) return std::nullopt;
  double d = 0.0;
  for (std::size_t k = 0; k < N; ++k) d += std::abs(a[k] / sa - b[k] / sb);
  return d;
}

}  // namespace detail

// Mean L1 distance over the features both sides populate; in [0, 2].
inline double style_distance(const StyleStats& a, const StyleStats& b) {
  double sum = 0.0;
  int n = 0;
  for (const auto& d : {detail::hist_l1(a.joint, b.joint), detail::hist_l1(a.distance, b.distance),
                        detail::hist_l1(a.attack_rate, b.attack_rate)}) {
    if (d) {
      sum += *d;
      ++n;
    }
  }
  if (n == 0) throw InvalidInput("style_distance: no populated feature on both sides");
  return sum / n;
}

// ---------------------------------------------------------------------------
// Rollouts

struct EvalOptions {
  int episodes = 32;
  int length = 1200;
  std::uint64_t seed = 0;
  int workers = 1;
  double spawn_separation = 2.5;  // matches the interaction demos
};

struct EpisodeRecord {
  int index = 0;
  std::uint64_t seed = 0;
  int steps = 0;
  bool diverged = false;
  std::array<double, kNumAgents> damage_received{};
  std::array<double, kNumAgents> damage_dealt{};
  std::optional<double> task_return;  // mean per-step r^C over both agents
  std::array<StyleStats, kNumAgents> style;
};

// Discriminator inputs seen during an episode, built with the training
// feature pipeline.
struct TransitionLog {
  std::vector<MotionTransition> motion;  // both agents, step-major
  std::array<std::vector<InteractionTransition>, kNumAgents> interaction;
};

// `scene` supplies the arena and the heading-task parameters. Headings are
// drawn exactly as in training whenever `heading` is set.
inline EpisodeRecord run_episode(const std::array<const Controller*, kNumAgents>& ctrl, const TrainConfig& scene,
                                 bool heading, int length, std::uint64_t seed, double spawn_separation,
                                 TransitionLog* log = nullptr) {
  EpisodeRecord rec;
  rec.seed = seed;
  std::mt19937_64 rng(seed);
  SpawnOptions so;
  so.min_separation = spawn_separation;
  ArenaState arena = spawn_arena(scene.arena, rng(), so);
  Vec2 h{1.0, 0.0};
  int timer = 0;
  if (heading) draw_heading(h, timer, arena, scene, rng);
  ControlParams cp = ControlParams::from(scene);
  cp.kind = ControlReward::Heading;
  std::array<StyleTracker, kNumAgents> style = {StyleTracker(scene.arena), StyleTracker(scene.arena)};
  double r_sum = 0.0;
  for (int t = 0; t < length; ++t) {
    const auto& f = arena.fighters;
    std::optional<Vec2> hw;
    if (heading) hw = h;
    std::array<ActionVector, kNumAgents> a{};
    std::array<ObservationPair, kNumAgents> obs;
    for (int i = 0; i < kNumAgents; ++i) {
      obs[i] = build_observation(f[i], f[1 - i], scene.arena, hw);
      a[i] = ctrl[i]->act(i, obs[i], rng);
    }
    StepResult step;
    try {
      apply_actions(arena, a);
      step = step_physics(arena);
    } catch (const SimulationDiverged&) {
      rec.diverged = true;
      break;
    }
    if (log) {
      for (int i = 0; i < kNumAgents; ++i) {
        const SelfObs next = build_self_obs(arena.fighters[i], scene.arena);
        log->motion.push_back(motion_transition(obs[i].self, next));
        log->interaction[i].push_back(interaction_transition(obs[i], next));
      }
    }
    for (int i = 0; i < kNumAgents; ++i) {
      rec.damage_received[i] += damage_tally(step.contacts, i);
      rec.damage_dealt[i] += damage_tally(step.contacts, 1 - i);
      style[i].add(arena.fighters[i], &arena.fighters[1 - i]);
      if (heading) r_sum += control_reward(cp, {0.0, 0.0, h, arena.fighters[i].root_linvel});
    }
    ++rec.steps;
    if (heading && --timer <= 0) draw_heading(h, timer, arena, scene, rng);
  }
  if (heading) rec.task_return = rec.steps > 0 ? r_sum / (kNumAgents * rec.steps) : 0.0;
  for (int i = 0; i < kNumAgents; ++i) rec.style[i] = style[i].stats();
  return rec;
}

inline std::vector<EpisodeRecord> run_episodes(const std::array<const Controller*, kNumAgents>& ctrl,
                                               const TrainConfig& scene, bool heading, const EvalOptions& o) {
  if (o.episodes < 1) throw InvalidInput("eval: episodes must be >= 1");
  if (o.length < 1) throw InvalidInput("eval: episode length must be >= 1");
  std::vector<EpisodeRecord> recs(static_cast<std::size_t>(o.episodes));
  detail::parallel_for(o.episodes, o.workers, [&](int k) {
    recs[static_cast<std::size_t>(k)] =
        run_episode(ctrl, scene, heading, o.length, derive_seed(o.seed, static_cast<std::uint64_t>(k)), o.spawn_separation);
    recs[static_cast<std::size_t>(k)].index = k;
  });
  return recs;
}

// ---------------------------------------------------------------------------
// Reports

struct AgentSummary {
  std::string label;
  double mean_damage_received = 0.0;  // N, cumulative per episode
  double mean_damage_dealt = 0.0;
  double attack_contact_rate = 0.0;
  StyleStats style;
};

struct EvalReport {
  std::string scenario;
  int episodes = 0;
  int episode_len = 0;
  std::uint64_t seed = 0;
  std::array<AgentSummary, kNumAgents> agents;
  std::optional<double> mean_normalized_return;
  std::optional<double> style_divergence;
  bool out_of_distribution = false;
  std::vector<EpisodeRecord> records;
};

inline EvalReport summarize(const std::string& scenario, const std::array<const Controller*, kNumAgents>& ctrl,
                            const EvalOptions& o, std::vector<EpisodeRecord> recs) {
  EvalReport r;
  r.scenario = scenario;
  r.episodes = o.episodes;
  r.episode_len = o.length;
  r.seed = o.seed;
  double ret = 0.0;
  bool has_ret = false;
  for (int i = 0; i < kNumAgents; ++i) {
    AgentSummary& a = r.agents[i];
    a.label = ctrl[i]->label();
    for (const auto& e : recs) {
      a.mean_damage_received += e.damage_received[i];
      a.mean_damage_dealt += e.damage_dealt[i];
      a.style.merge(e.style[i]);
    }
    a.mean_damage_received /= static_cast<double>(recs.size());
    a.mean_damage_dealt /= static_cast<double>(recs.size());
    a.attack_contact_rate = a.style.attack_contact_rate();
  }
  for (const auto& e : recs) {
    if (e.task_return) {
      has_ret = true;
      ret += *e.task_return;
    }
  }
  if (has_ret) r.mean_normalized_return = ret / static_cast<double>(recs.size());
  r.records = std::move(recs);
  return r;
}

inline void require_same_arena(const TrainConfig& a, const TrainConfig& b) {
  ArenaConfig x = a.arena, y = b.arena;
  x.episode_len = y.episode_len;
  if (!(x == y)) throw VersionError("checkpoints were trained in different arena configurations");
}

inline void require_compatible(const TrainConfig& a, const TrainConfig& b) {
  require_same_arena(a, b);
  if (a.heading_task != b.heading_task) {
    throw VersionError("eval: observation layout mismatch (one checkpoint is heading-conditioned, the other is not)");
  }
}

inline EvalReport eval_damage(const Controller& a, const Controller& b, const TrainConfig& scene, const EvalOptions& o) {
  const bool heading = a.heading_conditioned() || b.heading_conditioned();
  const std::array<const Controller*, kNumAgents> ctrl = {&a, &b};
  return summarize("damage", ctrl, o, run_episodes(ctrl, scene, heading, o));
}

inline EvalReport eval_damage(const TrainState& a, const TrainState& b, const EvalOptions& o = {}) {
  require_compatible(a.config, b.config);
  return eval_damage(PolicyController(a, "A"), PolicyController(b, "B"), a.config, o);
}

inline EvalReport eval_heading(const Controller& c, const TrainConfig& scene, const EvalOptions& o) {
  if (!c.heading_conditioned()) throw ConfigError("eval heading: controller '" + c.label() + "' has no heading conditioning");
  const std::array<const Controller*, kNumAgents> ctrl = {&c, &c};
  return summarize("heading", ctrl, o, run_episodes(ctrl, scene, true, o));
}

inline EvalOptions heading_defaults() {
  EvalOptions o;
  o.length = 500;
  return o;
}

inline EvalReport eval_heading(const TrainState& s, const EvalOptions& o = heading_defaults()) {
  if (!s.config.heading_task) throw ConfigError("eval heading: checkpoint has no heading conditioning");
  return eval_heading(PolicyController(s, "policy"), s.config, o);
}

// Self-play rollouts of `c` against a demo dataset. `agent` < 0 pools both
// arena slots and every demo character; otherwise slot i is compared with
// demo character i.
inline EvalReport style_report(const Controller& c, const DemoDataset& demos, const TrainConfig& scene,
                               const EvalOptions& o, int agent = -1) {
  const std::array<const Controller*, kNumAgents> ctrl = {&c, &c};
  EvalReport r = summarize("style", ctrl, o, run_episodes(ctrl, scene, c.heading_conditioned(), o));
  StyleStats policy;
  for (int i = 0; i < kNumAgents; ++i) {
    if (agent < 0 || agent == i) policy.merge(r.agents[i].style);
  }
  r.style_divergence = style_distance(policy, dataset_style_stats(demos, agent, scene.arena));
  return r;
}

inline double style_divergence(const TrainState& s, const DemoDataset& demos, int episodes, std::uint64_t seed,
                               int agent = -1) {
  EvalOptions o;
  o.episodes = episodes;
  o.seed = seed;
  o.length = 900;
  return *style_report(PolicyController(s), demos, s.config, o, agent).style_divergence;
}

// Imitation reward of a policy's mean-action self-play judged by a fixed set
// of discriminators (typically the last checkpoint of the same run), so
// checkpoints along one run are scored on the same scale.
struct ImitationScore {
  double r_motion = 0.0;
  double r_interaction = 0.0;
  double combined = 0.0;  // with the judge's imitation weights
};

template <std::size_t N>
Matrix rows_to_matrix(const std::vector<std::array<double, N>>& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(N));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t k = 0; k < N; ++k) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = rows[r][k];
  }
  return m;
}

inline ImitationScore eval_imitation(const TrainState& policy, const TrainState& judge, const EvalOptions& o) {
  require_compatible(policy.config, judge.config);
  if (o.episodes < 1 || o.length < 1) throw InvalidInput("eval: episodes and length must be >= 1");
  const PolicyController pc(policy);
  const std::array<const Controller*, kNumAgents> ctrl = {&pc, &pc};
  std::vector<TransitionLog> logs(static_cast<std::size_t>(o.episodes));
  detail::parallel_for(o.episodes, o.workers, [&](int k) {
    run_episode(ctrl, policy.config, policy.config.heading_task, o.length, derive_seed(o.seed, static_cast<std::uint64_t>(k)),
                o.spawn_separation, &logs[static_cast<std::size_t>(k)]);
  });
  TransitionLog all;
  for (auto& l : logs) {
    all.motion.insert(all.motion.end(), l.motion.begin(), l.motion.end());
    for (int i = 0; i < kNumAgents; ++i) {
      all.interaction[i].insert(all.interaction[i].end(), l.interaction[i].begin(), l.interaction[i].end());
    }
  }
  const TrainConfig& jc = judge.config;
  const RewardShape shape{jc.lsgan_u, jc.lsgan_v};
  ImitationScore s;
  if (jc.single_motion_prior) s.r_motion = disc_reward(judge.motion_disc, rows_to_matrix(all.motion), shape).mean();
  for (int i = 0; i < kNumAgents; ++i) {
    s.r_interaction += 0.5 * disc_reward(judge.interaction_disc[i], rows_to_matrix(all.interaction[i]), shape).mean();
  }
  RewardWeights w = jc.imitation_weights;
  if (!jc.single_motion_prior) w = {0.0, w.motion + w.interaction, 0.0};
  s.combined = combine_rewards(s.r_motion, s.r_interaction, 0.0, w);
  return s;
}

// A pairing is out of distribution when the two agents learned from
// different interaction datasets.
inline EvalReport eval_cross_style(const TrainState& a, const TrainState& b, const EvalOptions& o = {}) {
  require_compatible(a.config, b.config);
  EvalReport r = eval_damage(PolicyController(a, "A"), PolicyController(b, "B"), a.config, o);
  r.scenario = "cross";
  r.out_of_distribution = a.config.interaction_demos != b.config.interaction_demos;
  return r;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json style_json(const StyleStats& s) {
  const auto normalized = [](auto h) {
    double sum = 0.0;
    for (double v : h) sum += v;
    std::vector<double> out(h.begin(), h.end());
    if (sum > 0.0) {
      for (double& v : out) v /= sum;
    }
    return out;
  };
  return {{"joint_usage", normalized(s.joint)},
          {"engagement_distance", normalized(s.distance)},
          {"attack_rate", normalized(s.attack_rate)},
          {"frames", s.frames},
          {"attack_contact_rate", s.attack_contact_rate()}};
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["schema_version"] = kEvalSchemaVersion;
  j["scenario"] = r.scenario;
  j["episodes"] = r.episodes;
  j["episode_len"] = r.episode_len;
  j["seed"] = r.seed;
  j["out_of_distribution"] = r.out_of_distribution;
  j["mean_normalized_return"] = r.mean_normalized_return ? nlohmann::json(*r.mean_normalized_return) : nlohmann::json();
  j["style_divergence"] = r.style_divergence ? nlohmann::json(*r.style_divergence) : nlohmann::json();
  j["agents"] = nlohmann::json::array();
  for (const auto& a : r.agents) {
    j["agents"].push_back({{"label", a.label},
                           {"mean_damage_received", a.mean_damage_received},
                           {"mean_damage_dealt", a.mean_damage_dealt},
                           {"attack_contact_rate", a.attack_contact_rate},
                           {"style", style_json(a.style)}});
  }
  j["episode_records"] = nlohmann::json::array();
  for (const auto& e : r.records) {
    j["episode_records"].push_back({{"index", e.index},
                                    {"seed", e.seed},
                                    {"steps", e.steps},
                                    {"diverged", e.diverged},
                                    {"damage_received", e.damage_received},
                                    {"damage_dealt", e.damage_dealt},
                                    {"task_return", e.task_return ? nlohmann::json(*e.task_return) : nlohmann::json()}});
  }
  return j;
}

inline void write_report(const EvalReport& r, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write report '" + path + "'");
  os << report_json(r).dump(2) << '\n';
}

}  // namespace maaip
