#pragma once

// The training loop: vectorized rollouts, discriminator scoring, reward
// combination and scheduling, replay buffers, discriminator and MAPPO
// updates, metrics and checkpoints.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/binary_io.hpp"
#include "maaip/config.hpp"
#include "maaip/demos.hpp"
#include "maaip/error.hpp"
#include "maaip/features.hpp"
#include "maaip/marl.hpp"
#include "maaip/priors.hpp"
#include "maaip/tensorcore.hpp"

namespace maaip {

// ---------------------------------------------------------------------------
// Rewards

inline double combine_rewards(double r_motion, double r_interaction, double r_control, const RewardWeights& w) {
  return w.motion * r_motion + w.interaction * r_interaction + w.control * r_control;
}

inline RewardWeights schedule_weights(std::int64_t step, std::span<const SchedulePoint> schedule) {
  if (schedule.empty()) throw ConfigError("schedule_weights: empty schedule");
  RewardWeights w = schedule.front().weights;
  for (const auto& p : schedule) {
    if (p.step <= step) w = p.weights;
  }
  return w;
}

struct ControlParams {
  ControlReward kind = ControlReward::None;
  double scale = 0.01;  // w
  double heading_scale = 2.0;
  double target_speed = 1.0;
  HeadingRewardForm heading_form = HeadingRewardForm::Corrected;

  static ControlParams from(const TrainConfig& c) {
    return {c.control, c.control_scale, c.heading_scale, c.target_speed, c.heading_form};
  }
};

struct ControlInputs {
  double damage_received = 0.0;  // |f_opp->self|
  double damage_dealt = 0.0;     // |f_self->opp|
  Vec2 heading{1.0, 0.0};        // world-frame target direction
  Vec2 root_vel;                 // world frame
};

inline double control_reward(const ControlParams& p, const ControlInputs& in) {
  switch (p.kind) {
    case ControlReward::None:
      return 0.0;
    case ControlReward::DamageMin:
      return std::exp(-p.scale * in.damage_received);
    case ControlReward::DamageMax:
      return 1.0 - std::exp(-p.scale * in.damage_dealt);
    case ControlReward::Heading: {
      const double along = dot(in.heading, in.root_vel);
      if (p.heading_form == HeadingRewardForm::Literal) return std::min(1.0, std::exp(-p.heading_scale * along));
      const double e = p.target_speed - along;
      return std::exp(-p.heading_scale * e * e);
    }
  }
  return 0.0;
}

// New world-frame target direction and the number of control steps it stays
// active. Directions are uniform among those that keep both fighters 0.5 m
// off the walls when they travel at the target speed for the whole span;
// without such a direction after 16 draws it points at the arena center.
inline void draw_heading(Vec2& heading, int& timer, const ArenaState& arena, const TrainConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ang(-3.14159265358979323846, 3.14159265358979323846);
  std::uniform_int_distribution<int> span(c.heading_resample_min, c.heading_resample_max);
  timer = span(rng);
  const double travel = c.target_speed * timer / c.arena.control_hz;
  const double bound = c.arena.arena_halfextent - 0.5;
  const auto inside = [&](Vec2 d) {
    for (const auto& f : arena.fighters) {
      const Vec2 end = f.root_pos + travel * d;
      if (std::abs(end.x) > bound || std::abs(end.y) > bound) return false;
    }
    return true;
  };
  for (int attempt = 0; attempt < 16; ++attempt) {
    heading = unit_from_angle(ang(rng));
    if (inside(heading)) return;
  }
  const Vec2 centroid = 0.5 * (arena.fighters[0].root_pos + arena.fighters[1].root_pos);
  heading = norm(centroid) > 1e-9 ? (-1.0 / norm(centroid)) * centroid : Vec2{1.0, 0.0};
}

// ---------------------------------------------------------------------------
// Replay buffer

class ReplayBuffer {
 public:
  ReplayBuffer() = default;
  ReplayBuffer(int dim, std::size_t capacity) : data_(static_cast<Eigen::Index>(capacity), dim) {
    if (capacity == 0) throw ConfigError("replay buffer: capacity must be >= 1");
  }

  int dim() const { return static_cast<int>(data_.cols()); }
  std::size_t capacity() const { return static_cast<std::size_t>(data_.rows()); }
  std::size_t size() const { return size_; }
  std::uint64_t total_writes() const { return writes_; }
  void clear() {
    size_ = 0;
    head_ = 0;
  }

  // Oldest rows are overwritten once full.
  void add(const Matrix& rows) {
    if (rows.cols() != data_.cols()) throw DimensionError("replay buffer: row width mismatch");
    for (Eigen::Index r = 0; r < rows.rows(); ++r) {
      data_.row(static_cast<Eigen::Index>(head_)) = rows.row(r);
      head_ = (head_ + 1) % capacity();
      size_ = std::min(size_ + 1, capacity());
      ++writes_;
    }
  }

  // min(k, size) distinct rows, uniformly.
  Matrix sample(std::size_t k, std::mt19937_64& rng) const {
    if (size_ == 0) throw InvalidInput("replay buffer: sampling from an empty buffer");
    std::vector<std::size_t> all(size_), pick;
    std::iota(all.begin(), all.end(), 0);
    std::sample(all.begin(), all.end(), std::back_inserter(pick), std::min(k, size_), rng);
    Matrix out(static_cast<Eigen::Index>(pick.size()), data_.cols());
    for (std::size_t i = 0; i < pick.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = data_.row(static_cast<Eigen::Index>(pick[i]));
    return out;
  }

 private:
  Matrix data_;
  std::size_t head_ = 0;
  std::size_t size_ = 0;
  std::uint64_t writes_ = 0;
};

inline Matrix sample_rows(const Matrix& m, std::size_t k, std::mt19937_64& rng) {
  std::vector<Eigen::Index> all(static_cast<std::size_t>(m.rows())), pick;
  std::iota(all.begin(), all.end(), 0);
  std::sample(all.begin(), all.end(), std::back_inserter(pick), std::min<std::size_t>(k, all.size()), rng);
  Matrix out(static_cast<Eigen::Index>(pick.size()), m.cols());
  for (std::size_t i = 0; i < pick.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(pick[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Learner state and checkpoints

struct TrainState {
  TrainConfig config;
  PolicyNet policy;
  ValueNet value;
  PpoState ppo;
  RunningNormalizer obs_norm;
  Discriminator motion_disc;
  std::array<Discriminator, kNumAgents> interaction_disc;
  std::int64_t global_step = 0;
  std::int64_t iteration = 0;
  std::mt19937_64 rng;
};

inline TrainState make_train_state(const TrainConfig& c) {
  validate(c);
  TrainState s;
  s.config = c;
  const bool h = c.heading_task;
  s.policy = make_policy(c.policy_hidden, h, derive_seed(c.seed, 101), c.log_std);
  s.value = make_value(c.value_hidden, h, derive_seed(c.seed, 102));
  AdamConfig pa, va, da;
  pa.lr = c.policy_lr;
  va.lr = c.value_lr;
  da.lr = c.disc_lr;
  pa.clip_norm = va.clip_norm = da.clip_norm = c.grad_clip;
  s.ppo.policy_opt = adam_init(s.policy.net, pa);
  s.ppo.value_opt = adam_init(s.value.net, va);
  s.obs_norm = RunningNormalizer(policy_obs_dim(h));
  s.motion_disc = make_discriminator(kMotionTransitionDim, c.disc_hidden, c.loss_kind, c.w_gp, derive_seed(c.seed, 103), da);
  for (int i = 0; i < kNumAgents; ++i) {
    s.interaction_disc[i] = make_discriminator(kInteractionTransitionDim, c.disc_hidden, c.loss_kind, c.w_gp,
                                               derive_seed(c.seed, 104 + static_cast<std::uint64_t>(i)), da);
  }
  s.rng.seed(derive_seed(c.seed, 100));
  return s;
}

inline constexpr char kCheckpointMagic[6] = {'M', 'A', 'A', 'I', 'P', '1'};
inline constexpr std::uint32_t kCheckpointFormat = 1;

namespace detail {

inline void write_normalizer(std::ostream& os, const RunningNormalizer& n) {
  bin::write<double>(os, n.count());
  bin::write<double>(os, n.clip());
  bin::write_vector(os, n.mean());
  bin::write_vector(os, n.m2());
}

inline RunningNormalizer read_normalizer(std::istream& is) {
  const double count = bin::read<double>(is);
  const double clip = bin::read<double>(is);
  Eigen::VectorXd mean = bin::read_vector(is);
  Eigen::VectorXd m2 = bin::read_vector(is);
  RunningNormalizer n(static_cast<int>(mean.size()), clip);
  n.restore(count, std::move(mean), std::move(m2), clip);
  return n;
}

inline void write_disc(std::ostream& os, const Discriminator& d) {
  bin::write<std::uint8_t>(os, static_cast<std::uint8_t>(d.loss_kind));
  bin::write<double>(os, d.w_gp);
  write_net(os, d.net);
  write_opt(os, d.opt);
}

inline Discriminator read_disc(std::istream& is) {
  Discriminator d;
  const auto kind = bin::read<std::uint8_t>(is);
  if (kind > 1) throw ParseError("checkpoint: bad discriminator loss kind");
  d.loss_kind = static_cast<LossKind>(kind);
  d.w_gp = bin::read<double>(is);
  d.net = read_net(is);
  d.opt = read_opt(is);
  return d;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const TrainState& s) {
  const std::string text = to_ini(s.config);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  bin::write<std::uint32_t>(os, kCheckpointFormat);
  bin::write<std::uint32_t>(os, static_cast<std::uint32_t>(kLayoutVersion));
  bin::write<std::uint64_t>(os, fnv1a64(text));
  bin::write_string(os, text);
  bin::write<std::int64_t>(os, s.global_step);
  bin::write<std::int64_t>(os, s.iteration);
  bin::write<std::uint8_t>(os, s.policy.heading ? 1 : 0);
  write_net(os, s.policy.net);
  bin::write_vector(os, s.policy.log_std);
  bin::write<std::uint8_t>(os, s.value.heading ? 1 : 0);
  write_net(os, s.value.net);
  write_opt(os, s.ppo.policy_opt);
  write_opt(os, s.ppo.value_opt);
  detail::write_normalizer(os, s.ppo.return_norm);
  detail::write_normalizer(os, s.obs_norm);
  detail::write_disc(os, s.motion_disc);
  for (const auto& d : s.interaction_disc) detail::write_disc(os, d);
  std::ostringstream rng;
  rng << s.rng;
  bin::write_string(os, rng.str());
}

struct CheckpointOptions {
  // When set, the stored config hash must equal this unless overridden.
  std::optional<std::uint64_t> expected_config_hash;
  bool allow_config_mismatch = false;
};

inline TrainState read_checkpoint(std::istream& is, const CheckpointOptions& opts = {}) {
  char magic[6];
  if (!is.read(magic, sizeof(magic))) throw ParseError("checkpoint truncated");
  if (!std::equal(magic, magic + 6, kCheckpointMagic)) throw ParseError("checkpoint: bad magic");
  const auto format = bin::read<std::uint32_t>(is);
  if (format != kCheckpointFormat) {
    throw VersionError("checkpoint format " + std::to_string(format) + " != supported " +
                       std::to_string(kCheckpointFormat));
  }
  const auto layout = bin::read<std::uint32_t>(is);
  if (layout != static_cast<std::uint32_t>(kLayoutVersion)) {
    throw VersionError("checkpoint observation layout version " + std::to_string(layout) +
                       " != this build's layout version " + std::to_string(kLayoutVersion));
  }
  const auto hash = bin::read<std::uint64_t>(is);
  const std::string text = bin::read_string(is);
  if (fnv1a64(text) != hash) throw ParseError("checkpoint: config text does not match its stored hash");
  if (opts.expected_config_hash && *opts.expected_config_hash != hash && !opts.allow_config_mismatch) {
    std::ostringstream msg;
    msg << "checkpoint config hash " << std::hex << hash << " != expected " << *opts.expected_config_hash
        << " (pass the config-mismatch override to load anyway)";
    throw ConfigError(msg.str());
  }
  TrainState s;
  s.config = parse_config(text);
  s.global_step = bin::read<std::int64_t>(is);
  s.iteration = bin::read<std::int64_t>(is);
  s.policy.heading = bin::read<std::uint8_t>(is) != 0;
  s.policy.net = read_net(is);
  s.policy.log_std = bin::read_vector(is);
  s.value.heading = bin::read<std::uint8_t>(is) != 0;
  s.value.net = read_net(is);
  s.ppo.policy_opt = read_opt(is);
  s.ppo.value_opt = read_opt(is);
  s.ppo.return_norm = detail::read_normalizer(is);
  s.obs_norm = detail::read_normalizer(is);
  s.motion_disc = detail::read_disc(is);
  for (auto& d : s.interaction_disc) d = detail::read_disc(is);
  std::istringstream rng(bin::read_string(is));
  rng >> s.rng;
  if (rng.fail()) throw ParseError("checkpoint: bad rng state");
  if (is.peek() != std::char_traits<char>::eof()) throw ParseError("checkpoint: trailing bytes");
  if (s.policy.input_dim() != s.policy.net.input_dim() || s.policy.net.output_dim() != kActionDim ||
      s.value.input_dim() != s.value.net.input_dim() || s.policy.log_std.size() != kActionDim ||
      s.obs_norm.dim() != s.policy.obs_dim() || s.motion_disc.input_dim() != kMotionTransitionDim ||
      s.interaction_disc[0].input_dim() != kInteractionTransitionDim ||
      s.interaction_disc[1].input_dim() != kInteractionTransitionDim) {
    throw DimensionError("checkpoint: network shapes do not match the observation layout");
  }
  return s;
}

inline void checkpoint_save(const TrainState& s, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot open '" + tmp + "' for writing");
    write_checkpoint(os, s);
    if (!os) throw Error("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

inline TrainState checkpoint_load(const std::string& path, const CheckpointOptions& opts = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(is, opts);
}

// ---------------------------------------------------------------------------
// Trainer

struct DiscUpdateRecord {
  std::string disc;  // "motion", "interaction0", "interaction1"
  int pass = 0;
  LossReport report;
};

struct IterationMetrics {
  std::int64_t iteration = 0;
  std::int64_t global_step = 0;  // after this iteration's rollout
  RewardWeights weights;
  double mean_r_motion = 0.0;
  double mean_r_interaction = 0.0;
  double mean_r_control = 0.0;
  double mean_reward = 0.0;
  double mean_damage = 0.0;  // received per agent-step, N
  std::vector<DiscUpdateRecord> disc_updates;
  UpdateStats ppo;
  int divergences = 0;
  int episodes_done = 0;
  double rollout_seconds = 0.0;
  double update_seconds = 0.0;
};

// Identifies which transitions fed a discriminator update (for auditing).
enum class TransitionSource { MotionDemos, InteractionDemos0, InteractionDemos1, MotionBuffer, InteractionBuffer0,
                              InteractionBuffer1 };
using DiscUpdateObserver = std::function<void(const std::string& disc, TransitionSource expert, TransitionSource policy)>;
// Sees each environment right after its physics step (before any reset).
// Called from the rollout workers, so it must be thread-safe when
// num_workers > 1.
using StepRecorder = std::function<void(int env, int t, const ArenaState& after, bool diverged)>;

namespace detail {

template <typename F>
void parallel_for(int n, int workers, F&& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = std::min(workers, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w));
  for (int k = 0; k < w; ++k) {
    pool.emplace_back([&, k] {
      for (int i = k; i < n; i += w) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

class Trainer {
 public:
  Trainer(TrainState state, DemoDataset motion, DemoDataset interaction)
      : s_(std::move(state)), motion_demos_(std::move(motion)), interaction_demos_(std::move(interaction)) {
    const TrainConfig& c = s_.config;
    validate(c);
    if (interaction_demos_.empty()) throw ConfigError("training needs a non-empty interaction dataset");
    if (c.single_motion_prior && motion_demos_.empty()) {
      throw ConfigError("training with the motion prior needs a non-empty single-actor dataset");
    }
    schedule_ = build_schedule(c);
    if (c.single_motion_prior) expert_motion_ = demo_to_transitions(motion_demos_, SingleRole{}, c.arena);
    for (int i = 0; i < kNumAgents; ++i) {
      expert_interaction_[i] = demo_to_transitions(interaction_demos_, InteractionRole{i}, c.arena);
    }
    pose_pool_ = joint_pose_pool(interaction_demos_);
    const auto extra = joint_pose_pool(motion_demos_);
    pose_pool_.insert(pose_pool_.end(), extra.begin(), extra.end());
    motion_buffer_ = ReplayBuffer(kMotionTransitionDim,
                                  std::max<std::size_t>(1, static_cast<std::size_t>(c.num_envs) * c.horizon * kNumAgents));
    for (auto& b : interaction_buffer_) b = ReplayBuffer(kInteractionTransitionDim, static_cast<std::size_t>(c.replay_capacity));
    envs_.resize(static_cast<std::size_t>(c.num_envs));
    act_rngs_.resize(static_cast<std::size_t>(c.num_envs));
    for (int e = 0; e < c.num_envs; ++e) {
      // Resumed runs continue from fresh episodes keyed on the iteration.
      const auto key = derive_seed(derive_seed(c.seed, 1000 + static_cast<std::uint64_t>(e)),
                                   static_cast<std::uint64_t>(s_.iteration));
      EnvSlot& env = envs_[static_cast<std::size_t>(e)];
      env.rng.seed(key);
      act_rngs_[static_cast<std::size_t>(e)].seed(splitmix64(key));
      reset_env(env);
    }
  }

  static Trainer from_config(const TrainConfig& c, DemoDataset motion, DemoDataset interaction) {
    return Trainer(make_train_state(c), std::move(motion), std::move(interaction));
  }

  const TrainState& state() const { return s_; }
  TrainState& state() { return s_; }
  const TrajectoryBatch& batch() const { return batch_; }
  const ReplayBuffer& motion_buffer() const { return motion_buffer_; }
  const ReplayBuffer& interaction_buffer(int i) const { return interaction_buffer_.at(static_cast<std::size_t>(i)); }
  const Matrix& rollout_motion_transitions() const { return rollout_motion_; }
  const Matrix& rollout_interaction_transitions(int i) const { return rollout_interaction_.at(static_cast<std::size_t>(i)); }
  const Matrix& expert_motion_transitions() const { return expert_motion_; }
  const Matrix& expert_interaction_transitions(int i) const { return expert_interaction_.at(static_cast<std::size_t>(i)); }
  const std::vector<SchedulePoint>& schedule() const { return schedule_; }
  std::int64_t motion_disc_updates() const { return motion_disc_updates_; }
  void set_disc_update_observer(DiscUpdateObserver f) { observer_ = std::move(f); }
  void set_step_recorder(StepRecorder f) { recorder_ = std::move(f); }
  const ArenaState& env_arena(int e) const { return envs_.at(static_cast<std::size_t>(e)).arena; }

  // One rollout phase: fills batch(), scores transitions, writes buffers,
  // advances global_step. Returns the accounting part of the metrics.
  IterationMetrics collect_rollouts() {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& c = s_.config;
    const int E = c.num_envs;
    const int T = c.horizon;
    const bool heading = c.heading_task;
    const int od = policy_obs_dim(heading);
    const ControlParams cp = ControlParams::from(c);

    IterationMetrics m;
    m.iteration = s_.iteration;
    m.weights = schedule_weights(s_.global_step, schedule_);

    batch_.allocate(E, T, heading);
    rollout_motion_.setZero(static_cast<Eigen::Index>(batch_.agent_samples()), kMotionTransitionDim);
    for (auto& r : rollout_interaction_) r.setZero(static_cast<Eigen::Index>(batch_.env_steps()), kInteractionTransitionDim);
    std::vector<double> damage(batch_.agent_samples(), 0.0);
    std::vector<int> diverged(static_cast<std::size_t>(E), 0), finished(static_cast<std::size_t>(E), 0);

    std::vector<int> ids(static_cast<std::size_t>(2 * E));
    for (int k = 0; k < 2 * E; ++k) ids[static_cast<std::size_t>(k)] = k % kNumAgents;

    Matrix raw(2 * E, od);
    std::vector<double> row(static_cast<std::size_t>(od));
    for (int t = 0; t <= T; ++t) {
      for (int e = 0; e < E; ++e) {
        for (int i = 0; i < kNumAgents; ++i) {
          write_policy_obs(envs_[e].obs[i], heading, row);
          raw.row(2 * e + i) = Eigen::Map<const Eigen::RowVectorXd>(row.data(), od);
        }
      }
      const Matrix norm = s_.obs_norm.apply(raw);
      Matrix vin(E, kNumAgents * od);
      for (int e = 0; e < E; ++e) {
        vin.row(e).head(od) = norm.row(2 * e);
        vin.row(e).tail(od) = norm.row(2 * e + 1);
      }
      const Vector values = value_predict(s_.value, s_.ppo, vin);
      if (t == T) {
        batch_.bootstrap_values = values;
        break;
      }
      const Matrix inputs = policy_inputs(norm, ids);
      const ActResult act = policy_act(s_.policy, inputs, act_rngs_, ActMode::Stochastic, kNumAgents);

      for (int e = 0; e < E; ++e) {
        const auto si = batch_.step_index(e, t);
        batch_.value_inputs.row(si) = vin.row(e);
        batch_.values(si) = values(e);
        for (int i = 0; i < kNumAgents; ++i) {
          const auto ai = batch_.sample_index(e, t, i);
          batch_.raw_obs.row(ai) = raw.row(2 * e + i);
          batch_.policy_inputs.row(ai) = inputs.row(2 * e + i);
          batch_.actions.row(ai) = act.actions.row(2 * e + i);
          batch_.log_probs(ai) = act.log_probs(2 * e + i);
        }
      }

      detail::parallel_for(E, c.num_workers, [&](int e) {
        EnvSlot& env = envs_[static_cast<std::size_t>(e)];
        std::array<ActionVector, kNumAgents> a{};
        for (int i = 0; i < kNumAgents; ++i) a[i] = to_action(act.actions.row(2 * e + i));
        const auto before = env.obs;
        bool done = false;
        StepResult step;
        try {
          apply_actions(env.arena, a);
          step = step_physics(env.arena);
        } catch (const SimulationDiverged&) {
          ++diverged[static_cast<std::size_t>(e)];
          done = true;
        }
        if (recorder_) recorder_(e, t, env.arena, done);
        std::array<SelfObs, kNumAgents> next_self{};
        if (!done) {
          advance_heading(env);
          observe(env);
          for (int i = 0; i < kNumAgents; ++i) next_self[i] = env.obs[i].self;
        } else {
          for (int i = 0; i < kNumAgents; ++i) next_self[i] = before[i].self;
        }
        for (int i = 0; i < kNumAgents; ++i) {
          const auto ai = batch_.sample_index(e, t, i);
          const auto mt = motion_transition(before[i].self, next_self[i]);
          const auto it = interaction_transition(before[i], next_self[i]);
          for (int k = 0; k < kMotionTransitionDim; ++k) rollout_motion_(ai, k) = mt[k];
          for (int k = 0; k < kInteractionTransitionDim; ++k) {
            rollout_interaction_[i](batch_.step_index(e, t), k) = it[k];
          }
          if (!done) {
            ControlInputs in;
            in.damage_received = damage_tally(step.contacts, i);
            in.damage_dealt = damage_tally(step.contacts, 1 - i);
            in.heading = env.heading;
            in.root_vel = env.arena.fighters[i].root_linvel;
            batch_.r_control(ai) = control_reward(cp, in);
            damage[static_cast<std::size_t>(ai)] = in.damage_received;
          }
        }
        ++env.episode_step;
        if (!done && env.episode_step >= c.arena.episode_len) done = true;
        if (done) {
          ++finished[static_cast<std::size_t>(e)];
          reset_env(env);
        }
        batch_.dones[static_cast<std::size_t>(batch_.step_index(e, t))] = done ? 1 : 0;
      });
    }

    score_and_combine(m.weights);

    if (c.single_motion_prior) {
      motion_buffer_.clear();
      motion_buffer_.add(rollout_motion_);
    }
    for (int i = 0; i < kNumAgents; ++i) interaction_buffer_[i].add(rollout_interaction_[i]);

    s_.global_step += static_cast<std::int64_t>(E) * T;
    m.global_step = s_.global_step;
    m.mean_r_motion = batch_.r_motion.mean();
    m.mean_r_interaction = batch_.r_interaction.mean();
    m.mean_r_control = batch_.r_control.mean();
    m.mean_reward = batch_.reward.mean();
    m.mean_damage = std::accumulate(damage.begin(), damage.end(), 0.0) / static_cast<double>(damage.size());
    m.divergences = std::accumulate(diverged.begin(), diverged.end(), 0);
    m.episodes_done = std::accumulate(finished.begin(), finished.end(), 0);
    m.rollout_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  IterationMetrics train_iteration() {
    IterationMetrics m = collect_rollouts();
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig& c = s_.config;
    const auto K = static_cast<std::size_t>(c.disc_minibatch);
    for (int pass = 0; pass < c.disc_updates; ++pass) {
      if (c.single_motion_prior) {
        const Matrix expert = sample_rows(expert_motion_, K, s_.rng);
        const Matrix policy = motion_buffer_.sample(K, s_.rng);
        notify("motion", TransitionSource::MotionDemos, TransitionSource::MotionBuffer);
        m.disc_updates.push_back({"motion", pass, disc_update(s_.motion_disc, expert, policy)});
        ++motion_disc_updates_;
      }
      for (int i = 0; i < kNumAgents; ++i) {
        const Matrix expert = sample_rows(expert_interaction_[i], K, s_.rng);
        const Matrix policy = interaction_buffer_[i].sample(K, s_.rng);
        const std::string id = "interaction" + std::to_string(i);
        notify(id, i == 0 ? TransitionSource::InteractionDemos0 : TransitionSource::InteractionDemos1,
               i == 0 ? TransitionSource::InteractionBuffer0 : TransitionSource::InteractionBuffer1);
        m.disc_updates.push_back({id, pass, disc_update(s_.interaction_disc[i], expert, policy)});
      }
    }
    finalize_batch(batch_, c.gamma, c.lambda);
    if (!c.freeze_policy) {
      PpoConfig pc;
      pc.clip = c.clip;
      pc.epochs = c.epochs;
      pc.minibatch = c.minibatch;
      m.ppo = ppo_update(s_.policy, s_.value, s_.ppo, batch_, pc, s_.rng);
    }
    s_.obs_norm.update(batch_.raw_obs);
    ++s_.iteration;
    m.update_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

 private:
  struct EnvSlot {
    ArenaState arena;
    std::mt19937_64 rng;
    int episode_step = 0;
    Vec2 heading{1.0, 0.0};
    int heading_timer = 0;
    std::array<ObservationPair, kNumAgents> obs;
  };

  void resample_heading(EnvSlot& env) { draw_heading(env.heading, env.heading_timer, env.arena, s_.config, env.rng); }

  void advance_heading(EnvSlot& env) {
    if (!s_.config.heading_task) return;
    if (--env.heading_timer <= 0) resample_heading(env);
  }

  void observe(EnvSlot& env) const {
    const auto& f = env.arena.fighters;
    const ArenaConfig& cfg = s_.config.arena;
    std::optional<Vec2> h;
    if (s_.config.heading_task) h = env.heading;
    env.obs[0] = build_observation(f[0], f[1], cfg, h);
    env.obs[1] = build_observation(f[1], f[0], cfg, h);
  }

  void reset_env(EnvSlot& env) {
    const TrainConfig& c = s_.config;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SpawnOptions opts;
    if (u01(env.rng) < c.demo_init_fraction && !pose_pool_.empty()) {
      opts.from_demo = true;
      opts.pose_pool = pose_pool_;
    }
    env.arena = spawn_arena(c.arena, env.rng(), opts);
    env.episode_step = 0;
    if (c.heading_task) resample_heading(env);
    observe(env);
  }

  void score_and_combine(const RewardWeights& w) {
    const TrainConfig& c = s_.config;
    const RewardShape shape{c.lsgan_u, c.lsgan_v};
    if (c.single_motion_prior) batch_.r_motion = disc_reward(s_.motion_disc, rollout_motion_, shape);
    for (int i = 0; i < kNumAgents; ++i) {
      const Vector r = disc_reward(s_.interaction_disc[i], rollout_interaction_[i], shape);
      for (int e = 0; e < batch_.num_envs; ++e) {
        for (int t = 0; t < batch_.horizon; ++t) {
          batch_.r_interaction(batch_.sample_index(e, t, i)) = r(batch_.step_index(e, t));
        }
      }
    }
    for (Eigen::Index k = 0; k < batch_.reward.size(); ++k) {
      batch_.reward(k) = combine_rewards(batch_.r_motion(k), batch_.r_interaction(k), batch_.r_control(k), w);
    }
  }

  void notify(const std::string& disc, TransitionSource expert, TransitionSource policy) const {
    if (observer_) observer_(disc, expert, policy);
  }

  TrainState s_;
  DemoDataset motion_demos_;
  DemoDataset interaction_demos_;
  std::vector<SchedulePoint> schedule_;
  Matrix expert_motion_;
  std::array<Matrix, kNumAgents> expert_interaction_;
  std::vector<JointPose> pose_pool_;
  ReplayBuffer motion_buffer_;
  std::array<ReplayBuffer, kNumAgents> interaction_buffer_;
  std::vector<EnvSlot> envs_;
  std::vector<std::mt19937_64> act_rngs_;
  TrajectoryBatch batch_;
  Matrix rollout_motion_;
  std::array<Matrix, kNumAgents> rollout_interaction_;
  std::int64_t motion_disc_updates_ = 0;
  DiscUpdateObserver observer_;
  StepRecorder recorder_;
};

// ---------------------------------------------------------------------------
// Metrics log and run driver

class MetricsLog {
 public:
  explicit MetricsLog(const std::string& dir, bool append = false) {
    std::filesystem::create_directories(dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    const bool fresh = !append || !std::filesystem::exists(std::filesystem::path(dir) / "metrics.csv");
    metrics_.open(std::filesystem::path(dir) / "metrics.csv", std::ios::out | mode);
    discs_.open(std::filesystem::path(dir) / "disc_losses.csv", std::ios::out | mode);
    if (!metrics_ || !discs_) throw Error("cannot open metrics files in '" + dir + "'");
    if (fresh) {
      metrics_ << "iteration,step,w_motion,w_interaction,w_control,mean_r_motion,mean_r_interaction,"
                  "mean_r_control,mean_reward,mean_damage,policy_loss,value_loss,clip_fraction,approx_kl,"
                  "divergences,episodes_done,rollout_s,update_s\n";
      discs_ << "iteration,disc,pass,loss_kind,expert_term,policy_term,gp,total,mean_expert_score,"
                "mean_policy_score\n";
    }
  }

  void write(const IterationMetrics& m) {
    metrics_ << m.iteration << ',' << m.global_step << ',' << m.weights.motion << ',' << m.weights.interaction << ','
             << m.weights.control << ',' << m.mean_r_motion << ',' << m.mean_r_interaction << ',' << m.mean_r_control
             << ',' << m.mean_reward << ',' << m.mean_damage << ',' << m.ppo.policy_loss << ',' << m.ppo.value_loss
             << ',' << m.ppo.clip_fraction << ',' << m.ppo.approx_kl << ',' << m.divergences << ','
             << m.episodes_done << ',' << m.rollout_seconds << ',' << m.update_seconds << '\n';
    for (const auto& d : m.disc_updates) {
      const LossReport& r = d.report;
      discs_ << m.iteration << ',' << d.disc << ',' << d.pass << ',' << to_string(r.loss_kind) << ','
             << r.expert_term << ',' << r.policy_term << ',' << r.gp << ',' << r.total << ','
             << r.mean_expert_score << ',' << r.mean_policy_score << '\n';
    }
    metrics_.flush();
    discs_.flush();
  }

 private:
  std::ofstream metrics_;
  std::ofstream discs_;
};

inline std::int64_t planned_iterations(const TrainConfig& c) {
  const std::int64_t per = static_cast<std::int64_t>(c.num_envs) * c.horizon;
  return (c.total_steps + per - 1) / per;
}

struct RunOptions {
  std::string out_dir = "run";
  std::optional<std::string> resume;
  bool allow_config_mismatch = false;
  std::function<void(const IterationMetrics&)> on_iteration;
};

// Trains until total_steps; checkpoints every `checkpoint_every` iterations
// to <out>/ckpt_<iteration>.ckpt and always to <out>/final.ckpt.
inline TrainState run_training(const TrainConfig& config, const RunOptions& opts) {
  DemoDataset motion, interaction;
  if (config.single_motion_prior) {
    if (config.motion_demos.empty()) throw ConfigError("train: motion_demos path is required");
    motion = read_dataset(config.motion_demos);
  }
  if (config.interaction_demos.empty()) throw ConfigError("train: interaction_demos path is required");
  interaction = read_dataset(config.interaction_demos);

  TrainState state;
  if (opts.resume) {
    CheckpointOptions co;
    co.expected_config_hash = config_hash(config);
    co.allow_config_mismatch = opts.allow_config_mismatch;
    state = checkpoint_load(*opts.resume, co);
    state.config = config;
  } else {
    state = make_train_state(config);
  }
  Trainer trainer(std::move(state), std::move(motion), std::move(interaction));
  MetricsLog log(opts.out_dir, opts.resume.has_value());
  const std::int64_t total = planned_iterations(config);
  while (trainer.state().iteration < total) {
    const IterationMetrics m = trainer.train_iteration();
    log.write(m);
    if (opts.on_iteration) opts.on_iteration(m);
    if (config.checkpoint_every > 0 && trainer.state().iteration % config.checkpoint_every == 0) {
      checkpoint_save(trainer.state(),
                      (std::filesystem::path(opts.out_dir) / ("ckpt_" + std::to_string(trainer.state().iteration) + ".ckpt")).string());
    }
  }
  checkpoint_save(trainer.state(), (std::filesystem::path(opts.out_dir) / "final.ckpt").string());
  return trainer.state();
}

}  // namespace maaip
