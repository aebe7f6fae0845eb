#pragma once

// Training configuration: INI text with sections [arena], [train], [reward],
// [schedule], [task]. Every field has a default; unknown keys are errors so
// typos do not silently fall back to defaults. `to_ini` emits the canonical
// form that the checkpoint config hash is computed over.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/error.hpp"
#include "maaip/priors.hpp"

namespace maaip {

struct RewardWeights {
  double motion = 0.0;
  double interaction = 0.0;
  double control = 0.0;

  double sum() const { return motion + interaction + control; }
  friend bool operator==(const RewardWeights&, const RewardWeights&) = default;
};

struct SchedulePoint {
  std::int64_t step = 0;
  RewardWeights weights;
};

enum class ControlReward { None, DamageMin, DamageMax, Heading };
enum class HeadingRewardForm { Corrected, Literal };

inline const char* to_string(ControlReward c) {
  switch (c) {
    case ControlReward::None: return "none";
    case ControlReward::DamageMin: return "damage_min";
    case ControlReward::DamageMax: return "damage_max";
    case ControlReward::Heading: return "heading";
  }
  return "none";
}

inline ControlReward control_reward_from_string(const std::string& s) {
  for (auto c : {ControlReward::None, ControlReward::DamageMin, ControlReward::DamageMax, ControlReward::Heading}) {
    if (s == to_string(c)) return c;
  }
  throw ConfigError("unknown control reward '" + s + "' (expected none|damage_min|damage_max|heading)");
}

inline const char* to_string(HeadingRewardForm h) { return h == HeadingRewardForm::Corrected ? "corrected" : "literal"; }

inline HeadingRewardForm heading_form_from_string(const std::string& s) {
  if (s == "corrected") return HeadingRewardForm::Corrected;
  if (s == "literal") return HeadingRewardForm::Literal;
  throw ConfigError("unknown heading_reward '" + s + "' (expected corrected|literal)");
}

struct TrainConfig {
  ArenaConfig arena;

  // [train]
  std::uint64_t seed = 1;
  int num_envs = 64;
  int horizon = 128;
  std::int64_t total_steps = 20'000'000;  // environment control steps
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 5;
  int minibatch = 4096;
  double policy_lr = 3e-4;
  double value_lr = 3e-4;
  double disc_lr = 1e-4;
  double grad_clip = 1.0;
  int disc_minibatch = 256;  // K
  int disc_updates = 2;      // n
  int replay_capacity = 100'000;
  LossKind loss_kind = LossKind::Gail;
  double w_gp = 10.0;
  double log_std = -1.6;
  std::vector<int> policy_hidden{256, 256, 128};
  std::vector<int> value_hidden{256, 256, 128};
  std::vector<int> disc_hidden{256, 256, 128};
  bool single_motion_prior = true;
  bool freeze_policy = false;
  double demo_init_fraction = 0.5;
  int checkpoint_every = 0;
  int num_workers = 1;
  std::string motion_demos;
  std::string interaction_demos;

  // [reward]
  RewardWeights imitation_weights{0.2, 0.8, 0.0};
  RewardWeights task_weights{0.1, 0.4, 0.5};
  ControlReward control = ControlReward::None;
  double control_scale = 0.01;  // w
  double heading_scale = 2.0;   // w_h
  double target_speed = 1.0;
  HeadingRewardForm heading_form = HeadingRewardForm::Corrected;
  double lsgan_u = 1.0;
  double lsgan_v = 0.25;

  // [schedule]
  double phase1_fraction = 0.1;
  double phase2_fraction = 0.3;
  std::string schedule_points;  // "step:wM,wI,wC; ..." overrides the phases

  // [task]
  bool heading_task = false;
  int heading_resample_min = 60;
  int heading_resample_max = 120;
};

namespace detail {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
T parse_number(const std::string& key, const std::string& s) {
  std::istringstream is(s);
  T v{};
  is >> v;
  std::string rest;
  if (is.fail() || (is >> rest)) throw ConfigError("config key '" + key + "': cannot parse '" + s + "'");
  return v;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string tok;
  for (char c : s + " ") {
    if (c == ' ' || c == ',' || c == '\t') {
      if (!tok.empty()) out.push_back(tok);
      tok.clear();
    } else {
      tok += c;
    }
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + s + "'");
}

class FieldTable {
 public:
  std::vector<Field> fields;

  void num(const std::string& sec, const std::string& key, double& v) {
    fields.push_back({sec, key, [&v] { return fmt_double(v); },
                      [&v, key](const std::string& s) { v = parse_number<double>(key, s); }});
  }
  void num(const std::string& sec, const std::string& key, int& v) {
    fields.push_back({sec, key, [&v] { return std::to_string(v); },
                      [&v, key](const std::string& s) { v = parse_number<int>(key, s); }});
  }
  void num(const std::string& sec, const std::string& key, std::int64_t& v) {
    fields.push_back({sec, key, [&v] { return std::to_string(v); },
                      [&v, key](const std::string& s) { v = parse_number<std::int64_t>(key, s); }});
  }
  void num(const std::string& sec, const std::string& key, std::uint64_t& v) {
    fields.push_back({sec, key, [&v] { return std::to_string(v); },
                      [&v, key](const std::string& s) { v = parse_number<std::uint64_t>(key, s); }});
  }
  void flag(const std::string& sec, const std::string& key, bool& v) {
    fields.push_back({sec, key, [&v] { return std::string(v ? "true" : "false"); },
                      [&v, key](const std::string& s) { v = parse_bool(key, s); }});
  }
  void text(const std::string& sec, const std::string& key, std::string& v) {
    fields.push_back({sec, key, [&v] { return v; }, [&v](const std::string& s) { v = s; }});
  }
  template <std::size_t N>
  void list(const std::string& sec, const std::string& key, std::array<double, N>& v) {
    fields.push_back({sec, key,
                      [&v] {
                        std::string s;
                        for (std::size_t i = 0; i < N; ++i) s += (i ? " " : "") + fmt_double(v[i]);
                        return s;
                      },
                      [&v, key](const std::string& s) {
                        const auto toks = split_list(s);
                        if (toks.size() != N) {
                          throw ConfigError("config key '" + key + "': expected " + std::to_string(N) + " values");
                        }
                        for (std::size_t i = 0; i < N; ++i) v[i] = parse_number<double>(key, toks[i]);
                      }});
  }
  void list(const std::string& sec, const std::string& key, std::vector<int>& v) {
    fields.push_back({sec, key,
                      [&v] {
                        std::string s;
                        for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + std::to_string(v[i]);
                        return s;
                      },
                      [&v, key](const std::string& s) {
                        v.clear();
                        for (const auto& t : split_list(s)) v.push_back(parse_number<int>(key, t));
                      }});
  }
  void weights(const std::string& sec, const std::string& key, RewardWeights& w) {
    fields.push_back({sec, key,
                      [&w] { return fmt_double(w.motion) + " " + fmt_double(w.interaction) + " " + fmt_double(w.control); },
                      [&w, key](const std::string& s) {
                        const auto toks = split_list(s);
                        if (toks.size() != 3) throw ConfigError("config key '" + key + "': expected wM wI wC");
                        w = {parse_number<double>(key, toks[0]), parse_number<double>(key, toks[1]),
                             parse_number<double>(key, toks[2])};
                      }});
  }
  template <typename E, typename ToS, typename FromS>
  void choice(const std::string& sec, const std::string& key, E& v, ToS to_s, FromS from_s) {
    fields.push_back({sec, key, [&v, to_s] { return std::string(to_s(v)); },
                      [&v, from_s](const std::string& s) { v = from_s(s); }});
  }
};

inline FieldTable field_table(TrainConfig& c) {
  FieldTable t;
  ArenaConfig& a = c.arena;
  t.num("arena", "halfextent", a.arena_halfextent);
  t.num("arena", "dt_sim", a.dt_sim);
  t.num("arena", "substeps", a.substeps);
  t.num("arena", "control_hz", a.control_hz);
  t.list("arena", "part_radii", a.part_radii);
  t.list("arena", "masses", a.masses);
  t.num("arena", "shoulder_offset", a.links.shoulder_offset);
  t.num("arena", "head_offset", a.links.head_offset);
  t.num("arena", "upper_arm", a.links.upper_arm);
  t.num("arena", "forearm", a.links.forearm);
  t.num("arena", "shoulder_kp", a.pd_gains[ShoulderL].kp);
  t.num("arena", "shoulder_kd", a.pd_gains[ShoulderL].kd);
  t.num("arena", "elbow_kp", a.pd_gains[ElbowL].kp);
  t.num("arena", "elbow_kd", a.pd_gains[ElbowL].kd);
  t.num("arena", "joint_armature", a.joint_armature);
  t.num("arena", "k_lin", a.k_lin);
  t.num("arena", "k_ang", a.k_ang);
  t.num("arena", "torque_limit", a.torque_limit);
  t.num("arena", "contact_stiffness", a.contact_stiffness);
  t.num("arena", "contact_damping", a.contact_damping);
  t.num("arena", "wall_stiffness", a.wall_stiffness);
  t.num("arena", "wall_damping", a.wall_damping);
  t.num("arena", "max_linvel_cmd", a.max_linvel_cmd);
  t.num("arena", "max_yawrate_cmd", a.max_yawrate_cmd);
  t.num("arena", "max_linvel", a.max_linvel);
  t.num("arena", "max_angvel", a.max_angvel);
  t.num("arena", "max_joint_vel", a.max_joint_vel);
  t.num("arena", "shoulder_limit", a.joint_limits[ShoulderL].hi);
  t.num("arena", "elbow_min", a.joint_limits[ElbowL].lo);
  t.num("arena", "elbow_max", a.joint_limits[ElbowL].hi);
  t.num("arena", "episode_len", a.episode_len);
  t.num("arena", "min_spawn_separation", a.min_spawn_separation);

  t.num("train", "seed", c.seed);
  t.num("train", "num_envs", c.num_envs);
  t.num("train", "horizon", c.horizon);
  t.num("train", "total_steps", c.total_steps);
  t.num("train", "gamma", c.gamma);
  t.num("train", "lambda", c.lambda);
  t.num("train", "clip", c.clip);
  t.num("train", "epochs", c.epochs);
  t.num("train", "minibatch", c.minibatch);
  t.num("train", "policy_lr", c.policy_lr);
  t.num("train", "value_lr", c.value_lr);
  t.num("train", "disc_lr", c.disc_lr);
  t.num("train", "grad_clip", c.grad_clip);
  t.num("train", "disc_minibatch", c.disc_minibatch);
  t.num("train", "disc_updates", c.disc_updates);
  t.num("train", "replay_capacity", c.replay_capacity);
  t.choice("train", "loss", c.loss_kind, [](LossKind k) { return to_string(k); }, loss_kind_from_string);
  t.num("train", "w_gp", c.w_gp);
  t.num("train", "log_std", c.log_std);
  t.list("train", "policy_hidden", c.policy_hidden);
  t.list("train", "value_hidden", c.value_hidden);
  t.list("train", "disc_hidden", c.disc_hidden);
  t.flag("train", "single_motion_prior", c.single_motion_prior);
  t.flag("train", "freeze_policy", c.freeze_policy);
  t.num("train", "demo_init_fraction", c.demo_init_fraction);
  t.num("train", "checkpoint_every", c.checkpoint_every);
  t.num("train", "num_workers", c.num_workers);
  t.text("train", "motion_demos", c.motion_demos);
  t.text("train", "interaction_demos", c.interaction_demos);

  t.weights("reward", "imitation_weights", c.imitation_weights);
  t.weights("reward", "task_weights", c.task_weights);
  t.choice("reward", "control", c.control, [](ControlReward k) { return to_string(k); }, control_reward_from_string);
  t.num("reward", "control_scale", c.control_scale);
  t.num("reward", "heading_scale", c.heading_scale);
  t.num("reward", "target_speed", c.target_speed);
  t.choice("reward", "heading_reward", c.heading_form, [](HeadingRewardForm k) { return to_string(k); },
           heading_form_from_string);
  t.num("reward", "lsgan_u", c.lsgan_u);
  t.num("reward", "lsgan_v", c.lsgan_v);

  t.num("schedule", "phase1_fraction", c.phase1_fraction);
  t.num("schedule", "phase2_fraction", c.phase2_fraction);
  t.text("schedule", "points", c.schedule_points);

  t.flag("task", "heading", c.heading_task);
  t.num("task", "heading_resample_min", c.heading_resample_min);
  t.num("task", "heading_resample_max", c.heading_resample_max);
  return t;
}

}  // namespace detail

// Explicit "step:wM,wI,wC; ..." list, or the three default phases.
inline std::vector<SchedulePoint> build_schedule(const TrainConfig& c) {
  std::vector<SchedulePoint> s;
  if (!c.schedule_points.empty()) {
    std::string item;
    std::istringstream is(c.schedule_points);
    while (std::getline(is, item, ';')) {
      if (item.find_first_not_of(" \t") == std::string::npos) continue;
      const auto colon = item.find(':');
      if (colon == std::string::npos) throw ConfigError("schedule point '" + item + "' lacks ':'");
      const auto w = detail::split_list(item.substr(colon + 1));
      if (w.size() != 3) throw ConfigError("schedule point '" + item + "': expected three weights");
      const auto step_tok = detail::split_list(item.substr(0, colon));
      if (step_tok.size() != 1) throw ConfigError("schedule point '" + item + "': bad step");
      s.push_back({detail::parse_number<std::int64_t>("points", step_tok[0]),
                   {detail::parse_number<double>("points", w[0]), detail::parse_number<double>("points", w[1]),
                    detail::parse_number<double>("points", w[2])}});
    }
  } else {
    const auto s1 = static_cast<std::int64_t>(c.phase1_fraction * static_cast<double>(c.total_steps));
    const auto s2 = static_cast<std::int64_t>(c.phase2_fraction * static_cast<double>(c.total_steps));
    RewardWeights p1{1.0, 0.0, 0.0};
    RewardWeights imitation = c.imitation_weights;
    RewardWeights task = c.control == ControlReward::None ? c.imitation_weights : c.task_weights;
    if (!c.single_motion_prior) {
      // Without the motion prior its share goes to the interaction prior.
      p1 = {0.0, 1.0, 0.0};
      imitation = {0.0, imitation.motion + imitation.interaction, imitation.control};
      task = {0.0, task.motion + task.interaction, task.control};
    }
    s.push_back({0, p1});
    if (s1 > 0) s.push_back({s1, imitation});
    else s.back().weights = imitation;
    if (s2 > s.back().step) s.push_back({s2, task});
    else s.back().weights = task;
  }
  if (s.empty() || s.front().step != 0) throw ConfigError("schedule must start at step 0");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i > 0 && s[i].step <= s[i - 1].step) throw ConfigError("schedule thresholds must be strictly increasing");
    const auto& w = s[i].weights;
    if (w.motion < 0 || w.interaction < 0 || w.control < 0) throw ConfigError("schedule weights must be >= 0");
    if (std::abs(w.sum() - 1.0) > 1e-9) {
      throw ConfigError("schedule point at step " + std::to_string(s[i].step) + ": weights sum to " +
                        detail::fmt_double(w.sum()) + ", expected 1");
    }
  }
  return s;
}

inline void validate(const TrainConfig& c) {
  c.arena.validate();
  if (c.num_envs < 1 || c.horizon < 1) throw ConfigError("train: num_envs and horizon must be >= 1");
  if (c.total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
  if (!(c.gamma >= 0 && c.gamma <= 1 && c.lambda >= 0 && c.lambda <= 1)) {
    throw ConfigError("train: gamma and lambda must be in [0,1]");
  }
  if (c.epochs < 1 || c.minibatch < 1 || c.disc_minibatch < 1 || c.disc_updates < 0) {
    throw ConfigError("train: epochs, minibatch, disc_minibatch must be >= 1");
  }
  if (c.replay_capacity < 1) throw ConfigError("train: replay_capacity must be >= 1");
  if (c.w_gp < 0) throw ConfigError("train: w_gp must be >= 0");
  for (const auto* h : {&c.policy_hidden, &c.value_hidden, &c.disc_hidden}) {
    for (int n : *h) {
      if (n < 1) throw ConfigError("train: hidden layer sizes must be >= 1");
    }
  }
  if (!(c.demo_init_fraction >= 0 && c.demo_init_fraction <= 1)) {
    throw ConfigError("train: demo_init_fraction must be in [0,1]");
  }
  if (c.num_workers < 1) throw ConfigError("train: num_workers must be >= 1");
  if (!(c.phase1_fraction >= 0 && c.phase1_fraction <= c.phase2_fraction)) {
    throw ConfigError("schedule: need 0 <= phase1_fraction <= phase2_fraction");
  }
  if (c.heading_resample_min < 1 || c.heading_resample_max < c.heading_resample_min) {
    throw ConfigError("task: need 1 <= heading_resample_min <= heading_resample_max");
  }
  if (c.control == ControlReward::Heading && !c.heading_task) {
    throw ConfigError("reward: control = heading requires [task] heading = true");
  }
  build_schedule(c);
}

// The joint tables are stored per side; the config exposes one value for both.
inline void mirror_symmetric_arena_fields(ArenaConfig& a) {
  a.pd_gains[ShoulderR] = a.pd_gains[ShoulderL];
  a.pd_gains[ElbowR] = a.pd_gains[ElbowL];
  a.joint_limits[ShoulderL].lo = -a.joint_limits[ShoulderL].hi;
  a.joint_limits[ShoulderR] = a.joint_limits[ShoulderL];
  a.joint_limits[ElbowR] = a.joint_limits[ElbowL];
}

inline TrainConfig parse_config(const std::string& text) {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  TrainConfig c;
  auto table = detail::field_table(c);
  std::map<std::string, detail::Field*> index;
  for (auto& f : table.fields) index[f.section + "." + f.key] = &f;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config: key '" + section + "' outside any section");
    }
    for (const auto& [key, value] : body) {
      const auto it = index.find(section + "." + key);
      if (it == index.end()) throw ConfigError("config: unknown key [" + section + "] " + key);
      it->second->set(value.get_value<std::string>());
    }
  }
  mirror_symmetric_arena_fields(c.arena);
  validate(c);
  return c;
}

// Dataset paths are resolved against the config file's directory.
inline TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  TrainConfig c = parse_config(ss.str());
  const auto base = std::filesystem::path(path).parent_path();
  for (std::string* p : {&c.motion_demos, &c.interaction_demos}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  }
  return c;
}

inline std::string to_ini(const TrainConfig& c) {
  TrainConfig copy = c;
  auto table = detail::field_table(copy);
  std::ostringstream os;
  std::string section;
  for (const auto& f : table.fields) {
    if (f.section != section) {
      os << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    os << f.key << " = " << f.get() << "\n";
  }
  return os.str();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t config_hash(const TrainConfig& c) { return fnv1a64(to_ini(c)); }

}  // namespace maaip
