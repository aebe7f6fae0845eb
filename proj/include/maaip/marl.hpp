#pragma once

// Shared-parameter Gaussian policy with an agent one-hot input, centralized
// state-value function on the joint observation, GAE(lambda) / TD(lambda),
// and the clipped PPO update pooled over both agents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "maaip/arena.hpp"
#include "maaip/error.hpp"
#include "maaip/features.hpp"
#include "maaip/tensorcore.hpp"

namespace maaip {

inline constexpr double kLog2Pi = 1.8378770664093453;

struct PolicyNet {
  NetParams net;
  Vector log_std;  // fixed during training
  bool heading = false;

  int obs_dim() const { return policy_obs_dim(heading); }
  int input_dim() const { return obs_dim() + kAgentIdDim; }
};

struct ValueNet {
  NetParams net;
  bool heading = false;

  int input_dim() const { return kNumAgents * policy_obs_dim(heading); }
};

inline std::vector<int> layer_sizes(int in, std::span<const int> hidden, int out) {
  std::vector<int> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

inline PolicyNet make_policy(std::span<const int> hidden, bool heading, std::uint64_t seed, double log_std = -1.6) {
  PolicyNet p;
  p.heading = heading;
  p.net = net_init(layer_sizes(p.input_dim(), hidden, kActionDim), seed, {InitScheme::Orthogonal, std::sqrt(2.0), 0.01});
  p.log_std = Vector::Constant(kActionDim, log_std);
  return p;
}

inline ValueNet make_value(std::span<const int> hidden, bool heading, std::uint64_t seed) {
  ValueNet v;
  v.heading = heading;
  v.net = net_init(layer_sizes(v.input_dim(), hidden, 1), seed, {InitScheme::Orthogonal, std::sqrt(2.0), 1.0});
  return v;
}

// Appends the agent one-hot to already-normalized observations.
inline Matrix policy_inputs(const Matrix& normalized_obs, std::span<const int> agent_ids) {
  if (static_cast<Eigen::Index>(agent_ids.size()) != normalized_obs.rows()) {
    throw DimensionError("policy_inputs: one agent id per row required");
  }
  Matrix x = Matrix::Zero(normalized_obs.rows(), normalized_obs.cols() + kAgentIdDim);
  x.leftCols(normalized_obs.cols()) = normalized_obs;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const int id = agent_ids[r];
    if (id < 0 || id >= kNumAgents) throw InvalidInput("policy_inputs: agent id must be 0 or 1");
    x(r, normalized_obs.cols() + id) = 1.0;
  }
  return x;
}

inline double gaussian_log_prob(const Eigen::Ref<const Eigen::RowVectorXd>& action,
                                const Eigen::Ref<const Eigen::RowVectorXd>& mean, const Vector& log_std) {
  double lp = 0.0;
  for (Eigen::Index j = 0; j < action.size(); ++j) {
    const double z = (action(j) - mean(j)) * std::exp(-log_std(j));
    lp += -0.5 * z * z - log_std(j) - 0.5 * kLog2Pi;
  }
  return lp;
}

enum class ActMode { Stochastic, Mean };

struct ActResult {
  Matrix actions;  // rows x 7
  Vector log_probs;
};

// `inputs` rows are full policy inputs (normalized obs + one-hot). In
// stochastic mode row r draws its noise from
// rngs[(r / rows_per_rng) % rngs.size()], so a vectorized rollout can give
// each environment its own stream.
inline ActResult policy_act(const PolicyNet& p, const Matrix& inputs, std::span<std::mt19937_64> rngs,
                            ActMode mode, int rows_per_rng = 1) {
  if (inputs.cols() != p.input_dim()) throw DimensionError("policy_act: input width mismatch");
  if (!inputs.allFinite()) throw InvalidInput("policy_act: non-finite observation");
  ActResult r;
  r.actions = predict(p.net, inputs);
  r.log_probs.resize(inputs.rows());
  if (mode == ActMode::Stochastic) {
    if (rngs.empty()) throw InvalidInput("policy_act: stochastic mode needs an rng");
    std::normal_distribution<double> normal(0.0, 1.0);
    const Matrix mean = r.actions;
    for (Eigen::Index row = 0; row < r.actions.rows(); ++row) {
      auto& rng = rngs[static_cast<std::size_t>(row / std::max(1, rows_per_rng)) % rngs.size()];
      for (Eigen::Index j = 0; j < r.actions.cols(); ++j) r.actions(row, j) += std::exp(p.log_std(j)) * normal(rng);
      r.log_probs(row) = gaussian_log_prob(r.actions.row(row), mean.row(row), p.log_std);
    }
  } else {
    for (Eigen::Index row = 0; row < r.actions.rows(); ++row) {
      r.log_probs(row) = gaussian_log_prob(r.actions.row(row), r.actions.row(row), p.log_std);
    }
  }
  return r;
}

inline ActionVector to_action(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  ActionVector a{};
  for (int j = 0; j < kActionDim; ++j) a[j] = row(j);
  return a;
}

// ---------------------------------------------------------------------------
// Advantage estimation

// delta_t = r_t + gamma (1 - done_t) V_{t+1} - V_t,
// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}.
inline std::vector<double> gae_advantages(std::span<const double> rewards, std::span<const double> values,
                                          double gamma, double lambda, std::span<const std::uint8_t> dones) {
  const std::size_t T = rewards.size();
  if (values.size() != T + 1 || dones.size() != T) {
    throw DimensionError("gae: need T rewards, T+1 values and T done flags");
  }
  std::vector<double> adv(T, 0.0);
  double next = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    const double live = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * live * values[t + 1] - values[t];
    next = delta + gamma * lambda * live * next;
    adv[t] = next;
  }
  return adv;
}

// Lambda-returns: GAE advantages plus the baseline values.
inline std::vector<double> td_lambda_targets(std::span<const double> rewards, std::span<const double> values,
                                             double gamma, double lambda, std::span<const std::uint8_t> dones) {
  std::vector<double> t = gae_advantages(rewards, values, gamma, lambda, dones);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += values[i];
  return t;
}

// ---------------------------------------------------------------------------
// Rollout storage

struct TrajectoryBatch {
  int num_envs = 0;
  int horizon = 0;
  bool heading = false;

  // Agent samples, index (env * horizon + t) * 2 + agent.
  Matrix raw_obs;        // un-normalized policy observations
  Matrix policy_inputs;  // normalized obs + one-hot, as seen when acting
  Matrix actions;
  Vector log_probs;
  Vector r_motion, r_interaction, r_control, reward;
  Vector advantages, returns;

  // Environment steps, index env * horizon + t.
  Matrix value_inputs;
  Vector values;            // de-normalized state values
  Vector bootstrap_values;  // value after the last step, per env
  std::vector<std::uint8_t> dones;

  bool finalized = false;

  std::size_t agent_samples() const { return static_cast<std::size_t>(num_envs) * horizon * kNumAgents; }
  std::size_t env_steps() const { return static_cast<std::size_t>(num_envs) * horizon; }
  Eigen::Index sample_index(int env, int t, int agent) const {
    return (static_cast<Eigen::Index>(env) * horizon + t) * kNumAgents + agent;
  }
  Eigen::Index step_index(int env, int t) const { return static_cast<Eigen::Index>(env) * horizon + t; }

  void allocate(int envs, int T, bool with_heading) {
    num_envs = envs;
    horizon = T;
    heading = with_heading;
    const auto n = static_cast<Eigen::Index>(agent_samples());
    const auto s = static_cast<Eigen::Index>(env_steps());
    const int od = policy_obs_dim(heading);
    raw_obs.setZero(n, od);
    policy_inputs.setZero(n, od + kAgentIdDim);
    actions.setZero(n, kActionDim);
    log_probs.setZero(n);
    r_motion.setZero(n);
    r_interaction.setZero(n);
    r_control.setZero(n);
    reward.setZero(n);
    advantages.setZero(n);
    returns.setZero(n);
    value_inputs.setZero(s, kNumAgents * od);
    values.setZero(s);
    bootstrap_values.setZero(envs);
    dones.assign(static_cast<std::size_t>(s), 0);
    finalized = false;
  }
};

// Fills advantages and lambda-returns per agent stream.
inline void finalize_batch(TrajectoryBatch& b, double gamma, double lambda) {
  std::vector<double> r(b.horizon), v(b.horizon + 1);
  std::vector<std::uint8_t> d(b.horizon);
  for (int e = 0; e < b.num_envs; ++e) {
    for (int t = 0; t < b.horizon; ++t) {
      v[t] = b.values(b.step_index(e, t));
      d[t] = b.dones[b.step_index(e, t)];
    }
    v[b.horizon] = b.bootstrap_values(e);
    for (int i = 0; i < kNumAgents; ++i) {
      for (int t = 0; t < b.horizon; ++t) r[t] = b.reward(b.sample_index(e, t, i));
      const auto adv = gae_advantages(r, v, gamma, lambda, d);
      for (int t = 0; t < b.horizon; ++t) {
        b.advantages(b.sample_index(e, t, i)) = adv[t];
        b.returns(b.sample_index(e, t, i)) = adv[t] + v[t];
      }
    }
  }
  b.finalized = true;
}

// ---------------------------------------------------------------------------
// PPO

struct PpoConfig {
  double clip = 0.2;
  int epochs = 5;
  int minibatch = 4096;
  double value_coef = 1.0;
};

struct UpdateStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double max_approx_kl = 0.0;
  double max_clip_fraction = 0.0;
  int minibatches = 0;
};

// Per-sample clipped surrogate min(rho A, clip(rho, 1 +- eps) A).
inline double clipped_surrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - clip, 1.0 + clip) * advantage);
}

struct PpoState {
  OptState policy_opt;
  OptState value_opt;
  RunningNormalizer return_norm{1};
};

// The value net regresses normalized lambda-returns; `state.return_norm`
// tracks the return scale and is refreshed from this batch before fitting.
inline UpdateStats ppo_update(PolicyNet& policy, ValueNet& value, PpoState& state, const TrajectoryBatch& batch,
                              const PpoConfig& cfg, std::mt19937_64& rng) {
  if (!batch.finalized) throw InvalidInput("ppo_update: batch advantages not finalized");
  if (batch.policy_inputs.cols() != policy.input_dim()) throw DimensionError("ppo_update: policy input width");
  if (batch.value_inputs.cols() != value.input_dim()) throw DimensionError("ppo_update: value input width");
  const auto n = static_cast<Eigen::Index>(batch.agent_samples());
  UpdateStats stats;
  if (n == 0) return stats;

  const double mean_adv = batch.advantages.mean();
  const double std_adv = std::sqrt((batch.advantages.array() - mean_adv).square().mean());
  const Vector adv = (batch.advantages.array() - mean_adv) / (std_adv + 1e-8);

  state.return_norm.update(batch.returns);
  const double ret_mean = state.return_norm.mean()(0);
  const double ret_scale = state.return_norm.scale()(0);
  const Vector target = (batch.returns.array() - ret_mean) / ret_scale;

  const Vector inv_var = (-2.0 * policy.log_std.array()).exp();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Eigen::Index mb = std::min<Eigen::Index>(cfg.minibatch, n);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start + mb <= n; start += mb) {
      Matrix x(mb, policy.input_dim()), vx(mb, value.input_dim()), a(mb, kActionDim);
      Vector old_lp(mb), batch_adv(mb), vt(mb);
      for (Eigen::Index k = 0; k < mb; ++k) {
        const Eigen::Index s = order[static_cast<std::size_t>(start + k)];
        x.row(k) = batch.policy_inputs.row(s);
        vx.row(k) = batch.value_inputs.row(s / kNumAgents);
        a.row(k) = batch.actions.row(s);
        old_lp(k) = batch.log_probs(s);
        batch_adv(k) = adv(s);
        vt(k) = target(s);
      }
      const double inv_mb = 1.0 / static_cast<double>(mb);

      const ForwardResult pf = forward(policy.net, x);
      Matrix dmu = Matrix::Zero(mb, kActionDim);
      double ploss = 0.0, clipped = 0.0, kl = 0.0;
      for (Eigen::Index k = 0; k < mb; ++k) {
        const double lp = gaussian_log_prob(a.row(k), pf.output.row(k), policy.log_std);
        const double ratio = std::exp(lp - old_lp(k));
        const double A = batch_adv(k);
        ploss -= clipped_surrogate(ratio, A, cfg.clip) * inv_mb;
        if (std::abs(ratio - 1.0) > cfg.clip) clipped += inv_mb;
        kl += ((ratio - 1.0) - (lp - old_lp(k))) * inv_mb;
        const bool active = ratio * A <= std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * A;
        if (!active) continue;
        // d(-rho A)/d mu = -A rho (a - mu) / sigma^2
        for (int j = 0; j < kActionDim; ++j) {
          dmu(k, j) = -A * ratio * (a(k, j) - pf.output(k, j)) * inv_var(j) * inv_mb;
        }
      }
      adam_step(policy.net, backward(policy.net, pf.tape, dmu).grads, state.policy_opt);

      const ForwardResult vf = forward(value.net, vx);
      Matrix dv(mb, 1);
      double vloss = 0.0;
      for (Eigen::Index k = 0; k < mb; ++k) {
        const double err = vf.output(k, 0) - vt(k);
        vloss += err * err * inv_mb;
        dv(k, 0) = cfg.value_coef * 2.0 * err * inv_mb;
      }
      adam_step(value.net, backward(value.net, vf.tape, dv).grads, state.value_opt);

      stats.policy_loss += ploss;
      stats.value_loss += vloss;
      stats.clip_fraction += clipped;
      stats.approx_kl += kl;
      stats.max_approx_kl = std::max(stats.max_approx_kl, kl);
      stats.max_clip_fraction = std::max(stats.max_clip_fraction, clipped);
      ++stats.minibatches;
    }
  }
  if (stats.minibatches > 0) {
    const double inv = 1.0 / stats.minibatches;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.clip_fraction *= inv;
    stats.approx_kl *= inv;
  }
  return stats;
}

// De-normalized state values for a batch of joint observations.
inline Vector value_predict(const ValueNet& v, const PpoState& state, const Matrix& value_inputs) {
  const Vector raw = predict(v.net, value_inputs).col(0);
  return (raw.array() * state.return_norm.scale()(0) + state.return_norm.mean()(0)).matrix();
}

}  // namespace maaip
