#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "maaip/marl.hpp"
#include "numeric_oracles.hpp"

using namespace maaip;

namespace {

// Direct sum A_t = sum_l (gamma lambda)^l delta_{t+l}, truncated after the
// first done flag.
std::vector<double> gae_bruteforce(const std::vector<double>& r, const std::vector<double>& v, double g, double l,
                                   const std::vector<std::uint8_t>& d) {
  const std::size_t T = r.size();
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) {
    double acc = 0.0, w = 1.0;
    for (std::size_t k = t; k < T; ++k) {
      const double nv = d[k] ? 0.0 : v[k + 1];
      acc += w * (r[k] + g * nv - v[k]);
      if (d[k]) break;
      w *= g * l;
    }
    out[t] = acc;
  }
  return out;
}

}  // namespace

TEST(Marl, GaeSmallExamples) {
  const std::vector<double> r{1, 1, 1}, v{0, 0, 0, 0};
  const std::vector<std::uint8_t> none{0, 0, 0}, mid{0, 1, 0};
  const auto a = gae_advantages(r, v, 1.0, 1.0, none);
  EXPECT_EQ(a, (std::vector<double>{3, 2, 1}));
  const auto b = gae_advantages(r, v, 1.0, 1.0, mid);
  EXPECT_EQ(b, (std::vector<double>{2, 1, 1}));
  // lambda = 0 reduces to one-step TD errors.
  const std::vector<double> v2{0.5, 1.0, -1.0, 2.0};
  const auto c = gae_advantages(r, v2, 0.9, 0.0, none);
  EXPECT_NEAR(c[0], 1 + 0.9 * 1.0 - 0.5, 1e-15);
  EXPECT_NEAR(c[1], 1 + 0.9 * -1.0 - 1.0, 1e-15);
  EXPECT_NEAR(c[2], 1 + 0.9 * 2.0 + 1.0, 1e-15);
}

TEST(Marl, GaeMatchesBruteForce) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  std::bernoulli_distribution done(0.1);
  for (int trial = 0; trial < 20; ++trial) {
    const int T = 1 + trial * 7;
    std::vector<double> r(T), v(T + 1);
    std::vector<std::uint8_t> d(T);
    for (auto& x : r) x = n(rng);
    for (auto& x : v) x = n(rng);
    for (auto& x : d) x = done(rng);
    const auto a = gae_advantages(r, v, 0.99, 0.95, d);
    const auto ref = gae_bruteforce(r, v, 0.99, 0.95, d);
    for (int t = 0; t < T; ++t) EXPECT_NEAR(a[t], ref[t], 1e-10);
    const auto tgt = td_lambda_targets(r, v, 0.99, 0.95, d);
    for (int t = 0; t < T; ++t) EXPECT_NEAR(tgt[t], ref[t] + v[t], 1e-10);
  }
  EXPECT_THROW(gae_advantages(std::vector<double>(3), std::vector<double>(3), 0.9, 0.9,
                              std::vector<std::uint8_t>(3)),
               DimensionError);
}

TEST(Marl, ClippedSurrogateExamples) {
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, 1.0, 0.2), 0.5);
  EXPECT_DOUBLE_EQ(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
  EXPECT_DOUBLE_EQ(clipped_surrogate(1.1, 2.0, 0.2), 2.2);
}

TEST(Marl, GaussianLogProbAtMean) {
  const Vector ls = Vector::Constant(kActionDim, -1.6);
  Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(kActionDim);
  EXPECT_NEAR(gaussian_log_prob(a, a, ls), -kActionDim * (-1.6 + 0.5 * std::log(2 * M_PI)), 1e-12);
  Eigen::RowVectorXd b = a;
  b(0) = std::exp(-1.6);  // one standard deviation
  EXPECT_NEAR(gaussian_log_prob(b, a, ls) - gaussian_log_prob(a, a, ls), -0.5, 1e-12);
}

TEST(Marl, PolicyInputsOneHot) {
  Matrix obs = Matrix::Ones(2, 3);
  const std::vector<int> ids{1, 0};
  const Matrix x = policy_inputs(obs, ids);
  ASSERT_EQ(x.cols(), 5);
  EXPECT_EQ(x(0, 3), 0.0);
  EXPECT_EQ(x(0, 4), 1.0);
  EXPECT_EQ(x(1, 3), 1.0);
  EXPECT_EQ(x(1, 4), 0.0);
  const std::vector<int> bad{2, 0};
  EXPECT_THROW(policy_inputs(obs, bad), InvalidInput);
  const std::vector<int> short_ids{0};
  EXPECT_THROW(policy_inputs(obs, short_ids), DimensionError);
}

TEST(Marl, ActDimensionsAndModes) {
  const std::vector<int> hidden{16};
  const PolicyNet p = make_policy(hidden, false, 3);
  EXPECT_EQ(p.input_dim(), kObsDim + kAgentIdDim);
  EXPECT_EQ(make_policy(hidden, true, 3).input_dim(), kObsDim + kHeadingDim + kAgentIdDim);
  std::mt19937_64 g(1);
  const Matrix x = oracle::random_matrix(4, p.input_dim(), g);
  std::vector<std::mt19937_64> rngs{std::mt19937_64(5)};
  const auto mean = policy_act(p, x, rngs, ActMode::Mean);
  EXPECT_TRUE(mean.actions.isApprox(predict(p.net, x)));
  const auto s = policy_act(p, x, rngs, ActMode::Stochastic);
  EXPECT_EQ(s.actions.rows(), 4);
  EXPECT_EQ(s.actions.cols(), kActionDim);
  for (int r = 0; r < 4; ++r) {
    EXPECT_NEAR(s.log_probs(r), gaussian_log_prob(s.actions.row(r), mean.actions.row(r), p.log_std), 1e-12);
  }
  EXPECT_THROW(policy_act(p, Matrix::Zero(1, 5), rngs, ActMode::Mean), DimensionError);
  Matrix nan = x;
  nan(0, 0) = std::nan("");
  EXPECT_THROW(policy_act(p, nan, rngs, ActMode::Mean), InvalidInput);
  std::span<std::mt19937_64> none;
  EXPECT_THROW(policy_act(p, x, none, ActMode::Stochastic), InvalidInput);
}

TEST(Marl, ActGroupsRowsPerStream) {
  const std::vector<int> hidden{8};
  const PolicyNet p = make_policy(hidden, false, 3);
  std::mt19937_64 g(2);
  const Matrix x = oracle::random_matrix(4, p.input_dim(), g);
  std::vector<std::mt19937_64> grouped{std::mt19937_64(10), std::mt19937_64(20)};
  const auto all = policy_act(p, x, grouped, ActMode::Stochastic, 2);
  // Rows {2, 3} alone with a fresh copy of the second stream.
  std::vector<std::mt19937_64> second{std::mt19937_64(20)};
  const auto tail = policy_act(p, x.bottomRows(2), second, ActMode::Stochastic, 2);
  EXPECT_EQ(all.actions.bottomRows(2), tail.actions);
}

TEST(Marl, FinalizeBatchPerAgentStreams) {
  TrajectoryBatch b;
  b.allocate(2, 5, false);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < b.reward.size(); ++i) b.reward(i) = n(rng);
  for (Eigen::Index i = 0; i < b.values.size(); ++i) b.values(i) = n(rng);
  for (int e = 0; e < 2; ++e) b.bootstrap_values(e) = n(rng);
  b.dones[b.step_index(1, 2)] = 1;
  finalize_batch(b, 0.99, 0.95);
  EXPECT_TRUE(b.finalized);
  for (int e = 0; e < 2; ++e) {
    for (int i = 0; i < kNumAgents; ++i) {
      std::vector<double> r(5), v(6);
      std::vector<std::uint8_t> d(5);
      for (int t = 0; t < 5; ++t) {
        r[t] = b.reward(b.sample_index(e, t, i));
        v[t] = b.values(b.step_index(e, t));
        d[t] = b.dones[b.step_index(e, t)];
      }
      v[5] = b.bootstrap_values(e);
      const auto ref = gae_bruteforce(r, v, 0.99, 0.95, d);
      for (int t = 0; t < 5; ++t) {
        EXPECT_NEAR(b.advantages(b.sample_index(e, t, i)), ref[t], 1e-12);
        EXPECT_NEAR(b.returns(b.sample_index(e, t, i)), ref[t] + v[t], 1e-12);
      }
    }
  }
}

namespace {

// Random batch whose advantages reward pushing the first action component up.
TrajectoryBatch toy_batch(const PolicyNet& p, std::mt19937_64& rng) {
  TrajectoryBatch b;
  b.allocate(4, 32, false);
  b.policy_inputs = oracle::random_matrix(static_cast<int>(b.agent_samples()), p.input_dim(), rng, 0.5);
  b.value_inputs = oracle::random_matrix(static_cast<int>(b.env_steps()), kNumAgents * kObsDim, rng, 0.5);
  std::vector<std::mt19937_64> rngs{std::mt19937_64(3)};
  const auto act = policy_act(p, b.policy_inputs, rngs, ActMode::Stochastic);
  b.actions = act.actions;
  b.log_probs = act.log_probs;
  const Matrix mean = predict(p.net, b.policy_inputs);
  for (Eigen::Index i = 0; i < b.actions.rows(); ++i) {
    b.advantages(i) = b.actions(i, 0) > mean(i, 0) ? 1.0 : -1.0;
  }
  for (Eigen::Index i = 0; i < b.returns.size(); ++i) b.returns(i) = 3.0 + b.value_inputs(i / kNumAgents, 0);
  b.finalized = true;
  return b;
}

}  // namespace

TEST(Marl, PpoImprovesSurrogateAndFitsValue) {
  const std::vector<int> hidden{32, 32};
  PolicyNet p = make_policy(hidden, false, 11);
  ValueNet v = make_value(hidden, false, 12);
  PpoState st{adam_init(p.net, {1e-3, 0.9, 0.999, 1e-8, 1.0}), adam_init(v.net, {1e-3, 0.9, 0.999, 1e-8, 1.0}), RunningNormalizer(1)};
  std::mt19937_64 rng(9);
  const TrajectoryBatch b = toy_batch(p, rng);
  const Matrix mean_before = predict(p.net, b.policy_inputs);
  const PpoConfig cfg{0.2, 4, 64, 1.0};
  const auto first = ppo_update(p, v, st, b, cfg, rng);
  UpdateStats last = first;
  for (int i = 0; i < 5; ++i) last = ppo_update(p, v, st, b, cfg, rng);
  EXPECT_EQ(first.minibatches, 4 * 4);
  const Matrix mean_after = predict(p.net, b.policy_inputs);
  EXPECT_GT((mean_after.col(0) - mean_before.col(0)).mean(), 0.0);
  double surrogate = 0.0;
  for (Eigen::Index i = 0; i < b.actions.rows(); ++i) {
    const double lp = gaussian_log_prob(b.actions.row(i), mean_after.row(i), p.log_std);
    surrogate += std::exp(lp - b.log_probs(i)) * b.advantages(i);
  }
  EXPECT_GT(surrogate / b.actions.rows(), 0.0);
  EXPECT_LT(last.value_loss, first.value_loss);
  EXPECT_LE(last.max_clip_fraction, 1.0);
  EXPECT_NEAR(st.return_norm.mean()(0), b.returns.mean(), 1e-9);
  EXPECT_EQ(p.log_std, Vector::Constant(kActionDim, -1.6));
}

TEST(Marl, PpoRejectsUnfinalizedBatch) {
  const std::vector<int> hidden{4};
  PolicyNet p = make_policy(hidden, false, 1);
  ValueNet v = make_value(hidden, false, 2);
  PpoState st{adam_init(p.net), adam_init(v.net), RunningNormalizer(1)};
  TrajectoryBatch b;
  b.allocate(1, 2, false);
  std::mt19937_64 rng(1);
  EXPECT_THROW(ppo_update(p, v, st, b, {}, rng), InvalidInput);
  b.finalized = true;
  TrajectoryBatch h;
  h.allocate(1, 2, true);
  h.finalized = true;
  EXPECT_THROW(ppo_update(p, v, st, h, {}, rng), DimensionError);
}

TEST(Marl, ValuePredictDenormalizes) {
  const std::vector<int> hidden{4};
  ValueNet v = make_value(hidden, false, 2);
  PpoState st{adam_init(v.net), adam_init(v.net), RunningNormalizer(1)};
  Vector rets(4);
  rets << 1, 3, 5, 7;
  st.return_norm.update(rets);
  std::mt19937_64 g(1);
  const Matrix x = oracle::random_matrix(3, v.input_dim(), g);
  const Vector raw = predict(v.net, x).col(0);
  const Vector out = value_predict(v, st, x);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out(i), raw(i) * st.return_norm.scale()(0) + 4.0, 1e-12);
}
