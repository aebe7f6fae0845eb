#pragma once

// Adversarial priors. One motion discriminator scores single-character
// transitions (o_self_t, o_self_t+1); each agent owns an interaction
// discriminator scoring (o_t, o_self_t+1). Both train against expert
// demonstrations with an input-gradient penalty on expert samples.

#include <algorithm>
#include <cmath>
#include <string>

#include "maaip/error.hpp"
#include "maaip/tensorcore.hpp"

namespace maaip {

enum class LossKind { Gail, Lsgan };

inline const char* to_string(LossKind k) { return k == LossKind::Gail ? "gail" : "lsgan"; }

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "gail") return LossKind::Gail;
  if (s == "lsgan") return LossKind::Lsgan;
  throw ConfigError("unknown loss kind '" + s + "' (expected gail|lsgan)");
}

struct Discriminator {
  NetParams net;
  OptState opt;
  LossKind loss_kind = LossKind::Gail;
  double w_gp = 10.0;

  int input_dim() const { return net.input_dim(); }
};

inline Discriminator make_discriminator(int input_dim, std::span<const int> hidden, LossKind kind, double w_gp,
                                        std::uint64_t seed, const AdamConfig& adam) {
  if (w_gp < 0.0) throw ConfigError("discriminator: w_gp must be >= 0");
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  Discriminator d;
  d.net = net_init(sizes, seed, {InitScheme::Orthogonal, std::sqrt(2.0), 1.0});
  d.opt = adam_init(d.net, adam);
  d.loss_kind = kind;
  d.w_gp = w_gp;
  return d;
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

inline Vector disc_logits(const Discriminator& d, const Matrix& batch) {
  if (batch.cols() != d.input_dim()) {
    throw DimensionError("discriminator: batch width " + std::to_string(batch.cols()) + " != input dim " +
                         std::to_string(d.input_dim()));
  }
  return predict(d.net, batch).col(0);
}

// GAIL: sigmoid probability; LSGAN: the raw output.
inline Vector disc_score(const Discriminator& d, const Matrix& batch) {
  Vector l = disc_logits(d, batch);
  if (d.loss_kind == LossKind::Gail) l = l.unaryExpr([](double x) { return sigmoid(x); });
  return l;
}

inline constexpr double kGailScoreCap = 1.0 - 1e-4;

inline double reward_gail(double score) { return -std::log(1.0 - std::min(score, kGailScoreCap)); }

inline double reward_lsgan(double logit, double u = 1.0, double v = 0.25) {
  return std::max(0.0, u - v * (logit - 1.0) * (logit - 1.0));
}

struct RewardShape {
  double lsgan_u = 1.0;
  double lsgan_v = 0.25;
};

// Score -> reward for a whole batch.
inline Vector disc_reward(const Discriminator& d, const Matrix& batch, const RewardShape& shape = {}) {
  const Vector s = disc_score(d, batch);
  if (d.loss_kind == LossKind::Gail) return s.unaryExpr([](double x) { return reward_gail(x); });
  return s.unaryExpr([&](double x) { return reward_lsgan(x, shape.lsgan_u, shape.lsgan_v); });
}

// Same fields for both loss kinds; only loss_kind and the meaning of the
// expert/policy terms (cross-entropy vs squared error) differ.
struct LossReport {
  LossKind loss_kind = LossKind::Gail;
  double expert_term = 0.0;
  double policy_term = 0.0;
  double gp = 0.0;
  double total = 0.0;
  double mean_expert_score = 0.0;
  double mean_policy_score = 0.0;
};

struct DiscLoss {
  LossReport report;
  NetGrads grads;
};

// Loss and gradient without touching the parameters.
inline DiscLoss disc_loss(const Discriminator& d, const Matrix& expert, const Matrix& policy) {
  if (expert.rows() == 0 || policy.rows() == 0) throw InvalidInput("discriminator update: empty batch");
  if (expert.cols() != d.input_dim() || policy.cols() != d.input_dim()) {
    throw DimensionError("discriminator update: batch width does not match input dim");
  }
  const ForwardResult fe = forward(d.net, expert);
  const ForwardResult fp = forward(d.net, policy);
  const double ne = static_cast<double>(expert.rows());
  const double np = static_cast<double>(policy.rows());
  Matrix ge(expert.rows(), 1), gp_out(policy.rows(), 1);
  DiscLoss out;
  LossReport& r = out.report;
  r.loss_kind = d.loss_kind;
  for (Eigen::Index i = 0; i < expert.rows(); ++i) {
    const double l = fe.output(i, 0);
    if (d.loss_kind == LossKind::Gail) {
      r.expert_term += softplus(-l) / ne;  // -log D
      ge(i, 0) = (sigmoid(l) - 1.0) / ne;
      r.mean_expert_score += sigmoid(l) / ne;
    } else {
      r.expert_term += (l - 1.0) * (l - 1.0) / ne;
      ge(i, 0) = 2.0 * (l - 1.0) / ne;
      r.mean_expert_score += l / ne;
    }
  }
  for (Eigen::Index i = 0; i < policy.rows(); ++i) {
    const double l = fp.output(i, 0);
    if (d.loss_kind == LossKind::Gail) {
      r.policy_term += softplus(l) / np;  // -log(1 - D)
      gp_out(i, 0) = sigmoid(l) / np;
      r.mean_policy_score += sigmoid(l) / np;
    } else {
      r.policy_term += (l + 1.0) * (l + 1.0) / np;
      gp_out(i, 0) = 2.0 * (l + 1.0) / np;
      r.mean_policy_score += l / np;
    }
  }
  out.grads = backward(d.net, fe.tape, ge).grads;
  add_scaled(out.grads, backward(d.net, fp.tape, gp_out).grads);
  if (d.w_gp > 0.0) {
    const GradientPenalty pen = gradient_penalty(d.net, fe.tape);
    r.gp = pen.value;
    add_scaled(out.grads, pen.grads, d.w_gp);
  }
  r.total = r.expert_term + r.policy_term + d.w_gp * r.gp;
  return out;
}

// One Adam step on the configured objective; the report describes the
// parameters before the step.
inline LossReport disc_update(Discriminator& d, const Matrix& expert, const Matrix& policy) {
  DiscLoss l = disc_loss(d, expert, policy);
  adam_step(d.net, std::move(l.grads), d.opt);
  return l.report;
}

inline LossReport disc_update_gail(Discriminator& d, const Matrix& expert, const Matrix& policy) {
  if (d.loss_kind != LossKind::Gail) throw InvalidInput("disc_update_gail on an lsgan discriminator");
  return disc_update(d, expert, policy);
}

inline LossReport disc_update_lsgan(Discriminator& d, const Matrix& expert, const Matrix& policy) {
  if (d.loss_kind != LossKind::Lsgan) throw InvalidInput("disc_update_lsgan on a gail discriminator");
  return disc_update(d, expert, policy);
}

}  // namespace maaip
