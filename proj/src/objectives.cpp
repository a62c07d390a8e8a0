// SPDX-License-Identifier: Apache-2.0
#include "rence/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rence/rng.hpp"

namespace rence {
namespace {

constexpr double kRewardGrid = 0.05;

long long grid_index(double r) { return std::llround(r / kRewardGrid); }

double effective_alpha(const ObjectiveConfig& cfg) {
  return cfg.margin_mode == MarginMode::none ? 0.0 : cfg.alpha;
}

std::vector<double> group_scores(const RolloutGroup& group, std::span<const double> logprob_theta,
                                 const ObjectiveConfig& cfg) {
  const int k = group.size();
  if (static_cast<int>(logprob_theta.size()) != k) {
    throw std::invalid_argument("logprob vector length does not match group size");
  }
  std::vector<double> s(k);
  for (int i = 0; i < k; ++i) {
    const double m = margin(group.r_max, group.records[i].reward, cfg);
    s[i] = score(logprob_theta[i], group.records[i].logprob_old, m, cfg);
  }
  return s;
}

// log(1 + e^x), stable for both tails.
double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// 1 / (1 + e^x)
double sigmoid_neg(double x) {
  if (x > 0.0) {
    const double e = std::exp(-x);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(x));
}

// Shared core of mnce_loss and softmax_contrastive_loss. For every positive p
// the normalizer runs, in natural index order, over the rollouts selected by
// `in_normalizer(i, p)`; this makes the two objectives bit-identical when the
// selected sets coincide (single-positive groups).
template <typename Pred>
GroupLoss contrastive_core(const RolloutGroup& group, std::span<const double> logprob_theta,
                           const ObjectiveConfig& cfg, Pred in_normalizer) {
  const int k = group.size();
  GroupLoss out;
  out.grad_wrt_logprob_theta.assign(k, 0.0);
  if (group.positive_indices.empty()) throw std::invalid_argument("group has no positive rollouts");
  if (group.negative_indices.empty()) {
    out.per_positive_values.assign(group.positive_indices.size(), 0.0);
    return out;
  }
  const std::vector<double> s = group_scores(group, logprob_theta, cfg);
  const double inv_p = 1.0 / static_cast<double>(group.positive_indices.size());
  std::vector<double> grad_s(k, 0.0);
  for (const int p : group.positive_indices) {
    double max_s = s[p];
    for (int i = 0; i < k; ++i) {
      if (in_normalizer(i, p)) max_s = std::max(max_s, s[i]);
    }
    double denom = 0.0;
    for (int i = 0; i < k; ++i) {
      if (in_normalizer(i, p)) denom += std::exp(s[i] - max_s);
    }
    const double lse = max_s + std::log(denom);
    out.per_positive_values.push_back(lse - s[p]);
    out.value += (lse - s[p]) * inv_p;
    for (int i = 0; i < k; ++i) {
      if (!in_normalizer(i, p)) continue;
      const double w = std::exp(s[i] - lse);
      grad_s[i] += (w - (i == p ? 1.0 : 0.0)) * inv_p;
    }
  }
  for (int i = 0; i < k; ++i) out.grad_wrt_logprob_theta[i] = cfg.beta * grad_s[i];
  return out;
}

}  // namespace

double quantize_reward(double r) { return static_cast<double>(grid_index(r)) * kRewardGrid; }

GroupPartition partition_group(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("empty group");
  GroupPartition out;
  long long qmax = grid_index(rewards[0]);
  double raw_max = rewards[0];
  for (const double r : rewards) {
    if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("reward outside [0, 1]");
    qmax = std::max(qmax, grid_index(r));
    raw_max = std::max(raw_max, r);
  }
  out.r_max = raw_max;
  for (int i = 0; i < static_cast<int>(rewards.size()); ++i) {
    if (grid_index(rewards[i]) == qmax) {
      out.positives.push_back(i);
    } else {
      out.negatives.push_back(i);
    }
  }
  out.rho = static_cast<double>(out.positives.size()) / static_cast<double>(rewards.size());
  return out;
}

RolloutGroup make_group(std::string prompt_id, std::vector<RolloutRecord> records) {
  std::vector<double> rewards;
  rewards.reserve(records.size());
  for (const auto& r : records) rewards.push_back(r.reward);
  GroupPartition part = partition_group(rewards);
  RolloutGroup g;
  g.prompt_id = std::move(prompt_id);
  g.records = std::move(records);
  g.r_max = part.r_max;
  g.positive_indices = std::move(part.positives);
  g.negative_indices = std::move(part.negatives);
  g.rho = part.rho;
  return g;
}

double margin(double r_max, double reward, const ObjectiveConfig& config) {
  if (reward > r_max) throw std::invalid_argument("reward exceeds group max");
  switch (config.margin_mode) {
    case MarginMode::reward_scaled:
      return r_max - reward;
    case MarginMode::constant:
      return grid_index(reward) == grid_index(r_max) ? 0.0 : 1.0;
    case MarginMode::none:
      return 0.0;
  }
  return 0.0;
}

double base_score(double logprob_theta, double logprob_old, double beta) {
  return beta * (logprob_theta - logprob_old);
}

double score(double logprob_theta, double logprob_old, double margin_value, const ObjectiveConfig& config) {
  return base_score(logprob_theta, logprob_old, config.beta) + effective_alpha(config) * margin_value;
}

GroupLoss mnce_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                    const ObjectiveConfig& config) {
  std::vector<char> negative(group.size(), 0);
  for (const int n : group.negative_indices) negative[n] = 1;
  return contrastive_core(group, logprob_theta, config,
                          [&negative](int i, int p) { return i == p || negative[i]; });
}

GroupLoss softmax_contrastive_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                                   const ObjectiveConfig& config) {
  return contrastive_core(group, logprob_theta, config, [](int, int) { return true; });
}

GroupLoss pairwise_dpo_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                            const ObjectiveConfig& config, PairMode mode, std::uint64_t rng_seed) {
  if (group.negative_indices.empty()) throw std::invalid_argument("no negatives for pairwise objective");
  if (group.positive_indices.empty()) throw std::invalid_argument("group has no positive rollouts");
  const int k = group.size();
  const std::vector<double> s = group_scores(group, logprob_theta, config);
  GroupLoss out;
  out.grad_wrt_logprob_theta.assign(k, 0.0);
  std::vector<double> grad_s(k, 0.0);

  const auto add_pair = [&](int p, int n, double weight) {
    const double delta = s[p] - s[n];
    out.value += weight * softplus(-delta);
    const double g = sigmoid_neg(delta);  // sigmoid(-delta)
    grad_s[p] -= weight * g;
    grad_s[n] += weight * g;
  };

  if (mode == PairMode::random) {
    Rng rng(rng_seed);
    const int p = group.positive_indices[rng.uniform_index(group.positive_indices.size())];
    const int n = group.negative_indices[rng.uniform_index(group.negative_indices.size())];
    add_pair(p, n, 1.0);
    out.per_positive_values.push_back(out.value);
  } else {
    const double w = 1.0 / (static_cast<double>(group.positive_indices.size()) *
                            static_cast<double>(group.negative_indices.size()));
    for (const int p : group.positive_indices) {
      double per_pos = 0.0;
      for (const int n : group.negative_indices) {
        add_pair(p, n, w);
        per_pos += softplus(-(s[p] - s[n]));
      }
      out.per_positive_values.push_back(per_pos / static_cast<double>(group.negative_indices.size()));
    }
  }
  for (int i = 0; i < k; ++i) out.grad_wrt_logprob_theta[i] = config.beta * grad_s[i];
  return out;
}

std::vector<double> grpo_advantage(std::span<const double> rewards) {
  const int k = static_cast<int>(rewards.size());
  if (k < 2) throw std::invalid_argument("grpo_advantage requires a group of at least 2");
  const double lo = *std::min_element(rewards.begin(), rewards.end());
  const double hi = *std::max_element(rewards.begin(), rewards.end());
  if (lo == hi) return std::vector<double>(k, 0.0);
  double mean = 0.0;
  for (const double r : rewards) mean += r;
  mean /= k;
  double var = 0.0;
  for (const double r : rewards) var += (r - mean) * (r - mean);
  var /= k;
  const double denom = std::sqrt(var) + 1e-6;
  std::vector<double> adv(k);
  for (int i = 0; i < k; ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

GroupLoss clipped_pg_loss(const RolloutGroup& group,
                          const std::vector<std::vector<double>>& logprob_theta_tokens,
                          const std::vector<std::vector<double>>& logprob_old_tokens,
                          std::span<const double> advantages, double clip_low, double clip_high,
                          PgNorm norm_mode) {
  const int k = group.size();
  if (static_cast<int>(logprob_theta_tokens.size()) != k ||
      static_cast<int>(logprob_old_tokens.size()) != k ||
      static_cast<int>(advantages.size()) != k) {
    throw std::invalid_argument("clipped_pg_loss: per-rollout input length mismatch");
  }
  if (!(clip_low > 0.0 && clip_low < 1.0 && clip_high > 0.0 && clip_high < 1.0)) {
    throw std::invalid_argument("clipped_pg_loss: clip thresholds must lie in (0, 1)");
  }
  std::size_t total_tokens = 0;
  for (int i = 0; i < k; ++i) {
    if (logprob_theta_tokens[i].size() != logprob_old_tokens[i].size()) {
      throw std::invalid_argument("clipped_pg_loss: token logprob length misalignment");
    }
    if (logprob_theta_tokens[i].empty()) {
      throw std::invalid_argument("clipped_pg_loss: empty token sequence");
    }
    total_tokens += logprob_theta_tokens[i].size();
  }

  GroupLoss out;
  out.grad_wrt_logprob_theta.assign(k, 0.0);
  out.grad_wrt_logprob_tokens.resize(k);
  for (int i = 0; i < k; ++i) {
    const auto& lt = logprob_theta_tokens[i];
    const auto& lo = logprob_old_tokens[i];
    const double a = advantages[i];
    const double w = norm_mode == PgNorm::sequence
                         ? 1.0 / (static_cast<double>(lt.size()) * static_cast<double>(k))
                         : 1.0 / static_cast<double>(total_tokens);
    out.grad_wrt_logprob_tokens[i].assign(lt.size(), 0.0);
    for (std::size_t t = 0; t < lt.size(); ++t) {
      const double ratio = std::exp(lt[t] - lo[t]);
      const double clipped = std::clamp(ratio, 1.0 - clip_low, 1.0 + clip_high);
      const double surr_unclipped = ratio * a;
      const double surr_clipped = clipped * a;
      out.value += -std::min(surr_unclipped, surr_clipped) * w;
      // The clipped branch is constant in the ratio, so its gradient is zero.
      const double g = surr_unclipped <= surr_clipped ? -a * ratio : 0.0;
      out.grad_wrt_logprob_tokens[i][t] = g * w;
      out.grad_wrt_logprob_theta[i] += g * w;
    }
  }
  return out;
}

double kl_estimate(double logprob_theta, double logprob_old) {
  const double u = logprob_theta - logprob_old;
  return std::max(0.0, std::expm1(u) - u);
}

GroupLoss rence_loss(const RolloutGroup& group, std::span<const double> logprob_theta, double kl_coef,
                     const ObjectiveConfig& config, std::uint64_t rng_seed) {
  GroupLoss out;
  switch (config.objective) {
    case ObjectiveKind::mnce:
      out = mnce_loss(group, logprob_theta, config);
      break;
    case ObjectiveKind::softmax:
      out = softmax_contrastive_loss(group, logprob_theta, config);
      break;
    case ObjectiveKind::pairwise_random:
      out = pairwise_dpo_loss(group, logprob_theta, config, PairMode::random, rng_seed);
      break;
    case ObjectiveKind::pairwise_all:
    case ObjectiveKind::group_dpo:
      out = pairwise_dpo_loss(group, logprob_theta, config, PairMode::all, rng_seed);
      break;
    case ObjectiveKind::grpo:
    case ObjectiveKind::dapo_pg:
      throw std::invalid_argument("rence_loss requires a group-level contrastive objective");
  }
  if (kl_coef != 0.0) {
    const int k = group.size();
    double kl_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      const double u = logprob_theta[i] - group.records[i].logprob_old;
      kl_sum += std::expm1(u) - u;
      out.grad_wrt_logprob_theta[i] += kl_coef * std::expm1(u) / static_cast<double>(k);
    }
    out.value += kl_coef * kl_sum / static_cast<double>(k);
  }
  return out;
}

const char* to_string(ObjectiveKind k) {
  switch (k) {
    case ObjectiveKind::mnce: return "mnce";
    case ObjectiveKind::softmax: return "softmax";
    case ObjectiveKind::pairwise_random: return "pairwise_random";
    case ObjectiveKind::pairwise_all: return "pairwise_all";
    case ObjectiveKind::grpo: return "grpo";
    case ObjectiveKind::dapo_pg: return "dapo_pg";
    case ObjectiveKind::group_dpo: return "group_dpo";
  }
  return "?";
}

const char* to_string(MarginMode m) {
  switch (m) {
    case MarginMode::reward_scaled: return "reward_scaled";
    case MarginMode::constant: return "constant";
    case MarginMode::none: return "none";
  }
  return "?";
}

const char* to_string(PgNorm n) { return n == PgNorm::sequence ? "sequence" : "token"; }

ObjectiveKind objective_kind_from_string(const std::string& s) {
  for (const ObjectiveKind k : {ObjectiveKind::mnce, ObjectiveKind::softmax, ObjectiveKind::pairwise_random,
                                ObjectiveKind::pairwise_all, ObjectiveKind::grpo, ObjectiveKind::dapo_pg,
                                ObjectiveKind::group_dpo}) {
    if (s == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown objective: " + s);
}

MarginMode margin_mode_from_string(const std::string& s) {
  for (const MarginMode m : {MarginMode::reward_scaled, MarginMode::constant, MarginMode::none}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown margin mode: " + s);
}

PgNorm pg_norm_from_string(const std::string& s) {
  if (s == "sequence") return PgNorm::sequence;
  if (s == "token") return PgNorm::token;
  throw std::invalid_argument("unknown pg norm mode: " + s);
}

}  // namespace rence
