// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rence {

// One sampled completion together with everything the group objectives need.
// logprob_old is the summed sequence log-probability under the anchor policy;
// the per-token vector is kept for the token-level policy-gradient objectives.
struct RolloutRecord {
  std::vector<int> tokens;
  double reward = 0.0;
  double logprob_old = 0.0;
  std::vector<double> per_token_logprob_old;
  int length = 0;
};

// A prompt's K rollouts partitioned into the highest-reward set and the rest.
struct RolloutGroup {
  std::string prompt_id;
  std::vector<RolloutRecord> records;
  double r_max = 0.0;
  std::vector<int> positive_indices;
  std::vector<int> negative_indices;
  double rho = 0.0;

  int size() const { return static_cast<int>(records.size()); }
};

enum class MarginMode { reward_scaled, constant, none };
enum class ObjectiveKind { mnce, softmax, pairwise_random, pairwise_all, grpo, dapo_pg, group_dpo };

struct ObjectiveConfig {
  double beta = 0.1;
  double alpha = 0.5;
  MarginMode margin_mode = MarginMode::reward_scaled;
  ObjectiveKind objective = ObjectiveKind::mnce;
};

// Loss value plus analytic gradients with respect to the current-policy
// log-probabilities. grad_wrt_logprob_theta[i] is the derivative in the
// summed sequence log-probability of rollout i; entries for rollouts that do
// not participate in the selected objective are exactly zero. Token-level
// objectives additionally fill grad_wrt_logprob_tokens (same derivative, per
// generated token).
struct GroupLoss {
  double value = 0.0;
  std::vector<double> grad_wrt_logprob_theta;
  std::vector<double> per_positive_values;
  std::vector<std::vector<double>> grad_wrt_logprob_tokens;
};

struct GroupPartition {
  double r_max = 0.0;
  std::vector<int> positives;
  std::vector<int> negatives;
  double rho = 0.0;
};

// Rewards are snapped to a 0.05 grid before equality comparison so that
// floating-point noise cannot split the positive set. The default reward
// scheme only emits {0, 0.1, 1}, all of which lie on the grid.
double quantize_reward(double r);

GroupPartition partition_group(std::span<const double> rewards);

// Builds a RolloutGroup from raw records: partitions by reward, fills the
// index sets, r_max and rho.
RolloutGroup make_group(std::string prompt_id, std::vector<RolloutRecord> records);

double margin(double r_max, double reward, const ObjectiveConfig& config);

// The shifted log-ratio score: beta * (logprob_theta - logprob_old), plus
// alpha * margin when a margin mode is active.
double base_score(double logprob_theta, double logprob_old, double beta);
double score(double logprob_theta, double logprob_old, double margin_value, const ObjectiveConfig& config);

// Multi-label NCE: one softmax contrast per positive against the full
// negative set; other positives are excluded from the normalizer. Groups with
// no negatives yield zero loss and gradient.
GroupLoss mnce_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                    const ObjectiveConfig& config);

// Variant whose per-positive normalizer runs over all K rollouts, positives
// included. Coincides with mnce_loss when there is exactly one positive.
GroupLoss softmax_contrastive_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                                   const ObjectiveConfig& config);

enum class PairMode { random, all };

// -log sigmoid(s_p - s_n) per positive-negative pair; `random` draws one pair
// with the given seed, `all` averages over every pair.
GroupLoss pairwise_dpo_loss(const RolloutGroup& group, std::span<const double> logprob_theta,
                            const ObjectiveConfig& config, PairMode mode, std::uint64_t rng_seed);

// Within-group standardized rewards (population std, eps = 1e-6); groups with
// zero reward variance get the exact all-zero vector.
std::vector<double> grpo_advantage(std::span<const double> rewards);

enum class PgNorm { sequence, token };

// PPO-style clipped surrogate over per-token importance ratios. `sequence`
// averages per rollout then over the group; `token` pools all tokens.
GroupLoss clipped_pg_loss(const RolloutGroup& group,
                          const std::vector<std::vector<double>>& logprob_theta_tokens,
                          const std::vector<std::vector<double>>& logprob_old_tokens,
                          std::span<const double> advantages, double clip_low, double clip_high,
                          PgNorm norm_mode);

// Nonnegative single-sample estimator of KL(pi_old || pi_theta) for a sample
// drawn from pi_old: with u = logprob_theta - logprob_old, (e^u - 1) - u.
double kl_estimate(double logprob_theta, double logprob_old);

// The full per-group training loss: selected contrastive objective plus
// kl_coef times the rollout-mean KL estimate.
GroupLoss rence_loss(const RolloutGroup& group, std::span<const double> logprob_theta, double kl_coef,
                     const ObjectiveConfig& config, std::uint64_t rng_seed = 0);

const char* to_string(ObjectiveKind k);
const char* to_string(MarginMode m);
const char* to_string(PgNorm n);
ObjectiveKind objective_kind_from_string(const std::string& s);
MarginMode margin_mode_from_string(const std::string& s);
PgNorm pg_norm_from_string(const std::string& s);

}  // namespace rence
