// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "rence/objectives.hpp"
#include "rence/policy.hpp"
#include "rence/tasks.hpp"

namespace rence {

// Positive-ratio filter thresholds. Mastery is checked before the acceptance
// window, matching the training-iteration pseudocode.
struct FilterConfig {
  double t_hard = 0.0;
  double t_easy = 0.5;
  double t_master = 0.8;
};

void validate(const FilterConfig& f);

enum class FilterDecision { mastered, accept, reject };

// mastered if rho > t_master; else accept if t_hard < rho <= t_easy; else
// reject. Rejection is per-iteration; mastery is permanent.
FilterDecision classify_prompt(double rho, const FilterConfig& config);

struct BatchEntry {
  Problem problem;
  RolloutGroup group;
};

struct BatchStats {
  int sampled_prompts = 0;  // fresh prompts rolled out in this call
  int accepted = 0;         // fresh prompts accepted into the stack
  int mastered_new = 0;
  int rejected = 0;
  int from_cache = 0;
  double mean_reward = 0.0;  // over all fresh rollouts
};

struct TrainBatch {
  std::vector<BatchEntry> entries;
  BatchStats stats;
};

enum class CachePolicy { reuse, discard_on_sync };

const char* to_string(CachePolicy p);
CachePolicy cache_policy_from_string(const std::string& s);

// Prompt-selection state: a cycling, per-epoch reshuffled view of the dataset
// plus the overflow cache Q and the permanently mastered set.
struct PromptPoolState {
  std::vector<Problem> dataset;
  std::uint64_t data_seed = 0;
  int consumed_epochs = 0;
  std::size_t cursor = 0;  // index into the current epoch order
  std::vector<std::uint32_t> epoch_order;
  std::vector<BatchEntry> cache;
  std::set<std::string> mastered;
  int max_sweeps = 10;
};

PromptPoolState make_prompt_pool(std::vector<Problem> dataset, std::uint64_t data_seed);

// Repositions the cycling dataloader (epoch permutations are recomputed from
// the data seed, so a position is just epoch + cursor).
void restore_pool_position(PromptPoolState& pool, int consumed_epochs, std::size_t cursor);

// Reward hook. The rollout index is ignored by the real reward function and
// exists so conformance tests can script exact reward multisets.
using RewardFn = std::function<double(const Problem&, const Trajectory&, int k)>;

RewardFn make_task_reward_fn(const TokenTable& table);

// One pass of the batch-assembly loop: drains the cache into the working
// stack, then draws dataloader batches, samples K rollouts per prompt from
// the anchor, classifies by positive ratio, and stops once B entries are
// stacked. Overflow beyond B goes back into the cache. Throws
// "insufficient trainable prompts" when max_sweeps dataset sweeps cannot fill
// the batch.
TrainBatch assemble_batch(PromptPoolState& pool, const PolicyParams& anchor_policy, int batch_size,
                          int group_size, double temperature, std::uint64_t seed,
                          const FilterConfig& filter, const RewardFn& reward_fn, int n_threads = 1);

// Mastered-prompt persistence: JSON-lines, one {"prompt_id": ...} per line.
void save_mastered(const std::string& path, const PromptPoolState& pool);
void load_mastered(const std::string& path, PromptPoolState& pool);

}  // namespace rence
