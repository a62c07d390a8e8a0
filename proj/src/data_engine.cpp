// SPDX-License-Identifier: Apache-2.0
#include "rence/data_engine.hpp"

#include <atomic>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "rence/rng.hpp"

namespace rence {

using nlohmann::json;

void validate(const FilterConfig& f) {
  if (!(f.t_hard >= 0.0 && f.t_hard < 1.0)) throw std::invalid_argument("t_hard must be in [0,1)");
  if (!(f.t_easy > 0.0 && f.t_easy <= 1.0)) throw std::invalid_argument("t_easy must be in (0,1]");
  if (!(f.t_master > 0.0 && f.t_master <= 1.0)) throw std::invalid_argument("t_master must be in (0,1]");
  if (!(f.t_hard < f.t_easy)) throw std::invalid_argument("t_hard must be below t_easy");
}

FilterDecision classify_prompt(double rho, const FilterConfig& config) {
  if (rho > config.t_master) return FilterDecision::mastered;
  if (rho > config.t_hard && rho <= config.t_easy) return FilterDecision::accept;
  return FilterDecision::reject;
}

const char* to_string(CachePolicy p) {
  return p == CachePolicy::reuse ? "reuse" : "discard_on_sync";
}

CachePolicy cache_policy_from_string(const std::string& s) {
  if (s == "reuse") return CachePolicy::reuse;
  if (s == "discard_on_sync") return CachePolicy::discard_on_sync;
  throw std::invalid_argument("unknown cache policy: " + s);
}

namespace {

void reshuffle_epoch(PromptPoolState& pool) {
  pool.epoch_order.resize(pool.dataset.size());
  std::iota(pool.epoch_order.begin(), pool.epoch_order.end(), 0u);
  Rng rng(derive_seed(pool.data_seed, static_cast<std::uint64_t>(pool.consumed_epochs)));
  rng.shuffle(pool.epoch_order);
  pool.cursor = 0;
}

// Draws up to `want` non-mastered problems, advancing the cursor and
// reshuffling at epoch boundaries. `sweeps` counts boundary crossings.
std::vector<const Problem*> next_dataloader_batch(PromptPoolState& pool, int want, int& sweeps) {
  std::vector<const Problem*> out;
  while (static_cast<int>(out.size()) < want) {
    if (pool.cursor >= pool.epoch_order.size()) {
      ++pool.consumed_epochs;
      ++sweeps;
      reshuffle_epoch(pool);
      if (!out.empty() || sweeps > pool.max_sweeps) break;
    }
    const Problem& p = pool.dataset[pool.epoch_order[pool.cursor]];
    ++pool.cursor;
    if (pool.mastered.count(p.prompt_id) != 0) continue;
    out.push_back(&p);
  }
  return out;
}

}  // namespace

PromptPoolState make_prompt_pool(std::vector<Problem> dataset, std::uint64_t data_seed) {
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  PromptPoolState pool;
  pool.dataset = std::move(dataset);
  pool.data_seed = data_seed;
  reshuffle_epoch(pool);
  return pool;
}

void restore_pool_position(PromptPoolState& pool, int consumed_epochs, std::size_t cursor) {
  if (cursor > pool.dataset.size()) throw std::invalid_argument("pool cursor out of range");
  pool.consumed_epochs = consumed_epochs;
  reshuffle_epoch(pool);
  pool.cursor = cursor;
}

RewardFn make_task_reward_fn(const TokenTable& table) {
  return [table](const Problem& p, const Trajectory& t, int) {
    return reward(p, t.gen_tokens, table).reward;
  };
}

TrainBatch assemble_batch(PromptPoolState& pool, const PolicyParams& anchor_policy, int batch_size,
                          int group_size, double temperature, std::uint64_t seed,
                          const FilterConfig& filter, const RewardFn& reward_fn, int n_threads) {
  validate(filter);
  if (batch_size < 1 || group_size < 1) throw std::invalid_argument("batch and group sizes must be >= 1");
  if (pool.mastered.size() >= pool.dataset.size()) {
    throw std::runtime_error("insufficient trainable prompts: every prompt is mastered");
  }

  TrainBatch out;
  // Cache consumed if used; cached groups keep their original anchor
  // log-probabilities.
  std::vector<BatchEntry> stack = std::move(pool.cache);
  pool.cache.clear();
  out.stats.from_cache = static_cast<int>(stack.size());

  int sweeps = 0;
  std::uint64_t ordinal = 0;
  double reward_sum = 0.0;
  long reward_n = 0;

  const auto fail_insufficient = [&]() {
    std::ostringstream msg;
    const int sampled = out.stats.sampled_prompts;
    msg << "insufficient trainable prompts after " << sweeps << " sweeps"
        << " (sampled=" << sampled << ", accepted=" << out.stats.accepted
        << ", newly_mastered=" << out.stats.mastered_new << ", rejected=" << out.stats.rejected
        << ", mastered_total=" << pool.mastered.size() << "/" << pool.dataset.size();
    if (sampled > 0) {
      msg << ", acceptance_rate=" << static_cast<double>(out.stats.accepted) / sampled
          << ", mastery_rate=" << static_cast<double>(out.stats.mastered_new) / sampled;
    }
    msg << ")";
    throw std::runtime_error(msg.str());
  };

  while (static_cast<int>(stack.size()) < batch_size) {
    if (sweeps > pool.max_sweeps) fail_insufficient();
    const std::vector<const Problem*> drawn = next_dataloader_batch(pool, batch_size, sweeps);
    if (drawn.empty()) fail_insufficient();

    // Fan rollout generation out over prompts; results land in fixed slots so
    // the merge is deterministic regardless of scheduling.
    const int n = static_cast<int>(drawn.size());
    std::vector<std::vector<Trajectory>> rollouts(n, std::vector<Trajectory>(group_size));
    const std::uint64_t base_ordinal = ordinal;
    ordinal += static_cast<std::uint64_t>(n);
    std::atomic<int> next_job{0};
    const int total_jobs = n * group_size;
    const auto worker = [&]() {
      for (int job = next_job.fetch_add(1); job < total_jobs; job = next_job.fetch_add(1)) {
        const int pi = job / group_size;
        const int k = job % group_size;
        const std::uint64_t s = derive_seed(derive_seed(seed, base_ordinal + pi), k);
        rollouts[pi][k] = sample(anchor_policy, drawn[pi]->prompt_tokens, temperature, s);
      }
    };
    if (n_threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> threads;
      for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
      for (auto& t : threads) t.join();
    }

    for (int pi = 0; pi < n; ++pi) {
      const Problem& prob = *drawn[pi];
      std::vector<RolloutRecord> records(group_size);
      for (int k = 0; k < group_size; ++k) {
        Trajectory& tr = rollouts[pi][k];
        RolloutRecord& rec = records[k];
        rec.reward = reward_fn(prob, tr, k);
        rec.logprob_old = tr.total_logprob;
        rec.per_token_logprob_old = std::move(tr.per_token_logprobs);
        rec.length = static_cast<int>(tr.gen_tokens.size());
        rec.tokens = std::move(tr.gen_tokens);
        reward_sum += rec.reward;
        ++reward_n;
      }
      RolloutGroup group = make_group(prob.prompt_id, std::move(records));
      ++out.stats.sampled_prompts;
      switch (classify_prompt(group.rho, filter)) {
        case FilterDecision::mastered:
          pool.mastered.insert(prob.prompt_id);
          ++out.stats.mastered_new;
          break;
        case FilterDecision::accept:
          stack.push_back(BatchEntry{prob, std::move(group)});
          ++out.stats.accepted;
          break;
        case FilterDecision::reject:
          ++out.stats.rejected;
          break;
      }
    }
  }

  out.entries.assign(std::make_move_iterator(stack.begin()),
                     std::make_move_iterator(stack.begin() + batch_size));
  pool.cache.assign(std::make_move_iterator(stack.begin() + batch_size),
                    std::make_move_iterator(stack.end()));
  out.stats.mean_reward = reward_n > 0 ? reward_sum / static_cast<double>(reward_n) : 0.0;
  return out;
}

void save_mastered(const std::string& path, const PromptPoolState& pool) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write mastered set: " + path);
  for (const auto& id : pool.mastered) {
    json j;
    j["prompt_id"] = id;
    out << j.dump() << "\n";
  }
}

void load_mastered(const std::string& path, PromptPoolState& pool) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read mastered set: " + path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    pool.mastered.insert(json::parse(line).at("prompt_id").get<std::string>());
  }
}

}  // namespace rence
