// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "rence/data_engine.hpp"
#include "rence/kl_controller.hpp"
#include "rence/objectives.hpp"
#include "rence/policy.hpp"
#include "rence/tasks.hpp"

namespace rence {

enum class PolicyInit { random, format_primed };

const char* to_string(PolicyInit i);
PolicyInit policy_init_from_string(const std::string& s);

struct ModelConfig {
  PolicyMode mode = PolicyMode::neural;
  int embed_dim = 80;
  int hidden_dim = 384;
  int n_layers = 1;
  int max_len = 24;
  double init_std = 0.08;
  // format_primed plays the role of a pretrained base model: the answer
  // format is wired in at initialization, content stays uniform.
  PolicyInit init = PolicyInit::format_primed;
};

// Builds the initial policy for a run: architecture from the model config
// plus the token table, initialization per model.init.
PolicyParams make_initial_params(const ModelConfig& model, const TokenTable& table,
                                 std::uint64_t seed);

// KL penalty configuration. adaptive=false holds kl_coef0 constant for the
// whole run (0 disables the trust-region term entirely).
struct KlConfig {
  bool adaptive = true;
  double kl_coef0 = 0.001;
  double target_kl = 0.01;
  std::int64_t horizon = 3200;
  double clip_width = 0.2;
};

struct TrainConfig {
  ObjectiveConfig objective;
  FilterConfig filter;
  ModelConfig model;
  KlConfig kl;
  int group_size = 8;     // K rollouts per prompt
  int batch_size = 64;    // B prompts per rollout batch
  int minibatch_size = 16;
  int n_update = 16;      // optimization steps per rollout batch
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  double rollout_temperature = 1.0;
  int max_iterations = 200;
  std::uint64_t root_seed = 1;
  int anchor_sync_interval = 0;  // update steps per anchor refresh; 0 means n_update
  CachePolicy cache_policy = CachePolicy::reuse;
  double pg_clip_low = 0.2;
  double pg_clip_high = 0.2;
  PgNorm pg_norm = PgNorm::sequence;
  int checkpoint_interval = 0;  // iterations between checkpoints; 0 = final only
  int threads = 2;
  std::string preset_name;
};

void validate(const TrainConfig& config);

// One record per iteration. wall_seconds is the only volatile field and is
// excluded from the deterministic metrics stream (it goes to the timing
// sidecar instead) so identical runs produce byte-identical metrics files.
struct IterationMetrics {
  int iteration = 0;
  double mean_reward = 0.0;
  double mean_rho = 0.0;
  int accepted = 0;
  int mastered = 0;
  int rejected = 0;
  int sampled_prompts = 0;
  int from_cache = 0;
  double frac_rmax_partial = 0.0;  // batch groups whose best rollout is not fully correct
  double loss_first = 0.0;
  double loss_last = 0.0;
  double loss_mean = 0.0;
  double mean_kl = 0.0;
  double kl_coef = 0.0;
  double grad_norm = 0.0;
  double mean_resp_len = 0.0;
  int max_resp_len = 0;
  double wall_seconds = 0.0;
};

nlohmann::json metrics_to_json(const IterationMetrics& m, bool include_volatile);

enum class TrainStatus { completed, pool_exhausted };

struct TrainResult {
  PolicyParams params;
  std::vector<IterationMetrics> metrics;
  TrainStatus status = TrainStatus::completed;
  int iterations_run = 0;
  std::string stop_reason;
};

// Everything needed to continue a run exactly where it stopped.
struct ResumeState {
  nlohmann::json meta;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

struct TrainHooks {
  std::function<void(const IterationMetrics&)> on_metrics;
  // Called at checkpoint boundaries with the state that reproduces the rest
  // of the run (params + resume state).
  std::function<void(int next_iteration, const PolicyParams& params, const ResumeState& resume)>
      on_checkpoint;
  RewardFn reward_override;  // conformance tests script rewards through this
};

// Full training loop: per iteration, anchor sync, batch assembly, n_update
// minimization steps with a decoupled-weight-decay adaptive-moment optimizer,
// KL-controller update, metrics. Deterministic end to end given the config
// seeds. Pool exhaustion ends the run early with status pool_exhausted.
TrainResult train(const TrainConfig& config, const std::vector<Problem>& dataset,
                  const PolicyParams& initial_params, const TokenTable& table,
                  const TrainHooks& hooks = {}, const ResumeState* resume = nullptr);

// Paper-shaped configurations scaled to desk size.
TrainConfig configure_preset(const std::string& name);
std::vector<std::string> preset_names();

struct EvalReport {
  std::vector<double> per_repeat_pass1;
  double mean = 0.0;
  double stddev = 0.0;  // population std over repeats
  struct Row {
    std::string prompt_id;
    std::vector<double> rewards;  // one per repeat
  };
  std::vector<Row> per_problem;
};

using SampleFn =
    std::function<std::vector<int>(const Problem&, double temperature, std::uint64_t seed)>;

// pass@1 (avg@repeats): one completion per problem per repeat; a problem
// counts as passed when its reward is exactly 1.
EvalReport evaluate_with_sampler(const SampleFn& sampler, const std::vector<Problem>& eval_set,
                                 int repeats, double temperature, std::uint64_t seed,
                                 const TokenTable& table, int threads = 1);
EvalReport evaluate(const PolicyParams& params, const std::vector<Problem>& eval_set, int repeats,
                    double temperature, std::uint64_t seed, const TokenTable& table,
                    int threads = 1);

}  // namespace rence
