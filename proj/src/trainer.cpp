// SPDX-License-Identifier: Apache-2.0
#include "rence/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "rence/rng.hpp"

namespace rence {

using nlohmann::json;

namespace {

constexpr int kGradLanes = 8;  // fixed reduction lanes, independent of thread count

bool is_pg_objective(ObjectiveKind k) {
  return k == ObjectiveKind::grpo || k == ObjectiveKind::dapo_pg;
}

void run_on_threads(int n_threads, int n_jobs, const std::function<void(int)>& job) {
  if (n_jobs <= 0) return;
  std::atomic<int> next{0};
  const auto worker = [&]() {
    for (int j = next.fetch_add(1); j < n_jobs; j = next.fetch_add(1)) job(j);
  };
  const int use = std::min(n_threads, n_jobs);
  if (use <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(use);
  for (int i = 0; i < use; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

struct StepScalars {
  double loss = 0.0;
  double kl_mean = 0.0;
  bool finite = true;
};

// One optimization step's loss and parameter gradient over a minibatch of
// groups. Gradient terms are accumulated in kGradLanes fixed lanes (lane L
// takes groups L, L+8, ... in order) and merged in lane order, so the result
// does not depend on how many threads actually ran.
StepScalars minibatch_loss_grad(const TrainConfig& cfg, const PolicyParams& params,
                                const std::vector<BatchEntry>& entries,
                                std::span<const int> mb_indices, double kl_coef,
                                std::uint64_t pair_seed, std::vector<double>& grad_out) {
  const int n_groups = static_cast<int>(mb_indices.size());
  const int k = cfg.group_size;
  const std::size_t n_params = params.values.size();
  std::vector<std::vector<double>> lane_grad(kGradLanes);
  std::vector<double> group_loss(n_groups, 0.0);
  std::vector<double> group_kl(n_groups, 0.0);

  const auto process_lane = [&](int lane) {
    if (lane >= n_groups) return;
    auto& grad = lane_grad[lane];
    grad.assign(n_params, 0.0);
    for (int gi = lane; gi < n_groups; gi += kGradLanes) {
      const RolloutGroup& group = entries[mb_indices[gi]].group;
      const std::vector<int>& prompt = entries[mb_indices[gi]].problem.prompt_tokens;
      std::vector<SequenceEval> evals;
      evals.reserve(k);
      std::vector<double> lp(k);
      for (int i = 0; i < k; ++i) {
        evals.emplace_back(params, prompt, group.records[i].tokens);
        lp[i] = evals.back().total_logprob();
      }
      GroupLoss gl;
      if (is_pg_objective(cfg.objective.objective)) {
        std::vector<double> rewards(k);
        for (int i = 0; i < k; ++i) rewards[i] = group.records[i].reward;
        const std::vector<double> adv = grpo_advantage(rewards);
        std::vector<std::vector<double>> lp_tokens(k);
        std::vector<std::vector<double>> lp_old_tokens(k);
        for (int i = 0; i < k; ++i) {
          lp_tokens[i] = evals[i].per_token_logprobs();
          lp_old_tokens[i] = group.records[i].per_token_logprob_old;
        }
        gl = clipped_pg_loss(group, lp_tokens, lp_old_tokens, adv, cfg.pg_clip_low,
                             cfg.pg_clip_high, cfg.pg_norm);
        if (kl_coef != 0.0) {
          for (int i = 0; i < k; ++i) {
            const double u = lp[i] - group.records[i].logprob_old;
            gl.value += kl_coef * (std::expm1(u) - u) / k;
            const double per_token = kl_coef * std::expm1(u) / k;
            for (double& w : gl.grad_wrt_logprob_tokens[i]) w += per_token;
          }
        }
        for (int i = 0; i < k; ++i) {
          evals[i].accumulate_grad(gl.grad_wrt_logprob_tokens[i], 1.0, grad);
        }
      } else {
        gl = rence_loss(group, lp, kl_coef, cfg.objective, derive_seed(pair_seed, std::uint64_t(gi)));
        for (int i = 0; i < k; ++i) {
          const double c = gl.grad_wrt_logprob_theta[i];
          if (c == 0.0) continue;
          const std::vector<double> ones(group.records[i].tokens.size(), 1.0);
          evals[i].accumulate_grad(ones, c, grad);
        }
      }
      group_loss[gi] = gl.value;
      double kl_sum = 0.0;
      for (int i = 0; i < k; ++i) kl_sum += kl_estimate(lp[i], group.records[i].logprob_old);
      group_kl[gi] = kl_sum;
    }
  };
  run_on_threads(cfg.threads, kGradLanes, process_lane);

  StepScalars out;
  for (int gi = 0; gi < n_groups; ++gi) {
    out.loss += group_loss[gi];
    out.kl_mean += group_kl[gi];
  }
  out.loss /= n_groups;
  out.kl_mean /= static_cast<double>(n_groups) * k;
  grad_out.assign(n_params, 0.0);
  const double inv_groups = 1.0 / n_groups;
  for (int lane = 0; lane < kGradLanes && lane < n_groups; ++lane) {
    const auto& g = lane_grad[lane];
    for (std::size_t i = 0; i < n_params; ++i) grad_out[i] += g[i] * inv_groups;
  }
  if (!std::isfinite(out.loss)) out.finite = false;
  return out;
}

json group_to_json(const RolloutGroup& g) {
  json j;
  j["prompt_id"] = g.prompt_id;
  j["r_max"] = g.r_max;
  j["rho"] = g.rho;
  j["pos"] = g.positive_indices;
  j["neg"] = g.negative_indices;
  json recs = json::array();
  for (const auto& r : g.records) {
    json rj;
    rj["tokens"] = r.tokens;
    rj["reward"] = r.reward;
    rj["lp_old"] = r.logprob_old;
    rj["ptl_old"] = r.per_token_logprob_old;
    rj["len"] = r.length;
    recs.push_back(std::move(rj));
  }
  j["records"] = std::move(recs);
  return j;
}

RolloutGroup group_from_json(const json& j) {
  RolloutGroup g;
  g.prompt_id = j.at("prompt_id").get<std::string>();
  g.r_max = j.at("r_max").get<double>();
  g.rho = j.at("rho").get<double>();
  g.positive_indices = j.at("pos").get<std::vector<int>>();
  g.negative_indices = j.at("neg").get<std::vector<int>>();
  for (const auto& rj : j.at("records")) {
    RolloutRecord r;
    r.tokens = rj.at("tokens").get<std::vector<int>>();
    r.reward = rj.at("reward").get<double>();
    r.logprob_old = rj.at("lp_old").get<double>();
    r.per_token_logprob_old = rj.at("ptl_old").get<std::vector<double>>();
    r.length = rj.at("len").get<int>();
    g.records.push_back(std::move(r));
  }
  return g;
}

}  // namespace

const char* to_string(PolicyInit i) { return i == PolicyInit::random ? "random" : "format_primed"; }

PolicyInit policy_init_from_string(const std::string& s) {
  if (s == "random") return PolicyInit::random;
  if (s == "format_primed") return PolicyInit::format_primed;
  throw std::invalid_argument("unknown policy init: " + s);
}

PolicyParams make_initial_params(const ModelConfig& model, const TokenTable& table,
                                 std::uint64_t seed) {
  ArchDescriptor arch;
  arch.mode = model.mode;
  arch.vocab_size = table.size();
  arch.max_len = model.max_len;
  arch.embed_dim = model.embed_dim;
  arch.n_layers = model.n_layers;
  arch.hidden_dim = model.hidden_dim;
  arch.eos_id = table.eos_id;
  if (model.mode == PolicyMode::neural && model.init == PolicyInit::format_primed) {
    return init_params_markov(arch, format_transition_logits(table), seed);
  }
  return init_params(arch, seed, model.init_std);
}

void validate(const TrainConfig& c) {
  validate(c.filter);
  if (c.group_size < 1) throw std::invalid_argument("group_size must be >= 1");
  if (is_pg_objective(c.objective.objective) && c.group_size < 2) {
    throw std::invalid_argument("policy-gradient objectives need group_size >= 2");
  }
  if (c.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (c.minibatch_size < 1 || c.batch_size % c.minibatch_size != 0) {
    throw std::invalid_argument("batch_size must be divisible by minibatch_size");
  }
  if (c.n_update < 1) throw std::invalid_argument("n_update must be >= 1");
  if (!(c.learning_rate >= 0.0)) throw std::invalid_argument("learning_rate must be nonnegative");
  if (!(c.adam_beta1 >= 0.0 && c.adam_beta1 < 1.0 && c.adam_beta2 >= 0.0 && c.adam_beta2 < 1.0)) {
    throw std::invalid_argument("adam betas must lie in [0, 1)");
  }
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be nonnegative");
  if (!(c.grad_clip_norm > 0.0)) throw std::invalid_argument("grad_clip_norm must be positive");
  if (!(c.rollout_temperature >= 0.0)) throw std::invalid_argument("rollout_temperature must be nonnegative");
  if (c.max_iterations < 1) throw std::invalid_argument("max_iterations must be >= 1");
  if (c.threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (!(c.objective.beta > 0.0)) throw std::invalid_argument("objective beta must be positive");
  if (!(c.objective.alpha >= 0.0)) throw std::invalid_argument("objective alpha must be nonnegative");
  if (c.kl.adaptive && !(c.kl.kl_coef0 > 0.0 && c.kl.target_kl > 0.0 && c.kl.horizon > 0)) {
    throw std::invalid_argument("adaptive KL needs positive kl_coef0, target_kl and horizon");
  }
  if (!c.kl.adaptive && !(c.kl.kl_coef0 >= 0.0)) {
    throw std::invalid_argument("fixed KL coefficient must be nonnegative");
  }
  if (is_pg_objective(c.objective.objective) &&
      !(c.pg_clip_low > 0.0 && c.pg_clip_low < 1.0 && c.pg_clip_high > 0.0 && c.pg_clip_high < 1.0)) {
    throw std::invalid_argument("pg clip thresholds must lie in (0, 1)");
  }
}

json metrics_to_json(const IterationMetrics& m, bool include_volatile) {
  json j;
  j["iteration"] = m.iteration;
  j["mean_reward"] = m.mean_reward;
  j["mean_rho"] = m.mean_rho;
  j["accepted"] = m.accepted;
  j["mastered"] = m.mastered;
  j["rejected"] = m.rejected;
  j["sampled_prompts"] = m.sampled_prompts;
  j["from_cache"] = m.from_cache;
  j["frac_rmax_partial"] = m.frac_rmax_partial;
  j["loss_first"] = m.loss_first;
  j["loss_last"] = m.loss_last;
  j["loss_mean"] = m.loss_mean;
  j["mean_kl"] = m.mean_kl;
  j["kl_coef"] = m.kl_coef;
  j["grad_norm"] = m.grad_norm;
  j["mean_resp_len"] = m.mean_resp_len;
  j["max_resp_len"] = m.max_resp_len;
  if (include_volatile) j["wall_seconds"] = m.wall_seconds;
  return j;
}

TrainResult train(const TrainConfig& config, const std::vector<Problem>& dataset,
                  const PolicyParams& initial_params, const TokenTable& table,
                  const TrainHooks& hooks, const ResumeState* resume) {
  validate(config);
  if (dataset.empty()) throw std::invalid_argument("empty dataset");
  if (!hooks.reward_override && initial_params.arch.vocab_size != table.size()) {
    throw std::invalid_argument("policy vocabulary does not match token table");
  }

  PolicyParams params = initial_params;
  const std::size_t n_params = params.values.size();
  std::vector<double> adam_m(n_params, 0.0), adam_v(n_params, 0.0);
  long long adam_step = 0;
  KlControllerState kl_state{config.kl.kl_coef0, config.kl.target_kl, config.kl.horizon,
                             config.kl.clip_width};
  const int sync_interval = config.anchor_sync_interval > 0 ? config.anchor_sync_interval
                                                            : config.n_update;
  int updates_since_sync = sync_interval;  // forces a sync at the first iteration
  PromptPoolState pool = make_prompt_pool(dataset, derive_seed(config.root_seed, "data"));
  PolicyParams anchor = params;
  int start_iter = 0;

  std::unordered_map<std::string, const Problem*> by_id;
  for (const auto& p : pool.dataset) by_id[p.prompt_id] = &p;

  if (resume != nullptr) {
    const json& meta = resume->meta;
    start_iter = meta.at("iteration").get<int>();
    adam_step = meta.at("adam_step").get<long long>();
    updates_since_sync = meta.at("updates_since_sync").get<int>();
    const json& klj = meta.at("kl");
    kl_state.kl_coef = klj.at("kl_coef").get<double>();
    kl_state.target_kl = klj.at("target_kl").get<double>();
    kl_state.horizon = klj.at("horizon").get<std::int64_t>();
    kl_state.clip_width = klj.at("clip_width").get<double>();
    const json& pj = meta.at("pool");
    restore_pool_position(pool, pj.at("consumed_epochs").get<int>(),
                          pj.at("cursor").get<std::size_t>());
    for (const auto& id : pj.at("mastered")) pool.mastered.insert(id.get<std::string>());
    for (const auto& cj : pj.at("cache")) {
      RolloutGroup g = group_from_json(cj);
      const auto it = by_id.find(g.prompt_id);
      if (it == by_id.end()) throw std::runtime_error("cached prompt not in dataset: " + g.prompt_id);
      pool.cache.push_back(BatchEntry{*it->second, std::move(g)});
    }
    if (resume->adam_m.size() != n_params || resume->adam_v.size() != n_params) {
      throw std::runtime_error("resume optimizer state does not match parameter count");
    }
    adam_m = resume->adam_m;
    adam_v = resume->adam_v;
    if (meta.contains("anchor_values")) {
      anchor.values = meta.at("anchor_values").get<std::vector<double>>();
    }
  }

  const RewardFn reward_fn =
      hooks.reward_override ? hooks.reward_override : make_task_reward_fn(table);

  TrainResult result;
  const std::uint64_t rollout_seed = derive_seed(config.root_seed, "rollout");
  const std::uint64_t update_seed = derive_seed(config.root_seed, "update");
  const std::uint64_t pair_seed = derive_seed(config.root_seed, "pair");

  const auto build_resume = [&](int next_iter) {
    ResumeState rs;
    json meta;
    meta["iteration"] = next_iter;
    meta["adam_step"] = adam_step;
    meta["updates_since_sync"] = updates_since_sync;
    meta["kl"] = {{"kl_coef", kl_state.kl_coef},
                  {"target_kl", kl_state.target_kl},
                  {"horizon", kl_state.horizon},
                  {"clip_width", kl_state.clip_width}};
    json pj;
    pj["consumed_epochs"] = pool.consumed_epochs;
    pj["cursor"] = pool.cursor;
    pj["mastered"] = json::array();
    for (const auto& id : pool.mastered) pj["mastered"].push_back(id);
    pj["cache"] = json::array();
    for (const auto& e : pool.cache) pj["cache"].push_back(group_to_json(e.group));
    meta["pool"] = std::move(pj);
    if (updates_since_sync < sync_interval) meta["anchor_values"] = anchor.values;
    rs.meta = std::move(meta);
    rs.adam_m = adam_m;
    rs.adam_v = adam_v;
    return rs;
  };

  int iter = start_iter;
  for (; iter < config.max_iterations; ++iter) {
    const auto wall_start = std::chrono::steady_clock::now();
    if (updates_since_sync >= sync_interval) {
      anchor = clone_params(params);
      updates_since_sync = 0;
      if (config.cache_policy == CachePolicy::discard_on_sync) pool.cache.clear();
    }
    const double kl_coef = config.kl.adaptive ? kl_state.kl_coef : config.kl.kl_coef0;

    TrainBatch batch;
    try {
      batch = assemble_batch(pool, anchor, config.batch_size, config.group_size,
                             config.rollout_temperature, derive_seed(rollout_seed, std::uint64_t(iter)),
                             config.filter, reward_fn, config.threads);
    } catch (const std::runtime_error& e) {
      if (std::string(e.what()).find("insufficient trainable prompts") != std::string::npos) {
        result.status = TrainStatus::pool_exhausted;
        result.stop_reason = e.what();
        break;
      }
      throw;
    }

    IterationMetrics mm;
    mm.iteration = iter;
    mm.mean_reward = batch.stats.mean_reward;
    mm.accepted = batch.stats.accepted;
    mm.mastered = batch.stats.mastered_new;
    mm.rejected = batch.stats.rejected;
    mm.sampled_prompts = batch.stats.sampled_prompts;
    mm.from_cache = batch.stats.from_cache;
    mm.kl_coef = kl_coef;
    {
      double rho_sum = 0.0, len_sum = 0.0;
      long partial = 0, n_records = 0;
      for (const auto& e : batch.entries) {
        rho_sum += e.group.rho;
        if (quantize_reward(e.group.r_max) < quantize_reward(1.0)) ++partial;
        for (const auto& r : e.group.records) {
          len_sum += r.length;
          mm.max_resp_len = std::max(mm.max_resp_len, r.length);
          ++n_records;
        }
      }
      mm.mean_rho = rho_sum / batch.entries.size();
      mm.frac_rmax_partial = static_cast<double>(partial) / batch.entries.size();
      mm.mean_resp_len = len_sum / n_records;
    }

    std::vector<int> order(config.batch_size);
    std::iota(order.begin(), order.end(), 0);
    {
      Rng rng(derive_seed(update_seed, std::uint64_t(iter)));
      rng.shuffle(order);
    }
    const int n_mb = config.batch_size / config.minibatch_size;
    std::vector<double> grad(n_params);
    double loss_sum = 0.0, grad_norm_sum = 0.0, last_kl = 0.0;
    for (int step = 0; step < config.n_update; ++step) {
      const int mb = step % n_mb;
      const std::span<const int> mb_indices(order.data() + std::size_t(mb) * config.minibatch_size,
                                            config.minibatch_size);
      const StepScalars sc =
          minibatch_loss_grad(config, params, batch.entries, mb_indices, kl_coef,
                              derive_seed(pair_seed, std::uint64_t(iter) * 10007u + std::uint64_t(step)),
                              grad);
      double norm_sq = 0.0;
      for (const double g : grad) norm_sq += g * g;
      const double gnorm = std::sqrt(norm_sq);
      if (!sc.finite || !std::isfinite(gnorm)) {
        if (hooks.on_checkpoint) hooks.on_checkpoint(iter, params, build_resume(iter));
        std::ostringstream msg;
        msg << "non-finite loss or gradient at iteration " << iter << " step " << step;
        throw std::runtime_error(msg.str());
      }
      if (step == 0) mm.loss_first = sc.loss;
      mm.loss_last = sc.loss;
      loss_sum += sc.loss;
      grad_norm_sum += gnorm;
      last_kl = sc.kl_mean;

      const double scale = gnorm > config.grad_clip_norm ? config.grad_clip_norm / gnorm : 1.0;
      ++adam_step;
      const double bc1 = 1.0 - std::pow(config.adam_beta1, static_cast<double>(adam_step));
      const double bc2 = 1.0 - std::pow(config.adam_beta2, static_cast<double>(adam_step));
      for (std::size_t i = 0; i < n_params; ++i) {
        const double g = grad[i] * scale;
        adam_m[i] = config.adam_beta1 * adam_m[i] + (1.0 - config.adam_beta1) * g;
        adam_v[i] = config.adam_beta2 * adam_v[i] + (1.0 - config.adam_beta2) * g * g;
        const double mhat = adam_m[i] / bc1;
        const double vhat = adam_v[i] / bc2;
        params.values[i] -=
            config.learning_rate * (mhat / (std::sqrt(vhat) + 1e-8) + config.weight_decay * params.values[i]);
      }
      ++updates_since_sync;
    }
    mm.loss_mean = loss_sum / config.n_update;
    mm.grad_norm = grad_norm_sum / config.n_update;
    mm.mean_kl = last_kl;
    if (config.kl.adaptive) {
      kl_state = update_kl_coef(kl_state, last_kl,
                                static_cast<std::int64_t>(config.batch_size) * config.group_size);
    }
    mm.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    result.metrics.push_back(mm);
    if (hooks.on_metrics) hooks.on_metrics(mm);
    if (hooks.on_checkpoint && config.checkpoint_interval > 0 &&
        (iter + 1) % config.checkpoint_interval == 0 && iter + 1 < config.max_iterations) {
      hooks.on_checkpoint(iter + 1, params, build_resume(iter + 1));
    }
  }

  result.params = std::move(params);
  result.iterations_run = iter - start_iter;
  if (hooks.on_checkpoint) hooks.on_checkpoint(iter, result.params, build_resume(iter));
  return result;
}

TrainConfig configure_preset(const std::string& name) {
  TrainConfig c;  // defaults are the desk-scale flagship configuration
  c.preset_name = name;
  if (name == "rence") {
    // defaults
  } else if (name == "grpo") {
    c.objective.objective = ObjectiveKind::grpo;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
    c.filter = FilterConfig{0.0, 1.0, 1.0};
    c.n_update = 4;
    c.pg_clip_low = 0.2;
    c.pg_clip_high = 0.2;
    c.pg_norm = PgNorm::sequence;
  } else if (name == "dapo") {
    c.objective.objective = ObjectiveKind::dapo_pg;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
    c.filter = FilterConfig{0.0, 0.99, 1.0};
    c.pg_clip_low = 0.2;
    c.pg_clip_high = 0.28;
    c.pg_norm = PgNorm::token;
    c.kl = KlConfig{false, 0.0, 0.01, 3200, 0.2};
  } else if (name == "semi_online_dpo") {
    c.objective.objective = ObjectiveKind::group_dpo;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
    c.filter = FilterConfig{0.0, 0.99, 1.0};
    c.kl = KlConfig{false, 0.0, 0.01, 3200, 0.2};
  } else if (name == "rence_no_kl") {
    c.kl = KlConfig{false, 0.0, 0.01, 3200, 0.2};
  } else if (name == "rence_no_margin") {
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
  } else if (name == "rence_const_margin") {
    c.objective.margin_mode = MarginMode::constant;
  } else if (name == "rence_iterative") {
    c.kl = KlConfig{false, 0.0, 0.01, 3200, 0.2};
    c.batch_size = 512;
    c.n_update = 128;
    c.max_iterations = 25;
  } else if (name == "softmax_variant") {
    c.objective.objective = ObjectiveKind::softmax;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
  } else if (name == "pairwise_random") {
    c.objective.objective = ObjectiveKind::pairwise_random;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
  } else if (name == "pairwise_all") {
    c.objective.objective = ObjectiveKind::pairwise_all;
    c.objective.margin_mode = MarginMode::none;
    c.objective.alpha = 0.0;
  } else {
    std::ostringstream msg;
    msg << "unknown preset '" << name << "'; valid presets:";
    for (const auto& p : preset_names()) msg << " " << p;
    throw std::invalid_argument(msg.str());
  }
  return c;
}

std::vector<std::string> preset_names() {
  return {"rence",         "grpo",          "dapo",
          "semi_online_dpo", "rence_no_kl",   "rence_no_margin",
          "rence_const_margin", "rence_iterative", "softmax_variant",
          "pairwise_random", "pairwise_all"};
}

EvalReport evaluate_with_sampler(const SampleFn& sampler, const std::vector<Problem>& eval_set,
                                 int repeats, double temperature, std::uint64_t seed,
                                 const TokenTable& table, int threads) {
  if (eval_set.empty()) throw std::invalid_argument("empty eval set");
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  const int n = static_cast<int>(eval_set.size());
  std::vector<std::vector<double>> rewards(n, std::vector<double>(repeats, 0.0));
  run_on_threads(threads, n * repeats, [&](int job) {
    const int pi = job / repeats;
    const int r = job % repeats;
    const std::uint64_t s = derive_seed(derive_seed(seed, std::uint64_t(r)), std::uint64_t(pi));
    const std::vector<int> gen = sampler(eval_set[pi], temperature, s);
    rewards[pi][r] = reward(eval_set[pi], gen, table).reward;
  });
  EvalReport out;
  out.per_repeat_pass1.assign(repeats, 0.0);
  for (int r = 0; r < repeats; ++r) {
    long passed = 0;
    for (int pi = 0; pi < n; ++pi) {
      if (rewards[pi][r] == 1.0) ++passed;
    }
    out.per_repeat_pass1[r] = static_cast<double>(passed) / n;
    out.mean += out.per_repeat_pass1[r];
  }
  out.mean /= repeats;
  double var = 0.0;
  for (const double p : out.per_repeat_pass1) var += (p - out.mean) * (p - out.mean);
  out.stddev = std::sqrt(var / repeats);
  out.per_problem.reserve(n);
  for (int pi = 0; pi < n; ++pi) {
    out.per_problem.push_back(EvalReport::Row{eval_set[pi].prompt_id, rewards[pi]});
  }
  return out;
}

EvalReport evaluate(const PolicyParams& params, const std::vector<Problem>& eval_set, int repeats,
                    double temperature, std::uint64_t seed, const TokenTable& table, int threads) {
  const SampleFn sampler = [&params](const Problem& p, double temp, std::uint64_t s) {
    return sample(params, p.prompt_tokens, temp, s).gen_tokens;
  };
  return evaluate_with_sampler(sampler, eval_set, repeats, temperature, seed, table, threads);
}

}  // namespace rence
