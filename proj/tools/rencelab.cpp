// SPDX-License-Identifier: Apache-2.0
//
// rencelab: dataset generation, training, evaluation and ablation sweeps for
// the group-contrastive RL laboratory. Exit codes: 0 success, 1 usage error,
// 2 runtime failure.
#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "rence/checkpoint.hpp"
#include "rence/data_engine.hpp"
#include "rence/rng.hpp"
#include "rence/run_config.hpp"
#include "rence/sha256.hpp"
#include "rence/tasks.hpp"
#include "rence/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace rence;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string default_tokens_path(const std::string& dataset_path) {
  return (fs::path(dataset_path).parent_path() / "tokens.json").string();
}

TokenTable load_table(const std::string& tokens_flag, const std::string& dataset_path) {
  const std::string path = tokens_flag.empty() ? default_tokens_path(dataset_path) : tokens_flag;
  if (fs::exists(path)) return load_token_table(path);
  if (!tokens_flag.empty()) throw std::runtime_error("token table not found: " + path);
  return TokenTable::standard();
}

void apply_set_flags(TrainConfig& cfg, const std::vector<std::string>& sets) {
  for (const std::string& kv : sets) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got: " + kv);
    try {
      apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string out;
  std::string tokens;
  std::string families = "add,sub,mul_mod,chain";
  int min_digits = 1;
  int max_digits = 2;
  int count = 5000;
  std::uint64_t seed = 1;
};

int cmd_gen_data(const GenDataArgs& args) {
  DatasetSpec spec;
  spec.families.clear();
  for (const auto& f : split_csv(args.families)) spec.families.push_back(task_family_from_string(f));
  spec.min_digits = args.min_digits;
  spec.max_digits = args.max_digits;
  spec.count = args.count;
  spec.seed = args.seed;
  const TokenTable table = TokenTable::standard();
  const auto problems = generate_dataset(spec, table);
  if (!fs::path(args.out).parent_path().empty()) {
    fs::create_directories(fs::path(args.out).parent_path());
  }
  save_dataset_jsonl(args.out, problems);
  const std::string tokens_path = args.tokens.empty() ? default_tokens_path(args.out) : args.tokens;
  save_token_table(tokens_path, table);

  std::map<std::string, int> by_tag;
  for (const auto& p : problems) by_tag[p.difficulty_tag] += 1;
  std::cout << "wrote " << problems.size() << " problems to " << args.out << "\n";
  std::cout << "token table: " << tokens_path << " (" << table.size() << " tokens)\n";
  std::cout << "dataset sha256: " << sha256_file_hex(args.out) << "\n";
  for (const auto& [tag, n] : by_tag) std::cout << "  " << tag << ": " << n << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string tokens;
  std::string run_dir;
  std::string run_id;
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;
  std::string resume;
  bool quiet = false;
};

TrainConfig build_train_config(const std::string& preset, const std::string& config_file,
                               const std::vector<std::string>& sets) {
  if (!preset.empty() && !config_file.empty()) {
    throw UsageError("--preset and --config conflict; pass one of them");
  }
  TrainConfig cfg;
  try {
    cfg = !config_file.empty() ? load_config_file(config_file, TrainConfig{})
                               : configure_preset(preset.empty() ? "rence" : preset);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  apply_set_flags(cfg, sets);
  return cfg;
}

std::string resolve_run_dir(const std::string& flag, const std::string& run_id) {
  if (!flag.empty()) return flag;
  const char* env = std::getenv("RENCELAB_RUN_DIR");
  if (env != nullptr && *env != '\0') return (fs::path(env) / run_id).string();
  throw UsageError("--run-dir missing and RENCELAB_RUN_DIR is not set");
}

int cmd_train(const TrainArgs& args) {
  TrainConfig cfg = build_train_config(args.preset, args.config_file, args.sets);
  validate(cfg);
  const TokenTable table = load_table(args.tokens, args.dataset);
  const auto dataset = load_dataset_jsonl(args.dataset, table);

  const std::string run_id =
      !args.run_id.empty()
          ? args.run_id
          : (cfg.preset_name.empty() ? "run" : cfg.preset_name) + "-seed" + std::to_string(cfg.root_seed);
  const std::string run_dir = resolve_run_dir(args.run_dir, run_id);
  fs::create_directories(fs::path(run_dir) / "checkpoints");

  const std::string config_text = serialize_config(cfg);
  {
    std::ofstream out(fs::path(run_dir) / "config.txt");
    out << config_text;
  }
  RunManifest manifest;
  manifest.run_id = run_id;
  manifest.config_text = config_text;
  manifest.dataset_sha256 = sha256_file_hex(args.dataset);
  const std::string tokens_path =
      args.tokens.empty() ? default_tokens_path(args.dataset) : args.tokens;
  manifest.token_table_sha256 =
      fs::exists(tokens_path) ? sha256_file_hex(tokens_path) : sha256_hex("builtin");
  manifest.started_at = iso8601_utc_now();
  const std::string manifest_path = (fs::path(run_dir) / "manifest.json").string();
  write_manifest(manifest_path, manifest);

  PolicyParams initial;
  ResumeState resume_state;
  const ResumeState* resume_ptr = nullptr;
  if (!args.resume.empty()) {
    std::string stem = args.resume;
    if (stem.size() > 4 && stem.substr(stem.size() - 4) == ".pol") stem.resize(stem.size() - 4);
    initial = load_policy(stem + ".pol");
    const OptSidecar sidecar = load_sidecar(stem + ".opt");
    resume_state.meta = sidecar.meta;
    resume_state.adam_m = sidecar.adam_m;
    resume_state.adam_v = sidecar.adam_v;
    resume_ptr = &resume_state;
  } else {
    initial = make_initial_params(cfg.model, table, derive_seed(cfg.root_seed, "init"));
    initial.meta = "rencelab;run_id=" + run_id + ";created=" + manifest.started_at;
  }

  std::ofstream metrics_out(fs::path(run_dir) / "metrics.jsonl",
                            resume_ptr ? std::ios::app : std::ios::out);
  std::ofstream timing_out(fs::path(run_dir) / "timing.jsonl",
                           resume_ptr ? std::ios::app : std::ios::out);
  std::cout << "run " << run_id << " -> " << run_dir << " (cache policy "
            << to_string(cfg.cache_policy) << ")\n";

  TrainHooks hooks;
  hooks.on_metrics = [&](const IterationMetrics& m) {
    metrics_out << metrics_to_json(m, false).dump() << "\n";
    metrics_out.flush();
    json tj;
    tj["iteration"] = m.iteration;
    tj["wall_seconds"] = m.wall_seconds;
    timing_out << tj.dump() << "\n";
    timing_out.flush();
    if (!args.quiet) {
      std::printf(
          "iter %4d  reward=%.3f rho=%.3f loss=%.4f->%.4f kl=%.5f coef=%.5f len=%.1f "
          "acc/mast/rej=%d/%d/%d  %.1fs\n",
          m.iteration, m.mean_reward, m.mean_rho, m.loss_first, m.loss_last, m.mean_kl, m.kl_coef,
          m.mean_resp_len, m.accepted, m.mastered, m.rejected, m.wall_seconds);
    }
  };
  PromptPoolState mastered_view = make_prompt_pool(dataset, 0);
  hooks.on_checkpoint = [&](int next_iter, const PolicyParams& params, const ResumeState& rs) {
    char name[32];
    std::snprintf(name, sizeof(name), "ckpt_%06d", next_iter);
    const std::string stem = (fs::path(run_dir) / "checkpoints" / name).string();
    save_policy(stem + ".pol", params);
    OptSidecar sidecar;
    sidecar.meta = rs.meta;
    sidecar.adam_m = rs.adam_m;
    sidecar.adam_v = rs.adam_v;
    save_sidecar(stem + ".opt", sidecar);
    mastered_view.mastered.clear();
    for (const auto& id : rs.meta.at("pool").at("mastered")) {
      mastered_view.mastered.insert(id.get<std::string>());
    }
    save_mastered((fs::path(run_dir) / "mastered.jsonl").string(), mastered_view);
  };

  const TrainResult result = train(cfg, dataset, initial, table, hooks, resume_ptr);
  save_policy((fs::path(run_dir) / "checkpoints" / "ckpt_final.pol").string(), result.params);

  manifest.finished_at = iso8601_utc_now();
  json summary;
  summary["status"] = result.status == TrainStatus::completed ? "completed" : "pool_exhausted";
  summary["iterations_run"] = result.iterations_run;
  if (!result.stop_reason.empty()) summary["stop_reason"] = result.stop_reason;
  if (!result.metrics.empty()) {
    summary["final_metrics"] = metrics_to_json(result.metrics.back(), false);
  }
  manifest.final_summary = summary;
  write_manifest(manifest_path, manifest);
  if (result.status == TrainStatus::pool_exhausted) {
    std::cout << "training stopped early: " << result.stop_reason << "\n";
  }
  std::cout << "done; " << result.iterations_run << " iterations, final checkpoint at "
            << (fs::path(run_dir) / "checkpoints" / "ckpt_final.pol").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string tokens;
  int repeats = 4;
  double temperature = 0.7;
  std::uint64_t seed = 7;
  int threads = 2;
  std::string json_out;
};

json eval_report_json(const EvalReport& report, const std::vector<Problem>& problems,
                      const EvalArgs& args) {
  json j;
  j["repeats"] = args.repeats;
  j["temperature"] = args.temperature;
  j["seed"] = args.seed;
  j["pass1_mean"] = report.mean;
  j["pass1_std"] = report.stddev;
  j["per_repeat"] = report.per_repeat_pass1;
  std::map<std::string, std::pair<double, int>> by_tag;
  for (std::size_t i = 0; i < report.per_problem.size(); ++i) {
    double solved = 0.0;
    for (const double r : report.per_problem[i].rewards) solved += r == 1.0 ? 1.0 : 0.0;
    auto& agg = by_tag[problems[i].difficulty_tag];
    agg.first += solved / report.per_problem[i].rewards.size();
    agg.second += 1;
  }
  json tags = json::object();
  for (const auto& [tag, agg] : by_tag) {
    tags[tag] = {{"pass1", agg.first / agg.second}, {"count", agg.second}};
  }
  j["per_tag"] = tags;
  json rows = json::array();
  for (const auto& row : report.per_problem) {
    rows.push_back({{"prompt_id", row.prompt_id}, {"rewards", row.rewards}});
  }
  j["per_problem"] = rows;
  return j;
}

int cmd_eval(const EvalArgs& args) {
  const TokenTable table = load_table(args.tokens, args.dataset);
  const PolicyParams params = load_policy(args.checkpoint);
  if (params.arch.vocab_size != table.size() || params.arch.eos_id != table.eos_id) {
    throw std::runtime_error("checkpoint architecture does not match the token table");
  }
  const auto problems = load_dataset_jsonl(args.dataset, table);
  const EvalReport report =
      evaluate(params, problems, args.repeats, args.temperature, args.seed, table, args.threads);
  const json j = eval_report_json(report, problems, args);

  std::printf("pass@1 (avg@%d) at temperature %.2f: %.1f (%.1f)\n", args.repeats, args.temperature,
              100.0 * report.mean, 100.0 * report.stddev);
  std::printf("  per repeat:");
  for (const double p : report.per_repeat_pass1) std::printf(" %.1f", 100.0 * p);
  std::printf("\n  per difficulty tag:\n");
  for (const auto& [tag, v] : j.at("per_tag").items()) {
    std::printf("    %-12s %.1f  (n=%d)\n", tag.c_str(), 100.0 * v.at("pass1").get<double>(),
                v.at("count").get<int>());
  }
  if (!args.json_out.empty()) {
    std::ofstream out(args.json_out);
    if (!out) throw std::runtime_error("cannot write eval report: " + args.json_out);
    out << j.dump(2) << "\n";
    std::cout << "json report: " << args.json_out << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string presets;
  std::string dataset;
  std::string eval_dataset;
  std::string tokens;
  std::string run_dir;
  std::string seeds = "1,2,3";
  std::vector<std::string> sets;
  int repeats = 4;
  double eval_temperature = 0.7;
};

struct AblateRow {
  std::string preset;
  std::uint64_t seed = 0;
  std::string status;
  double pass1_mean = 0.0;
  double pass1_std = 0.0;
  int iterations = 0;
};

int cmd_ablate(const AblateArgs& args) {
  const auto preset_list = split_csv(args.presets);
  if (preset_list.empty()) throw UsageError("--presets must name at least one preset");
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_csv(args.seeds)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) throw UsageError("--seeds must name at least one seed");
  for (const auto& p : preset_list) (void)build_train_config(p, "", {});  // fail fast on bad names

  const TokenTable table = load_table(args.tokens, args.dataset);
  const auto train_set = load_dataset_jsonl(args.dataset, table);
  const auto eval_set = load_dataset_jsonl(args.eval_dataset, table);
  fs::create_directories(args.run_dir);

  std::vector<AblateRow> rows;
  for (const auto& preset : preset_list) {
    for (const std::uint64_t seed : seeds) {
      AblateRow row;
      row.preset = preset;
      row.seed = seed;
      try {
        TrainConfig cfg = build_train_config(preset, "", args.sets);
        cfg.root_seed = seed;
        validate(cfg);
        const PolicyParams initial =
            make_initial_params(cfg.model, table, derive_seed(cfg.root_seed, "init"));
        const TrainResult result = train(cfg, train_set, initial, table);
        const std::string arm_dir =
            (fs::path(args.run_dir) / preset / ("seed" + std::to_string(seed))).string();
        fs::create_directories(arm_dir);
        {
          std::ofstream mo(fs::path(arm_dir) / "metrics.jsonl");
          for (const auto& m : result.metrics) mo << metrics_to_json(m, false).dump() << "\n";
        }
        save_policy((fs::path(arm_dir) / "ckpt_final.pol").string(), result.params);
        const EvalReport report = evaluate(result.params, eval_set, args.repeats,
                                           args.eval_temperature, derive_seed(seed, "eval"), table,
                                           cfg.threads);
        row.status = result.status == TrainStatus::completed ? "completed" : "pool_exhausted";
        row.pass1_mean = report.mean;
        row.pass1_std = report.stddev;
        row.iterations = result.iterations_run;
      } catch (const std::exception& e) {
        row.status = std::string("failed: ") + e.what();
      }
      rows.push_back(row);
      std::printf("%-20s seed=%llu %-14s pass@1=%.1f (%.1f)\n", row.preset.c_str(),
                  static_cast<unsigned long long>(row.seed), row.status.c_str(),
                  100.0 * row.pass1_mean, 100.0 * row.pass1_std);
    }
  }

  const std::string csv_path = (fs::path(args.run_dir) / "comparison.csv").string();
  {
    std::ofstream csv(csv_path);
    csv << "preset,seed,status,pass1_mean,pass1_std,iterations\n";
    for (const auto& r : rows) {
      csv << r.preset << "," << r.seed << "," << (r.status.substr(0, 6) == "failed" ? "failed" : r.status)
          << "," << r.pass1_mean << "," << r.pass1_std << "," << r.iterations << "\n";
    }
  }
  json j = json::array();
  for (const auto& r : rows) {
    j.push_back({{"preset", r.preset},
                 {"seed", r.seed},
                 {"status", r.status},
                 {"pass1_mean", r.pass1_mean},
                 {"pass1_std", r.pass1_std},
                 {"iterations", r.iterations}});
  }
  {
    std::ofstream out(fs::path(args.run_dir) / "comparison.json");
    out << j.dump(2) << "\n";
  }

  std::printf("\n%-20s %10s\n", "preset", "pass@1");
  for (const auto& preset : preset_list) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows) {
      if (r.preset == preset && r.status.substr(0, 6) != "failed") {
        sum += r.pass1_mean;
        ++n;
      }
    }
    if (n > 0) {
      std::printf("%-20s %9.1f%%\n", preset.c_str(), 100.0 * sum / n);
    } else {
      std::printf("%-20s %10s\n", preset.c_str(), "failed");
    }
  }
  std::cout << "comparison table: " << csv_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale RL-from-verifiable-rewards laboratory"};
  app.require_subcommand(1);

  GenDataArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic arithmetic dataset");
  gen_cmd->add_option("--out", gen.out, "output dataset path (.jsonl)")->required();
  gen_cmd->add_option("--tokens", gen.tokens, "token table output path");
  gen_cmd->add_option("--families", gen.families, "comma list of add,sub,mul_mod,chain");
  gen_cmd->add_option("--min-digits", gen.min_digits);
  gen_cmd->add_option("--max-digits", gen.max_digits);
  gen_cmd->add_option("--count", gen.count);
  gen_cmd->add_option("--seed", gen.seed);

  TrainArgs tr;
  CLI::App* train_cmd = app.add_subcommand("train", "run a training configuration");
  train_cmd->add_option("--dataset", tr.dataset, "training dataset (.jsonl)")->required();
  train_cmd->add_option("--tokens", tr.tokens, "token table path");
  train_cmd->add_option("--run-dir", tr.run_dir, "run directory (or RENCELAB_RUN_DIR/<run-id>)");
  train_cmd->add_option("--run-id", tr.run_id);
  train_cmd->add_option("--preset", tr.preset, "configuration preset name");
  train_cmd->add_option("--config", tr.config_file, "key=value config file");
  train_cmd->add_option("--set", tr.sets, "override, e.g. --set filter.t_easy=0.99");
  train_cmd->add_option("--resume", tr.resume, "checkpoint stem (.pol/.opt) to resume from");
  train_cmd->add_flag("--quiet", tr.quiet);

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint: pass@1 (avg@repeats)");
  eval_cmd->add_option("--checkpoint", ev.checkpoint)->required();
  eval_cmd->add_option("--dataset", ev.dataset, "evaluation dataset (.jsonl)")->required();
  eval_cmd->add_option("--tokens", ev.tokens);
  eval_cmd->add_option("--repeats", ev.repeats);
  eval_cmd->add_option("--temperature", ev.temperature);
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--threads", ev.threads);
  eval_cmd->add_option("--json", ev.json_out, "JSON report output path");

  AblateArgs ab;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "run several presets on shared data/seeds");
  ablate_cmd->add_option("--presets", ab.presets, "comma list of preset names")->required();
  ablate_cmd->add_option("--dataset", ab.dataset)->required();
  ablate_cmd->add_option("--eval-dataset", ab.eval_dataset)->required();
  ablate_cmd->add_option("--tokens", ab.tokens);
  ablate_cmd->add_option("--run-dir", ab.run_dir)->required();
  ablate_cmd->add_option("--seeds", ab.seeds, "comma list of root seeds");
  ablate_cmd->add_option("--set", ab.sets, "config override applied to every arm");
  ablate_cmd->add_option("--repeats", ab.repeats);
  ablate_cmd->add_option("--eval-temperature", ab.eval_temperature);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen);
    if (train_cmd->parsed()) return cmd_train(tr);
    if (eval_cmd->parsed()) return cmd_eval(ev);
    if (ablate_cmd->parsed()) return cmd_ablate(ab);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
