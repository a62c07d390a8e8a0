// SPDX-License-Identifier: Apache-2.0
#include "rence/run_config.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rence {

using nlohmann::json;

namespace {

std::string fmt_double(double v) { return json(v).dump(); }

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

long long parse_int(const std::string& s) {
  std::size_t pos = 0;
  const long long v = std::stoll(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("not a boolean: " + s);
}

struct KeyBinding {
  const char* key;
  std::string (*get)(const TrainConfig&);
  void (*set)(TrainConfig&, const std::string&);
};

const std::vector<KeyBinding>& bindings() {
  static const std::vector<KeyBinding> kBindings = {
      {"objective.name",
       [](const TrainConfig& c) { return std::string(to_string(c.objective.objective)); },
       [](TrainConfig& c, const std::string& v) { c.objective.objective = objective_kind_from_string(v); }},
      {"objective.beta", [](const TrainConfig& c) { return fmt_double(c.objective.beta); },
       [](TrainConfig& c, const std::string& v) { c.objective.beta = parse_double(v); }},
      {"objective.alpha", [](const TrainConfig& c) { return fmt_double(c.objective.alpha); },
       [](TrainConfig& c, const std::string& v) { c.objective.alpha = parse_double(v); }},
      {"objective.margin_mode",
       [](const TrainConfig& c) { return std::string(to_string(c.objective.margin_mode)); },
       [](TrainConfig& c, const std::string& v) { c.objective.margin_mode = margin_mode_from_string(v); }},
      {"filter.t_hard", [](const TrainConfig& c) { return fmt_double(c.filter.t_hard); },
       [](TrainConfig& c, const std::string& v) { c.filter.t_hard = parse_double(v); }},
      {"filter.t_easy", [](const TrainConfig& c) { return fmt_double(c.filter.t_easy); },
       [](TrainConfig& c, const std::string& v) { c.filter.t_easy = parse_double(v); }},
      {"filter.t_master", [](const TrainConfig& c) { return fmt_double(c.filter.t_master); },
       [](TrainConfig& c, const std::string& v) { c.filter.t_master = parse_double(v); }},
      {"model.mode", [](const TrainConfig& c) { return std::string(to_string(c.model.mode)); },
       [](TrainConfig& c, const std::string& v) { c.model.mode = policy_mode_from_string(v); }},
      {"model.embed_dim", [](const TrainConfig& c) { return std::to_string(c.model.embed_dim); },
       [](TrainConfig& c, const std::string& v) { c.model.embed_dim = static_cast<int>(parse_int(v)); }},
      {"model.hidden_dim", [](const TrainConfig& c) { return std::to_string(c.model.hidden_dim); },
       [](TrainConfig& c, const std::string& v) { c.model.hidden_dim = static_cast<int>(parse_int(v)); }},
      {"model.n_layers", [](const TrainConfig& c) { return std::to_string(c.model.n_layers); },
       [](TrainConfig& c, const std::string& v) { c.model.n_layers = static_cast<int>(parse_int(v)); }},
      {"model.max_len", [](const TrainConfig& c) { return std::to_string(c.model.max_len); },
       [](TrainConfig& c, const std::string& v) { c.model.max_len = static_cast<int>(parse_int(v)); }},
      {"model.init_std", [](const TrainConfig& c) { return fmt_double(c.model.init_std); },
       [](TrainConfig& c, const std::string& v) { c.model.init_std = parse_double(v); }},
      {"model.init", [](const TrainConfig& c) { return std::string(to_string(c.model.init)); },
       [](TrainConfig& c, const std::string& v) { c.model.init = policy_init_from_string(v); }},
      {"kl.adaptive", [](const TrainConfig& c) { return fmt_bool(c.kl.adaptive); },
       [](TrainConfig& c, const std::string& v) { c.kl.adaptive = parse_bool(v); }},
      {"kl.coef0", [](const TrainConfig& c) { return fmt_double(c.kl.kl_coef0); },
       [](TrainConfig& c, const std::string& v) { c.kl.kl_coef0 = parse_double(v); }},
      {"kl.target", [](const TrainConfig& c) { return fmt_double(c.kl.target_kl); },
       [](TrainConfig& c, const std::string& v) { c.kl.target_kl = parse_double(v); }},
      {"kl.horizon", [](const TrainConfig& c) { return std::to_string(c.kl.horizon); },
       [](TrainConfig& c, const std::string& v) { c.kl.horizon = parse_int(v); }},
      {"kl.clip_width", [](const TrainConfig& c) { return fmt_double(c.kl.clip_width); },
       [](TrainConfig& c, const std::string& v) { c.kl.clip_width = parse_double(v); }},
      {"train.group_size", [](const TrainConfig& c) { return std::to_string(c.group_size); },
       [](TrainConfig& c, const std::string& v) { c.group_size = static_cast<int>(parse_int(v)); }},
      {"train.batch_size", [](const TrainConfig& c) { return std::to_string(c.batch_size); },
       [](TrainConfig& c, const std::string& v) { c.batch_size = static_cast<int>(parse_int(v)); }},
      {"train.minibatch_size", [](const TrainConfig& c) { return std::to_string(c.minibatch_size); },
       [](TrainConfig& c, const std::string& v) { c.minibatch_size = static_cast<int>(parse_int(v)); }},
      {"train.n_update", [](const TrainConfig& c) { return std::to_string(c.n_update); },
       [](TrainConfig& c, const std::string& v) { c.n_update = static_cast<int>(parse_int(v)); }},
      {"train.learning_rate", [](const TrainConfig& c) { return fmt_double(c.learning_rate); },
       [](TrainConfig& c, const std::string& v) { c.learning_rate = parse_double(v); }},
      {"train.adam_beta1", [](const TrainConfig& c) { return fmt_double(c.adam_beta1); },
       [](TrainConfig& c, const std::string& v) { c.adam_beta1 = parse_double(v); }},
      {"train.adam_beta2", [](const TrainConfig& c) { return fmt_double(c.adam_beta2); },
       [](TrainConfig& c, const std::string& v) { c.adam_beta2 = parse_double(v); }},
      {"train.weight_decay", [](const TrainConfig& c) { return fmt_double(c.weight_decay); },
       [](TrainConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
      {"train.grad_clip_norm", [](const TrainConfig& c) { return fmt_double(c.grad_clip_norm); },
       [](TrainConfig& c, const std::string& v) { c.grad_clip_norm = parse_double(v); }},
      {"train.rollout_temperature",
       [](const TrainConfig& c) { return fmt_double(c.rollout_temperature); },
       [](TrainConfig& c, const std::string& v) { c.rollout_temperature = parse_double(v); }},
      {"train.max_iterations", [](const TrainConfig& c) { return std::to_string(c.max_iterations); },
       [](TrainConfig& c, const std::string& v) { c.max_iterations = static_cast<int>(parse_int(v)); }},
      {"train.anchor_sync_interval",
       [](const TrainConfig& c) { return std::to_string(c.anchor_sync_interval); },
       [](TrainConfig& c, const std::string& v) { c.anchor_sync_interval = static_cast<int>(parse_int(v)); }},
      {"train.cache_policy",
       [](const TrainConfig& c) { return std::string(to_string(c.cache_policy)); },
       [](TrainConfig& c, const std::string& v) { c.cache_policy = cache_policy_from_string(v); }},
      {"train.checkpoint_interval",
       [](const TrainConfig& c) { return std::to_string(c.checkpoint_interval); },
       [](TrainConfig& c, const std::string& v) { c.checkpoint_interval = static_cast<int>(parse_int(v)); }},
      {"train.threads", [](const TrainConfig& c) { return std::to_string(c.threads); },
       [](TrainConfig& c, const std::string& v) { c.threads = static_cast<int>(parse_int(v)); }},
      {"pg.clip_low", [](const TrainConfig& c) { return fmt_double(c.pg_clip_low); },
       [](TrainConfig& c, const std::string& v) { c.pg_clip_low = parse_double(v); }},
      {"pg.clip_high", [](const TrainConfig& c) { return fmt_double(c.pg_clip_high); },
       [](TrainConfig& c, const std::string& v) { c.pg_clip_high = parse_double(v); }},
      {"pg.norm", [](const TrainConfig& c) { return std::string(to_string(c.pg_norm)); },
       [](TrainConfig& c, const std::string& v) { c.pg_norm = pg_norm_from_string(v); }},
      {"seed.root", [](const TrainConfig& c) { return std::to_string(c.root_seed); },
       [](TrainConfig& c, const std::string& v) { c.root_seed = static_cast<std::uint64_t>(parse_int(v)); }},
  };
  return kBindings;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  keys.reserve(bindings().size());
  for (const auto& b : bindings()) keys.emplace_back(b.key);
  return keys;
}

std::string config_value(const TrainConfig& config, const std::string& key) {
  for (const auto& b : bindings()) {
    if (key == b.key) return b.get(config);
  }
  throw std::invalid_argument("unknown config key: " + key);
}

void apply_override(TrainConfig& config, const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (key == b.key) {
      b.set(config, value);
      return;
    }
  }
  std::ostringstream msg;
  msg << "unknown config key '" << key << "'; valid keys:";
  for (const auto& k : config_keys()) msg << " " << k;
  throw std::invalid_argument(msg.str());
}

std::string serialize_config(const TrainConfig& config) {
  std::ostringstream out;
  if (!config.preset_name.empty()) out << "# preset: " << config.preset_name << "\n";
  for (const auto& b : bindings()) out << b.key << "=" << b.get(config) << "\n";
  return out.str();
}

TrainConfig parse_config_text(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + " is not key=value");
    }
    std::string key = line.substr(first, eq - first);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.back() == ' ' || value.back() == '\t' || value.back() == '\r')) {
      value.pop_back();
    }
    const std::size_t vfirst = value.find_first_not_of(" \t");
    value = vfirst == std::string::npos ? "" : value.substr(vfirst);
    apply_override(base, key, value);
  }
  return base;
}

TrainConfig load_config_file(const std::string& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

void write_manifest(const std::string& path, const RunManifest& manifest) {
  json j;
  j["run_id"] = manifest.run_id;
  j["config"] = manifest.config_text;
  j["dataset_sha256"] = manifest.dataset_sha256;
  j["token_table_sha256"] = manifest.token_table_sha256;
  j["started_at"] = manifest.started_at;
  j["finished_at"] = manifest.finished_at;
  j["final_summary"] = manifest.final_summary;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write manifest: " + tmp);
    out << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

RunManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read manifest: " + path);
  json j;
  in >> j;
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.config_text = j.at("config").get<std::string>();
  m.dataset_sha256 = j.at("dataset_sha256").get<std::string>();
  m.token_table_sha256 = j.at("token_table_sha256").get<std::string>();
  m.started_at = j.at("started_at").get<std::string>();
  m.finished_at = j.value("finished_at", "");
  m.final_summary = j.value("final_summary", json::object());
  return m;
}

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace rence
