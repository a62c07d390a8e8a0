// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rence/trainer.hpp"

namespace rence {

// Flat key=value config text with dotted section keys (objective.beta,
// filter.t_easy, ...). Lines starting with '#' and blank lines are ignored.
// Doubles are printed in shortest round-trip form so a snapshot reparses to
// the exact same configuration.
std::vector<std::string> config_keys();
std::string config_value(const TrainConfig& config, const std::string& key);
void apply_override(TrainConfig& config, const std::string& key, const std::string& value);
std::string serialize_config(const TrainConfig& config);
TrainConfig parse_config_text(const std::string& text, TrainConfig base);
TrainConfig load_config_file(const std::string& path, TrainConfig base);

struct RunManifest {
  std::string run_id;
  std::string config_text;  // byte-identical snapshot of the effective config
  std::string dataset_sha256;
  std::string token_table_sha256;
  std::string started_at;
  std::string finished_at;
  nlohmann::json final_summary;
};

// Written atomically (temp file + rename) at run start, finalized at end.
void write_manifest(const std::string& path, const RunManifest& manifest);
RunManifest read_manifest(const std::string& path);

std::string iso8601_utc_now();

}  // namespace rence
