// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "rence/policy.hpp"

namespace rence {

// Policy checkpoint, little-endian throughout (layout documented in
// docs/formats.md): magic "RVPOLCK1", u32 format version, u32 mode,
// u32 vocab_size, u32 max_len, u32 embed_dim, u32 n_layers, u32 hidden_dim,
// u32 eos_id, u64 param_count, u32 meta_len + meta bytes, then param_count
// f64 parameter values.
void save_policy(const std::string& path, const PolicyParams& params);
PolicyParams load_policy(const std::string& path);

// Optimizer/trainer sidecar: magic "RVOPTST1", u32 version, u32 json_len +
// JSON metadata bytes, u64 n, n f64 first moments, n f64 second moments.
struct OptSidecar {
  nlohmann::json meta;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
};

void save_sidecar(const std::string& path, const OptSidecar& sidecar);
OptSidecar load_sidecar(const std::string& path);

}  // namespace rence
