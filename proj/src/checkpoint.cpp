// SPDX-License-Identifier: Apache-2.0
#include "rence/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rence {
namespace {

constexpr char kPolicyMagic[8] = {'R', 'V', 'P', 'O', 'L', 'C', 'K', '1'};
constexpr char kSidecarMagic[8] = {'R', 'V', 'O', 'P', 'T', 'S', 'T', '1'};

void put_u32(std::ostream& out, std::uint32_t x) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t x) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(x >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64_array(std::ostream& out, const std::vector<double>& v) {
  for (const double d : v) put_u64(out, std::bit_cast<std::uint64_t>(d));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("truncated checkpoint file");
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= std::uint32_t(b[i]) << (8 * i);
  return x;
}

std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw std::runtime_error("truncated checkpoint file");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= std::uint64_t(b[i]) << (8 * i);
  return x;
}

std::vector<double> get_f64_array(std::istream& in, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_u64(in));
  return v;
}

void check_magic(std::istream& in, const char (&magic)[8], const char* what) {
  char got[8];
  in.read(got, 8);
  if (!in || std::memcmp(got, magic, 8) != 0) {
    throw std::runtime_error(std::string("not a ") + what + " file");
  }
}

}  // namespace

void save_policy(const std::string& path, const PolicyParams& params) {
  if (params.values.size() != param_count(params.arch)) {
    throw std::invalid_argument("parameter vector does not match architecture");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kPolicyMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(params.version));
  put_u32(out, params.arch.mode == PolicyMode::neural ? 0u : 1u);
  put_u32(out, static_cast<std::uint32_t>(params.arch.vocab_size));
  put_u32(out, static_cast<std::uint32_t>(params.arch.max_len));
  put_u32(out, static_cast<std::uint32_t>(params.arch.embed_dim));
  put_u32(out, static_cast<std::uint32_t>(params.arch.n_layers));
  put_u32(out, static_cast<std::uint32_t>(params.arch.hidden_dim));
  put_u32(out, static_cast<std::uint32_t>(params.arch.eos_id));
  put_u64(out, params.values.size());
  put_u32(out, static_cast<std::uint32_t>(params.meta.size()));
  out.write(params.meta.data(), static_cast<std::streamsize>(params.meta.size()));
  put_f64_array(out, params.values);
  if (!out) throw std::runtime_error("write failed: " + path);
}

PolicyParams load_policy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  check_magic(in, kPolicyMagic, "policy checkpoint");
  PolicyParams p;
  p.version = static_cast<int>(get_u32(in));
  p.arch.mode = get_u32(in) == 0 ? PolicyMode::neural : PolicyMode::tabular;
  p.arch.vocab_size = static_cast<int>(get_u32(in));
  p.arch.max_len = static_cast<int>(get_u32(in));
  p.arch.embed_dim = static_cast<int>(get_u32(in));
  p.arch.n_layers = static_cast<int>(get_u32(in));
  p.arch.hidden_dim = static_cast<int>(get_u32(in));
  p.arch.eos_id = static_cast<int>(get_u32(in));
  const std::uint64_t n = get_u64(in);
  if (n != param_count(p.arch)) {
    throw std::runtime_error("checkpoint parameter count does not match architecture");
  }
  const std::uint32_t meta_len = get_u32(in);
  p.meta.resize(meta_len);
  in.read(p.meta.data(), meta_len);
  if (!in) throw std::runtime_error("truncated checkpoint file");
  p.values = get_f64_array(in, n);
  return p;
}

void save_sidecar(const std::string& path, const OptSidecar& sidecar) {
  if (sidecar.adam_m.size() != sidecar.adam_v.size()) {
    throw std::invalid_argument("sidecar moment vectors must have equal length");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write sidecar: " + path);
  out.write(kSidecarMagic, 8);
  put_u32(out, 1u);
  const std::string meta = sidecar.meta.dump();
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  put_u64(out, sidecar.adam_m.size());
  put_f64_array(out, sidecar.adam_m);
  put_f64_array(out, sidecar.adam_v);
  if (!out) throw std::runtime_error("write failed: " + path);
}

OptSidecar load_sidecar(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read sidecar: " + path);
  check_magic(in, kSidecarMagic, "optimizer sidecar");
  const std::uint32_t version = get_u32(in);
  if (version != 1) throw std::runtime_error("unsupported sidecar version");
  const std::uint32_t json_len = get_u32(in);
  std::string meta(json_len, '\0');
  in.read(meta.data(), json_len);
  if (!in) throw std::runtime_error("truncated sidecar file");
  OptSidecar s;
  s.meta = nlohmann::json::parse(meta);
  const std::uint64_t n = get_u64(in);
  s.adam_m = get_f64_array(in, n);
  s.adam_v = get_f64_array(in, n);
  return s;
}

}  // namespace rence
