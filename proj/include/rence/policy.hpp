// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rence {

enum class PolicyMode { neural, tabular };

// Architecture descriptor. The neural mode is a one-block causal transformer
// (token + position embedding, single-head self-attention, gelu feed-forward,
// layernorms, tied-nothing output head); the tabular mode stores one logit row
// per end-of-sequence-free generation prefix and is fully enumerable at small
// vocab/length, which makes it usable as a brute-force oracle.
struct ArchDescriptor {
  PolicyMode mode = PolicyMode::neural;
  int vocab_size = 0;
  int max_len = 0;
  int embed_dim = 0;
  int n_layers = 0;
  int hidden_dim = 0;
  int eos_id = 0;
};

bool operator==(const ArchDescriptor& a, const ArchDescriptor& b);

struct PolicyParams {
  ArchDescriptor arch;
  std::vector<double> values;
  int version = 1;
  std::string meta;  // creation metadata, preserved across clone/save/load
};

struct Trajectory {
  std::vector<int> prompt_tokens;
  std::vector<int> gen_tokens;
  std::vector<double> per_token_logprobs;  // at temperature 1
  double total_logprob = 0.0;
};

std::size_t param_count(const ArchDescriptor& arch);

// Neural weights start as small gaussians with zeroed biases and a zeroed
// output head (so the initial next-token distribution is uniform); tabular
// logits start at zero (uniform conditionals).
PolicyParams init_params(const ArchDescriptor& arch, std::uint64_t seed, double init_std = 0.08);

// Neural initialization that realizes a first-order Markov prior: the
// next-token logits start near transition_logits[next * vocab + cur].
// Embeddings are scaled one-hot rows, attention and feed-forward weights are
// small gaussians (so the prior dominates but every path stays trainable),
// and the head encodes the transition matrix. The desk-scale stand-in for
// starting from a pretrained base model: callers can prime the answer
// format while leaving content uniform.
PolicyParams init_params_markov(const ArchDescriptor& arch, std::span<const double> transition_logits,
                                std::uint64_t seed, double noise_std = 0.02,
                                double embed_scale = 8.0);

PolicyParams clone_params(const PolicyParams& params);

// Ancestral sampling at the given temperature (temperature 0 decodes
// greedily). Stored log-probabilities are always evaluated at temperature 1.
// Generation stops at the end-of-sequence token or the model length limit.
Trajectory sample(const PolicyParams& params, std::span<const int> prompt_tokens, double temperature,
                  std::uint64_t seed);

// Teacher-forced evaluation; total is the sum of the per-token values.
std::pair<double, std::vector<double>> logprob(const PolicyParams& params,
                                               std::span<const int> prompt_tokens,
                                               std::span<const int> gen_tokens);

// Exact reverse-mode gradient of the summed log-probability with respect to
// every parameter.
std::vector<double> grad_logprob(const PolicyParams& params, std::span<const int> prompt_tokens,
                                 std::span<const int> gen_tokens);

// Gradient of sum_t weights[t] * per_token_logprob[t]; grad_logprob is the
// all-ones case. Accumulates scale * gradient into grad_accum.
void accumulate_weighted_grad_logprob(const PolicyParams& params, std::span<const int> prompt_tokens,
                                      std::span<const int> gen_tokens, std::span<const double> weights,
                                      double scale, std::vector<double>& grad_accum);

// Teacher-forced evaluation that retains its activations so a later backward
// pass does not have to re-run the forward. The referenced PolicyParams must
// outlive the handle and stay unmodified while it is used.
class SequenceEval {
 public:
  SequenceEval(const PolicyParams& params, std::span<const int> prompt_tokens,
               std::span<const int> gen_tokens);
  ~SequenceEval();
  SequenceEval(SequenceEval&&) noexcept;
  SequenceEval& operator=(SequenceEval&&) noexcept;
  SequenceEval(const SequenceEval&) = delete;
  SequenceEval& operator=(const SequenceEval&) = delete;

  double total_logprob() const;
  const std::vector<double>& per_token_logprobs() const;
  // Accumulates scale * d(sum_t weights[t] * lp_t)/dparams into grad_accum.
  void accumulate_grad(std::span<const double> weights, double scale,
                       std::vector<double>& grad_accum) const;

 private:
  struct Impl;
  Impl* impl_;
};

// Tabular mode only: every trajectory in generation order, with exact
// log-probabilities. Guarded against combinatorial blowup.
std::vector<Trajectory> enumerate_trajectories(const PolicyParams& params);

const char* to_string(PolicyMode m);
PolicyMode policy_mode_from_string(const std::string& s);

}  // namespace rence
