// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace rence {

// Fixed vocabulary for the synthetic arithmetic tasks. Box-open and box-close
// are single tokens so answer parsing is unambiguous at this scale; prompts
// are tokenized character by character.
struct TokenTable {
  std::vector<std::string> tokens;
  int eos_id = 0;
  int box_open_id = 1;
  int box_close_id = 2;

  static TokenTable standard();

  int size() const { return static_cast<int>(tokens.size()); }
  int id_of(std::string_view tok) const;  // -1 when absent
  std::vector<int> tokenize_text(std::string_view text) const;
  std::string text_of(std::span<const int> ids) const;
};

void save_token_table(const std::string& path, const TokenTable& table);
TokenTable load_token_table(const std::string& path);

struct Problem {
  std::string prompt_id;
  std::string prompt_text;
  std::vector<int> prompt_tokens;
  std::string ground_truth_answer;  // canonical integer string
  std::string difficulty_tag;
};

struct RewardBreakdown {
  bool boxed = false;
  bool correct = false;
  double reward = 0.0;
};

enum class TaskFamily { add, sub, mul_mod, chain };

const char* to_string(TaskFamily f);
TaskFamily task_family_from_string(const std::string& s);

struct DatasetSpec {
  std::vector<TaskFamily> families = {TaskFamily::add, TaskFamily::sub, TaskFamily::mul_mod,
                                      TaskFamily::chain};
  int min_digits = 1;
  int max_digits = 2;
  int count = 5000;
  std::uint64_t seed = 1;
};

// Deterministic in the spec; difficulty is mixed so a fresh policy can solve
// some but not all problems.
std::vector<Problem> generate_dataset(const DatasetSpec& spec, const TokenTable& table);

// Contents of the LAST well-formed boxed span, or nullopt. A span is a
// box-open token through the next box-close token; scanning resumes after the
// close, and markers inside a span are treated as span content.
std::optional<std::string> extract_boxed(std::span<const int> gen_tokens, const TokenTable& table);

// Canonical signed-integer form: strips whitespace and leading zeros and
// folds "-0" to "0". nullopt when the text is not an integer.
std::optional<std::string> canonicalize_integer(std::string_view text);

RewardBreakdown reward(const Problem& problem, std::span<const int> gen_tokens, const TokenTable& table);

// First-order transition logits (row-major [next][cur]) that prime the
// answer format: after the prompt's trailing '?' open a box, fill it with
// digits (content uniform, so no arithmetic knowledge is encoded), close it,
// and stop. The desk-scale analogue of starting from an instruction-following
// base model.
std::vector<double> format_transition_logits(const TokenTable& table);

// JSON-lines dataset: one object per problem with fields
// {prompt_id, prompt_text, answer, difficulty_tag}. Tokenization happens at
// load time from the token table.
void save_dataset_jsonl(const std::string& path, const std::vector<Problem>& problems);
std::vector<Problem> load_dataset_jsonl(const std::string& path, const TokenTable& table);

}  // namespace rence
