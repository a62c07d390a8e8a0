// SPDX-License-Identifier: Apache-2.0
#include "rence/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rence/rng.hpp"

namespace rence {

using nlohmann::json;

TokenTable TokenTable::standard() {
  TokenTable t;
  t.tokens = {"<eos>", "<box>", "</box>", "0", "1", "2", "3", "4", "5",
              "6",     "7",     "8",      "9", "+", "-", "*", "%", "=", "?"};
  t.eos_id = 0;
  t.box_open_id = 1;
  t.box_close_id = 2;
  return t;
}

int TokenTable::id_of(std::string_view tok) const {
  for (int i = 0; i < size(); ++i) {
    if (tokens[i] == tok) return i;
  }
  return -1;
}

std::vector<int> TokenTable::tokenize_text(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (const char c : text) {
    const int id = id_of(std::string_view(&c, 1));
    if (id < 0) throw std::invalid_argument(std::string("untokenizable character: '") + c + "'");
    out.push_back(id);
  }
  return out;
}

std::string TokenTable::text_of(std::span<const int> ids) const {
  std::string out;
  for (const int id : ids) {
    if (id >= 0 && id < size()) {
      out += tokens[id];
    } else {
      out += "<?>";
    }
  }
  return out;
}

void save_token_table(const std::string& path, const TokenTable& table) {
  json j;
  j["version"] = 1;
  j["tokens"] = table.tokens;
  j["eos"] = table.tokens.at(table.eos_id);
  j["box_open"] = table.tokens.at(table.box_open_id);
  j["box_close"] = table.tokens.at(table.box_close_id);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write token table: " + path);
  out << j.dump(2) << "\n";
}

TokenTable load_token_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read token table: " + path);
  json j;
  in >> j;
  TokenTable t;
  t.tokens = j.at("tokens").get<std::vector<std::string>>();
  t.eos_id = t.id_of(j.at("eos").get<std::string>());
  t.box_open_id = t.id_of(j.at("box_open").get<std::string>());
  t.box_close_id = t.id_of(j.at("box_close").get<std::string>());
  if (t.eos_id < 0 || t.box_open_id < 0 || t.box_close_id < 0) {
    throw std::runtime_error("token table missing a marker token");
  }
  return t;
}

const char* to_string(TaskFamily f) {
  switch (f) {
    case TaskFamily::add: return "add";
    case TaskFamily::sub: return "sub";
    case TaskFamily::mul_mod: return "mul_mod";
    case TaskFamily::chain: return "chain";
  }
  return "?";
}

TaskFamily task_family_from_string(const std::string& s) {
  for (const TaskFamily f : {TaskFamily::add, TaskFamily::sub, TaskFamily::mul_mod, TaskFamily::chain}) {
    if (s == to_string(f)) return f;
  }
  throw std::invalid_argument("unknown task family: " + s);
}

namespace {

long long draw_operand(Rng& rng, int digits) {
  if (digits <= 1) return static_cast<long long>(rng.uniform_index(10));
  long long lo = 1;
  for (int i = 1; i < digits; ++i) lo *= 10;
  const long long hi = lo * 10 - 1;
  return lo + static_cast<long long>(rng.uniform_index(static_cast<std::size_t>(hi - lo + 1)));
}

}  // namespace

std::vector<Problem> generate_dataset(const DatasetSpec& spec, const TokenTable& table) {
  if (spec.families.empty()) throw std::invalid_argument("empty family set");
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (spec.min_digits < 1 || spec.max_digits < spec.min_digits || spec.max_digits > 6) {
    throw std::invalid_argument("invalid digit range");
  }
  Rng rng(derive_seed(spec.seed, "tasks"));
  std::vector<Problem> out;
  out.reserve(spec.count);
  for (int i = 0; i < spec.count; ++i) {
    const TaskFamily fam = spec.families[rng.uniform_index(spec.families.size())];
    const int digits = spec.min_digits +
                       static_cast<int>(rng.uniform_index(spec.max_digits - spec.min_digits + 1));
    std::ostringstream text;
    long long answer = 0;
    switch (fam) {
      case TaskFamily::add: {
        const long long a = draw_operand(rng, digits), b = draw_operand(rng, digits);
        text << a << "+" << b << "=?";
        answer = a + b;
        break;
      }
      case TaskFamily::sub: {
        const long long a = draw_operand(rng, digits), b = draw_operand(rng, digits);
        text << a << "-" << b << "=?";
        answer = a - b;
        break;
      }
      case TaskFamily::mul_mod: {
        const long long a = draw_operand(rng, digits), b = draw_operand(rng, digits);
        text << a << "*" << b << "%10=?";
        answer = (a * b) % 10;
        break;
      }
      case TaskFamily::chain: {
        const long long a = draw_operand(rng, digits), b = draw_operand(rng, digits),
                        c = draw_operand(rng, digits);
        const bool plus1 = rng.uniform_index(2) == 0, plus2 = rng.uniform_index(2) == 0;
        text << a << (plus1 ? "+" : "-") << b << (plus2 ? "+" : "-") << c << "=?";
        answer = plus1 ? a + b : a - b;
        answer = plus2 ? answer + c : answer - c;
        break;
      }
    }
    Problem p;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "p%06d", i);
    p.prompt_id = idbuf;
    p.prompt_text = text.str();
    p.prompt_tokens = table.tokenize_text(p.prompt_text);
    p.ground_truth_answer = std::to_string(answer);
    p.difficulty_tag = std::string(to_string(fam)) + "_d" + std::to_string(digits);
    out.push_back(std::move(p));
  }
  return out;
}

std::optional<std::string> extract_boxed(std::span<const int> gen_tokens, const TokenTable& table) {
  std::optional<std::string> last;
  std::size_t i = 0;
  const std::size_t n = gen_tokens.size();
  while (i < n) {
    if (gen_tokens[i] != table.box_open_id) {
      ++i;
      continue;
    }
    std::size_t j = i + 1;
    while (j < n && gen_tokens[j] != table.box_close_id) ++j;
    if (j >= n) break;  // unterminated span
    last = table.text_of(gen_tokens.subspan(i + 1, j - i - 1));
    i = j + 1;
  }
  return last;
}

std::optional<std::string> canonicalize_integer(std::string_view text) {
  std::size_t b = 0, e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  if (b == e) return std::nullopt;
  bool negative = false;
  if (text[b] == '-' || text[b] == '+') {
    negative = text[b] == '-';
    ++b;
  }
  if (b == e) return std::nullopt;
  for (std::size_t i = b; i < e; ++i) {
    if (!std::isdigit(static_cast<unsigned char>(text[i]))) return std::nullopt;
  }
  while (b + 1 < e && text[b] == '0') ++b;
  std::string digits(text.substr(b, e - b));
  if (digits == "0") return "0";
  return negative ? "-" + digits : digits;
}

// A rollout counts as boxed only when the last boxed span wraps an actual
// answer, i.e. its content canonicalizes as an integer. Empty or non-integer
// spans score 0: the format tier certifies "final answer in a box", not the
// mere presence of markers.
RewardBreakdown reward(const Problem& problem, std::span<const int> gen_tokens, const TokenTable& table) {
  RewardBreakdown out;
  const auto span = extract_boxed(gen_tokens, table);
  if (!span.has_value()) return out;  // {false, false, 0}
  const auto got = canonicalize_integer(*span);
  if (!got.has_value()) return out;
  out.boxed = true;
  const auto want = canonicalize_integer(problem.ground_truth_answer);
  out.correct = want.has_value() && *got == *want;
  out.reward = out.correct ? 1.0 : 0.1;
  return out;
}

std::vector<double> format_transition_logits(const TokenTable& table) {
  const int v = table.size();
  std::vector<double> m(std::size_t(v) * v, 0.0);
  const auto at = [&](int next, int cur) -> double& { return m[std::size_t(next) * v + cur]; };
  const int question = table.id_of("?");
  const int minus = table.id_of("-");
  std::vector<int> digits;
  for (int d = 0; d <= 9; ++d) digits.push_back(table.id_of(std::string(1, '0' + d)));
  for (const int d : digits) {
    if (d < 0) throw std::invalid_argument("token table lacks digit tokens");
  }
  if (question < 0) throw std::invalid_argument("token table lacks the '?' marker");

  at(table.box_open_id, question) = 5.0;
  for (const int d : digits) {
    at(d, table.box_open_id) = 3.0;          // content: uniform digits
    at(table.box_close_id, d) = 3.5;         // short answers preferred
    for (const int d2 : digits) at(d2, d) = 1.2;
    if (minus >= 0) at(d, minus) = 3.0;
  }
  if (minus >= 0) {
    at(minus, table.box_open_id) = 1.0;      // negative answers possible
    at(table.box_close_id, minus) = -4.0;    // but never an empty "-"
  }
  at(table.eos_id, table.box_close_id) = 5.0;
  return m;
}

void save_dataset_jsonl(const std::string& path, const std::vector<Problem>& problems) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write dataset: " + path);
  for (const auto& p : problems) {
    json j;
    j["prompt_id"] = p.prompt_id;
    j["prompt_text"] = p.prompt_text;
    j["answer"] = p.ground_truth_answer;
    j["difficulty_tag"] = p.difficulty_tag;
    out << j.dump() << "\n";
  }
}

std::vector<Problem> load_dataset_jsonl(const std::string& path, const TokenTable& table) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read dataset: " + path);
  std::vector<Problem> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Problem p;
    p.prompt_id = j.at("prompt_id").get<std::string>();
    p.prompt_text = j.at("prompt_text").get<std::string>();
    p.ground_truth_answer = j.at("answer").get<std::string>();
    p.difficulty_tag = j.value("difficulty_tag", "");
    if (!canonicalize_integer(p.ground_truth_answer).has_value()) {
      throw std::runtime_error("dataset answer is not an integer: " + p.prompt_id);
    }
    p.prompt_tokens = table.tokenize_text(p.prompt_text);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace rence
