// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "rence/checkpoint.hpp"
#include "rence/objectives.hpp"
#include "rence/policy.hpp"
#include "rence/rng.hpp"

using namespace rence;

namespace {

ArchDescriptor small_neural() {
  ArchDescriptor a;
  a.mode = PolicyMode::neural;
  a.vocab_size = 6;
  a.max_len = 8;
  a.embed_dim = 8;
  a.n_layers = 2;
  a.hidden_dim = 16;
  a.eos_id = 0;
  return a;
}

ArchDescriptor small_tabular(int vocab, int max_len) {
  ArchDescriptor a;
  a.mode = PolicyMode::tabular;
  a.vocab_size = vocab;
  a.max_len = max_len;
  a.eos_id = 0;
  return a;
}

PolicyParams random_tabular(int vocab, int max_len, std::uint64_t seed, double scale = 1.0) {
  PolicyParams p = init_params(small_tabular(vocab, max_len), seed);
  Rng rng(seed);
  for (double& v : p.values) v = rng.normal() * scale;
  return p;
}

double exact_tabular_kl(const PolicyParams& p_old, const PolicyParams& p_theta) {
  const auto old_trajs = enumerate_trajectories(p_old);
  const auto theta_trajs = enumerate_trajectories(p_theta);
  REQUIRE(old_trajs.size() == theta_trajs.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < old_trajs.size(); ++i) {
    REQUIRE(old_trajs[i].gen_tokens == theta_trajs[i].gen_tokens);
    kl += std::exp(old_trajs[i].total_logprob) *
          (old_trajs[i].total_logprob - theta_trajs[i].total_logprob);
  }
  return kl;
}

}  // namespace

TEST_CASE("param_count matches the documented layout") {
  // neural: embeddings + per-block attention/ffn/norms + final norm + head
  ArchDescriptor a = small_neural();
  const std::size_t d = 8, h = 16, v = 6, l = 8;
  const std::size_t block = 2 * d + 4 * (d * d + d) + 2 * d + (h * d + h) + (d * h + d);
  CHECK(param_count(a) == v * d + l * d + 2 * block + 2 * d + (v * d + v));
  // tabular: one logit row per eos-free prefix shorter than max_len
  CHECK(param_count(small_tabular(4, 4)) == (1 + 3 + 9 + 27) * 4);
}

TEST_CASE("neural distributions normalize at every position") {
  const PolicyParams p = init_params(small_neural(), 7);
  const std::vector<int> prompt{1, 2, 3};
  std::vector<int> gen{4, 2};
  for (int pos = 0; pos < 3; ++pos) {
    double total = 0.0;
    for (int tok = 0; tok < 6; ++tok) {
      std::vector<int> g = gen;
      g.resize(pos);
      g.push_back(tok);
      const auto [sum, per] = logprob(p, prompt, g);
      total += std::exp(per.back());
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
}

TEST_CASE("untrained policy is uniform over the vocabulary") {
  const PolicyParams p = init_params(small_neural(), 3);
  const std::vector<int> prompt{1, 5};
  const auto [total, per] = logprob(p, prompt, std::vector<int>{2});
  CHECK(total == doctest::Approx(-std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("sampling is deterministic and consistent with evaluation") {
  const PolicyParams p = init_params(small_neural(), 11);
  const std::vector<int> prompt{1, 2};
  const Trajectory a = sample(p, prompt, 1.0, 99);
  const Trajectory b = sample(p, prompt, 1.0, 99);
  CHECK(a.gen_tokens == b.gen_tokens);
  CHECK(a.total_logprob == b.total_logprob);

  double sum = 0.0;
  for (const double lp : a.per_token_logprobs) sum += lp;
  CHECK(std::abs(sum - a.total_logprob) <= 1e-9);

  const auto [total, per] = logprob(p, prompt, a.gen_tokens);
  REQUIRE(per.size() == a.per_token_logprobs.size());
  for (std::size_t i = 0; i < per.size(); ++i) {
    CHECK(std::abs(per[i] - a.per_token_logprobs[i]) <= 1e-9);
  }
  CHECK(std::abs(total - a.total_logprob) <= 1e-9);

  // generation stops at eos or the length limit
  CHECK(a.gen_tokens.size() + prompt.size() <= 8);
  for (std::size_t i = 0; i + 1 < a.gen_tokens.size(); ++i) CHECK(a.gen_tokens[i] != 0);
}

TEST_CASE("temperature zero decodes greedily") {
  PolicyParams p = init_params(small_neural(), 13);
  Rng rng(5);
  for (double& v : p.values) v += rng.normal() * 0.05;  // break the uniform tie
  const Trajectory a = sample(p, std::vector<int>{1}, 0.0, 1);
  const Trajectory b = sample(p, std::vector<int>{1}, 0.0, 2);
  CHECK(a.gen_tokens == b.gen_tokens);
}

TEST_CASE("sampling errors") {
  const PolicyParams p = init_params(small_neural(), 1);
  const std::vector<int> long_prompt(8, 1);
  CHECK_THROWS_WITH_AS(sample(p, long_prompt, 1.0, 1), "prompt too long", std::invalid_argument);
  CHECK_THROWS_AS(logprob(p, std::vector<int>{1}, std::vector<int>{6}), std::invalid_argument);
  CHECK_THROWS_AS(logprob(p, std::vector<int>{1, 2, 3, 4, 5, 1, 2, 3}, std::vector<int>{1}),
                  std::invalid_argument);
}

TEST_CASE("neural gradient matches finite differences") {
  PolicyParams p = init_params(small_neural(), 17);
  Rng rng(18);
  for (double& v : p.values) v += rng.normal() * 0.05;  // non-degenerate head
  const std::vector<int> prompt{1, 4};
  const std::vector<int> gen{2, 5, 3, 0};
  const auto grad = grad_logprob(p, prompt, gen);
  REQUIRE(grad.size() == p.values.size());
  const double h = 1e-4;
  int worst_checked = 0;
  for (std::size_t i = 0; i < p.values.size(); i += 1) {
    const double keep = p.values[i];
    p.values[i] = keep + h;
    const double up = logprob(p, prompt, gen).first;
    p.values[i] = keep - h;
    const double down = logprob(p, prompt, gen).first;
    p.values[i] = keep;
    const double fd = (up - down) / (2 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    CHECK(std::abs(fd - grad[i]) / denom <= 1e-3);
    ++worst_checked;
  }
  CHECK(worst_checked == static_cast<int>(p.values.size()));
}

TEST_CASE("weighted gradient: zero-weight positions contribute nothing") {
  const PolicyParams p = init_params(small_neural(), 19);
  const std::vector<int> prompt{2};
  const std::vector<int> gen{1, 3, 0};
  std::vector<double> grad(p.values.size(), 0.0);
  accumulate_weighted_grad_logprob(p, prompt, gen, std::vector<double>{0.0, 0.0, 0.0}, 1.0, grad);
  for (const double g : grad) CHECK(g == 0.0);

  // weights scale linearly: w=(2,0,0) equals 2x the single-token gradient
  std::vector<double> g2(p.values.size(), 0.0);
  accumulate_weighted_grad_logprob(p, prompt, gen, std::vector<double>{2.0, 0.0, 0.0}, 1.0, g2);
  std::vector<double> g1(p.values.size(), 0.0);
  accumulate_weighted_grad_logprob(p, prompt, std::vector<int>{1}, std::vector<double>{1.0}, 2.0, g1);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) max_diff = std::max(max_diff, std::abs(g1[i] - g2[i]));
  CHECK(max_diff <= 1e-12);
}

TEST_CASE("SequenceEval matches logprob and grad_logprob") {
  const PolicyParams p = init_params(small_neural(), 23);
  const std::vector<int> prompt{1, 2, 3};
  const std::vector<int> gen{4, 5, 0};
  const SequenceEval eval(p, prompt, gen);
  const auto [total, per] = logprob(p, prompt, gen);
  CHECK(eval.total_logprob() == total);
  CHECK(eval.per_token_logprobs() == per);
  std::vector<double> g1(p.values.size(), 0.0);
  eval.accumulate_grad(std::vector<double>(3, 1.0), 1.0, g1);
  const auto g2 = grad_logprob(p, prompt, gen);
  CHECK(g1 == g2);
}

TEST_CASE("tabular logprob is the product of stored conditionals") {
  const PolicyParams p = random_tabular(3, 3, 41);
  // manual: first token row is node 0; child of token t (non-eos) advances
  const std::vector<int> gen{1, 2, 0};
  const auto [total, per] = logprob(p, {}, gen);
  const int v = 3;
  const auto row_lp = [&](std::size_t node, int tok) {
    double mx = p.values[node * v];
    for (int i = 1; i < v; ++i) mx = std::max(mx, p.values[node * v + i]);
    double denom = 0.0;
    for (int i = 0; i < v; ++i) denom += std::exp(p.values[node * v + i] - mx);
    return p.values[node * v + tok] - (mx + std::log(denom));
  };
  // node ids: root 0; child(0, tok=1) = 0*2 + rank(1)=0.. with eos=0, rank(tok)=tok-1
  const double manual = row_lp(0, 1) + row_lp(1, 2) + row_lp(4, 0);
  CHECK(total == doctest::Approx(manual).epsilon(1e-12));
  CHECK(per.size() == 3);
}

TEST_CASE("uniform tabular policy: total = -L log V") {
  const PolicyParams p = init_params(small_tabular(4, 4), 1);
  const auto [total, per] = logprob(p, {}, std::vector<int>{1, 2, 3, 0});
  CHECK(total == doctest::Approx(-4.0 * std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("tabular trajectory space sums to one") {
  for (const auto& [v, l] : std::vector<std::pair<int, int>>{{2, 2}, {3, 4}, {4, 4}}) {
    const PolicyParams p = random_tabular(v, l, 100 + v * 10 + l);
    double total = 0.0;
    for (const auto& tr : enumerate_trajectories(p)) total += std::exp(tr.total_logprob);
    CHECK(std::abs(total - 1.0) <= 1e-8);
  }
}

TEST_CASE("tabular sampling frequencies match exact probabilities") {
  const PolicyParams p = random_tabular(2, 2, 55);
  const auto trajs = enumerate_trajectories(p);
  std::map<std::vector<int>, double> exact;
  for (const auto& tr : trajs) exact[tr.gen_tokens] = std::exp(tr.total_logprob);
  std::map<std::vector<int>, long> counts;
  const long n = 100000;
  for (long i = 0; i < n; ++i) {
    counts[sample(p, {}, 1.0, 1000000 + static_cast<std::uint64_t>(i)).gen_tokens] += 1;
  }
  for (const auto& [gen, prob] : exact) {
    const double freq = static_cast<double>(counts[gen]) / n;
    const double se = std::sqrt(prob * (1.0 - prob) / n);
    CHECK(std::abs(freq - prob) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("tabular gradient matches the indicator-minus-softmax closed form") {
  const PolicyParams p = random_tabular(3, 3, 77);
  const std::vector<int> gen{2, 1, 0};
  const auto grad = grad_logprob(p, {}, gen);
  const int v = 3;
  const auto softmax_row = [&](std::size_t node) {
    std::vector<double> row(v);
    double mx = p.values[node * v];
    for (int i = 1; i < v; ++i) mx = std::max(mx, p.values[node * v + i]);
    double denom = 0.0;
    for (int i = 0; i < v; ++i) denom += std::exp(p.values[node * v + i] - mx);
    for (int i = 0; i < v; ++i) row[i] = std::exp(p.values[node * v + i] - mx) / denom;
    return row;
  };
  // visited nodes: 0, child(0,2)=2, child(2,1)=5
  const std::vector<std::pair<std::size_t, int>> visits{{0, 2}, {2, 1}, {5, 0}};
  std::vector<double> expected(p.values.size(), 0.0);
  for (const auto& [node, tok] : visits) {
    const auto sm = softmax_row(node);
    for (int i = 0; i < v; ++i) expected[node * v + i] = (i == tok ? 1.0 : 0.0) - sm[i];
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    CHECK(grad[i] == doctest::Approx(expected[i]).epsilon(1e-12));
  }
}

TEST_CASE("enumerable-policy oracle: kl_estimate is exact in expectation") {
  Rng rng(808);
  for (int trial = 0; trial < 50; ++trial) {
    const int v = 2 + static_cast<int>(rng.uniform_index(3));
    const int l = 2 + static_cast<int>(rng.uniform_index(3));
    const PolicyParams p_old = random_tabular(v, l, rng.next_u64());
    const PolicyParams p_theta = random_tabular(v, l, rng.next_u64());
    const auto old_trajs = enumerate_trajectories(p_old);
    const auto theta_trajs = enumerate_trajectories(p_theta);
    double estimate = 0.0;
    for (std::size_t i = 0; i < old_trajs.size(); ++i) {
      const double e = kl_estimate(theta_trajs[i].total_logprob, old_trajs[i].total_logprob);
      CHECK(e >= 0.0);
      estimate += std::exp(old_trajs[i].total_logprob) * e;
    }
    CHECK(std::abs(estimate - exact_tabular_kl(p_old, p_theta)) <= 1e-9);
  }
}

TEST_CASE("clone_params is a deep, independent copy") {
  PolicyParams original = init_params(small_neural(), 31);
  const PolicyParams clone = clone_params(original);
  const std::vector<int> prompt{1};
  const std::vector<int> gen{2, 0};
  const double before = logprob(clone, prompt, gen).first;
  original.values[0] += 100.0;
  CHECK(logprob(clone, prompt, gen).first == before);
  const PolicyParams clone2 = clone_params(clone);
  CHECK(clone2.values == clone.values);
  CHECK(clone2.arch == clone.arch);
}

TEST_CASE("checkpoint round trip is byte-identical") {
  PolicyParams p = init_params(small_neural(), 37);
  p.meta = "created=test;tool=unit";
  const auto dir = std::filesystem::temp_directory_path();
  const std::string f1 = (dir / "rence_pol_a.bin").string();
  const std::string f2 = (dir / "rence_pol_b.bin").string();
  save_policy(f1, p);
  const PolicyParams loaded = load_policy(f1);
  CHECK(loaded.values == p.values);
  CHECK(loaded.arch == p.arch);
  CHECK(loaded.meta == p.meta);
  save_policy(f2, loaded);
  std::ifstream a(f1, std::ios::binary), b(f2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(bytes_a == bytes_b);
  std::filesystem::remove(f1);
  std::filesystem::remove(f2);

  // arch mismatch is rejected at load time via the parameter count
  PolicyParams bad = p;
  bad.values.pop_back();
  CHECK_THROWS_AS(save_policy(f1, bad), std::exception);
}
