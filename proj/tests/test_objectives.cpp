// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rence/objectives.hpp"
#include "rence/rng.hpp"
#include "test_util.hpp"

using namespace rence;
using rence::testing::fd_grad_logprob;
using rence::testing::grad_close;
using rence::testing::random_group;

// Frozen with an independent high-precision script (mpmath, 30 digits).
namespace {
constexpr double kLog2 = 0.693147180559945309417232121458;
constexpr double kLog7 = 1.94591014905531330510535274344;
constexpr double kLog8 = 2.07944154167983592825169636437;
constexpr double kMnceFixedAlpha05 = 1.43913190838016453336811177553;
constexpr double kOneMinusLn2 = 0.306852819440054690582767878542;
constexpr double kGrpoAdvHigh = 1.72386696607533260037335497476;
constexpr double kGrpoAdvMid = -0.416105819397494075952189131839;
constexpr double kGrpoAdvLow = -0.653880573338919262210582921462;
constexpr double kComposite3 = 1.4330595038836345051733879853;

std::vector<RolloutRecord> records_from(const std::vector<double>& rewards,
                                        const std::vector<double>& lp_old) {
  std::vector<RolloutRecord> out;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    RolloutRecord r;
    r.reward = rewards[i];
    r.logprob_old = lp_old[i];
    r.length = 1;
    r.tokens = {0};
    r.per_token_logprob_old = {lp_old[i]};
    out.push_back(r);
  }
  return out;
}

RolloutGroup group_from(const std::vector<double>& rewards, const std::vector<double>& lp_old) {
  return make_group("g", records_from(rewards, lp_old));
}
}  // namespace

TEST_CASE("partition_group examples") {
  {
    const auto p = partition_group(std::vector<double>{1, 1, 0.1, 0});
    CHECK(p.r_max == 1.0);
    CHECK(p.positives == std::vector<int>{0, 1});
    CHECK(p.negatives == std::vector<int>{2, 3});
    CHECK(p.rho == 0.5);
  }
  {
    const auto p = partition_group(std::vector<double>{0.1, 0.1});
    CHECK(p.r_max == 0.1);
    CHECK(p.positives.size() == 2);
    CHECK(p.negatives.empty());
    CHECK(p.rho == 1.0);
  }
  {
    const auto p = partition_group(std::vector<double>{0, 0.1, 1, 0, 0.1, 0, 0, 0});
    CHECK(p.rho == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(p.positives == std::vector<int>{2});
  }
  CHECK_THROWS_WITH_AS(partition_group(std::vector<double>{}), "empty group", std::invalid_argument);
  CHECK_THROWS_AS(partition_group(std::vector<double>{0.5, 1.5}), std::invalid_argument);
}

TEST_CASE("partition_group quantizes rewards before comparing") {
  // float noise below the 0.05 grid must not split the positive set
  const auto p = partition_group(std::vector<double>{1.0, 1.0 - 1e-12, 0.5});
  CHECK(p.positives == std::vector<int>{0, 1});
  CHECK(p.r_max == 1.0);
}

TEST_CASE("margin") {
  ObjectiveConfig cfg;
  cfg.margin_mode = MarginMode::reward_scaled;
  CHECK(margin(1.0, 0.1, cfg) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(margin(1.0, 1.0, cfg) == 0.0);
  CHECK(margin(0.1, 0.0, cfg) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_WITH_AS(margin(0.1, 0.2, cfg), "reward exceeds group max", std::invalid_argument);
  cfg.margin_mode = MarginMode::constant;
  CHECK(margin(1.0, 1.0, cfg) == 0.0);
  CHECK(margin(1.0, 0.1, cfg) == 1.0);
  cfg.margin_mode = MarginMode::none;
  CHECK(margin(1.0, 0.1, cfg) == 0.0);
}

TEST_CASE("score") {
  ObjectiveConfig cfg;
  cfg.beta = 0.1;
  cfg.alpha = 0.5;
  CHECK(score(-3.0, -3.0, 0.0, cfg) == 0.0);
  CHECK(score(-1.0, -3.0, 0.9, cfg) == doctest::Approx(0.65).epsilon(1e-15));
  cfg.alpha = 0.0;
  CHECK(score(-6.0, -3.0, 1.0, cfg) == doctest::Approx(-0.3).epsilon(1e-15));
  // margin_mode none forces alpha to act as 0
  cfg.alpha = 0.5;
  cfg.margin_mode = MarginMode::none;
  CHECK(score(-3.0, -3.0, 1.0, cfg) == 0.0);
}

TEST_CASE("mnce_loss closed forms at the anchor fixed point") {
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  {
    // |P|=2, |N|=6, theta == old, no margin: uniform softmax over 7 entries
    const std::vector<double> rewards{1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<double> lp(8, -5.0);
    const auto g = group_from(rewards, lp);
    const auto gl = mnce_loss(g, lp, cfg);
    CHECK(gl.value == doctest::Approx(kLog7).epsilon(1e-12));
    CHECK(gl.per_positive_values.size() == 2);
  }
  {
    cfg.alpha = 0.5;
    cfg.margin_mode = MarginMode::reward_scaled;
    const std::vector<double> lp{-4.0, -7.0, -2.5};
    const auto g = group_from({1, 0.1, 0}, lp);
    const auto gl = mnce_loss(g, lp, cfg);
    CHECK(gl.value == doctest::Approx(kMnceFixedAlpha05).epsilon(1e-12));
  }
  {
    // no negatives: zero loss, zero gradient
    cfg.alpha = 0.0;
    const std::vector<double> lp{-1.0, -2.0};
    const auto g = group_from({0.1, 0.1}, lp);
    const auto gl = mnce_loss(g, lp, cfg);
    CHECK(gl.value == 0.0);
    for (const double d : gl.grad_wrt_logprob_theta) CHECK(d == 0.0);
  }
  {
    const auto g = group_from({1, 0}, {-1.0, -1.0});
    CHECK_THROWS_AS(mnce_loss(g, std::vector<double>{-1.0}, ObjectiveConfig{}),
                    std::invalid_argument);
  }
}

TEST_CASE("softmax_contrastive_loss closed forms") {
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  {
    const std::vector<double> rewards{1, 1, 0, 0, 0, 0, 0, 0};
    const std::vector<double> lp(8, -3.0);
    const auto g = group_from(rewards, lp);
    const auto gl = softmax_contrastive_loss(g, lp, cfg);
    CHECK(gl.value == doctest::Approx(kLog8).epsilon(1e-12));
    for (const double v : gl.per_positive_values) CHECK(v == doctest::Approx(kLog8).epsilon(1e-12));
  }
  {
    cfg.alpha = 0.5;
    cfg.margin_mode = MarginMode::reward_scaled;
    const std::vector<double> lp{-4.0, -7.0, -2.5};
    const auto g = group_from({1, 0.1, 0}, lp);
    const auto gl = softmax_contrastive_loss(g, lp, cfg);
    CHECK(gl.value == doctest::Approx(kMnceFixedAlpha05).epsilon(1e-12));
  }
}

TEST_CASE("single-positive groups: mnce and softmax are bit-identical") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 2 << rng.uniform_index(3);
    std::vector<double> rewards(k, 0.0);
    rewards[rng.uniform_index(k)] = 1.0;
    std::vector<double> lp_old(k), lp(k);
    for (int i = 0; i < k; ++i) {
      lp_old[i] = -(1 + rng.uniform() * 10);
      lp[i] = lp_old[i] + rng.uniform() - 0.5;
    }
    const auto g = group_from(rewards, lp_old);
    ObjectiveConfig cfg;
    const auto a = mnce_loss(g, lp, cfg);
    const auto b = softmax_contrastive_loss(g, lp, cfg);
    CHECK(a.value == b.value);
    for (int i = 0; i < k; ++i) {
      CHECK(a.grad_wrt_logprob_theta[i] == b.grad_wrt_logprob_theta[i]);
    }
  }
}

TEST_CASE("duplicating every positive leaves mnce unchanged") {
  Rng rng(12);
  ObjectiveConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> lp;
    const auto g = random_group(rng, 8, /*require_negative=*/true, /*theta_equals_old=*/false, &lp);
    const auto base = mnce_loss(g, lp, cfg);
    std::vector<RolloutRecord> records = g.records;
    std::vector<double> lp2 = lp;
    for (const int p : g.positive_indices) {
      records.push_back(g.records[p]);
      lp2.push_back(lp[p]);
    }
    const auto g2 = make_group("dup", std::move(records));
    const auto dup = mnce_loss(g2, lp2, cfg);
    CHECK(dup.value == doctest::Approx(base.value).epsilon(1e-12));
  }
}

TEST_CASE("pairwise_dpo_loss") {
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  {
    // zero score gap: -log sigmoid(0) = log 2
    const std::vector<double> lp{-2.0, -3.0};
    const auto g = group_from({1, 0}, lp);
    const auto gl = pairwise_dpo_loss(g, lp, cfg, PairMode::all, 0);
    CHECK(gl.value == doctest::Approx(kLog2).epsilon(1e-12));
  }
  {
    // all mode averages over |P| x |N| pairs
    const std::vector<double> lp_old{-1, -2, -3, -4, -5};
    std::vector<double> lp{-1.2, -1.7, -3.3, -3.9, -5.4};
    const auto g = group_from({1, 1, 0.1, 0.1, 0}, lp_old);
    const auto gl = pairwise_dpo_loss(g, lp, cfg, PairMode::all, 0);
    double manual = 0.0;
    for (const int p : g.positive_indices) {
      for (const int n : g.negative_indices) {
        const double sp = cfg.beta * (lp[p] - lp_old[p]);
        const double sn = cfg.beta * (lp[n] - lp_old[n]);
        manual += std::log1p(std::exp(-(sp - sn)));
      }
    }
    manual /= 6.0;
    CHECK(gl.value == doctest::Approx(manual).epsilon(1e-12));
  }
  {
    // random mode: deterministic per seed; untouched indices have zero grad
    Rng rng(5);
    std::vector<double> lp;
    const auto g = random_group(rng, 8, true, false, &lp);
    const auto a = pairwise_dpo_loss(g, lp, cfg, PairMode::random, 42);
    const auto b = pairwise_dpo_loss(g, lp, cfg, PairMode::random, 42);
    CHECK(a.value == b.value);
    CHECK(a.grad_wrt_logprob_theta == b.grad_wrt_logprob_theta);
    int touched = 0;
    for (const double d : a.grad_wrt_logprob_theta) touched += d != 0.0;
    CHECK(touched == 2);
  }
  {
    const std::vector<double> lp{-1.0, -2.0};
    const auto g = group_from({0.1, 0.1}, lp);
    CHECK_THROWS_WITH_AS(pairwise_dpo_loss(g, lp, cfg, PairMode::all, 0),
                         "no negatives for pairwise objective", std::invalid_argument);
  }
}

TEST_CASE("grpo_advantage") {
  {
    const auto a = grpo_advantage(std::vector<double>{1, 0, 0, 1});
    CHECK(a[0] == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(a[1] == doctest::Approx(-1.0).epsilon(1e-5));
  }
  {
    const auto a = grpo_advantage(std::vector<double>{1, 1, 1, 1});
    for (const double v : a) CHECK(v == 0.0);
  }
  {
    const auto a = grpo_advantage(std::vector<double>{1, 0.1, 0, 0});
    CHECK(a[0] == doctest::Approx(kGrpoAdvHigh).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(kGrpoAdvMid).epsilon(1e-12));
    CHECK(a[2] == doctest::Approx(kGrpoAdvLow).epsilon(1e-12));
    CHECK(a[3] == doctest::Approx(kGrpoAdvLow).epsilon(1e-12));
  }
  {
    // mean-zero property on random nonconstant reward vectors
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
      const int k = 2 + static_cast<int>(rng.uniform_index(7));
      std::vector<double> r(k);
      for (double& x : r) x = rng.uniform();
      const auto a = grpo_advantage(r);
      double mean = 0.0;
      for (const double v : a) mean += v;
      CHECK(std::abs(mean / k) <= 1e-9);
    }
  }
  CHECK_THROWS_AS(grpo_advantage(std::vector<double>{1.0}), std::invalid_argument);
}

namespace {
struct PgCase {
  RolloutGroup group;
  std::vector<std::vector<double>> lp_theta, lp_old;
  std::vector<double> adv;
};

// Token log-ratios kept away from the clip kinks so finite differences are
// valid: |u| <= 0.12, or u in [0.3, 0.6] (clipped high), or [-0.6, -0.3].
PgCase random_pg_case(Rng& rng, int k, double clip_low, double clip_high) {
  PgCase out;
  std::vector<double> rewards(k);
  while (true) {
    for (double& r : rewards) r = rng.uniform_index(2) == 0 ? 0.0 : 1.0;
    double mn = rewards[0], mx = rewards[0];
    for (const double r : rewards) {
      mn = std::min(mn, r);
      mx = std::max(mx, r);
    }
    if (mn < mx) break;
  }
  std::vector<RolloutRecord> records;
  for (int i = 0; i < k; ++i) {
    const int len = 1 + static_cast<int>(rng.uniform_index(5));
    RolloutRecord r;
    r.reward = rewards[i];
    r.length = len;
    r.tokens.assign(len, 0);
    std::vector<double> old_t(len), theta_t(len);
    for (int t = 0; t < len; ++t) {
      old_t[t] = -(0.5 + rng.uniform() * 3.0);
      double u = 0.0;
      switch (rng.uniform_index(3)) {
        case 0: u = (rng.uniform() - 0.5) * 0.24; break;
        case 1: u = 0.3 + rng.uniform() * 0.3; break;
        default: u = -0.3 - rng.uniform() * 0.3; break;
      }
      theta_t[t] = old_t[t] + u;
    }
    r.per_token_logprob_old = old_t;
    r.logprob_old = 0.0;
    for (const double v : old_t) r.logprob_old += v;
    records.push_back(r);
    out.lp_old.push_back(old_t);
    out.lp_theta.push_back(theta_t);
  }
  out.group = make_group("pg", std::move(records));
  std::vector<double> rw(k);
  for (int i = 0; i < k; ++i) rw[i] = out.group.records[i].reward;
  out.adv = grpo_advantage(rw);
  (void)clip_low;
  (void)clip_high;
  return out;
}
}  // namespace

TEST_CASE("clipped_pg_loss fixed points") {
  Rng rng(3);
  for (const PgNorm norm : {PgNorm::sequence, PgNorm::token}) {
    std::vector<double> lp_dummy;
    const auto g = random_group(rng, 4, true, true, &lp_dummy);
    std::vector<std::vector<double>> lp_old(4), lp_theta(4);
    for (int i = 0; i < 4; ++i) {
      lp_old[i] = g.records[i].per_token_logprob_old;
      lp_theta[i] = lp_old[i];  // unit ratio everywhere
    }
    std::vector<double> rewards(4);
    for (int i = 0; i < 4; ++i) rewards[i] = g.records[i].reward;
    const auto adv = grpo_advantage(rewards);
    const auto gl = clipped_pg_loss(g, lp_theta, lp_old, adv, 0.2, 0.2, norm);
    double expected = 0.0;
    if (norm == PgNorm::sequence) {
      for (const double a : adv) expected += -a / 4.0;
    } else {
      std::size_t total = 0;
      for (const auto& v : lp_old) total += v.size();
      for (int i = 0; i < 4; ++i) expected += -adv[i] * lp_old[i].size() / double(total);
    }
    CHECK(gl.value == doctest::Approx(expected).epsilon(1e-12));
  }
  {
    // zero advantages: zero loss and gradient
    std::vector<double> lp_dummy;
    const auto g = random_group(rng, 4, true, true, &lp_dummy);
    std::vector<std::vector<double>> lp_old(4);
    for (int i = 0; i < 4; ++i) lp_old[i] = g.records[i].per_token_logprob_old;
    const std::vector<double> adv(4, 0.0);
    const auto gl = clipped_pg_loss(g, lp_old, lp_old, adv, 0.2, 0.28, PgNorm::token);
    CHECK(gl.value == 0.0);
    for (const auto& row : gl.grad_wrt_logprob_tokens) {
      for (const double v : row) CHECK(v == 0.0);
    }
  }
  {
    // length misalignment
    std::vector<double> lp_dummy;
    const auto g = random_group(rng, 2, true, true, &lp_dummy);
    std::vector<std::vector<double>> lp_old(2), lp_theta(2);
    for (int i = 0; i < 2; ++i) lp_old[i] = g.records[i].per_token_logprob_old;
    lp_theta = lp_old;
    lp_theta[0].push_back(-1.0);
    CHECK_THROWS_AS(
        clipped_pg_loss(g, lp_theta, lp_old, std::vector<double>{1.0, -1.0}, 0.2, 0.2, PgNorm::token),
        std::invalid_argument);
  }
}

TEST_CASE("kl_estimate") {
  CHECK(kl_estimate(-3.0, -3.0) == 0.0);
  CHECK(kl_estimate(-3.0 + kLog2, -3.0) == doctest::Approx(kOneMinusLn2).epsilon(1e-12));
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const double lo = -(rng.uniform() * 20 + 0.1);
    const double u = (rng.uniform() - 0.5) * 8;
    CHECK(kl_estimate(lo + u, lo) >= 0.0);
    if (std::abs(u) > 1e-6) CHECK(kl_estimate(lo + u, lo) > 0.0);
  }
}

TEST_CASE("rence_loss composition") {
  ObjectiveConfig cfg;  // mnce, beta 0.1, alpha 0.5, reward_scaled
  {
    // kl_coef = 0 equals the bare contrastive loss
    Rng rng(21);
    std::vector<double> lp;
    const auto g = random_group(rng, 8, true, false, &lp);
    const auto bare = mnce_loss(g, lp, cfg);
    const auto composite = rence_loss(g, lp, 0.0, cfg);
    CHECK(bare.value == composite.value);
    CHECK(bare.grad_wrt_logprob_theta == composite.grad_wrt_logprob_theta);
  }
  {
    // theta == old: the KL term adds exactly zero value and zero gradient
    const std::vector<double> lp{-2, -4, -6};
    const auto g = group_from({1, 0.1, 0}, lp);
    const auto with_kl = rence_loss(g, lp, 0.7, cfg);
    const auto without = rence_loss(g, lp, 0.0, cfg);
    CHECK(with_kl.value == without.value);
    CHECK(with_kl.grad_wrt_logprob_theta == without.grad_wrt_logprob_theta);
  }
  {
    // frozen composite value on a 3-rollout group: u = (0.2, -0.1, 0.3)
    const std::vector<double> lp_old{-5.0, -6.0, -7.0};
    const std::vector<double> lp{-4.8, -6.1, -6.7};
    const auto g = group_from({1, 0.1, 0}, lp_old);
    const auto gl = rence_loss(g, lp, 0.04, cfg);
    CHECK(gl.value == doctest::Approx(kComposite3).epsilon(1e-12));
  }
}

TEST_CASE("translation invariance of contrastive losses") {
  Rng rng(33);
  ObjectiveConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> lp;
    const auto g = random_group(rng, 8, true, false, &lp);
    const double shift = (rng.uniform() - 0.5) * 40.0 / cfg.beta;
    std::vector<double> lp_shifted = lp;
    for (double& v : lp_shifted) v += shift;  // shifts every score by beta*shift
    CHECK(mnce_loss(g, lp_shifted, cfg).value ==
          doctest::Approx(mnce_loss(g, lp, cfg).value).epsilon(1e-9));
    CHECK(softmax_contrastive_loss(g, lp_shifted, cfg).value ==
          doctest::Approx(softmax_contrastive_loss(g, lp, cfg).value).epsilon(1e-9));
    CHECK(pairwise_dpo_loss(g, lp_shifted, cfg, PairMode::all, 7).value ==
          doctest::Approx(pairwise_dpo_loss(g, lp, cfg, PairMode::all, 7).value).epsilon(1e-9));
  }
}

TEST_CASE("analytic gradients match finite differences on random groups") {
  Rng rng(1234);
  ObjectiveConfig cfg;
  int checked = 0;
  for (const int k : {2, 4, 8}) {
    for (int trial = 0; trial < 34; ++trial) {
      std::vector<double> lp;
      const auto g = random_group(rng, k, true, false, &lp);
      const std::uint64_t seed = rng.next_u64();

      const auto check_grad = [&](auto loss_fn) {
        const auto gl = loss_fn(std::span<const double>(lp));
        const auto fd = fd_grad_logprob(
            [&](std::span<const double> x) { return loss_fn(x).value; }, lp);
        CHECK(grad_close(gl.grad_wrt_logprob_theta, fd, 1e-4));
      };
      check_grad([&](std::span<const double> x) { return mnce_loss(g, x, cfg); });
      check_grad([&](std::span<const double> x) { return softmax_contrastive_loss(g, x, cfg); });
      check_grad([&](std::span<const double> x) {
        return pairwise_dpo_loss(g, x, cfg, PairMode::random, seed);
      });
      check_grad([&](std::span<const double> x) {
        return pairwise_dpo_loss(g, x, cfg, PairMode::all, 0);
      });
      check_grad([&](std::span<const double> x) { return rence_loss(g, x, 0.3, cfg); });
      ++checked;
    }
  }
  CHECK(checked >= 100);
}

TEST_CASE("clipped_pg gradient matches uniform-shift finite differences") {
  Rng rng(77);
  for (const PgNorm norm : {PgNorm::sequence, PgNorm::token}) {
    for (int trial = 0; trial < 25; ++trial) {
      const int k = 2 + static_cast<int>(rng.uniform_index(7));
      PgCase c = random_pg_case(rng, k, 0.2, 0.28);
      const auto gl = clipped_pg_loss(c.group, c.lp_theta, c.lp_old, c.adv, 0.2, 0.28, norm);
      // finite differences in the per-rollout direction (all tokens shifted)
      const double h = 1e-5;
      for (int i = 0; i < k; ++i) {
        auto shifted = c.lp_theta;
        for (double& v : shifted[i]) v += h;
        const double up = clipped_pg_loss(c.group, shifted, c.lp_old, c.adv, 0.2, 0.28, norm).value;
        for (double& v : shifted[i]) v -= 2 * h;
        const double down =
            clipped_pg_loss(c.group, shifted, c.lp_old, c.adv, 0.2, 0.28, norm).value;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(gl.grad_wrt_logprob_theta[i]), 1e-8});
        CHECK(std::abs(fd - gl.grad_wrt_logprob_theta[i]) / denom <= 1e-4);
      }
    }
  }
}

TEST_CASE("gradient direction at the anchor with margins enabled") {
  Rng rng(55);
  ObjectiveConfig cfg;  // alpha 0.5, reward_scaled
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> lp;
    const auto g = random_group(rng, 8, true, true, &lp);
    for (const auto gl : {mnce_loss(g, lp, cfg), softmax_contrastive_loss(g, lp, cfg),
                          pairwise_dpo_loss(g, lp, cfg, PairMode::all, 0)}) {
      for (const int p : g.positive_indices) CHECK(gl.grad_wrt_logprob_theta[p] < 0.0);
      for (const int n : g.negative_indices) CHECK(gl.grad_wrt_logprob_theta[n] > 0.0);
    }
  }
}

TEST_CASE("gradient vanishing without margin: exact uniform-softmax values") {
  ObjectiveConfig cfg;
  cfg.alpha = 0.0;
  for (const int k : {2, 4, 8}) {
    std::vector<double> rewards(k, 0.0);
    rewards[0] = 1.0;
    std::vector<double> lp(k, -4.0);
    const auto g = group_from(rewards, lp);
    const auto gl = mnce_loss(g, lp, cfg);
    CHECK(gl.grad_wrt_logprob_theta[0] ==
          doctest::Approx(-cfg.beta * (k - 1) / double(k)).epsilon(1e-12));
    for (int i = 1; i < k; ++i) {
      CHECK(gl.grad_wrt_logprob_theta[i] == doctest::Approx(cfg.beta / k).epsilon(1e-12));
    }
  }
}
