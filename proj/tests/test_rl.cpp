#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"

using namespace pvinspect;
using namespace pvinspect::rl;

namespace {

void expect_vec_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

TabularSequencePolicy random_policy(std::size_t vocab, std::size_t horizon, Rng& rng, double scale = 1.0) {
  TabularSequencePolicy p(vocab, horizon);
  for (double& t : p.theta()) t = scale * rng.normal();
  return p;
}

}  // namespace

TEST(Policy, SoftmaxRowsArePositiveAndNormalized) {
  Rng rng(3);
  const auto p = random_policy(4, 3, rng, 5.0);
  for (std::size_t s = 0; s < p.num_states(); ++s) {
    const auto pr = p.probs(s);
    double sum = 0.0;
    for (double v : pr) {
      EXPECT_GT(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Policy, SequenceProbabilitiesSumToOne) {
  Rng rng(4);
  const auto p = random_policy(3, 3, rng);
  const EnumerableEnv env(3, 3, std::vector<double>(27, 1.0));
  EXPECT_NEAR(expected_reward(p, env), 1.0, 1e-12);
}

TEST(Policy, RejectsBadSequences) {
  TabularSequencePolicy p(2, 3);
  EXPECT_EQ(testing_support::error_kind([&] { p.sequence_log_prob(Sequence{0, 1}); }), "ShapeMismatch");
  EXPECT_EQ(testing_support::error_kind([&] { p.sequence_log_prob(Sequence{0, 2, 1}); }), "ShapeMismatch");
}

TEST(Rloo, HandExamples) {
  expect_vec_near(rloo_advantages(std::vector<double>{1, 0}), {1, -1}, 1e-15);
  expect_vec_near(rloo_advantages(std::vector<double>{1, 1, 0, 0, 0, 0}), {0.8, 0.8, -0.4, -0.4, -0.4, -0.4}, 1e-15);
  expect_vec_near(rloo_advantages(std::vector<double>{0.3, 0.3, 0.3}), {0, 0, 0}, 1e-15);
}

TEST(Rloo, DegenerateGroup) {
  EXPECT_EQ(testing_support::error_kind([] { rloo_advantages(std::vector<double>{1}); }), "DegenerateGroup");
  EXPECT_EQ(testing_support::error_kind([] { rloo_advantages(std::vector<double>{}); }), "DegenerateGroup");
}

TEST(Rloo, AdvantagesSumToZero) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(2 + rng.below(7));
    for (double& v : r) v = rng.uniform(-3, 3);
    const auto a = rloo_advantages(r);
    EXPECT_LT(std::abs(std::accumulate(a.begin(), a.end(), 0.0)), 1e-12);
  }
}

TEST(Rloo, SingleGroupKTwoHandComputed) {
  const TabularSequencePolicy p(2, 1);  // uniform
  const std::vector<SampledGroup> groups = {{"g", {{0}, {1}}, {1.0, 0.0}, {}}};
  // a = [1, -1]; score(0) = (0.5, -0.5), score(1) = (-0.5, 0.5); (1/2)(score0 - score1)
  expect_vec_near(rloo_gradient(p, groups), {0.5, -0.5}, 1e-15);
}

TEST(Rloo, EqualRewardsGiveZeroGradient) {
  Rng rng(6);
  const auto p = random_policy(3, 2, rng);
  std::vector<SampledGroup> groups(3);
  for (auto& g : groups)
    for (int i = 0; i < 4; ++i) {
      g.samples.push_back(p.sample(rng));
      g.rewards.push_back(0.7);
    }
  for (double v : rloo_gradient(p, groups)) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Rloo, MonteCarloMatchesEnumeratedGradientOnBandit) {
  // d/dtheta_a E[R] = pi_a (r_a - E[R]) for a one-step softmax bandit.
  TabularSequencePolicy p(2, 1);
  p.theta()[0] = 0.3;
  p.theta()[1] = -0.2;
  const std::vector<double> r = {1.0, 0.0};
  const auto pi = p.probs(0);
  const double er = pi[0] * r[0] + pi[1] * r[1];
  const std::vector<double> exact = {pi[0] * (r[0] - er), pi[1] * (r[1] - er)};

  Rng rng(7);
  const int n = 20000;
  std::vector<double> mean(2, 0.0), sq(2, 0.0);
  for (int g = 0; g < n; ++g) {
    SampledGroup grp;
    for (int i = 0; i < 6; ++i) {
      grp.samples.push_back(p.sample(rng));
      grp.rewards.push_back(r[static_cast<std::size_t>(grp.samples.back()[0])]);
    }
    const auto est = rloo_gradient(p, std::span(&grp, 1));
    for (int j = 0; j < 2; ++j) {
      mean[j] += est[j];
      sq[j] += est[j] * est[j];
    }
  }
  for (int j = 0; j < 2; ++j) {
    mean[j] /= n;
    const double se = std::sqrt((sq[j] / n - mean[j] * mean[j]) / n);
    EXPECT_LT(std::abs(mean[j] - exact[j]), 3.0 * se + 1e-12) << j;
    EXPECT_LT(std::abs(mean[j] - exact[j]) / std::abs(exact[j]), 0.02) << j;
  }
}

TEST(Gae, HandExample) {
  const auto a = gae(std::vector<double>{0, 1}, std::vector<double>{0.5, 0.5, 0}, {0.9, 0.95});
  EXPECT_NEAR(a[1], 0.5, 1e-15);
  EXPECT_NEAR(a[0], 0.3775, 1e-15);
}

TEST(Gae, Reductions) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(10);
    std::vector<double> r(n), v(n + 1);
    for (double& x : r) x = rng.normal();
    for (double& x : v) x = rng.normal();
    const double gamma = rng.uniform();
    const auto td = gae(r, v, {gamma, 0.0});
    for (std::size_t t = 0; t < n; ++t) EXPECT_NEAR(td[t], r[t] + gamma * v[t + 1] - v[t], 1e-10);
    v[n] = 0.0;  // terminal
    const auto mc = gae(r, v, {1.0, 1.0});
    for (std::size_t t = 0; t < n; ++t) {
      double ret = 0.0;
      for (std::size_t s = t; s < n; ++s) ret += r[s];
      EXPECT_NEAR(mc[t], ret - v[t], 1e-10);
    }
  }
}

TEST(Gae, LengthMismatch) {
  EXPECT_EQ(testing_support::error_kind([] { gae(std::vector<double>{1, 2}, std::vector<double>{0, 0}); }),
            "LengthMismatch");
}

TEST(Ppo, RatioOneIsVanillaPolicyGradient) {
  Rng rng(9);
  const auto p = random_policy(3, 2, rng);
  std::vector<StateAction> acts;
  std::vector<double> old, adv;
  for (int i = 0; i < 10; ++i) {
    const auto seq = p.sample(rng);
    for (const auto& d : p.decisions(seq)) {
      acts.push_back(d);
      old.push_back(p.log_prob(d.state, d.action));
      adv.push_back(rng.normal());
    }
  }
  const auto res = ppo_objective(p, old, acts, adv, {});
  EXPECT_NEAR(res.objective, std::accumulate(adv.begin(), adv.end(), 0.0) / adv.size(), 1e-12);
  std::vector<double> vpg(p.num_params(), 0.0);
  for (std::size_t i = 0; i < acts.size(); ++i) p.add_token_score(acts[i], adv[i] / acts.size(), vpg);
  expect_vec_near(res.gradient, vpg, 1e-12);
}

TEST(Ppo, ClipRegionHasZeroGradient) {
  TabularSequencePolicy p(2, 1);
  p.theta()[0] = 1.0;
  const StateAction d{0, 0};
  const double old = std::log(0.5);  // rho = pi(0) / 0.5 > 1.2
  ASSERT_GT(std::exp(p.log_prob(0, 0) - old), 1.2);
  const auto res = ppo_objective(p, std::vector<double>{old}, std::vector<StateAction>{d}, std::vector<double>{2.0}, {});
  EXPECT_NEAR(res.objective, 1.2 * 2.0, 1e-12);
  for (double g : res.gradient) EXPECT_EQ(g, 0.0);
}

TEST(Ppo, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto p = random_policy(3, 2, rng, 0.5);
    std::vector<StateAction> acts;
    std::vector<double> old, adv;
    for (int i = 0; i < 6; ++i)
      for (const auto& d : p.decisions(p.sample(rng))) {
        acts.push_back(d);
        old.push_back(p.log_prob(d.state, d.action) + 0.3 * rng.normal());
        adv.push_back(rng.normal());
      }
    const PpoConfig cfg{};
    const auto res = ppo_objective(p, old, acts, adv, cfg);
    const double h = 1e-5;
    for (std::size_t j = 0; j < p.num_params(); ++j) {
      const double t0 = p.theta()[j];
      p.theta()[j] = t0 + h;
      const double up = ppo_objective(p, old, acts, adv, cfg).objective;
      p.theta()[j] = t0 - h;
      const double down = ppo_objective(p, old, acts, adv, cfg).objective;
      p.theta()[j] = t0;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(res.gradient[j], fd, 1e-6 + 1e-4 * std::abs(fd)) << "seed " << seed << " param " << j;
    }
  }
}

TEST(Kl, ReferenceEqualsPolicyGivesMeanReward) {
  Rng rng(10);
  const auto p = random_policy(3, 2, rng);
  std::vector<Sequence> ys;
  std::vector<double> rs;
  for (int i = 0; i < 8; ++i) {
    ys.push_back(p.sample(rng));
    rs.push_back(rng.normal());
  }
  const double mean = std::accumulate(rs.begin(), rs.end(), 0.0) / rs.size();
  EXPECT_NEAR(kl_regularized_objective(p, p, ys, rs, 0.5), mean, 1e-12);
  const auto q = random_policy(3, 2, rng);
  EXPECT_NEAR(kl_regularized_objective(q, p, ys, rs, 0.0), mean, 1e-12);
}

TEST(Kl, BanditHandEvaluation) {
  TabularSequencePolicy pi(2, 1), ref(2, 1);
  pi.theta()[0] = std::log(0.8);
  pi.theta()[1] = std::log(0.2);
  const std::vector<Sequence> ys = {{0}, {1}};
  const std::vector<double> rs = {1.0, 0.0};
  // log-ratios log(0.8/0.5) and log(0.2/0.5)
  const double expected = 0.5 * ((1.0 - 0.1 * std::log(1.6)) + (0.0 - 0.1 * std::log(0.4)));
  EXPECT_NEAR(kl_regularized_objective(pi, ref, ys, rs, 0.1), expected, 1e-14);
}

TEST(Env, IndexingRoundTrip) {
  const EnumerableEnv env = EnumerableEnv::chain(3, {2, 0, 1});
  for (std::size_t i = 0; i < env.num_sequences(); ++i) EXPECT_EQ(env.index_of(env.sequence_at(i)), i);
  EXPECT_EQ(env.reward(Sequence{2, 0, 1}), 1.0);
  EXPECT_EQ(env.reward(Sequence{2, 0, 0}), 0.0);
}

TEST(TrainToy, BanditConvergesForBothMethods) {
  for (Method m : {Method::RLOO, Method::PPO}) {
    TabularSequencePolicy p(2, 1);
    ToyTrainConfig cfg;
    cfg.method = m;
    const auto trace = train_toy(p, EnumerableEnv::bandit({1.0, 0.0}), cfg, 500, 1);
    ASSERT_EQ(trace.size(), 501u);
    EXPECT_NEAR(trace.front().expected_reward, 0.5, 1e-12);
    EXPECT_GE(trace.back().expected_reward, 0.95) << to_string(m);
  }
}

TEST(TrainToy, ChainImproves) {
  for (Method m : {Method::RLOO, Method::PPO}) {
    TabularSequencePolicy p(3, 3);
    ToyTrainConfig cfg;
    cfg.method = m;
    const auto trace = train_toy(p, EnumerableEnv::chain(3, {0, 1, 2}), cfg, 300, 2);
    EXPECT_GT(trace.back().expected_reward, 0.5) << to_string(m);
  }
}

TEST(TrainToy, ZeroLearningRateIsFlat) {
  for (Method m : {Method::RLOO, Method::PPO}) {
    TabularSequencePolicy p(2, 1);
    ToyTrainConfig cfg;
    cfg.method = m;
    cfg.rloo_lr = 0.0;
    cfg.ppo.actor_lr = 0.0;
    for (const auto& tp : train_toy(p, EnumerableEnv::bandit({1.0, 0.0}), cfg, 50, 3))
      EXPECT_EQ(tp.expected_reward, 0.5);
  }
}

TEST(TrainToy, DeterministicPerSeed) {
  for (Method m : {Method::RLOO, Method::PPO}) {
    ToyTrainConfig cfg;
    cfg.method = m;
    const auto env = EnumerableEnv::bandit({1.0, 0.0, 0.5});
    TabularSequencePolicy a3(3, 1), b3(3, 1), c3(3, 1);
    const auto ta = train_toy(a3, env, cfg, 100, 42);
    const auto tb = train_toy(b3, env, cfg, 100, 42);
    const auto tc = train_toy(c3, env, cfg, 100, 43);
    EXPECT_EQ(ta, tb);
    EXPECT_NE(ta, tc);
  }
}
