#pragma once

// Desk-scale policy-gradient machinery: leave-one-out (RLOO) advantages and
// gradient, generalized advantage estimation, the PPO clipped surrogate with
// its analytic gradient, the KL-regularized reward objective, and a toy
// training harness over enumerable environments.
//
// The policy is a tabular categorical sequence model: the state at position t
// is (t, previous action) and each state owns a row of logits. A sequence
// log-probability is the sum of per-token log-probabilities and rewards are
// terminal.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pvinspect/error.hpp"
#include "pvinspect/random.hpp"

namespace pvinspect::rl {

using Sequence = std::vector<int>;

struct StateAction {
  std::size_t state = 0;
  int action = 0;

  bool operator==(const StateAction&) const = default;
};

class TabularSequencePolicy {
 public:
  TabularSequencePolicy(std::size_t vocab, std::size_t horizon)
      : vocab_(vocab), horizon_(horizon), theta_(num_states_for(vocab, horizon) * vocab, 0.0) {
    if (vocab < 1 || horizon < 1) throw config_error("InvalidPolicy", "policy needs vocab >= 1 and horizon >= 1");
  }

  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_states() const noexcept { return num_states_for(vocab_, horizon_); }
  std::size_t num_params() const noexcept { return theta_.size(); }

  std::span<double> theta() noexcept { return theta_; }
  std::span<const double> theta() const noexcept { return theta_; }

  std::size_t state_for(std::size_t t, int prev_action) const noexcept {
    return t == 0 ? 0 : 1 + (t - 1) * vocab_ + static_cast<std::size_t>(prev_action);
  }

  std::span<const double> logits(std::size_t state) const { return {theta_.data() + state * vocab_, vocab_}; }

  // Softmax of the state's logits, max-shifted.
  std::vector<double> probs(std::size_t state) const {
    auto z = logits(state);
    const double m = *std::max_element(z.begin(), z.end());
    std::vector<double> p(vocab_);
    double sum = 0.0;
    for (std::size_t a = 0; a < vocab_; ++a) sum += (p[a] = std::exp(z[a] - m));
    for (double& v : p) v /= sum;
    return p;
  }

  double log_prob(std::size_t state, int action) const {
    auto z = logits(state);
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    return z[static_cast<std::size_t>(action)] - m - std::log(sum);
  }

  std::vector<StateAction> decisions(std::span<const int> seq) const {
    check_sequence(seq);
    std::vector<StateAction> out;
    out.reserve(seq.size());
    int prev = 0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      out.push_back({state_for(t, prev), seq[t]});
      prev = seq[t];
    }
    return out;
  }

  double sequence_log_prob(std::span<const int> seq) const {
    double lp = 0.0;
    for (const auto& d : decisions(seq)) lp += log_prob(d.state, d.action);
    return lp;
  }

  // grad += weight * d/dtheta log pi(action | state)
  void add_token_score(StateAction d, double weight, std::span<double> grad) const {
    const auto p = probs(d.state);
    double* row = grad.data() + d.state * vocab_;
    for (std::size_t a = 0; a < vocab_; ++a) row[a] -= weight * p[a];
    row[static_cast<std::size_t>(d.action)] += weight;
  }

  void add_sequence_score(std::span<const int> seq, double weight, std::span<double> grad) const {
    for (const auto& d : decisions(seq)) add_token_score(d, weight, grad);
  }

  Sequence sample(Rng& rng) const {
    Sequence seq(horizon_);
    int prev = 0;
    for (std::size_t t = 0; t < horizon_; ++t) {
      const auto p = probs(state_for(t, prev));
      seq[t] = prev = static_cast<int>(rng.categorical(p));
    }
    return seq;
  }

 private:
  static std::size_t num_states_for(std::size_t vocab, std::size_t horizon) noexcept {
    return horizon == 0 ? 0 : 1 + (horizon - 1) * vocab;
  }

  void check_sequence(std::span<const int> seq) const {
    if (seq.size() != horizon_)
      throw input_error("ShapeMismatch", "sequence length " + std::to_string(seq.size()) + " != horizon " +
                                             std::to_string(horizon_));
    for (int a : seq)
      if (a < 0 || static_cast<std::size_t>(a) >= vocab_)
        throw input_error("ShapeMismatch", "action " + std::to_string(a) + " outside vocabulary");
  }

  std::size_t vocab_;
  std::size_t horizon_;
  std::vector<double> theta_;
};

// ---------------------------------------------------------------------------
// Leave-one-out estimator
// ---------------------------------------------------------------------------

struct SampledGroup {
  std::string prompt_id;
  std::vector<Sequence> samples;
  std::vector<double> rewards;
  std::vector<double> logprobs;
};

// a_i = R_i - mean of the other K-1 rewards.
inline std::vector<double> rloo_advantages(std::span<const double> rewards) {
  const std::size_t k = rewards.size();
  if (k < 2) throw input_error("DegenerateGroup", "leave-one-out baseline needs K >= 2, got " + std::to_string(k));
  double total = 0.0;
  for (double r : rewards) total += r;
  std::vector<double> a(k);
  const double denom = static_cast<double>(k - 1);
  for (std::size_t i = 0; i < k; ++i) a[i] = rewards[i] - (total - rewards[i]) / denom;
  return a;
}

// (1/K) sum_i a_i grad log pi(y_i), averaged over groups.
inline std::vector<double> rloo_gradient(const TabularSequencePolicy& policy, std::span<const SampledGroup> groups) {
  std::vector<double> grad(policy.num_params(), 0.0);
  if (groups.empty()) return grad;
  for (const auto& g : groups) {
    if (g.samples.size() != g.rewards.size())
      throw input_error("ShapeMismatch", "group '" + g.prompt_id + "' has mismatched samples and rewards");
    const auto adv = rloo_advantages(g.rewards);
    const double w = 1.0 / (static_cast<double>(adv.size()) * static_cast<double>(groups.size()));
    for (std::size_t i = 0; i < adv.size(); ++i) policy.add_sequence_score(g.samples[i], w * adv[i], grad);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Generalized advantage estimation
// ---------------------------------------------------------------------------

struct GaeConfig {
  double gamma = 1.0;
  double lambda = 0.95;

  void validate() const {
    if (!(gamma >= 0.0 && gamma <= 1.0) || !(lambda >= 0.0 && lambda <= 1.0))
      throw config_error("InvalidGaeConfig", "gamma and lambda must lie in [0, 1]");
  }
};

// values carries one bootstrap entry past the last reward.
inline std::vector<double> gae(std::span<const double> rewards, std::span<const double> values,
                               const GaeConfig& config = {}) {
  config.validate();
  if (values.size() != rewards.size() + 1)
    throw input_error("LengthMismatch", "gae needs len(values) == len(rewards) + 1");
  std::vector<double> adv(rewards.size());
  double running = 0.0;
  for (std::size_t t = rewards.size(); t-- > 0;) {
    const double delta = rewards[t] + config.gamma * values[t + 1] - values[t];
    running = delta + config.gamma * config.lambda * running;
    adv[t] = running;
  }
  return adv;
}

// ---------------------------------------------------------------------------
// PPO clipped surrogate
// ---------------------------------------------------------------------------

struct PpoConfig {
  double clip_eps = 0.2;
  double kl_beta = 0.001;
  double actor_lr = 1e-6;
  std::size_t batch_size = 16;

  void validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw config_error("InvalidPpoConfig", "clip_eps must lie in (0, 1)");
    if (!(kl_beta >= 0.0)) throw config_error("InvalidPpoConfig", "kl_beta must be nonnegative");
    if (!(actor_lr >= 0.0)) throw config_error("InvalidPpoConfig", "actor_lr must be nonnegative");
    if (batch_size < 1) throw config_error("InvalidPpoConfig", "batch_size must be positive");
  }
};

struct PpoResult {
  double objective = 0.0;
  std::vector<double> gradient;
};

// Mean over samples of min(rho*A, clip(rho, 1-eps, 1+eps)*A) with
// rho = exp(log pi(a|s) - old_logprob), and its gradient. Where the clipped
// term is strictly smaller the sample contributes no gradient.
inline PpoResult ppo_objective(const TabularSequencePolicy& policy, std::span<const double> old_logprobs,
                               std::span<const StateAction> actions, std::span<const double> advantages,
                               const PpoConfig& config) {
  config.validate();
  if (old_logprobs.size() != actions.size() || advantages.size() != actions.size())
    throw input_error("ShapeMismatch", "ppo_objective inputs must have equal length");
  PpoResult out{0.0, std::vector<double>(policy.num_params(), 0.0)};
  if (actions.empty()) return out;
  const double n = static_cast<double>(actions.size());
  for (std::size_t i = 0; i < actions.size(); ++i) {
    const double rho = std::exp(policy.log_prob(actions[i].state, actions[i].action) - old_logprobs[i]);
    const double a = advantages[i];
    const double unclipped = rho * a;
    const double clipped = std::clamp(rho, 1.0 - config.clip_eps, 1.0 + config.clip_eps) * a;
    if (clipped < unclipped) {
      out.objective += clipped;
    } else {
      out.objective += unclipped;
      policy.add_token_score(actions[i], unclipped / n, out.gradient);
    }
  }
  out.objective /= n;
  return out;
}

// Monte Carlo estimate of E[R_total - beta * (log pi(y) - log pi_ref(y))].
inline double kl_regularized_objective(const TabularSequencePolicy& policy, const TabularSequencePolicy& ref_policy,
                                       std::span<const Sequence> samples, std::span<const double> rewards_total,
                                       double beta) {
  if (samples.size() != rewards_total.size())
    throw input_error("ShapeMismatch", "kl objective needs one reward per sample");
  if (policy.vocab() != ref_policy.vocab() || policy.horizon() != ref_policy.horizon())
    throw input_error("ShapeMismatch", "policy and reference policy differ in shape");
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double log_ratio = policy.sequence_log_prob(samples[i]) - ref_policy.sequence_log_prob(samples[i]);
    acc += rewards_total[i] - beta * log_ratio;
  }
  return acc / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Enumerable environments and the toy harness
// ---------------------------------------------------------------------------

// Terminal reward over every sequence in vocab^horizon, indexed base-vocab
// with the first action as the most significant digit.
class EnumerableEnv {
 public:
  EnumerableEnv(std::size_t vocab, std::size_t horizon, std::vector<double> rewards)
      : vocab_(vocab), horizon_(horizon), rewards_(std::move(rewards)) {
    std::size_t n = 1;
    for (std::size_t t = 0; t < horizon; ++t) n *= vocab;
    if (vocab < 1 || horizon < 1 || rewards_.size() != n)
      throw config_error("InvalidEnv", "reward table must have vocab^horizon entries");
  }

  static EnumerableEnv bandit(std::vector<double> arm_rewards) {
    const std::size_t k = arm_rewards.size();
    return EnumerableEnv(k, 1, std::move(arm_rewards));
  }

  // Reward 1 for the single target sequence, 0 otherwise.
  static EnumerableEnv chain(std::size_t vocab, const Sequence& target) {
    std::size_t n = 1;
    for (std::size_t t = 0; t < target.size(); ++t) n *= vocab;
    std::vector<double> r(n, 0.0);
    EnumerableEnv env(vocab, target.size(), std::move(r));
    env.rewards_[env.index_of(target)] = 1.0;
    return env;
  }

  std::size_t vocab() const noexcept { return vocab_; }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t num_sequences() const noexcept { return rewards_.size(); }

  std::size_t index_of(std::span<const int> seq) const {
    std::size_t idx = 0;
    for (int a : seq) idx = idx * vocab_ + static_cast<std::size_t>(a);
    return idx;
  }

  Sequence sequence_at(std::size_t idx) const {
    Sequence seq(horizon_);
    for (std::size_t t = horizon_; t-- > 0;) {
      seq[t] = static_cast<int>(idx % vocab_);
      idx /= vocab_;
    }
    return seq;
  }

  double reward(std::span<const int> seq) const { return rewards_[index_of(seq)]; }

 private:
  std::size_t vocab_;
  std::size_t horizon_;
  std::vector<double> rewards_;
};

inline double expected_reward(const TabularSequencePolicy& policy, const EnumerableEnv& env) {
  double acc = 0.0;
  for (std::size_t i = 0; i < env.num_sequences(); ++i) {
    const Sequence seq = env.sequence_at(i);
    acc += std::exp(policy.sequence_log_prob(seq)) * env.reward(seq);
  }
  return acc;
}

enum class Method { RLOO, PPO };

inline constexpr std::string_view to_string(Method m) noexcept { return m == Method::RLOO ? "rloo" : "ppo"; }

inline Method parse_method(std::string_view s) {
  if (s == "rloo" || s == "RLOO") return Method::RLOO;
  if (s == "ppo" || s == "PPO") return Method::PPO;
  throw config_error("InvalidMethod", "unknown method '" + std::string(s) + "'");
}

struct ToyTrainConfig {
  Method method = Method::RLOO;
  std::size_t k = 6;                // samples per RLOO group
  std::size_t groups_per_step = 1;  // RLOO groups per update
  double rloo_lr = 0.5;
  PpoConfig ppo{0.2, 0.001, 0.5, 16};
  std::size_t ppo_epochs = 4;
  GaeConfig gae;

  void validate() const {
    if (k < 2) throw config_error("InvalidRlConfig", "K must be at least 2");
    if (groups_per_step < 1) throw config_error("InvalidRlConfig", "groups_per_step must be positive");
    if (!(rloo_lr >= 0.0)) throw config_error("InvalidRlConfig", "learning rate must be nonnegative");
    if (ppo_epochs < 1) throw config_error("InvalidRlConfig", "ppo_epochs must be positive");
    ppo.validate();
    gae.validate();
  }
};

struct TracePoint {
  std::size_t step = 0;
  double expected_reward = 0.0;

  bool operator==(const TracePoint&) const = default;
};

namespace detail {

inline void rloo_step(TabularSequencePolicy& policy, const EnumerableEnv& env, const ToyTrainConfig& cfg,
                      std::uint64_t seed, std::size_t step) {
  std::vector<SampledGroup> groups(cfg.groups_per_step);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    Rng rng(derive_seed(seed, 0x524C4F4Fu, step, g));
    auto& grp = groups[g];
    grp.prompt_id = "step" + std::to_string(step) + "/group" + std::to_string(g);
    for (std::size_t i = 0; i < cfg.k; ++i) {
      grp.samples.push_back(policy.sample(rng));
      grp.rewards.push_back(env.reward(grp.samples.back()));
      grp.logprobs.push_back(policy.sequence_log_prob(grp.samples.back()));
    }
  }
  const auto grad = rloo_gradient(policy, groups);
  auto theta = policy.theta();
  for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += cfg.rloo_lr * grad[j];
}

inline void ppo_step(TabularSequencePolicy& policy, const TabularSequencePolicy& ref, const EnumerableEnv& env,
                     const ToyTrainConfig& cfg, std::uint64_t seed, std::size_t step) {
  const std::size_t horizon = policy.horizon();
  std::vector<std::vector<StateAction>> traj(cfg.ppo.batch_size);
  std::vector<std::vector<double>> token_rewards(cfg.ppo.batch_size, std::vector<double>(horizon, 0.0));
  for (std::size_t b = 0; b < traj.size(); ++b) {
    Rng rng(derive_seed(seed, 0x50504Fu, step, b));
    const Sequence y = policy.sample(rng);
    traj[b] = policy.decisions(y);
    // KL penalty folded into the terminal reward.
    const double log_ratio = policy.sequence_log_prob(y) - ref.sequence_log_prob(y);
    token_rewards[b][horizon - 1] = env.reward(y) - cfg.ppo.kl_beta * log_ratio;
  }

  // Tabular critic: least-squares fit of per-state returns is their mean.
  std::vector<double> value_sum(policy.num_states(), 0.0), value_n(policy.num_states(), 0.0);
  for (std::size_t b = 0; b < traj.size(); ++b) {
    double ret = 0.0;
    for (std::size_t t = horizon; t-- > 0;) {
      ret = token_rewards[b][t] + cfg.gae.gamma * ret;
      value_sum[traj[b][t].state] += ret;
      value_n[traj[b][t].state] += 1.0;
    }
  }
  auto value_of = [&](std::size_t s) { return value_n[s] > 0 ? value_sum[s] / value_n[s] : 0.0; };

  std::vector<StateAction> actions;
  std::vector<double> old_logprobs, advantages;
  for (std::size_t b = 0; b < traj.size(); ++b) {
    std::vector<double> values(horizon + 1, 0.0);
    for (std::size_t t = 0; t < horizon; ++t) values[t] = value_of(traj[b][t].state);
    const auto adv = gae(token_rewards[b], values, cfg.gae);
    for (std::size_t t = 0; t < horizon; ++t) {
      actions.push_back(traj[b][t]);
      old_logprobs.push_back(policy.log_prob(traj[b][t].state, traj[b][t].action));
      advantages.push_back(adv[t]);
    }
  }

  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    const auto res = ppo_objective(policy, old_logprobs, actions, advantages, cfg.ppo);
    auto theta = policy.theta();
    for (std::size_t j = 0; j < theta.size(); ++j) theta[j] += cfg.ppo.actor_lr * res.gradient[j];
  }
}

}  // namespace detail

// Trains in place and returns expected reward before training (step 0) and
// after each of `steps` updates. Deterministic for a given seed.
inline std::vector<TracePoint> train_toy(TabularSequencePolicy& policy, const EnumerableEnv& env,
                                         const ToyTrainConfig& config, std::size_t steps, std::uint64_t seed) {
  config.validate();
  if (policy.vocab() != env.vocab() || policy.horizon() != env.horizon())
    throw config_error("InvalidEnv", "policy and environment shapes differ");
  const TabularSequencePolicy ref = policy;
  std::vector<TracePoint> trace;
  trace.reserve(steps + 1);
  trace.push_back({0, expected_reward(policy, env)});
  for (std::size_t s = 1; s <= steps; ++s) {
    if (config.method == Method::RLOO)
      detail::rloo_step(policy, env, config, seed, s);
    else
      detail::ppo_step(policy, ref, env, config, seed, s);
    trace.push_back({s, expected_reward(policy, env)});
  }
  return trace;
}

}  // namespace pvinspect::rl
