#include "ddtrl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ddtrl/error.hpp"
#include "ddtrl/parallel.hpp"
#include "ddtrl/preferences.hpp"

namespace ddtrl {

// --------------------------------------------------------------- gridworld

TabularPolicy::TabularPolicy(std::size_t cells, std::size_t horizon)
    : cells_(cells), horizon_(horizon), table_(cells * (horizon > 0 ? horizon - 1 : 0)) {
  if (horizon == 0) throw ConfigError("horizon must be >= 1");
  for (auto& p : table_) p = {1.0, 0.0, 0.0, 0.0};
}

TabularPolicy TabularPolicy::uniform(std::size_t cells, std::size_t horizon) {
  TabularPolicy pi(cells, horizon);
  for (auto& p : pi.table_) p.fill(1.0 / static_cast<double>(kGridActions));
  return pi;
}

void TabularPolicy::set(std::size_t step, std::size_t cell, const ActionProbs& probs) {
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw ConfigError("action probabilities must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("action probabilities must sum to 1");
  table_.at(step * cells_ + cell) = probs;
}

void TabularPolicy::set_action(std::size_t step, std::size_t cell, GridAction action) {
  ActionProbs p{};
  p[static_cast<std::size_t>(action)] = 1.0;
  table_.at(step * cells_ + cell) = p;
}

double PlanResult::mean_value() const {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

namespace {

double expected_next(const GridworldMDP& mdp, std::size_t cell, GridAction a, const std::vector<double>& v) {
  double total = 0.0;
  for (const auto& t : gridworld_transition_dist(mdp, cell, a)) total += t.probability * v[t.cell];
  return total;
}

}  // namespace

PlanResult value_iteration(const GridworldMDP& mdp, std::span<const double> cell_rewards, std::size_t horizon) {
  if (horizon == 0) throw ConfigError("horizon must be >= 1");
  const std::size_t n = mdp.cell_count();
  if (cell_rewards.size() != n) throw ShapeError("value_iteration: one reward per cell required");
  PlanResult out{TabularPolicy(n, horizon), {}};
  std::vector<double> v(cell_rewards.begin(), cell_rewards.end());
  for (std::size_t step = horizon - 1; step-- > 0;) {
    std::vector<double> next(n);
    for (std::size_t c = 0; c < n; ++c) {
      std::size_t best = 0;
      double best_q = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < kGridActions; ++a) {
        const double q = expected_next(mdp, c, static_cast<GridAction>(a), v);
        if (q > best_q) {
          best_q = q;
          best = a;
        }
      }
      out.policy.set_action(step, c, static_cast<GridAction>(best));
      next[c] = cell_rewards[c] + best_q;
    }
    v = std::move(next);
  }
  out.values = std::move(v);
  return out;
}

std::vector<double> evaluate_policy_gridworld(const GridworldMDP& mdp, const TabularPolicy& policy) {
  const std::size_t n = mdp.cell_count();
  if (policy.cells() != n) throw ShapeError("policy and MDP disagree on the number of cells");
  const std::vector<double> r = mdp.true_rewards();
  std::vector<double> v = r;
  for (std::size_t step = policy.horizon() - 1; step-- > 0;) {
    std::vector<double> next(n);
    for (std::size_t c = 0; c < n; ++c) {
      const auto& pi = policy.at(step, c);
      double total = 0.0;
      for (std::size_t a = 0; a < kGridActions; ++a)
        if (pi[a] > 0.0) total += pi[a] * expected_next(mdp, c, static_cast<GridAction>(a), v);
      next[c] = r[c] + total;
    }
    v = std::move(next);
  }
  return v;
}

double evaluate_policy_gridworld_mc(const GridworldMDP& mdp, const TabularPolicy& policy, std::size_t start_cell,
                                    std::size_t episodes, std::mt19937_64& rng) {
  if (episodes == 0) throw ConfigError("episodes must be >= 1");
  if (start_cell >= mdp.cell_count()) throw ConfigError("start cell out of range");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double total = 0.0;
  for (std::size_t e = 0; e < episodes; ++e) {
    std::size_t cell = start_cell;
    total += mdp.digit(cell);
    for (std::size_t step = 0; step + 1 < policy.horizon(); ++step) {
      const auto& pi = policy.at(step, cell);
      double draw = u(rng), acc = 0.0;
      std::size_t a = kGridActions - 1;
      for (std::size_t k = 0; k < kGridActions; ++k) {
        acc += pi[k];
        if (draw < acc) {
          a = k;
          break;
        }
      }
      cell = gridworld_sample_next(mdp, cell, static_cast<GridAction>(a), rng);
      total += mdp.digit(cell);
    }
  }
  return total / static_cast<double>(episodes);
}

double pct_of_optimal(double policy_return, double optimal_return) {
  if (!(optimal_return > 0.0)) throw ConfigError("pct_of_optimal: optimal return must be > 0");
  return 100.0 * policy_return / optimal_return;
}

GridworldScore gridworld_benchmark(const GridworldBenchmarkConfig& cfg, std::shared_ptr<const DigitPool> pool,
                                   const ObservationReward& learned) {
  if (cfg.mdps == 0) throw ConfigError("benchmark needs at least one MDP");
  GridworldScore score;
  score.per_mdp_pct.resize(cfg.mdps);
  score.per_mdp_random_pct.resize(cfg.mdps);
  score.per_mdp_return.resize(cfg.mdps);
  score.per_mdp_random_return.resize(cfg.mdps);
  score.per_mdp_optimal_return.resize(cfg.mdps);
  auto mean = [](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  };
  const std::size_t parts = std::max<std::size_t>(1, std::min<std::size_t>(cfg.threads, cfg.mdps));
  run_parallel(parts, [&](std::size_t part) {
    for (std::size_t m = cfg.mdps * part / parts; m < cfg.mdps * (part + 1) / parts; ++m) {
      std::mt19937_64 rng(derive_seed(cfg.seed, 2, m));
      const GridworldMDP mdp = gridworld_make(cfg.size, cfg.digits, pool, rng);
      const auto learned_r = learned ? mdp.rewards_from(learned) : mdp.true_rewards();
      const double optimal = value_iteration(mdp, mdp.true_rewards(), cfg.horizon).mean_value();
      const auto planned = value_iteration(mdp, learned_r, cfg.horizon);
      const auto random = TabularPolicy::uniform(mdp.cell_count(), cfg.horizon);
      score.per_mdp_optimal_return[m] = optimal;
      score.per_mdp_return[m] = mean(evaluate_policy_gridworld(mdp, planned.policy));
      score.per_mdp_random_return[m] = mean(evaluate_policy_gridworld(mdp, random));
      score.per_mdp_pct[m] = pct_of_optimal(score.per_mdp_return[m], optimal);
      score.per_mdp_random_pct[m] = pct_of_optimal(score.per_mdp_random_return[m], optimal);
    }
  });
  score.pct_of_optimal = mean(score.per_mdp_pct);
  score.random_pct_of_optimal = mean(score.per_mdp_random_pct);
  return score;
}

// ---------------------------------------------------------------- CartPole

CartPolePolicyNet::CartPolePolicyNet(std::size_t hidden) : hidden_(hidden), params_(hidden * 4 + hidden + 2 * hidden + 2) {
  if (hidden == 0) throw ConfigError("policy hidden width must be >= 1");
}

CartPolePolicyNet CartPolePolicyNet::init(std::size_t hidden, std::mt19937_64& rng) {
  CartPolePolicyNet net(hidden);
  std::uniform_real_distribution<double> w1(-0.5, 0.5);
  const double s2 = 0.1 / std::sqrt(static_cast<double>(hidden));
  std::uniform_real_distribution<double> w2(-s2, s2);
  auto p = net.params();
  for (std::size_t k = 0; k < hidden * 4; ++k) p[k] = w1(rng);
  const std::size_t w2_off = hidden * 5;
  for (std::size_t k = 0; k < 2 * hidden; ++k) p[w2_off + k] = w2(rng);
  return net;
}

void CartPolePolicyNet::features(const CartPoleState& s, std::array<double, 4>& in) const {
  in = {s.x / 2.4, s.x_dot / 2.0, s.theta / 0.21, s.theta_dot / 2.0};
}

std::array<double, 2> CartPolePolicyNet::probs(const CartPoleState& s) const {
  std::array<double, 4> in;
  features(s, in);
  const std::size_t h = hidden_;
  const double* w1 = params_.data();
  const double* b1 = w1 + 4 * h;
  const double* w2 = b1 + h;
  const double* b2 = w2 + 2 * h;
  double z0 = b2[0], z1 = b2[1];
  for (std::size_t j = 0; j < h; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < 4; ++i) a += w1[j * 4 + i] * in[i];
    const double t = std::tanh(a);
    z0 += w2[j] * t;
    z1 += w2[h + j] * t;
  }
  const double p1 = sigmoid(z1 - z0);
  return {1.0 - p1, p1};
}

CartPoleAction CartPolePolicyNet::greedy(const CartPoleState& s) const {
  const auto p = probs(s);
  return p[1] > p[0] ? CartPoleAction::PushRight : CartPoleAction::PushLeft;
}

CartPoleAction CartPolePolicyNet::sample(const CartPoleState& s, std::mt19937_64& rng) const {
  const auto p = probs(s);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p[1] ? CartPoleAction::PushRight
                                                                        : CartPoleAction::PushLeft;
}

void CartPolePolicyNet::accumulate_log_grad(const CartPoleState& s, CartPoleAction a, double scale,
                                            std::span<double> grad) const {
  std::array<double, 4> in;
  features(s, in);
  const std::size_t h = hidden_;
  const double* w1 = params_.data();
  const double* b1 = w1 + 4 * h;
  const double* w2 = b1 + h;
  const double* b2 = w2 + 2 * h;
  std::vector<double> t(h);
  double z0 = b2[0], z1 = b2[1];
  for (std::size_t j = 0; j < h; ++j) {
    double acc = b1[j];
    for (std::size_t i = 0; i < 4; ++i) acc += w1[j * 4 + i] * in[i];
    t[j] = std::tanh(acc);
    z0 += w2[j] * t[j];
    z1 += w2[h + j] * t[j];
  }
  const double p1 = sigmoid(z1 - z0);
  const double d1 = scale * ((a == CartPoleAction::PushRight ? 1.0 : 0.0) - p1);
  const double d0 = -d1;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + 4 * h;
  double* g_w2 = g_b1 + h;
  double* g_b2 = g_w2 + 2 * h;
  g_b2[0] += d0;
  g_b2[1] += d1;
  for (std::size_t j = 0; j < h; ++j) {
    g_w2[j] += d0 * t[j];
    g_w2[h + j] += d1 * t[j];
    const double dpre = (d0 * w2[j] + d1 * w2[h + j]) * (1.0 - t[j] * t[j]);
    g_b1[j] += dpre;
    for (std::size_t i = 0; i < 4; ++i) g_w1[j * 4 + i] += dpre * in[i];
  }
}

RewardSource RewardSource::ground_truth() {
  return {"ground_truth", [](const Observation& o) { return cartpole_box_reward(o.at(0), o.at(1)); }};
}

RewardSource RewardSource::ddt(std::shared_ptr<const RewardDDT> tree, RewardMode mode) {
  if (!tree) throw ConfigError("reward source needs a tree");
  if (mode == RewardMode::Soft) return {"ddt_soft", [tree](const Observation& o) { return soft_reward(*tree, o); }};
  return {"ddt_argmax", [tree](const Observation& o) { return reward_argmax(*tree, o); }};
}

void ReinforceConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("rl.lr must be > 0");
  if (iterations == 0) throw ConfigError("rl.iterations must be >= 1");
  if (episodes_per_batch < 2) throw ConfigError("rl.episodes_per_batch must be >= 2");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("rl.gamma must be in (0, 1]");
  if (hidden == 0) throw ConfigError("rl.hidden must be >= 1");
}

namespace {

struct Episode {
  std::vector<CartPoleState> states;
  std::vector<CartPoleAction> actions;
  std::vector<double> rewards;  // training reward per state
  double true_return = 0.0;
};

Episode run_episode(const CartPoleEnv& env, const CartPolePolicyNet& policy, const RewardSource& reward,
                    StartMode mode, std::mt19937_64& rng) {
  Episode ep;
  CartPoleState s = cartpole_reset(env, mode, rng);
  for (std::size_t t = 0; t < env.horizon; ++t) {
    const auto obs = cartpole_observation(s);
    ep.states.push_back(s);
    ep.rewards.push_back(reward.fn(obs));
    ep.true_return += cartpole_box_reward(obs[0], obs[1]);
    if (t + 1 < env.horizon) {
      const auto a = policy.sample(s, rng);
      ep.actions.push_back(a);
      s = cartpole_step(env, s, a);
    }
  }
  return ep;
}

}  // namespace

ReinforceResult train_cartpole_policy(const CartPoleEnv& env, const RewardSource& reward, const ReinforceConfig& cfg) {
  cfg.validate();
  if (env.horizon < 2) throw ConfigError("CartPole horizon must be >= 2 for policy learning");
  std::mt19937_64 init_rng(derive_seed(cfg.seed, 4, 0));
  ReinforceResult out{CartPolePolicyNet::init(cfg.hidden, init_rng), {}};
  auto& policy = out.policy;
  AdamState adam = AdamState::zeros(policy.params().size(), AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  const std::size_t E = cfg.episodes_per_batch;
  const std::size_t steps = env.horizon - 1;
  std::vector<Episode> batch(E);
  std::vector<std::vector<double>> grads(E, std::vector<double>(policy.params().size()));

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const std::uint64_t it_seed = derive_seed(cfg.seed, 5, it);
    const std::size_t parts = std::max<std::size_t>(1, std::min<std::size_t>(cfg.threads, E));
    run_parallel(parts, [&](std::size_t part) {
      for (std::size_t e = E * part / parts; e < E * (part + 1) / parts; ++e) {
        std::mt19937_64 rng(derive_seed(it_seed, 0, e));
        batch[e] = run_episode(env, policy, reward, cfg.start, rng);
      }
    });
    // discounted reward-to-go following each decision
    std::vector<std::vector<double>> adv(E, std::vector<double>(steps));
    for (std::size_t e = 0; e < E; ++e) {
      double g = 0.0;
      for (std::size_t t = steps; t-- > 0;) {
        g = batch[e].rewards[t + 1] + cfg.gamma * g;
        adv[e][t] = g;
      }
    }
    double sq = 0.0;
    for (std::size_t t = 0; t < steps; ++t) {
      double b = 0.0;
      for (std::size_t e = 0; e < E; ++e) b += adv[e][t];
      b /= static_cast<double>(E);
      for (std::size_t e = 0; e < E; ++e) {
        adv[e][t] -= b;
        sq += adv[e][t] * adv[e][t];
      }
    }
    const double sd = std::sqrt(sq / static_cast<double>(E * steps));
    const double norm = sd > 1e-8 ? 1.0 / sd : 1.0;
    run_parallel(parts, [&](std::size_t part) {
      for (std::size_t e = E * part / parts; e < E * (part + 1) / parts; ++e) {
        std::fill(grads[e].begin(), grads[e].end(), 0.0);
        for (std::size_t t = 0; t < steps; ++t)
          policy.accumulate_log_grad(batch[e].states[t], batch[e].actions[t], adv[e][t] * norm, grads[e]);
      }
    });
    std::vector<double> grad(policy.params().size(), 0.0);
    const double scale = -1.0 / static_cast<double>(E * steps);
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += scale * grads[e][k];
    adam_step(policy.params(), grad, adam);
    for (const auto& ep : batch) out.episode_returns.push_back(ep.true_return);
  }
  for (double p : policy.params())
    if (!std::isfinite(p)) throw NumericError("policy parameters became non-finite");
  return out;
}

double interquartile_mean(std::span<const double> values) {
  if (values.empty()) throw ConfigError("interquartile_mean of an empty set");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  auto pct = [&v](double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  const double q25 = pct(0.25), q75 = pct(0.75);
  double total = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (x >= q25 && x <= q75) {
      total += x;
      ++n;
    }
  return total / static_cast<double>(n);
}

ReturnStats summarize_returns(std::vector<double> returns) {
  if (returns.empty()) throw ConfigError("no returns to summarize");
  ReturnStats s;
  const double n = static_cast<double>(returns.size());
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  if (returns.size() > 1) {
    double sq = 0.0;
    for (double r : returns) sq += (r - s.mean) * (r - s.mean);
    s.std = std::sqrt(sq / (n - 1.0));
  }
  s.iqm = interquartile_mean(returns);
  s.returns = std::move(returns);
  return s;
}

double cartpole_episode_return(const CartPoleEnv& env, const CartPolePolicyNet& policy, const CartPoleState& start) {
  CartPoleState s = start;
  double total = 0.0;
  for (std::size_t t = 0; t < env.horizon; ++t) {
    total += cartpole_box_reward(s.x, s.theta);
    if (t + 1 < env.horizon) s = cartpole_step(env, s, policy.greedy(s));
  }
  return total;
}

ReturnStats evaluate_cartpole_policy(const CartPoleEnv& env, const CartPolePolicyNet& policy, StartMode mode,
                                     std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw ConfigError("episodes must be >= 1");
  std::vector<double> returns;
  returns.reserve(episodes);
  for (std::size_t e = 0; e < episodes; ++e) {
    std::mt19937_64 rng(derive_seed(seed, 6, e));
    returns.push_back(cartpole_episode_return(env, policy, cartpole_reset(env, mode, rng)));
  }
  return summarize_returns(std::move(returns));
}

}  // namespace ddtrl
