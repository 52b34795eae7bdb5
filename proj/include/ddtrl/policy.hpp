#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddtrl/environments.hpp"
#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"

namespace ddtrl {

// --------------------------------------------------------------- gridworld

using ActionProbs = std::array<double, kGridActions>;

// Finite-horizon, possibly non-stationary policy: one action distribution per
// (step, cell). Step t is the t-th decision, t in [0, horizon - 1).
class TabularPolicy {
 public:
  TabularPolicy(std::size_t cells, std::size_t horizon);

  static TabularPolicy uniform(std::size_t cells, std::size_t horizon);

  std::size_t cells() const { return cells_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t decisions() const { return horizon_ > 0 ? horizon_ - 1 : 0; }

  const ActionProbs& at(std::size_t step, std::size_t cell) const { return table_.at(step * cells_ + cell); }
  void set(std::size_t step, std::size_t cell, const ActionProbs& probs);
  void set_action(std::size_t step, std::size_t cell, GridAction action);

 private:
  std::size_t cells_;
  std::size_t horizon_;
  std::vector<ActionProbs> table_;
};

struct PlanResult {
  TabularPolicy policy;
  std::vector<double> values;  // optimal expected return per start cell

  double mean_value() const;
};

// Undiscounted backward induction. The horizon counts visited states, so with
// horizon 1 the value is the reward of the start cell. Ties pick the lowest
// action index.
PlanResult value_iteration(const GridworldMDP& mdp, std::span<const double> cell_rewards, std::size_t horizon);

// Exact expected ground-truth (digit) return of `policy` from every start
// cell. There is deliberately no reward argument.
std::vector<double> evaluate_policy_gridworld(const GridworldMDP& mdp, const TabularPolicy& policy);

// Monte-Carlo estimate of the same quantity for one start cell.
double evaluate_policy_gridworld_mc(const GridworldMDP& mdp, const TabularPolicy& policy, std::size_t start_cell,
                                    std::size_t episodes, std::mt19937_64& rng);

double pct_of_optimal(double policy_return, double optimal_return);

using ObservationReward = std::function<double(const Observation&)>;

struct GridworldBenchmarkConfig {
  std::size_t mdps = 100;
  std::size_t size = 5;
  std::size_t horizon = 5;
  std::vector<int> digits;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct GridworldScore {
  double pct_of_optimal = 0.0;         // planned under the learned reward
  double random_pct_of_optimal = 0.0;  // uniform-random policy
  std::vector<double> per_mdp_pct;
  std::vector<double> per_mdp_random_pct;
  // Expected ground-truth return averaged over start cells.
  std::vector<double> per_mdp_return;
  std::vector<double> per_mdp_random_return;
  std::vector<double> per_mdp_optimal_return;
};

// For each freshly generated MDP: plan under `learned`, evaluate under the
// digit reward, and normalize by the optimal ground-truth value. Start cells
// are uniform; the percentage is averaged over MDPs. An empty `learned` plans
// under the digit reward itself.
GridworldScore gridworld_benchmark(const GridworldBenchmarkConfig& cfg, std::shared_ptr<const DigitPool> pool,
                                   const ObservationReward& learned);

// ---------------------------------------------------------------- CartPole

// 4 -> hidden (tanh) -> 2 logits over {push_left, push_right}.
class CartPolePolicyNet {
 public:
  explicit CartPolePolicyNet(std::size_t hidden = 32);

  static CartPolePolicyNet init(std::size_t hidden, std::mt19937_64& rng);

  std::size_t hidden() const { return hidden_; }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }

  std::array<double, 2> probs(const CartPoleState& s) const;
  CartPoleAction greedy(const CartPoleState& s) const;
  CartPoleAction sample(const CartPoleState& s, std::mt19937_64& rng) const;
  // grad += scale * d log pi(a | s) / d params
  void accumulate_log_grad(const CartPoleState& s, CartPoleAction a, double scale, std::span<double> grad) const;

 private:
  void features(const CartPoleState& s, std::array<double, 4>& in) const;

  std::size_t hidden_;
  std::vector<double> params_;  // W1[h][4], b1[h], W2[2][h], b2[2]
};

// Per-step training reward evaluated on the (x, theta) observation.
struct RewardSource {
  std::string name;  // "ground_truth", "ddt_soft", "ddt_argmax"
  ObservationReward fn;

  static RewardSource ground_truth();
  static RewardSource ddt(std::shared_ptr<const RewardDDT> tree, RewardMode mode);
};

struct ReinforceConfig {
  std::size_t iterations = 150;
  std::size_t episodes_per_batch = 16;
  double lr = 0.01;
  double gamma = 0.99;
  std::size_t hidden = 32;
  StartMode start = StartMode::InDistribution;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const;
};

struct ReinforceResult {
  CartPolePolicyNet policy;
  // Ground-truth box return of every training episode, in order.
  std::vector<double> episode_returns;
};

// REINFORCE with a per-timestep mean-return baseline over each batch. Results
// are independent of `threads`.
ReinforceResult train_cartpole_policy(const CartPoleEnv& env, const RewardSource& reward, const ReinforceConfig& cfg);

struct ReturnStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
  double iqm = 0.0;
  std::vector<double> returns;
};

// Mean of the values lying in [q25, q75] inclusive, with linearly
// interpolated percentiles.
double interquartile_mean(std::span<const double> values);
ReturnStats summarize_returns(std::vector<double> returns);

// Greedy rollouts of env.horizon states scored with the box rule.
ReturnStats evaluate_cartpole_policy(const CartPoleEnv& env, const CartPolePolicyNet& policy, StartMode mode,
                                     std::size_t episodes, std::uint64_t seed);

// Ground-truth return of one greedy episode from `start`.
double cartpole_episode_return(const CartPoleEnv& env, const CartPolePolicyNet& policy, const CartPoleState& start);

}  // namespace ddtrl
