#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ddtrl/digit_pool.hpp"
#include "ddtrl/tree.hpp"

namespace ddtrl {

// ---------------------------------------------------------------- CartPole

struct CartPoleState {
  double x = 0.0;
  double x_dot = 0.0;
  double theta = 0.0;
  double theta_dot = 0.0;
  bool operator==(const CartPoleState&) const = default;
};

enum class CartPoleAction { PushLeft = 0, PushRight = 1 };
enum class StartMode { InDistribution, OutOfDistribution };

// Fixed-horizon cart-pole: episodes never terminate early and states are
// never clamped.
struct CartPoleEnv {
  double gravity = 9.8;
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double half_length = 0.5;
  double force_mag = 10.0;
  double tau = 0.02;
  std::size_t horizon = 200;

  double start_half_width = 0.05;   // every variable in [-w, w]
  double ood_x_lo = 2.35;           // out-of-distribution cart position
  double ood_x_hi = 2.45;
};

CartPoleState cartpole_step(const CartPoleEnv& env, const CartPoleState& s, CartPoleAction action);
CartPoleState cartpole_reset(const CartPoleEnv& env, StartMode mode, std::mt19937_64& rng);

// What the reward model sees: (cart position, pole angle).
Observation cartpole_observation(const CartPoleState& s);

inline constexpr double kCartPoleXLimit = 2.4;
inline constexpr double kCartPoleThetaLimit = 12.0 * 3.14159265358979323846 / 180.0;

// 1 inside x in [-2.4, 2.4] and theta in [-12 deg, 12 deg], else 0.
double cartpole_box_reward(double x, double theta);

std::string to_string(StartMode mode);

// --------------------------------------------------------------- Gridworld

enum class GridAction { Left = 0, Right = 1, Up = 2, Down = 3 };
inline constexpr std::size_t kGridActions = 4;

struct GridTransition {
  std::size_t cell;
  double probability;
};

// Rows x cols grid whose cells show MNIST-style digit images. Cell index is
// row * cols + col; up decreases the row. The experiments use square grids.
class GridworldMDP {
 public:
  GridworldMDP(std::size_t size, std::vector<int> digits, std::vector<std::size_t> image_index,
               std::shared_ptr<const DigitPool> pool, double success_prob = 0.8);
  GridworldMDP(std::size_t rows, std::size_t cols, std::vector<int> digits, std::vector<std::size_t> image_index,
               std::shared_ptr<const DigitPool> pool, double success_prob = 0.8);

  // Side length; for a rectangular grid this is the row count.
  std::size_t size() const { return rows_; }
  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }
  std::size_t cell_count() const { return rows_ * cols_; }
  double success_prob() const { return success_prob_; }
  int digit(std::size_t cell) const { return digits_.at(cell); }
  const std::vector<int>& digits() const { return digits_; }
  const std::vector<std::size_t>& image_indices() const { return image_index_; }
  const ObservationRef& observation(std::size_t cell) const;
  const DigitPool& pool() const { return *pool_; }
  std::shared_ptr<const DigitPool> shared_pool() const { return pool_; }

  // Ground-truth reward per cell (the digit value).
  std::vector<double> true_rewards() const;
  // Some learned or given per-cell reward evaluated on the cell images.
  template <class Fn>
  std::vector<double> rewards_from(Fn&& fn) const {
    std::vector<double> r(cell_count());
    for (std::size_t c = 0; c < r.size(); ++c) r[c] = fn(*observation(c));
    return r;
  }

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<int> digits_;
  std::vector<std::size_t> image_index_;
  std::shared_ptr<const DigitPool> pool_;
  double success_prob_;
};

// Digits uniform over digit_set, images uniform within each digit's pool.
// Redraws until at least one cell carries a positive digit.
GridworldMDP gridworld_make(std::size_t size, const std::vector<int>& digit_set,
                            std::shared_ptr<const DigitPool> pool, std::mt19937_64& rng);
GridworldMDP gridworld_make(std::size_t rows, std::size_t cols, const std::vector<int>& digit_set,
                            std::shared_ptr<const DigitPool> pool, std::mt19937_64& rng);

// Off-grid moves self-transition with probability 1; otherwise the move
// succeeds with the success probability and the rest stays in place.
std::vector<GridTransition> gridworld_transition_dist(const GridworldMDP& mdp, std::size_t cell, GridAction action);
std::size_t gridworld_sample_next(const GridworldMDP& mdp, std::size_t cell, GridAction action, std::mt19937_64& rng);

}  // namespace ddtrl
