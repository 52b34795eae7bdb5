#include "ddtrl/environments.hpp"

#include <algorithm>
#include <cmath>

#include "ddtrl/error.hpp"

namespace ddtrl {

std::size_t DigitPool::total() const {
  std::size_t n = 0;
  for (const auto& v : images) n += v.size();
  return n;
}

std::string to_string(DigitPool::Source source) {
  return source == DigitPool::Source::MnistIdx ? "mnist_idx" : "synthetic";
}

CartPoleState cartpole_step(const CartPoleEnv& env, const CartPoleState& s, CartPoleAction action) {
  const double force = action == CartPoleAction::PushRight ? env.force_mag : -env.force_mag;
  const double total_mass = env.cart_mass + env.pole_mass;
  const double polemass_length = env.pole_mass * env.half_length;
  const double cos_t = std::cos(s.theta);
  const double sin_t = std::sin(s.theta);
  const double temp = (force + polemass_length * s.theta_dot * s.theta_dot * sin_t) / total_mass;
  const double theta_acc = (env.gravity * sin_t - cos_t * temp) /
                           (env.half_length * (4.0 / 3.0 - env.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - polemass_length * theta_acc * cos_t / total_mass;
  CartPoleState next;
  next.x = s.x + env.tau * s.x_dot;
  next.x_dot = s.x_dot + env.tau * x_acc;
  next.theta = s.theta + env.tau * s.theta_dot;
  next.theta_dot = s.theta_dot + env.tau * theta_acc;
  return next;
}

CartPoleState cartpole_reset(const CartPoleEnv& env, StartMode mode, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-env.start_half_width, env.start_half_width);
  CartPoleState s;
  s.x = u(rng);
  s.x_dot = u(rng);
  s.theta = u(rng);
  s.theta_dot = u(rng);
  if (mode == StartMode::OutOfDistribution) s.x = std::uniform_real_distribution<double>(env.ood_x_lo, env.ood_x_hi)(rng);
  return s;
}

Observation cartpole_observation(const CartPoleState& s) {
  return {static_cast<float>(s.x), static_cast<float>(s.theta)};
}

double cartpole_box_reward(double x, double theta) {
  return (std::abs(x) <= kCartPoleXLimit && std::abs(theta) <= kCartPoleThetaLimit) ? 1.0 : 0.0;
}

std::string to_string(StartMode mode) {
  return mode == StartMode::InDistribution ? "in_distribution" : "out_of_distribution";
}

GridworldMDP::GridworldMDP(std::size_t size, std::vector<int> digits, std::vector<std::size_t> image_index,
                           std::shared_ptr<const DigitPool> pool, double success_prob)
    : GridworldMDP(size, size, std::move(digits), std::move(image_index), std::move(pool), success_prob) {}

GridworldMDP::GridworldMDP(std::size_t rows, std::size_t cols, std::vector<int> digits,
                           std::vector<std::size_t> image_index, std::shared_ptr<const DigitPool> pool,
                           double success_prob)
    : rows_(rows),
      cols_(cols),
      digits_(std::move(digits)),
      image_index_(std::move(image_index)),
      pool_(std::move(pool)),
      success_prob_(success_prob) {
  if (rows_ == 0 || cols_ == 0) throw ConfigError("gridworld size must be >= 1");
  if (!pool_) throw ConfigError("gridworld needs a digit pool");
  if (digits_.size() != cell_count() || image_index_.size() != cell_count())
    throw ShapeError("gridworld digit grid and image indices must have one entry per cell");
  if (!(success_prob_ >= 0.0 && success_prob_ <= 1.0)) throw ConfigError("success probability must be in [0, 1]");
  for (std::size_t c = 0; c < cell_count(); ++c) {
    if (digits_[c] < 0 || digits_[c] > 9) throw ConfigError("gridworld digits must be in 0..9");
    if (image_index_[c] >= pool_->count(digits_[c]))
      throw ConfigError("gridworld image index out of range for digit " + std::to_string(digits_[c]));
  }
}

const ObservationRef& GridworldMDP::observation(std::size_t cell) const {
  return pool_->image(digits_.at(cell), image_index_.at(cell));
}

std::vector<double> GridworldMDP::true_rewards() const {
  return std::vector<double>(digits_.begin(), digits_.end());
}

GridworldMDP gridworld_make(std::size_t size, const std::vector<int>& digit_set,
                            std::shared_ptr<const DigitPool> pool, std::mt19937_64& rng) {
  return gridworld_make(size, size, digit_set, std::move(pool), rng);
}

GridworldMDP gridworld_make(std::size_t rows, std::size_t cols, const std::vector<int>& digit_set,
                            std::shared_ptr<const DigitPool> pool, std::mt19937_64& rng) {
  if (digit_set.empty()) throw ConfigError("digit set must be non-empty");
  if (!pool) throw ConfigError("gridworld needs a digit pool");
  for (int d : digit_set) {
    if (d < 0 || d > 9) throw ConfigError("digits must be in 0..9");
    if (pool->count(d) == 0) throw ConfigError("image pool has no images for digit " + std::to_string(d));
  }
  if (std::none_of(digit_set.begin(), digit_set.end(), [](int d) { return d > 0; }))
    throw ConfigError("digit set needs at least one positive digit");
  const std::size_t cells = rows * cols;
  std::uniform_int_distribution<std::size_t> pick_digit(0, digit_set.size() - 1);
  std::vector<int> digits(cells);
  std::vector<std::size_t> images(cells);
  do {
    for (std::size_t c = 0; c < cells; ++c) {
      digits[c] = digit_set[pick_digit(rng)];
      images[c] = std::uniform_int_distribution<std::size_t>(0, pool->count(digits[c]) - 1)(rng);
    }
  } while (std::none_of(digits.begin(), digits.end(), [](int d) { return d > 0; }));
  return GridworldMDP(rows, cols, std::move(digits), std::move(images), std::move(pool));
}

namespace {

// Target cell of a move, or the cell itself if it would leave the grid.
std::size_t move_target(std::size_t rows, std::size_t n, std::size_t cell, GridAction a, bool& off_grid) {
  const std::size_t r = cell / n, c = cell % n;
  off_grid = false;
  switch (a) {
    case GridAction::Left:
      if (c == 0) break;
      return cell - 1;
    case GridAction::Right:
      if (c + 1 == n) break;
      return cell + 1;
    case GridAction::Up:
      if (r == 0) break;
      return cell - n;
    case GridAction::Down:
      if (r + 1 == rows) break;
      return cell + n;
  }
  off_grid = true;
  return cell;
}

}  // namespace

std::vector<GridTransition> gridworld_transition_dist(const GridworldMDP& mdp, std::size_t cell, GridAction action) {
  if (cell >= mdp.cell_count()) throw ConfigError("cell index out of range");
  bool off = false;
  const std::size_t target = move_target(mdp.rows(), mdp.cols(), cell, action, off);
  if (off) return {{cell, 1.0}};
  const double p = mdp.success_prob();
  return {{target, p}, {cell, 1.0 - p}};
}

std::size_t gridworld_sample_next(const GridworldMDP& mdp, std::size_t cell, GridAction action, std::mt19937_64& rng) {
  const auto dist = gridworld_transition_dist(mdp, cell, action);
  if (dist.size() == 1) return dist[0].cell;
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < dist[0].probability ? dist[0].cell : dist[1].cell;
}

}  // namespace ddtrl
