#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "ddtrl/environments.hpp"
#include "ddtrl/training.hpp"

namespace ddtrl {

// Per-state reward 1 iff x and theta are both inside their ranges.
struct CartPoleBoxLabeler {
  double x_limit = kCartPoleXLimit;
  double theta_limit = kCartPoleThetaLimit;
};

// Per-state reward equals the digit shown in the cell.
struct DigitSumLabeler {};

using LabelerSpec = std::variant<CartPoleBoxLabeler, DigitSumLabeler>;

std::string labeler_name(const LabelerSpec& labeler);

// Random-policy rollouts. The CartPole trajectory records (x, theta) per step
// starting with the reset state; the gridworld one records the cell images
// visited starting with `start_cell`.
Trajectory rollout_random(const CartPoleEnv& env, StartMode mode, std::size_t length, std::mt19937_64& rng);
Trajectory rollout_random(const CartPoleEnv& env, const CartPoleState& start, std::size_t length, std::mt19937_64& rng);
Trajectory rollout_random(const GridworldMDP& mdp, std::size_t start_cell, std::size_t length, std::mt19937_64& rng);

double ground_truth_return(const LabelerSpec& labeler, const Trajectory& traj);

// nullopt on an exact tie.
std::optional<PreferencePair> label_pair(const LabelerSpec& labeler, Trajectory a, Trajectory b);

struct CartPoleSource {
  CartPoleEnv env;
  StartMode mode = StartMode::InDistribution;
};

struct GridworldSource {
  std::size_t size = 5;
  std::vector<int> digits;
  std::shared_ptr<const DigitPool> train_pool;
  std::shared_ptr<const DigitPool> validation_pool;  // held-out images
};

using EnvSource = std::variant<CartPoleSource, GridworldSource>;

struct DatasetProvenance {
  std::uint64_t seed = 0;
  std::string environment;  // "cartpole" or "mnist_grid"
  std::string env_detail;   // e.g. "5x5 digits=0,1,2,3 pool=synthetic"
  std::string labeler;
  std::size_t trajectory_length = 0;
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
  InputShape observation_shape;
  bool operator==(const DatasetProvenance&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> train;
  std::vector<PreferencePair> validation;
  DatasetProvenance provenance;
};

struct DatasetRequest {
  std::size_t train_count = 0;
  std::size_t validation_count = 0;
  std::size_t trajectory_length = 0;
  std::uint64_t seed = 0;
  std::size_t max_attempts_per_pair = 1000;
};

// Pair k of split s is generated from its own RNG stream derived from
// (seed, s, k); ties are redrawn on the same stream until the attempt ceiling.
// Gridworld pairs share a freshly drawn MDP and start cell; CartPole pairs use
// independent resets.
PreferenceDataset build_dataset(const EnvSource& source, const LabelerSpec& labeler, const DatasetRequest& request,
                                unsigned threads = 1);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

}  // namespace ddtrl
