#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ddtrl/tree.hpp"

namespace ddtrl {

struct Trajectory {
  std::vector<ObservationRef> states;
  // Ground-truth per-state rewards, kept for labeling and bookkeeping. The
  // loss never reads them.
  std::vector<double> true_rewards;

  std::size_t size() const { return states.size(); }
  double true_return() const;
};

// Encodes worse < better.
struct PreferencePair {
  Trajectory worse;
  Trajectory better;
};

struct PenaltyConfig {
  double lambda0 = 1.0;
  bool enabled = false;
};

// d(loss)/d(theta), aligned with RewardDDT::flatten().
struct GradientBundle {
  std::vector<double> values;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // coupled L2, added to the gradient
};

struct AdamState {
  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;

  static AdamState zeros(std::size_t n, AdamConfig config);
};

enum class RewardMode { Soft, Argmax };

double trajectory_return_soft(const RewardDDT& tree, const Trajectory& traj);
double trajectory_return_argmax(const RewardDDT& tree, const Trajectory& traj);
double trajectory_return(const RewardDDT& tree, const Trajectory& traj, RewardMode mode);

// -log P(better > worse) under Bradley-Terry, i.e. softplus(G_worse - G_better).
double bradley_terry_pair_loss(double worse_return, double better_return);
double bradley_terry_loss(const RewardDDT& tree, std::span<const PreferencePair> batch);

std::vector<ObservationRef> collect_states(std::span<const PreferencePair> batch);

inline constexpr double kAlphaClamp = 1e-6;

struct PenaltyValue {
  double value = 0.0;
  std::vector<double> alphas;  // per internal node, unclamped
};

// Routing-balance penalty over all `states`. Per-node coefficient is
// lambda0 * 2^-depth(node).
PenaltyValue penalty_term(const RewardDDT& tree, std::span<const ObservationRef> states, const PenaltyConfig& cfg);
// The penalty as a function of the per-node alphas alone.
double penalty_from_alphas(std::span<const double> alphas, double lambda0);

struct LossAndGrad {
  double loss = 0.0;  // bt_loss + penalty
  double bt_loss = 0.0;
  double penalty = 0.0;
  std::vector<double> alphas;
  GradientBundle grad;
};

// Exact reverse-mode gradient of mean Bradley-Terry loss plus penalty.
// Per-pair work is split into `threads` contiguous chunks and reduced in
// chunk order; threads == 1 is bit-reproducible.
LossAndGrad loss_and_grad(const RewardDDT& tree, std::span<const PreferencePair> batch, const PenaltyConfig& cfg,
                          unsigned threads = 1);
double total_loss(const RewardDDT& tree, std::span<const PreferencePair> batch, const PenaltyConfig& cfg);

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> theta, double h);
// Central differences of total_loss w.r.t. every parameter.
GradientBundle finite_diff_grad(const RewardDDT& tree, std::span<const PreferencePair> batch,
                                const PenaltyConfig& cfg, double h);
// Same, restricted to the listed flat coordinates (others left at 0).
GradientBundle finite_diff_grad(const RewardDDT& tree, std::span<const PreferencePair> batch,
                                const PenaltyConfig& cfg, double h, std::span<const std::size_t> coords);

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& state);
void adam_step(RewardDDT& tree, const GradientBundle& grad, AdamState& state);

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 50;
  double lr = 1e-3;
  double weight_decay = 0.0;
  PenaltyConfig penalty;
  std::uint64_t seed = 0;
  unsigned threads = 1;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc_soft = 0.0;
  double val_acc_argmax = 0.0;
  double penalty_value = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  RewardDDT tree;
  AdamState adam;
  std::vector<EpochMetrics> metrics;
  // alphas of every minibatch of the last epoch
  std::vector<std::vector<double>> final_epoch_alphas;
};

TrainResult train(RewardDDT tree, std::span<const PreferencePair> train_set,
                  std::span<const PreferencePair> validation, const TrainConfig& config);

// Fraction of pairs whose better trajectory gets a strictly larger predicted
// return. Ties count as wrong.
double preference_accuracy(const RewardDDT& tree, std::span<const PreferencePair> pairs, RewardMode mode);
double preference_accuracy(const std::function<double(const Trajectory&)>& predicted_return,
                           std::span<const PreferencePair> pairs);

}  // namespace ddtrl
