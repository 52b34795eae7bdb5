#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ddtrl/data_io.hpp"
#include "ddtrl/environments.hpp"
#include "ddtrl/interpret.hpp"
#include "ddtrl/policy.hpp"
#include "ddtrl/preferences.hpp"
#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"

namespace ddtrl {

struct DigitDataConfig {
  std::string source = "auto";  // "auto", "mnist" or "synthetic"
  std::filesystem::path train_images, train_labels;
  std::filesystem::path validation_images, validation_labels;
  std::size_t synthetic_variants = 200;
  std::size_t validation_variants = 50;
  std::uint64_t seed = 11;
};

struct EnvironmentConfig {
  std::string type = "cartpole";  // or "mnist_grid"
  std::size_t size = 5;
  std::vector<int> digits;
  DigitDataConfig data;
};

struct RlConfig {
  std::string mode = "soft";
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t episodes = 100;  // CartPole evaluation rollouts per seed
  std::uint64_t eval_seed = 1000;
  ReinforceConfig reinforce;
  std::size_t mdps = 100;
  std::size_t horizon = 0;  // gridworld; 0 = trajectory length
};

struct InterpretConfig {
  std::size_t trace_k = 5;
  double reach_threshold = kReachThreshold;
  std::size_t grid_resolution = 201;
  std::size_t pool_size = 500;
};

struct ExperimentConfig {
  std::string name;
  EnvironmentConfig environment;
  TreeSpec tree;
  std::uint64_t init_seed = 0;
  TrainConfig training;
  DatasetRequest preferences;
  RlConfig rl;
  InterpretConfig interpret;
  std::filesystem::path output_dir;

  std::string source_text;  // the config file as read
  std::string hash() const { return fnv1a_hex(source_text); }
};

// Validates the whole document and throws one ConfigError listing every
// problem (unknown keys, wrong types, invalid values). Relative data paths
// resolve against base_dir; output_dir is used as given.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

struct DigitPools {
  std::shared_ptr<const DigitPool> train;
  std::shared_ptr<const DigitPool> validation;
  std::string description;
};

// Real IDX files when configured or found under DDT_DATA_DIR (source "auto"),
// otherwise seeded synthetic glyphs.
DigitPools load_digit_pools(const EnvironmentConfig& env);

EnvSource make_env_source(const ExperimentConfig& cfg, const DigitPools& pools);
LabelerSpec make_labeler(const ExperimentConfig& cfg);

PreferenceDataset generate_preferences(const ExperimentConfig& cfg, const DigitPools& pools, unsigned threads);

TrainResult train_reward_model(const ExperimentConfig& cfg, const PreferenceDataset& ds, unsigned threads);

// Throws ShapeError if the model does not fit the environment.
void check_model_matches(const ExperimentConfig& cfg, const RewardDDT& tree);

enum class RlMode { Soft, Argmax, GroundTruth, Random };
RlMode parse_rl_mode(const std::string& s);
std::string to_string(RlMode mode);

struct RlReport {
  std::vector<EvalRow> rows;
  // CartPole only: ground-truth returns of every training episode, per seed.
  std::vector<std::vector<double>> training_returns;
};

RlReport run_rl(const ExperimentConfig& cfg, const RewardDDT* tree, RlMode mode, bool ood, const DigitPools& pools,
                unsigned threads, const std::string& run_id);

// States used for traces and reachability: dataset states when given,
// otherwise fresh random rollouts.
std::vector<ObservationRef> interpret_pool(const ExperimentConfig& cfg, const PreferenceDataset* ds,
                                           const DigitPools& pools);

}  // namespace ddtrl
