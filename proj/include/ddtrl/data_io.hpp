#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ddtrl/digit_pool.hpp"
#include "ddtrl/environments.hpp"
#include "ddtrl/preferences.hpp"
#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"

namespace ddtrl {

// ------------------------------------------------------------------ MNIST

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Parses an IDX image/label file pair held in memory. Every structural problem
// raises FormatError naming the byte offset.
DigitPool parse_mnist_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);
DigitPool load_mnist_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Builds a valid IDX pair from raw 28x28 byte images (used by tests).
std::pair<std::vector<std::uint8_t>, std::vector<std::uint8_t>> encode_mnist_idx(
    std::span<const std::vector<std::uint8_t>> images, std::span<const std::uint8_t> labels);

inline float normalize_pixel(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

// Seven-segment style glyphs with +-1 px translation jitter and Gaussian pixel
// noise (sigma 0.05), clamped to [0, 1].
DigitPool synthetic_glyphs(const std::vector<int>& digit_set, std::size_t variants_per_digit, std::mt19937_64& rng);
// The noiseless, centered template of a digit.
Observation glyph_template(int digit);

// ------------------------------------------------------------ model JSON

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const RewardDDT& tree);
RewardDDT model_from_json(const std::string& text);
void save_model(const RewardDDT& tree, const std::filesystem::path& path);
RewardDDT load_model(const std::filesystem::path& path);

std::string adam_state_to_json(const AdamState& state);
AdamState adam_state_from_json(const std::string& text);
void save_checkpoint(const RewardDDT& tree, const AdamState& adam, const std::filesystem::path& model_path);

// --------------------------------------------------------- dataset (DDTP)

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

// Layout (little-endian): "DDTP", u16 version, u32 manifest length, manifest
// JSON, then per pair (train first, then validation) the worse and the better
// trajectory, each as u32 state count, count x f64 true rewards, count x dim
// x f32 observations. A trailing u32 CRC32 covers every preceding byte.
std::vector<std::uint8_t> encode_dataset(const PreferenceDataset& ds);
PreferenceDataset decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const PreferenceDataset& ds, const std::filesystem::path& path);
PreferenceDataset load_dataset(const std::filesystem::path& path);

// --------------------------------------------------------- gridworld JSON

std::string mdp_to_json(const GridworldMDP& mdp);
GridworldMDP mdp_from_json(const std::string& text, std::shared_ptr<const DigitPool> pool);

// ----------------------------------------------------------- CSV and PGM

// Appends one row, writing `header` first if the file is new or empty.
void append_csv_row(const std::filesystem::path& path, const std::vector<std::string>& header,
                    const std::vector<std::string>& row);
std::string format_double(double v);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics);

struct EvalRow {
  std::string run_id;
  std::string env;
  std::string reward_mode;
  std::uint64_t seed = 0;
  double mean = 0.0;
  double std = 0.0;
  double iqm = 0.0;
  double pct_of_optimal = 0.0;
};
void append_eval_csv(const std::filesystem::path& path, const EvalRow& row);

// 8-bit binary PGM; values are mapped linearly from [lo, hi] to [0, 255].
std::vector<std::uint8_t> encode_pgm(std::size_t rows, std::size_t cols, std::span<const double> values, double lo,
                                     double hi);
void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols, std::span<const double> values,
               double lo, double hi);

// --------------------------------------------------------------- misc I/O

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);
// FNV-1a 64-bit, hex encoded.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string fnv1a_hex(const std::string& text);

}  // namespace ddtrl
