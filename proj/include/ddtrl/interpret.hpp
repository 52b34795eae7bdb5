#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddtrl/tree.hpp"

namespace ddtrl {

struct Heatmap {
  std::size_t node = 0;
  std::string kind;  // "pixel_toggle" or "routing_2d"
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major
  // Axis metadata: pixel coordinates for pixel_toggle, physical ranges for
  // routing_2d (rows follow the second input dimension, cols the first).
  std::string row_axis;
  std::string col_axis;
  double row_lo = 0.0, row_hi = 0.0;
  double col_lo = 0.0, col_hi = 0.0;

  double at(std::size_t r, std::size_t c) const { return values.at(r * cols + c); }
  double min_value() const;
  double max_value() const;
};

// value(p) = p_i(blank with pixel p set to 1 in every channel) - p_i(blank),
// blank = all zeros. One entry per (row, col) of the image.
Heatmap pixel_toggle_heatmap(const RewardDDT& tree, std::size_t node);

struct Grid2D {
  double x_lo = -3.0;
  double x_hi = 3.0;
  double theta_lo = -15.0 * 3.14159265358979323846 / 180.0;
  double theta_hi = 15.0 * 3.14159265358979323846 / 180.0;
  std::size_t resolution = 201;
};

// p_i over a resolution x resolution grid of a 2-dim input space.
Heatmap grid_heatmap_2d(const RewardDDT& tree, std::size_t node, const Grid2D& grid = {});

struct TraceEntry {
  std::size_t pool_index = 0;
  double left_prob = 0.0;
  double reach_prob = 0.0;
};

struct Trace {
  std::size_t node = 0;
  bool unreachable = false;  // no pool state passed the reachability threshold
  std::size_t excluded = 0;
  std::vector<TraceEntry> entries;  // descending left_prob, stable
};

inline constexpr double kReachThreshold = 1e-3;

Trace synthetic_trace(const RewardDDT& tree, std::size_t node, std::span<const ObservationRef> pool,
                      double reach_threshold = kReachThreshold);

struct ReachabilityReport {
  std::vector<double> max_node_reach;  // over the pool, internal nodes
  std::vector<double> max_leaf_reach;
  std::vector<std::size_t> unreachable_nodes;
  std::vector<std::size_t> unreachable_leaves;

  bool has_dead_leaves() const { return !unreachable_leaves.empty(); }
};

// A node or leaf is unreachable when no pool state reaches it with path
// probability above the threshold.
ReachabilityReport reachability_report(const RewardDDT& tree, std::span<const ObservationRef> pool,
                                       double reach_threshold = kReachThreshold);

struct SensitivityReport {
  std::vector<std::vector<double>> scores;  // [node][dim]
  // For 2-dim inputs: score(theta) / score(x) per node.
  std::vector<double> theta_x_ratio;
  bool misaligned = false;
};

inline constexpr double kMisalignmentRatio = 5.0;

// score(node, d) = grid mean of |p_i(x + delta e_d) - p_i(x)| / delta, where
// delta is the grid spacing along d. The misalignment flag is set for 2-dim
// inputs when the theta/x ratio exceeds kMisalignmentRatio at every node.
SensitivityReport sensitivity_report(const RewardDDT& tree, std::span<const std::pair<double, double>> ranges,
                                     std::size_t resolution);
SensitivityReport sensitivity_report(const RewardDDT& tree, const Grid2D& grid = {});

struct ReportOptions {
  std::size_t trace_k = 5;
  double reach_threshold = kReachThreshold;
  Grid2D grid;
};

struct ReportBundle {
  std::string index_json;
  std::vector<std::filesystem::path> files;  // relative to the output directory
};

// Writes node heatmaps (PGM), trace strips of the first and last k states
// (PGM for image pools), and index.json with leaf summaries. The pool may be
// empty, in which case traces are skipped.
ReportBundle render_tree_report(const RewardDDT& tree, std::span<const ObservationRef> pool,
                                const std::filesystem::path& out_dir, const ReportOptions& options = {});

}  // namespace ddtrl
