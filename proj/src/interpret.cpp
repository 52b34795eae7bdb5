#include "ddtrl/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ddtrl/data_io.hpp"
#include "ddtrl/error.hpp"
#include "json.hpp"

namespace ddtrl {

using nlohmann::json;

double Heatmap::min_value() const {
  return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
}

double Heatmap::max_value() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

namespace {

void check_node(const RewardDDT& tree, std::size_t node) {
  if (node >= tree.spec().internal_count())
    throw ConfigError("node id " + std::to_string(node) + " out of range (tree has " +
                      std::to_string(tree.spec().internal_count()) + " internal nodes)");
}

}  // namespace

Heatmap pixel_toggle_heatmap(const RewardDDT& tree, std::size_t node) {
  check_node(tree, node);
  const auto& in = tree.spec().input;
  if (!in.is_image) throw ConfigError("pixel_toggle_heatmap needs an image-shaped input space");
  Heatmap h;
  h.node = node;
  h.kind = "pixel_toggle";
  h.rows = in.height;
  h.cols = in.width;
  h.row_axis = "pixel_row";
  h.col_axis = "pixel_col";
  h.row_hi = static_cast<double>(in.height - 1);
  h.col_hi = static_cast<double>(in.width - 1);
  Observation img(in.size(), 0.0f);
  const double base = route_probability(tree, node, img);
  h.values.resize(h.rows * h.cols);
  const std::size_t plane = in.height * in.width;
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < in.channels; ++c) img[c * plane + p] = 1.0f;
    h.values[p] = route_probability(tree, node, img) - base;
    for (std::size_t c = 0; c < in.channels; ++c) img[c * plane + p] = 0.0f;
  }
  return h;
}

namespace {

double grid_coord(double lo, double hi, std::size_t k, std::size_t n) {
  return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n - 1);
}

void check_grid(const RewardDDT& tree, const Grid2D& grid) {
  const auto& in = tree.spec().input;
  if (in.is_image || in.size() != 2) throw ConfigError("2D heatmaps need a 2-dimensional flat input space");
  if (grid.resolution < 2) throw ConfigError("grid resolution must be >= 2");
  if (!(grid.x_hi > grid.x_lo) || !(grid.theta_hi > grid.theta_lo)) throw ConfigError("grid ranges must be increasing");
}

}  // namespace

Heatmap grid_heatmap_2d(const RewardDDT& tree, std::size_t node, const Grid2D& grid) {
  check_node(tree, node);
  check_grid(tree, grid);
  Heatmap h;
  h.node = node;
  h.kind = "routing_2d";
  h.rows = h.cols = grid.resolution;
  h.row_axis = "theta";
  h.col_axis = "x";
  h.row_lo = grid.theta_lo;
  h.row_hi = grid.theta_hi;
  h.col_lo = grid.x_lo;
  h.col_hi = grid.x_hi;
  h.values.resize(h.rows * h.cols);
  Observation x(2);
  for (std::size_t r = 0; r < h.rows; ++r)
    for (std::size_t c = 0; c < h.cols; ++c) {
      x[0] = static_cast<float>(grid_coord(grid.x_lo, grid.x_hi, c, h.cols));
      x[1] = static_cast<float>(grid_coord(grid.theta_lo, grid.theta_hi, r, h.rows));
      h.values[r * h.cols + c] = route_probability(tree, node, x);
    }
  return h;
}

Trace synthetic_trace(const RewardDDT& tree, std::size_t node, std::span<const ObservationRef> pool,
                      double reach_threshold) {
  check_node(tree, node);
  Trace t;
  t.node = node;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    const auto fw = tree_forward(tree, *pool[k]);
    if (fw.reach[node] > reach_threshold)
      t.entries.push_back({k, fw.left[node], fw.reach[node]});
    else
      ++t.excluded;
  }
  std::stable_sort(t.entries.begin(), t.entries.end(),
                   [](const TraceEntry& a, const TraceEntry& b) { return a.left_prob > b.left_prob; });
  t.unreachable = t.entries.empty();
  return t;
}

ReachabilityReport reachability_report(const RewardDDT& tree, std::span<const ObservationRef> pool,
                                       double reach_threshold) {
  const std::size_t internal = tree.spec().internal_count();
  ReachabilityReport r;
  r.max_node_reach.assign(internal, 0.0);
  r.max_leaf_reach.assign(tree.spec().leaf_count(), 0.0);
  for (const auto& x : pool) {
    const auto fw = tree_forward(tree, *x);
    for (std::size_t i = 0; i < internal; ++i) r.max_node_reach[i] = std::max(r.max_node_reach[i], fw.reach[i]);
    for (std::size_t l = 0; l < r.max_leaf_reach.size(); ++l)
      r.max_leaf_reach[l] = std::max(r.max_leaf_reach[l], fw.reach[internal + l]);
  }
  for (std::size_t i = 0; i < internal; ++i)
    if (!(r.max_node_reach[i] > reach_threshold)) r.unreachable_nodes.push_back(i);
  for (std::size_t l = 0; l < r.max_leaf_reach.size(); ++l)
    if (!(r.max_leaf_reach[l] > reach_threshold)) r.unreachable_leaves.push_back(l);
  return r;
}

SensitivityReport sensitivity_report(const RewardDDT& tree, std::span<const std::pair<double, double>> ranges,
                                     std::size_t resolution) {
  const auto& in = tree.spec().input;
  if (in.is_image) throw ConfigError("sensitivity_report needs a flat input space");
  const std::size_t n = in.size();
  if (ranges.size() != n)
    throw ShapeError("sensitivity_report: " + std::to_string(ranges.size()) + " ranges for " + std::to_string(n) +
                     " input dimensions");
  if (resolution < 2) throw ConfigError("grid resolution must be >= 2");
  for (const auto& [lo, hi] : ranges)
    if (!(hi > lo)) throw ConfigError("grid ranges must be increasing");
  double points_d = std::pow(static_cast<double>(resolution), static_cast<double>(n));
  if (points_d > 5e7) throw ConfigError("sensitivity grid too large");
  const auto points = static_cast<std::size_t>(points_d);

  const std::size_t internal = tree.spec().internal_count();
  SensitivityReport rep;
  rep.scores.assign(internal, std::vector<double>(n, 0.0));
  std::vector<double> delta(n);
  for (std::size_t d = 0; d < n; ++d)
    delta[d] = (ranges[d].second - ranges[d].first) / static_cast<double>(resolution - 1);
  std::vector<std::size_t> idx(n, 0);
  std::vector<double> base(n);
  Observation x(n);
  for (std::size_t p = 0; p < points; ++p) {
    std::size_t rem = p;
    for (std::size_t d = 0; d < n; ++d) {
      idx[d] = rem % resolution;
      rem /= resolution;
      base[d] = grid_coord(ranges[d].first, ranges[d].second, idx[d], resolution);
    }
    for (std::size_t i = 0; i < internal; ++i) {
      for (std::size_t d = 0; d < n; ++d) x[d] = static_cast<float>(base[d]);
      const double p0 = route_probability(tree, i, x);
      for (std::size_t d = 0; d < n; ++d) {
        x[d] = static_cast<float>(base[d] + delta[d]);
        rep.scores[i][d] += std::abs(route_probability(tree, i, x) - p0) / delta[d];
        x[d] = static_cast<float>(base[d]);
      }
    }
  }
  for (auto& row : rep.scores)
    for (double& s : row) s /= static_cast<double>(points);
  if (n == 2) {
    rep.misaligned = internal > 0;
    for (const auto& row : rep.scores) {
      const double ratio = row[0] > 0.0 ? row[1] / row[0]
                           : row[1] > 0.0 ? std::numeric_limits<double>::infinity()
                                          : std::numeric_limits<double>::quiet_NaN();
      rep.theta_x_ratio.push_back(ratio);
      if (!(ratio > kMisalignmentRatio)) rep.misaligned = false;
    }
  }
  return rep;
}

SensitivityReport sensitivity_report(const RewardDDT& tree, const Grid2D& grid) {
  check_grid(tree, grid);
  const std::pair<double, double> ranges[2] = {{grid.x_lo, grid.x_hi}, {grid.theta_lo, grid.theta_hi}};
  return sensitivity_report(tree, ranges, grid.resolution);
}

// ---------------------------------------------------------------- report

namespace {

json trace_side(std::span<const TraceEntry> entries) {
  json out = json::array();
  for (const auto& e : entries)
    out.push_back({{"pool_index", e.pool_index}, {"left_prob", e.left_prob}, {"reach_prob", e.reach_prob}});
  return out;
}

// Lays the selected images out left to right with a one-pixel gap.
std::vector<double> strip_pixels(std::span<const ObservationRef> pool, const std::vector<std::size_t>& picks,
                                 const InputShape& shape, std::size_t& cols) {
  const std::size_t h = shape.height, w = shape.width;
  cols = picks.size() * (w + 1) - 1;
  std::vector<double> px(h * cols, 0.0);
  for (std::size_t k = 0; k < picks.size(); ++k) {
    const auto& img = *pool[picks[k]];
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) px[r * cols + k * (w + 1) + c] = img[r * w + c];
  }
  return px;
}

}  // namespace

ReportBundle render_tree_report(const RewardDDT& tree, std::span<const ObservationRef> pool,
                                const std::filesystem::path& out_dir, const ReportOptions& options) {
  const auto& spec = tree.spec();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory " + out_dir.string() + ": " + ec.message());
  ReportBundle bundle;
  json artifacts = json::array();
  const bool image = spec.input.is_image;
  const bool plane2d = !image && spec.input.size() == 2;

  for (std::size_t i = 0; i < spec.internal_count(); ++i) {
    if (!image && !plane2d) break;
    const Heatmap h = image ? pixel_toggle_heatmap(tree, i) : grid_heatmap_2d(tree, i, options.grid);
    const std::string file = "node_" + std::to_string(i) + "_" + h.kind + ".pgm";
    const double lo = h.min_value(), hi = h.max_value();
    write_pgm(out_dir / file, h.rows, h.cols, h.values, lo, hi);
    bundle.files.emplace_back(file);
    artifacts.push_back(
        {{"node_id", i}, {"artifact_type", h.kind}, {"file", file}, {"value_min", lo}, {"value_max", hi}});
  }

  json traces = json::array();
  if (!pool.empty()) {
    for (std::size_t i = 0; i < spec.internal_count(); ++i) {
      const Trace t = synthetic_trace(tree, i, pool, options.reach_threshold);
      const std::size_t k = options.trace_k;
      const bool truncated = t.entries.size() < 2 * k;
      std::vector<TraceEntry> top, bottom;
      if (truncated) {
        top = t.entries;
      } else {
        top.assign(t.entries.begin(), t.entries.begin() + static_cast<std::ptrdiff_t>(k));
        bottom.assign(t.entries.end() - static_cast<std::ptrdiff_t>(k), t.entries.end());
      }
      json jt = {{"node_id", i},
                 {"unreachable", t.unreachable},
                 {"excluded", t.excluded},
                 {"emitted", top.size() + bottom.size()},
                 {"truncated", truncated},
                 {"first", trace_side(top)},
                 {"last", trace_side(bottom)}};
      if (image && !t.entries.empty()) {
        std::vector<std::size_t> picks;
        for (const auto& e : top) picks.push_back(e.pool_index);
        for (const auto& e : bottom) picks.push_back(e.pool_index);
        std::size_t cols = 0;
        const auto px = strip_pixels(pool, picks, spec.input, cols);
        const std::string file = "trace_" + std::to_string(i) + ".pgm";
        write_pgm(out_dir / file, spec.input.height, cols, px, 0.0, 1.0);
        bundle.files.emplace_back(file);
        artifacts.push_back(
            {{"node_id", i}, {"artifact_type", "trace_strip"}, {"file", file}, {"value_min", 0.0}, {"value_max", 1.0}});
        jt["file"] = file;
      }
      traces.push_back(std::move(jt));
    }
  }

  json leaves = json::array();
  for (std::size_t l = 0; l < spec.leaf_count(); ++l) {
    const auto& leaf = tree.leaf(l);
    leaves.push_back({{"leaf_id", l},
                      {"heap_index", spec.internal_count() + l},
                      {"q", leaf_distribution(leaf)},
                      {"rewards", spec.leaf_kind.rewards},
                      {"soft_reward", leaf_soft_reward(spec.leaf_kind, leaf)}});
  }
  json index = {{"depth", spec.depth},
                {"node_kind", to_string(spec.node_kind)},
                {"leaf_kind", to_string(spec.leaf_kind.type)},
                {"artifacts", artifacts},
                {"traces", traces},
                {"leaves", leaves}};
  if (!pool.empty()) {
    const auto reach = reachability_report(tree, pool, options.reach_threshold);
    index["unreachable_nodes"] = reach.unreachable_nodes;
    index["unreachable_leaves"] = reach.unreachable_leaves;
  }
  if (plane2d) {
    const auto sens = sensitivity_report(tree, options.grid);
    json rows = json::array();
    for (std::size_t i = 0; i < sens.scores.size(); ++i)
      rows.push_back({{"node_id", i},
                      {"score_x", sens.scores[i][0]},
                      {"score_theta", sens.scores[i][1]},
                      {"theta_x_ratio", std::isfinite(sens.theta_x_ratio[i]) ? json(sens.theta_x_ratio[i]) : json()}});
    index["sensitivity"] = {{"nodes", rows}, {"misaligned", sens.misaligned}, {"ratio_threshold", kMisalignmentRatio}};
  }
  bundle.index_json = index.dump(1) + "\n";
  write_text_file(out_dir / "index.json", bundle.index_json);
  bundle.files.emplace_back("index.json");
  return bundle;
}

}  // namespace ddtrl
