// Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-7 are fast
// property checks, 8-12 retrain the shipped configs at desk scale.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "ddtrl/data_io.hpp"
#include "ddtrl/error.hpp"
#include "ddtrl/experiment.hpp"
#include "ddtrl/interpret.hpp"
#include "ddtrl/policy.hpp"
#include "ddtrl/preferences.hpp"
#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"
#include "support.hpp"

using namespace ddtrl;
using namespace testsupport;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string g6(double v) { return fmt("%.6g", v); }

struct Context {
  std::filesystem::path config_dir;
  unsigned threads = 1;
};

// ------------------------------------------------------------ criterion 1

// Parameters drawn with a fan-in scaled spread so routing stays out of
// saturation even on 84x84x4 images.
RewardDDT scaled_random_tree(const TreeSpec& spec, std::mt19937_64& rng) {
  RewardDDT t = init_tree(spec, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  const double kernel_scale = spec.node_kind == NodeKind::Sophisticated
                                  ? 1.0 / std::sqrt(static_cast<double>(spec.input.channels * spec.conv.kernel *
                                                                       spec.conv.kernel))
                                  : 1.0;
  const double w_scale = spec.node_kind == NodeKind::Sophisticated
                             ? 2.0 / std::sqrt(static_cast<double>(spec.feature_count()))
                             : 1.0;
  for (std::size_t i = 0; i < spec.internal_count(); ++i) {
    auto& node = t.mutable_node(i);
    for (double& v : node.conv_kernel) v = kernel_scale * n(rng);
    for (double& v : node.conv_bias) v = 0.1 * n(rng);
    for (double& v : node.weights) v = w_scale * n(rng);
    node.bias = 0.5 * n(rng);
  }
  for (std::size_t l = 0; l < spec.leaf_count(); ++l)
    for (double& v : t.mutable_leaf(l).logits) v = n(rng);
  return t;
}

// True when moving flat coordinate `c` by +-h flips the sign of some conv
// pre-activation of its node on some batch state.
bool straddles_kink(const RewardDDT& tree, const std::vector<PreferencePair>& batch, std::size_t c, double h) {
  const auto& spec = tree.spec();
  const std::size_t per = spec.node_parameter_count();
  if (c >= spec.internal_count() * per || c % per >= spec.conv_kernel_size() + spec.conv.out_channels) return false;
  const std::size_t node = c / per;
  auto params = tree.flatten();
  RewardDDT up = tree, down = tree;
  params[c] += h;
  up.assign(params);
  params[c] -= 2 * h;
  down.assign(params);
  std::vector<double> pu, pd, feat;
  for (const auto& pair : batch)
    for (const auto* t : {&pair.worse, &pair.better})
      for (const auto& x : t->states) {
        conv_features(spec, up.node(node), *x, pu, feat);
        conv_features(spec, down.node(node), *x, pd, feat);
        for (std::size_t f = 0; f < pu.size(); ++f)
          if ((pu[f] >= 0.0) != (pd[f] >= 0.0)) return true;
      }
  return false;
}

Outcome gradient_oracle(const Context&) {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240101);
  double worst = 0.0;
  std::size_t checked = 0, instances = 0, refined = 0;
  for (NodeKind kind : {NodeKind::Simple, NodeKind::Sophisticated})
    for (bool crl : {true, false})
      for (bool penalty : {false, true})
        for (int k = 0; k < 50; ++k) {
          TreeSpec spec;
          spec.depth = 1 + k % 3;
          spec.leaf_kind = crl ? LeafKind::crl({-1.0, 0.5, 2.0}) : LeafKind::il(-1.0, 3.0);
          spec.temperature = kind == NodeKind::Simple ? 0.5 + 0.05 * k : 1.0;
          std::size_t pairs = 3, length = 3;
          if (kind == NodeKind::Sophisticated) {
            spec.depth = 1 + k % 2;
            spec.node_kind = NodeKind::Sophisticated;
            spec.input = InputShape::image(4, 84, 84);
            spec.conv = {8, 4, 2, 0.01};
            pairs = 1;
            length = 2;
          } else {
            spec.input = InputShape::flat(6);
          }
          const RewardDDT tree = scaled_random_tree(spec, rng);
          std::vector<PreferencePair> batch;
          for (std::size_t p = 0; p < pairs; ++p)
            batch.push_back({random_traj(spec.input.size(), length, rng), random_traj(spec.input.size(), length, rng)});
          const PenaltyConfig pc{1.0, penalty};
          const auto analytic = loss_and_grad(tree, batch, pc).grad.values;
          std::vector<std::size_t> coords;
          if (kind == NodeKind::Simple) {
            coords.resize(tree.parameter_count());
            for (std::size_t c = 0; c < coords.size(); ++c) coords[c] = c;
          } else {
            // Every parameter group of every node, plus random picks.
            const std::size_t per = spec.node_parameter_count(), kernel = spec.conv_kernel_size();
            std::set<std::size_t> pick;
            for (std::size_t i = 0; i < spec.internal_count(); ++i) {
              const std::size_t off = tree.node_offset(i);
              pick.insert(off + rng() % kernel);
              pick.insert(off + kernel + rng() % spec.conv.out_channels);
              pick.insert(off + kernel + spec.conv.out_channels + rng() % spec.feature_count());
              pick.insert(off + per - 1);
            }
            pick.insert(tree.leaf_offset(0));
            while (pick.size() < 14) pick.insert(rng() % tree.parameter_count());
            coords.assign(pick.begin(), pick.end());
          }
          for (std::size_t c : coords) {
            // Central differences are only a valid reference when the stencil does
            // not straddle a LeakyReLU kink; shrink the step until it does not.
            double h = 1e-5, fd = finite_diff_grad(tree, batch, pc, h, std::vector<std::size_t>{c}).values[c];
            while (kind == NodeKind::Sophisticated && h > 1e-9 && straddles_kink(tree, batch, c, h)) {
              h /= 10;
              fd = finite_diff_grad(tree, batch, pc, h, std::vector<std::size_t>{c}).values[c];
              ++refined;
            }
            worst = std::max(worst, rel_err(analytic[c], fd));
          }
          checked += coords.size();
          ++instances;
        }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {worst <= 1e-4 && secs < 60.0, "max rel err " + g6(worst) + " over " + std::to_string(instances) +
                                             " instances / " + std::to_string(checked) + " coordinates (" +
                                             std::to_string(refined) + " kink-straddling stencils refined), " +
                                             fmt("%.1f", secs) + " s (limits 1e-4, 60 s)"};
}

// ------------------------------------------------------------ criterion 2

Outcome path_conservation(const Context&) {
  std::mt19937_64 rng(77);
  double worst = 0.0;
  std::size_t sophisticated = 0;
  for (int k = 0; k < 10000; ++k) {
    TreeSpec spec;
    spec.leaf_kind = LeafKind::il(0, 1);
    RewardDDT tree = init_tree(simple_spec(1, 1), rng);
    Observation x;
    if (k % 50 == 0) {
      spec.depth = 1 + k % 3;
      spec.node_kind = NodeKind::Sophisticated;
      spec.input = InputShape::image(4, 84, 84);
      spec.conv = {8, 4, 2, 0.01};
      tree = scaled_random_tree(spec, rng);
      x = random_obs(spec.input.size(), rng);
      ++sophisticated;
    } else {
      spec.depth = 1 + rng() % 8;
      spec.input = InputShape::flat(1 + rng() % 10);
      spec.temperature = 0.1 + 4.0 * std::uniform_real_distribution<double>(0, 1)(rng);
      tree = random_tree(spec, rng, 1.0 + static_cast<double>(rng() % 5));
      x = random_obs(spec.input.size(), rng);
    }
    const auto p = path_probabilities(tree, x);
    double sum = 0.0;
    for (double v : p) sum += v;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return {worst <= 1e-9, "max |sum - 1| = " + g6(worst) + " over 10000 trees (" + std::to_string(sophisticated) +
                             " Sophisticated at 4x84x84), limit 1e-9"};
}

// ------------------------------------------------------------ criterion 3

// Neighbour of a cell on a rows x cols grid: 0 left, 1 right, 2 up, 3 down.
std::size_t oracle_target(std::size_t rows, std::size_t cols, std::size_t cell, int a) {
  const std::size_t r = cell / cols, c = cell % cols;
  if (a == 0) return c > 0 ? cell - 1 : cell;
  if (a == 1) return c + 1 < cols ? cell + 1 : cell;
  if (a == 2) return r > 0 ? cell - cols : cell;
  return r + 1 < rows ? cell + cols : cell;
}

// Best expected return per start cell over every deterministic
// non-stationary policy, which is optimal for a finite horizon.
std::vector<double> enumerate_optimum(std::size_t rows, std::size_t cols, const std::vector<double>& r,
                                      std::size_t horizon, double success) {
  const std::size_t cells = rows * cols, decisions = horizon - 1;
  std::size_t count = 1;
  for (std::size_t k = 0; k < cells * decisions; ++k) count *= 4;
  std::vector<double> best(cells, -1e300);
  std::vector<int> actions(cells * decisions);
  std::vector<double> dist(cells), next(cells);
  for (std::size_t code = 0; code < count; ++code) {
    std::size_t c = code;
    for (auto& a : actions) {
      a = static_cast<int>(c % 4);
      c /= 4;
    }
    for (std::size_t s = 0; s < cells; ++s) {
      std::fill(dist.begin(), dist.end(), 0.0);
      dist[s] = 1.0;
      double total = 0.0;
      for (std::size_t t = 0;; ++t) {
        for (std::size_t q = 0; q < cells; ++q) total += dist[q] * r[q];
        if (t == decisions) break;
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t q = 0; q < cells; ++q) {
          const std::size_t to = oracle_target(rows, cols, q, actions[t * cells + q]);
          if (to == q) {
            next[q] += dist[q];
          } else {
            next[to] += success * dist[q];
            next[q] += (1 - success) * dist[q];
          }
        }
        std::swap(dist, next);
      }
      best[s] = std::max(best[s], total);
    }
  }
  return best;
}

Outcome vi_optimality(const Context&) {
  std::mt19937_64 a(5);
  const auto pool = std::make_shared<const DigitPool>(synthetic_glyphs({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 2, a));
  std::mt19937_64 rng(31);
  double worst = 0.0;
  std::size_t mismatches = 0;
  std::map<std::string, int> shapes;
  for (int k = 0; k < 200; ++k) {
    const std::size_t rows = 2, cols = k % 2 == 0 ? 2 : 3;
    const std::size_t horizon = cols == 2 ? 1 + k % 3 : 1 + (k / 2) % 2;
    const auto m = gridworld_make(rows, cols, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, pool, rng);
    const auto truth = m.true_rewards();
    const auto vi = value_iteration(m, truth, horizon);
    const auto ev = evaluate_policy_gridworld(m, vi.policy);
    const auto best = enumerate_optimum(rows, cols, truth, horizon, m.success_prob());
    for (std::size_t c = 0; c < m.cell_count(); ++c) {
      const double tol = 1e-12 * std::max(1.0, std::abs(best[c]));
      const double err = std::max(std::abs(vi.values[c] - best[c]), std::abs(ev[c] - best[c]));
      worst = std::max(worst, err / std::max(1.0, std::abs(best[c])));
      mismatches += err > tol;
    }
    ++shapes[std::to_string(rows) + "x" + std::to_string(cols) + "/H" + std::to_string(horizon)];
  }
  std::string mix;
  for (const auto& [k, v] : shapes) mix += (mix.empty() ? "" : " ") + k + ":" + std::to_string(v);
  return {mismatches == 0, std::to_string(mismatches) + " mismatching cells, max scaled diff " + g6(worst) +
                               " (" + mix + ", tolerance 1e-12 for summation order)"};
}

// ---------------------------------------------------------- criteria 4-7

Outcome bt_anchors(const Context&) {
  double tie = 0.0;
  for (double g : {0.0, 1.0, -3.5, 250.0}) tie = std::max(tie, std::abs(bradley_terry_pair_loss(g, g) - std::log(2.0)));
  const double one = bradley_terry_pair_loss(0.0, 1.0);
  const double one_err = std::abs(one - std::log1p(std::exp(-1.0)));
  const double fifty = bradley_terry_pair_loss(0.0, 50.0);
  const bool ok = tie <= 1e-12 && one_err <= 1e-12 && std::isfinite(fifty) && fifty < 1e-20;
  return {ok, "tie err " + g6(tie) + ", dG=1 err " + g6(one_err) + ", dG=50 loss " + g6(fifty)};
}

Outcome penalty_anchors(const Context&) {
  const double half = penalty_from_alphas(std::vector<double>{0.5}, 1.0);
  const double nine = penalty_from_alphas(std::vector<double>{0.9}, 1.0);
  const auto dead = tree_with_node_probs({1.0 - 1e-9, 0.5, 0.5}, LeafKind::crl({0, 1}));
  std::vector<ObservationRef> pool;
  for (int k = 0; k < 10; ++k) pool.push_back(make_observation({0.0f}));
  const auto rep = reachability_report(dead, pool);
  const bool ok = std::abs(half - std::log(2.0)) <= 1e-12 && std::abs(nine - 1.2039728) <= 1e-6 &&
                  rep.has_dead_leaves() && rep.unreachable_leaves == std::vector<std::size_t>{2, 3};
  std::string leaves;
  for (auto l : rep.unreachable_leaves) leaves += (leaves.empty() ? "" : ",") + std::to_string(l);
  return {ok, "alpha 0.5 -> " + fmt("%.12f", half) + ", alpha 0.9 -> " + fmt("%.9f", nine) +
                  ", dead-branch unreachable leaves {" + leaves + "}"};
}

bool same_pairs(const std::vector<PreferencePair>& a, const std::vector<PreferencePair>& b) {
  if (a.size() != b.size()) return false;
  auto same = [](const Trajectory& x, const Trajectory& y) {
    if (x.size() != y.size() || x.true_rewards != y.true_rewards) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (*x.states[k] != *y.states[k]) return false;
    return true;
  };
  for (std::size_t k = 0; k < a.size(); ++k)
    if (!same(a[k].worse, b[k].worse) || !same(a[k].better, b[k].better)) return false;
  return true;
}

Outcome round_trips(const Context&) {
  std::mt19937_64 rng(404);
  std::size_t model_bad = 0;
  for (int k = 0; k < 50; ++k) {
    TreeSpec s;
    s.depth = 1 + k % 4;
    s.leaf_kind = k % 2 ? LeafKind::crl({0.1, 1.0 / 3.0, -2.0}) : LeafKind::il(-1.0 / 7.0, 3.0);
    s.temperature = 0.3 + k / 7.0;
    if (k % 5 == 0) {
      s.node_kind = NodeKind::Sophisticated;
      s.input = InputShape::image(2, 9, 9);
      s.conv = {3, 2, 2, 0.02};
    } else {
      s.input = InputShape::flat(1 + k % 7);
    }
    const auto t = random_tree(s, rng, 1e3);
    const auto text = model_to_json(t);
    const auto back = model_from_json(text);
    model_bad += !(back == t) || model_to_json(back) != text;
  }

  std::size_t data_bad = 0;
  std::mt19937_64 g(6);
  const GridworldSource grid{5, {0, 1, 2, 3}, std::make_shared<const DigitPool>(synthetic_glyphs({0, 1, 2, 3}, 4, g)),
                             std::make_shared<const DigitPool>(synthetic_glyphs({0, 1, 2, 3}, 4, g))};
  const std::vector<std::pair<EnvSource, LabelerSpec>> sources{{grid, DigitSumLabeler{}},
                                                                {CartPoleSource{}, CartPoleBoxLabeler{}}};
  for (const auto& [src, lab] : sources) {
    const std::size_t length = std::holds_alternative<CartPoleSource>(src) ? 20 : 5;
    const auto ds = build_dataset(src, lab, DatasetRequest{40, 10, length, 3, 1000});
    const auto bytes = encode_dataset(ds);
    const auto back = decode_dataset(bytes);
    data_bad += encode_dataset(back) != bytes || !same_pairs(back.train, ds.train) ||
                !same_pairs(back.validation, ds.validation) || !(back.provenance == ds.provenance);
  }

  std::vector<std::vector<std::uint8_t>> images;
  std::vector<std::uint8_t> labels;
  for (int k = 0; k < 5; ++k) {
    images.emplace_back(kDigitPixels, static_cast<std::uint8_t>(30 * k));
    labels.push_back(static_cast<std::uint8_t>(k));
  }
  const auto [img, lbl] = encode_mnist_idx(images, labels);
  std::mt19937_64 fz(99);
  std::size_t silent = 0;
  for (int k = 0; k < 1000; ++k) {
    auto i2 = img, l2 = lbl;
    const bool on_images = k % 2 == 0;
    auto& target = on_images ? i2 : l2;
    if (k % 10 == 9) {
      // Truncation anywhere in the file.
      target.resize(fz() % target.size());
    } else {
      const std::size_t pos = fz() % (on_images ? 16 : 8);
      const std::uint8_t old = target[pos];
      std::uint8_t nv;
      do nv = static_cast<std::uint8_t>(fz()); while (nv == old);
      target[pos] = nv;
    }
    try {
      parse_mnist_idx(i2, l2);
      ++silent;
    } catch (const FormatError&) {
    }
  }
  const bool ok = model_bad == 0 && data_bad == 0 && silent == 0;
  return {ok, std::to_string(model_bad) + "/50 model JSON mismatches, " + std::to_string(data_bad) +
                  "/2 dataset mismatches, " + std::to_string(silent) + "/1000 silent IDX corruptions"};
}

Outcome toggle_closed_form(const Context&) {
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    TreeSpec s;
    s.depth = 1 + k % 3;
    s.input = InputShape::image(1, 28, 28);
    s.temperature = 0.2 + 0.3 * k;
    const auto t = random_tree(s, rng, 0.5);
    for (std::size_t node = 0; node < s.internal_count(); ++node) {
      const auto h = pixel_toggle_heatmap(t, node);
      const auto& n = t.node(node);
      const double base = 1.0 / (1.0 + std::exp(-s.temperature * n.bias));
      for (std::size_t p = 0; p < kDigitPixels; ++p) {
        const double on = 1.0 / (1.0 + std::exp(-s.temperature * (n.weights[p] + n.bias)));
        worst = std::max(worst, std::abs(h.values[p] - (on - base)));
      }
    }
  }
  return {worst <= 1e-12, "max deviation " + g6(worst) + " over 20 trees, limit 1e-12"};
}

// --------------------------------------------------------- criteria 8-12

struct Trained {
  ExperimentConfig cfg;
  DigitPools pools;
  PreferenceDataset ds;
  TrainResult result;
};

Trained train_config(const Context& ctx, const std::string& name) {
  auto cfg = load_config(ctx.config_dir / (name + ".json"));
  auto pools = load_digit_pools(cfg.environment);
  auto ds = generate_preferences(cfg, pools, ctx.threads);
  auto result = train_reward_model(cfg, ds, ctx.threads);
  return {std::move(cfg), std::move(pools), std::move(ds), std::move(result)};
}

double mean_pct(const RlReport& r) {
  double s = 0.0;
  for (const auto& row : r.rows) s += row.pct_of_optimal;
  return s / static_cast<double>(r.rows.size());
}

double mean_return(const RlReport& r) {
  double s = 0.0;
  for (const auto& row : r.rows) s += row.mean;
  return s / static_cast<double>(r.rows.size());
}

double soft_acc(const Trained& t) { return preference_accuracy(t.result.tree, t.ds.validation, RewardMode::Soft); }

double argmax_acc(const Trained& t) {
  return preference_accuracy(t.result.tree, t.ds.validation, RewardMode::Argmax);
}

RlReport rl(const Context& ctx, const Trained& t, RlMode mode, bool ood = false) {
  return run_rl(t.cfg, mode == RlMode::Random || mode == RlMode::GroundTruth ? nullptr : &t.result.tree, mode, ood,
                t.pools, ctx.threads, "acceptance");
}

Outcome mnist01(const Context& ctx) {
  const auto t = train_config(ctx, "mnist01_crl");
  const double acc = soft_acc(t);
  const double pct = mean_pct(rl(ctx, t, RlMode::Soft));
  return {acc >= 0.95 && pct >= 90.0, "data " + t.pools.description + ", val acc soft " + g6(acc) + " (>= 0.95), argmax " +
                                          g6(argmax_acc(t)) + ", soft pct_of_optimal " + g6(pct) + " (>= 90)"};
}

Outcome mnist03(const Context& ctx) {
  const auto il = train_config(ctx, "mnist03_il");
  const auto crl = train_config(ctx, "mnist03_crl");
  const double acc = soft_acc(il);
  const double il_pct = mean_pct(rl(ctx, il, RlMode::Soft));
  const double rnd = mean_pct(rl(ctx, il, RlMode::Random));
  const double crl_pct = mean_pct(rl(ctx, crl, RlMode::Soft));
  const bool ok = acc >= 0.90 && il_pct >= 90.0 && rnd >= 4.0 && rnd <= 12.0 && crl_pct < il_pct;
  return {ok, "data " + il.pools.description + ", IL val acc soft " + g6(acc) + " (>= 0.90), IL soft pct " +
                  g6(il_pct) + " (>= 90), random pct " + g6(rnd) + " (in [4, 12]), CRL soft pct " + g6(crl_pct) +
                  " (< IL soft)"};
}

Outcome mnist09(const Context& ctx) {
  const auto t = train_config(ctx, "mnist09_il");
  const double soft = mean_pct(rl(ctx, t, RlMode::Soft));
  const double arg = mean_pct(rl(ctx, t, RlMode::Argmax));
  return {soft >= 85.0 && std::abs(arg - soft) <= 10.0,
          "data " + t.pools.description + ", val acc soft " + g6(soft_acc(t)) + ", IL soft pct " + g6(soft) +
              " (>= 85), IL argmax pct " + g6(arg) + " (within 10 points)"};
}

Outcome cartpole(const Context& ctx) {
  const auto t = train_config(ctx, "cartpole_crl");
  const auto sens = sensitivity_report(t.result.tree);
  double min_ratio = 1e300;
  std::string ratios;
  for (double r : sens.theta_x_ratio) {
    min_ratio = std::min(min_ratio, r);
    ratios += (ratios.empty() ? "" : ",") + fmt("%.3g", r);
  }
  const bool a = min_ratio > kMisalignmentRatio;
  const double in_dist = mean_return(rl(ctx, t, RlMode::Soft, false));
  const bool b = in_dist >= 180.0;
  const double ood = mean_return(rl(ctx, t, RlMode::Soft, true));
  const double gt_ood = mean_return(rl(ctx, t, RlMode::GroundTruth, true));
  const bool c = ood <= 50.0 && gt_ood >= 120.0;
  const auto mark = [](bool v) { return v ? "ok" : "FAIL"; };
  return {a && b && c, std::string("(a) ") + mark(a) + " theta/x ratios {" + ratios + "} (> 5 at every node); (b) " +
                           mark(b) + " in-dist soft return " + g6(in_dist) + " (>= 180); (c) " + mark(c) +
                           " OOD soft return " + g6(ood) + " (<= 50), OOD ground-truth return " + g6(gt_ood) +
                           " (>= 120); val acc soft " + g6(soft_acc(t))};
}

Outcome penalty_efficacy(const Context& ctx) {
  const auto t = train_config(ctx, "mnist03_crl_penalty");
  double lo = 1.0, hi = 0.0;
  for (const auto& batch : t.result.final_epoch_alphas)
    for (double a : batch) {
      lo = std::min(lo, a);
      hi = std::max(hi, a);
    }
  const auto pool = interpret_pool(t.cfg, &t.ds, t.pools);
  const auto rep = reachability_report(t.result.tree, pool);
  return {!t.result.final_epoch_alphas.empty() && lo >= 0.05 && hi <= 0.95,
          "final-epoch batch alphas in [" + g6(lo) + ", " + g6(hi) + "] over " +
              std::to_string(t.result.final_epoch_alphas.size()) + " batches (need [0.05, 0.95]), unreachable leaves " +
              std::to_string(rep.unreachable_leaves.size())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  Context ctx;
  ctx.config_dir = DDTRL_CONFIG_DIR;
  std::vector<int> only;
  app.add_option("--configs", ctx.config_dir, "directory with the shipped configs");
  app.add_option("--only", only, "criteria to run (default: all)")->check(CLI::Range(1, 12));
  app.add_option("--threads", ctx.threads, "worker threads")->check(CLI::Range(1, 1024));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome(const Context&)>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"path-probability conservation", path_conservation},
      {"value-iteration optimality", vi_optimality},
      {"Bradley-Terry anchors", bt_anchors},
      {"penalty anchors", penalty_anchors},
      {"format round-trips", round_trips},
      {"pixel-toggle closed form", toggle_closed_form},
      {"MNIST 0/1 CRL", mnist01},
      {"MNIST 0-3", mnist03},
      {"MNIST 0-9 IL", mnist09},
      {"CartPole silent misalignment", cartpole},
      {"penalty efficacy", penalty_efficacy},
  };
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
