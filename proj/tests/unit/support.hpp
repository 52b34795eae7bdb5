#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"

namespace testsupport {

using namespace ddtrl;

inline TreeSpec simple_spec(std::size_t depth, std::size_t n, LeafKind leaf = LeafKind::il(0.0, 1.0)) {
  TreeSpec s;
  s.depth = depth;
  s.input = InputShape::flat(n);
  s.leaf_kind = std::move(leaf);
  return s;
}

// Tree whose every parameter is drawn from N(0, scale).
inline RewardDDT random_tree(const TreeSpec& spec, std::mt19937_64& rng, double scale = 1.0) {
  RewardDDT t = init_tree(spec, rng);
  std::normal_distribution<double> n(0.0, scale);
  auto p = t.flatten();
  for (double& v : p) v = n(rng);
  t.assign(p);
  return t;
}

inline Observation random_obs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Observation o(n);
  for (float& v : o) v = u(rng);
  return o;
}

inline Trajectory random_traj(std::size_t n, std::size_t len, std::mt19937_64& rng) {
  Trajectory t;
  for (std::size_t k = 0; k < len; ++k) {
    t.states.push_back(make_observation(random_obs(n, rng)));
    t.true_rewards.push_back(0.0);
  }
  return t;
}

// Tree with the given left probabilities at each internal node, built from
// biases alone on a 1-dim input fed with x = 0.
inline RewardDDT tree_with_node_probs(const std::vector<double>& probs, const LeafKind& leaf) {
  std::size_t depth = 0;
  while (((std::size_t{1} << depth) - 1) < probs.size()) ++depth;
  TreeSpec spec = simple_spec(depth, 1, leaf);
  std::mt19937_64 rng(0);
  RewardDDT t = init_tree(spec, rng);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    t.mutable_node(i).weights.assign(1, 0.0);
    t.mutable_node(i).bias = std::log(probs[i] / (1.0 - probs[i]));
  }
  return t;
}

// Root-to-leaf path product computed by walking the bits of the leaf index.
inline std::vector<double> brute_force_paths(const std::vector<double>& p, std::size_t depth) {
  std::vector<double> out(std::size_t{1} << depth);
  for (std::size_t leaf = 0; leaf < out.size(); ++leaf) {
    double prob = 1.0;
    std::size_t node = 0;
    for (std::size_t level = 0; level < depth; ++level) {
      const bool right = (leaf >> (depth - 1 - level)) & 1u;
      prob *= right ? 1.0 - p[node] : p[node];
      node = 2 * node + (right ? 2 : 1);
    }
    out[leaf] = prob;
  }
  return out;
}

inline double rel_err(double a, double f) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), 1e-6});
}

}  // namespace testsupport
