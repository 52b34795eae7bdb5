#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "support.hpp"
#include "ddtrl/error.hpp"
#include "ddtrl/tree.hpp"

using namespace ddtrl;
using namespace testsupport;

TEST_CASE("route probability of a zero node is one half") {
  InternalNodeParams n;
  n.weights = {0.0, 0.0, 0.0};
  const Observation x{0.3f, -2.0f, 7.0f};
  CHECK(route_probability(n, x, 1.0) == 0.5);
  n.weights = {4.0, -1.0, 2.0};
  CHECK(route_probability(n, x, 0.0) == 0.5);
}

TEST_CASE("route probability matches the scalar sigmoid") {
  InternalNodeParams n;
  n.weights = {1.0, 0.0};
  const Observation x{0.5f, 0.3f};
  // sigma(2 * 0.5) evaluated independently.
  const double expected = 1.0 / (1.0 + std::exp(-1.0));
  CHECK(route_probability(n, x, 2.0) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(expected == doctest::Approx(0.7310586).epsilon(1e-7));
}

TEST_CASE("sigmoid is stable at extreme logits") {
  CHECK(sigmoid(800.0) == 1.0);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
  CHECK(sigmoid(-30.0) == doctest::Approx(std::exp(-30.0) / (1.0 + std::exp(-30.0))).epsilon(1e-12));
}

TEST_CASE("path probabilities of a depth-2 tree") {
  const auto t = tree_with_node_probs({0.8, 0.6, 0.3}, LeafKind::il(0, 1));
  const Observation x{0.0f};
  const auto p = path_probabilities(t, x);
  const auto oracle = brute_force_paths({0.8, 0.6, 0.3}, 2);
  REQUIRE(p.size() == 4);
  for (std::size_t l = 0; l < 4; ++l) CHECK(p[l] == doctest::Approx(oracle[l]).epsilon(1e-12));
  CHECK(p[0] == doctest::Approx(0.48));
  CHECK(p[1] == doctest::Approx(0.32));
  CHECK(p[2] == doctest::Approx(0.06));
  CHECK(p[3] == doctest::Approx(0.14));

  const auto d1 = tree_with_node_probs({0.5}, LeafKind::il(0, 1));
  const auto q = path_probabilities(d1, x);
  CHECK(q[0] == doctest::Approx(0.5));
  CHECK(q[1] == doctest::Approx(0.5));
}

TEST_CASE("path probabilities agree with bit-walk enumeration on random trees") {
  std::mt19937_64 rng(5);
  for (std::size_t depth = 1; depth <= 5; ++depth) {
    const auto t = random_tree(simple_spec(depth, 3), rng);
    const auto x = random_obs(3, rng);
    const auto d = forward_soft(t, x);
    const auto oracle = brute_force_paths(d.node_left_probs, depth);
    const auto p = path_probabilities(t, x);
    for (std::size_t l = 0; l < p.size(); ++l) CHECK(p[l] == doctest::Approx(oracle[l]).epsilon(1e-12));
  }
}

TEST_CASE("softmax leaf distributions") {
  LeafParams l;
  l.logits = {0.0, 0.0};
  auto q = leaf_distribution(l);
  CHECK(q[0] == 0.5);
  CHECK(q[1] == 0.5);
  l.logits = {0.0, 0.0, 0.0, 0.0};
  q = leaf_distribution(l);
  for (double v : q) CHECK(v == 0.25);
  l.logits = {1.0, 3.0};
  q = leaf_distribution(l);
  const double e1 = std::exp(1.0), e3 = std::exp(3.0);
  CHECK(q[0] == doctest::Approx(e1 / (e1 + e3)).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(e3 / (e1 + e3)).epsilon(1e-14));
  CHECK(q[0] == doctest::Approx(0.1192029).epsilon(1e-7));
  l.logits = {1000.0, 1001.0};
  q = leaf_distribution(l);
  CHECK(std::isfinite(q[0]));
  CHECK(q[0] + q[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("soft reward over enumerated paths") {
  auto t = tree_with_node_probs({0.8, 0.6, 0.3}, LeafKind::crl({0.0, 1.0}));
  // Leaf soft rewards (1, 0, 1, 0) via saturated logits.
  const double big = 60.0;
  t.mutable_leaf(0).logits = {-big, big};
  t.mutable_leaf(1).logits = {big, -big};
  t.mutable_leaf(2).logits = {-big, big};
  t.mutable_leaf(3).logits = {big, -big};
  const Observation x{0.0f};
  const auto d = forward_soft(t, x);
  CHECK(d.soft_reward == doctest::Approx(0.54).epsilon(1e-12));
  double sum = 0.0;
  for (std::size_t l = 0; l < 4; ++l) sum += d.leaf_path_probs[l] * d.leaf_soft_rewards[l];
  CHECK(d.soft_reward == doctest::Approx(sum).epsilon(1e-12));
}

TEST_CASE("identical leaves give the leaf reward regardless of routing") {
  std::mt19937_64 rng(9);
  auto t = random_tree(simple_spec(3, 4, LeafKind::crl({-1.0, 0.5, 2.0})), rng);
  for (std::size_t l = 0; l < 8; ++l) t.mutable_leaf(l).logits = {0.3, -0.2, 1.1};
  const auto q = leaf_distribution(t.leaf(0));
  const double qr = -1.0 * q[0] + 0.5 * q[1] + 2.0 * q[2];
  for (int k = 0; k < 10; ++k) CHECK(soft_reward(t, random_obs(4, rng)) == doctest::Approx(qr).epsilon(1e-12));

  std::mt19937_64 r2(1);
  const auto u = init_tree(simple_spec(2, 4, LeafKind::crl({0.0, 1.0})), r2);
  for (int k = 0; k < 5; ++k) CHECK(soft_reward(u, random_obs(4, rng)) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("argmax reward rules") {
  SUBCASE("IL depth-1, root 0.7 chooses the left leaf") {
    auto t = tree_with_node_probs({0.7}, LeafKind::il(-2.0, 3.0));
    t.mutable_leaf(0).logits = {0.2, 1.0};
    t.mutable_leaf(1).logits = {5.0, -5.0};
    const auto q = leaf_distribution(t.leaf(0));
    CHECK(reward_argmax(t, Observation{0.0f}) == doctest::Approx(-2.0 * q[0] + 3.0 * q[1]).epsilon(1e-14));
  }
  SUBCASE("CRL picks the most probable class of the most probable leaf") {
    auto t = tree_with_node_probs({0.8, 0.6, 0.3}, LeafKind::crl({0.0, 1.0}));
    t.mutable_leaf(0).logits = {std::log(0.2), std::log(0.8)};
    for (std::size_t l = 1; l < 4; ++l) t.mutable_leaf(l).logits = {3.0, -3.0};
    CHECK(reward_argmax(t, Observation{0.0f}) == 1.0);
    CHECK(forward_soft(t, Observation{0.0f}).argmax_leaf_index == 0);
  }
  SUBCASE("ties pick the lowest index") {
    auto t = tree_with_node_probs({0.5}, LeafKind::crl({4.0, 7.0}));
    t.mutable_leaf(0).logits = {0.0, 0.0};
    t.mutable_leaf(1).logits = {-9.0, 9.0};
    CHECK(forward_soft(t, Observation{0.0f}).argmax_leaf_index == 0);
    // Class tie inside leaf 0 resolves to the first reward value.
    CHECK(reward_argmax(t, Observation{0.0f}) == 4.0);
  }
}

TEST_CASE("majority path is always the argmax leaf") {
  std::mt19937_64 rng(21);
  for (int k = 0; k < 500; ++k) {
    const auto t = random_tree(simple_spec(3, 2), rng, 3.0);
    const auto x = random_obs(2, rng);
    const auto d = forward_soft(t, x);
    for (std::size_t l = 0; l < d.leaf_path_probs.size(); ++l)
      if (d.leaf_path_probs[l] > 0.5) CHECK(d.argmax_leaf_index == l);
  }
}

TEST_CASE("soft reward stays within leaf reward bounds") {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 300; ++k) {
    const auto il = random_tree(simple_spec(2, 3, LeafKind::il(-1.5, 2.5)), rng, 2.0);
    const auto x = random_obs(3, rng);
    const auto d = forward_soft(il, x);
    CHECK(d.soft_reward >= -1.5);
    CHECK(d.soft_reward <= 2.5);
    for (double r : d.leaf_soft_rewards) {
      CHECK(r >= -1.5);
      CHECK(r <= 2.5);
    }
    const auto crl = random_tree(simple_spec(2, 3, LeafKind::crl({3.0, -4.0, 0.0})), rng, 2.0);
    const double s = soft_reward(crl, x);
    CHECK(s >= -4.0);
    CHECK(s <= 3.0);
  }
}

TEST_CASE("raising the temperature moves routing away from one half") {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 100; ++k) {
    auto spec = simple_spec(1, 3);
    auto t = random_tree(spec, rng);
    const auto x = random_obs(3, rng);
    double prev = -1.0;
    for (double beta : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      spec.temperature = beta;
      const RewardDDT tb(spec, t.nodes(), t.leaves());
      const double dist = std::abs(route_probability(tb, 0, x) - 0.5);
      CHECK(dist >= prev);
      prev = dist;
    }
  }
}

TEST_CASE("soft reward saturates to the argmax leaf reward as beta grows") {
  std::mt19937_64 rng(13);
  auto spec = simple_spec(2, 3);
  const auto t = random_tree(spec, rng);
  const auto x = random_obs(3, rng);
  spec.temperature = 1e4;
  const RewardDDT hot(spec, t.nodes(), t.leaves());
  const auto d = forward_soft(hot, x);
  CHECK(d.soft_reward == doctest::Approx(d.leaf_soft_rewards[d.argmax_leaf_index]).epsilon(1e-6));
}

TEST_CASE("init_tree structure and determinism") {
  const auto spec = simple_spec(2, 2, LeafKind::crl({0.0, 1.0}));
  std::mt19937_64 a(42), b(42);
  const auto t1 = init_tree(spec, a);
  const auto t2 = init_tree(spec, b);
  CHECK(t1 == t2);
  CHECK(t1.nodes().size() == 3);
  CHECK(t1.leaves().size() == 4);
  for (const auto& n : t1.nodes()) {
    CHECK(n.weights.size() == 2);
    CHECK(n.bias == 0.0);
    const double k = 1.0 / std::sqrt(2.0);
    for (double w : n.weights) CHECK(std::abs(w) <= k);
  }
  for (const auto& l : t1.leaves()) {
    const auto q = leaf_distribution(l);
    CHECK(q[0] == 0.5);
    CHECK(q[1] == 0.5);
  }
  CHECK(t1.parameter_count() == 3 * 3 + 4 * 2);
}

TEST_CASE("invalid specs are rejected") {
  auto s = simple_spec(0, 2);
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = simple_spec(1, 2, LeafKind::il(1.0, 1.0));
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = simple_spec(1, 2, LeafKind::crl({1.0}));
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = simple_spec(1, 2, LeafKind::crl({1.0, 1.0}));
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = simple_spec(1, 2);
  s.node_kind = NodeKind::Sophisticated;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  std::mt19937_64 rng(0);
  CHECK_THROWS_AS(init_tree(simple_spec(0, 2), rng), ConfigError);
}

TEST_CASE("shape mismatches throw instead of broadcasting") {
  std::mt19937_64 rng(0);
  const auto t = init_tree(simple_spec(2, 3), rng);
  CHECK_THROWS_AS(soft_reward(t, Observation{1.0f, 2.0f}), ShapeError);
  auto nodes = t.nodes();
  nodes[1].weights.push_back(0.0);
  CHECK_THROWS_AS(RewardDDT(t.spec(), nodes, t.leaves()), ShapeError);
}

TEST_CASE("sophisticated node at Atari shape") {
  TreeSpec s;
  s.depth = 2;
  s.input = InputShape::image(4, 84, 84);
  s.node_kind = NodeKind::Sophisticated;
  s.conv.kernel = 7;
  s.conv.stride = 2;
  s.conv.out_channels = 4;
  s.validate();
  CHECK(s.conv_out_height() == 39);
  CHECK(s.conv_out_width() == 39);
  CHECK(s.feature_count() == 4 * 39 * 39);
  std::mt19937_64 rng(1);
  const auto t = init_tree(s, rng);
  const auto x = random_obs(4 * 84 * 84, rng);
  const auto d = forward_soft(t, x);
  double sum = 0.0;
  for (double p : d.leaf_path_probs) sum += p;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  for (double p : d.node_left_probs) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("sophisticated logit matches a direct convolution") {
  TreeSpec s;
  s.depth = 1;
  s.input = InputShape::image(2, 5, 6);
  s.node_kind = NodeKind::Sophisticated;
  s.conv.kernel = 3;
  s.conv.stride = 2;
  s.conv.out_channels = 2;
  s.conv.negative_slope = 0.1;
  s.temperature = 7.0;  // ignored by sophisticated nodes
  std::mt19937_64 rng(17);
  const auto t = random_tree(s, rng);
  const auto x = random_obs(2 * 5 * 6, rng);
  const auto& n = t.node(0);
  const std::size_t oh = (5 - 3) / 2 + 1, ow = (6 - 3) / 2 + 1;
  double logit = n.bias;
  std::size_t f = 0;
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t c = 0; c < ow; ++c, ++f) {
        double acc = n.conv_bias[o];
        for (std::size_t ch = 0; ch < 2; ++ch)
          for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
              acc += n.conv_kernel[((o * 2 + ch) * 3 + i) * 3 + j] * x[(ch * 5 + r * 2 + i) * 6 + c * 2 + j];
        logit += n.weights[f] * (acc > 0 ? acc : 0.1 * acc);
      }
  CHECK(node_logit(t.spec(), n, x) == doctest::Approx(logit).epsilon(1e-12));
  CHECK(route_probability(t, 0, x) == doctest::Approx(1.0 / (1.0 + std::exp(-logit))).epsilon(1e-12));
}

TEST_CASE("flatten and assign round-trip") {
  std::mt19937_64 rng(2);
  const auto t = random_tree(simple_spec(3, 5, LeafKind::crl({0, 1, 2})), rng);
  auto p = t.flatten();
  CHECK(p.size() == t.parameter_count());
  RewardDDT u = init_tree(t.spec(), rng);
  u.assign(p);
  CHECK(u == t);
  CHECK(p[t.node_offset(1)] == t.node(1).weights[0]);
  CHECK(p[t.leaf_offset(2) + 1] == t.leaf(2).logits[1]);
}
