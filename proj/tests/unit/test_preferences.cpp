#include <random>

#include "doctest.h"
#include "ddtrl/data_io.hpp"
#include "ddtrl/error.hpp"
#include "ddtrl/preferences.hpp"

using namespace ddtrl;

namespace {

Trajectory constant_cartpole(double x, double theta, std::size_t n) {
  Trajectory t;
  for (std::size_t k = 0; k < n; ++k) {
    t.states.push_back(make_observation({static_cast<float>(x), static_cast<float>(theta)}));
    t.true_rewards.push_back(cartpole_box_reward(x, theta));
  }
  return t;
}

Trajectory digit_traj(const std::vector<int>& digits) {
  Trajectory t;
  for (int d : digits) {
    t.states.push_back(make_observation(glyph_template(d)));
    t.true_rewards.push_back(d);
  }
  return t;
}

GridworldSource grid_source(const std::vector<int>& digits, std::size_t size) {
  std::mt19937_64 a(1), b(2);
  return GridworldSource{size, digits, std::make_shared<const DigitPool>(synthetic_glyphs(digits, 5, a)),
                         std::make_shared<const DigitPool>(synthetic_glyphs(digits, 5, b))};
}

bool same_dataset(const PreferenceDataset& a, const PreferenceDataset& b) {
  if (a.train.size() != b.train.size() || a.validation.size() != b.validation.size()) return false;
  auto same_traj = [](const Trajectory& x, const Trajectory& y) {
    if (x.size() != y.size() || x.true_rewards != y.true_rewards) return false;
    for (std::size_t k = 0; k < x.size(); ++k)
      if (*x.states[k] != *y.states[k]) return false;
    return true;
  };
  for (std::size_t k = 0; k < a.train.size(); ++k)
    if (!same_traj(a.train[k].worse, b.train[k].worse) || !same_traj(a.train[k].better, b.train[k].better))
      return false;
  for (std::size_t k = 0; k < a.validation.size(); ++k)
    if (!same_traj(a.validation[k].worse, b.validation[k].worse) ||
        !same_traj(a.validation[k].better, b.validation[k].better))
      return false;
  return a.provenance == b.provenance;
}

}  // namespace

TEST_CASE("cartpole labels follow the box rule") {
  const auto inside = constant_cartpole(0.0, 0.0, 200);
  const auto outside = constant_cartpole(3.0, 0.0, 200);
  const LabelerSpec box = CartPoleBoxLabeler{};
  CHECK(ground_truth_return(box, inside) == 200.0);
  CHECK(ground_truth_return(box, outside) == 0.0);
  const auto p = label_pair(box, inside, outside);
  REQUIRE(p.has_value());
  CHECK(*p->better.states[0] == *inside.states[0]);
  CHECK(*p->worse.states[0] == *outside.states[0]);
}

TEST_CASE("digit sum labels and ties") {
  const LabelerSpec ds = DigitSumLabeler{};
  const auto hi = digit_traj({3, 3, 3, 3, 3});
  const auto lo = digit_traj({0, 0, 0, 0, 0});
  CHECK(ground_truth_return(ds, hi) == 15.0);
  CHECK(ground_truth_return(ds, lo) == 0.0);
  const auto p = label_pair(ds, hi, lo);
  REQUIRE(p.has_value());
  CHECK(p->better.true_rewards[0] == 3.0);
  CHECK_FALSE(label_pair(ds, hi, hi).has_value());
  CHECK_THROWS_AS(label_pair(ds, hi, digit_traj({1})), ConfigError);
}

TEST_CASE("random rollouts") {
  const CartPoleEnv env;
  std::mt19937_64 a(3), b(3);
  const auto t1 = rollout_random(env, StartMode::InDistribution, 200, a);
  const auto t2 = rollout_random(env, StartMode::InDistribution, 200, b);
  CHECK(t1.size() == 200);
  for (std::size_t k = 0; k < 200; ++k) CHECK(*t1.states[k] == *t2.states[k]);

  const auto src = grid_source({0, 1, 2, 3}, 5);
  std::mt19937_64 rng(4);
  const auto m = gridworld_make(5, {0, 1, 2, 3}, src.train_pool, rng);
  const auto g = rollout_random(m, 0, 5, rng);
  CHECK(g.size() == 5);
  CHECK(g.states[0]->size() == 28 * 28);
  CHECK(g.states[0] == m.observation(0));
  for (std::size_t k = 0; k < 5; ++k) CHECK(g.true_rewards[k] >= 0.0);
}

TEST_CASE("cartpole dataset: counts, strictness and the position bias") {
  const DatasetRequest req{2000, 200, 20, 7, 1000};
  const auto ds = build_dataset(CartPoleSource{}, CartPoleBoxLabeler{}, req, 1);
  CHECK(ds.train.size() == 2000);
  CHECK(ds.validation.size() == 200);
  std::size_t all_inside = 0;
  for (const auto& p : ds.train) {
    CHECK(p.worse.size() == 20);
    CHECK(p.better.true_return() > p.worse.true_return());
    bool inside = true;
    for (const auto* t : {&p.worse, &p.better})
      for (const auto& s : t->states) inside = inside && std::abs((*s)[0]) <= kCartPoleXLimit;
    all_inside += inside;
  }
  CHECK(static_cast<double>(all_inside) / ds.train.size() >= 0.95);
  CHECK(ds.provenance.environment == "cartpole");
  CHECK(ds.provenance.observation_shape == InputShape::flat(2));
}

TEST_CASE("dataset generation is reproducible and thread-independent") {
  const auto src = grid_source({0, 1, 2, 3}, 5);
  const DatasetRequest req{60, 20, 5, 11, 1000};
  const auto a = build_dataset(src, DigitSumLabeler{}, req, 1);
  const auto b = build_dataset(src, DigitSumLabeler{}, req, 1);
  const auto c = build_dataset(src, DigitSumLabeler{}, req, 4);
  CHECK(same_dataset(a, b));
  CHECK(same_dataset(a, c));
  for (const auto& p : a.validation) {
    CHECK(p.better.true_return() > p.worse.true_return());
    CHECK(p.worse.size() == 5);
  }
  DatasetRequest other = req;
  other.seed = 12;
  CHECK_FALSE(same_dataset(a, build_dataset(src, DigitSumLabeler{}, other, 1)));
}

TEST_CASE("gridworld pairs share the start cell and use held-out validation images") {
  const auto src = grid_source({0, 1, 2, 3}, 5);
  const auto ds = build_dataset(src, DigitSumLabeler{}, DatasetRequest{30, 30, 5, 3, 1000}, 1);
  auto in_pool = [](const DigitPool& pool, const ObservationRef& o) {
    for (const auto& digit : pool.images)
      for (const auto& im : digit)
        if (im == o) return true;
    return false;
  };
  for (const auto& p : ds.train) {
    CHECK(p.worse.states[0] == p.better.states[0]);
    CHECK(in_pool(*src.train_pool, p.worse.states[0]));
  }
  for (const auto& p : ds.validation) CHECK(in_pool(*src.validation_pool, p.better.states[1]));
}

TEST_CASE("labelers that only tie hit the retry ceiling") {
  // A 1x1 grid with a single digit makes every trajectory identical.
  std::mt19937_64 a(1);
  const auto pool = std::make_shared<const DigitPool>(synthetic_glyphs({2}, 2, a));
  const GridworldSource src{1, {2}, pool, pool};
  CHECK_THROWS_AS(build_dataset(src, DigitSumLabeler{}, DatasetRequest{1, 1, 3, 0, 50}, 1), ConfigError);
  CHECK_THROWS_AS(build_dataset(CartPoleSource{}, CartPoleBoxLabeler{}, DatasetRequest{0, 1, 3, 0, 50}, 1),
                  ConfigError);
}
