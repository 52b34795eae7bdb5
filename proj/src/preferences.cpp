#include "ddtrl/preferences.hpp"

#include <sstream>

#include "ddtrl/error.hpp"
#include "ddtrl/parallel.hpp"

namespace ddtrl {

std::string labeler_name(const LabelerSpec& labeler) {
  return std::holds_alternative<CartPoleBoxLabeler>(labeler) ? "cartpole_box" : "digit_sum";
}

Trajectory rollout_random(const CartPoleEnv& env, const CartPoleState& start, std::size_t length,
                          std::mt19937_64& rng) {
  if (length == 0) throw ConfigError("rollout length must be >= 1");
  std::bernoulli_distribution coin(0.5);
  Trajectory t;
  t.states.reserve(length);
  t.true_rewards.reserve(length);
  CartPoleState s = start;
  for (std::size_t k = 0; k < length; ++k) {
    if (k > 0) s = cartpole_step(env, s, coin(rng) ? CartPoleAction::PushRight : CartPoleAction::PushLeft);
    auto obs = cartpole_observation(s);
    t.true_rewards.push_back(cartpole_box_reward(obs[0], obs[1]));
    t.states.push_back(make_observation(std::move(obs)));
  }
  return t;
}

Trajectory rollout_random(const CartPoleEnv& env, StartMode mode, std::size_t length, std::mt19937_64& rng) {
  const auto start = cartpole_reset(env, mode, rng);
  return rollout_random(env, start, length, rng);
}

Trajectory rollout_random(const GridworldMDP& mdp, std::size_t start_cell, std::size_t length, std::mt19937_64& rng) {
  if (length == 0) throw ConfigError("rollout length must be >= 1");
  if (start_cell >= mdp.cell_count()) throw ConfigError("start cell out of range");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(kGridActions) - 1);
  Trajectory t;
  std::size_t cell = start_cell;
  for (std::size_t k = 0; k < length; ++k) {
    if (k > 0) cell = gridworld_sample_next(mdp, cell, static_cast<GridAction>(pick(rng)), rng);
    t.states.push_back(mdp.observation(cell));
    t.true_rewards.push_back(static_cast<double>(mdp.digit(cell)));
  }
  return t;
}

double ground_truth_return(const LabelerSpec& labeler, const Trajectory& traj) {
  if (const auto* box = std::get_if<CartPoleBoxLabeler>(&labeler)) {
    double total = 0.0;
    for (const auto& x : traj.states) {
      if (x->size() < 2) throw ShapeError("CartPole labeler expects (x, theta) observations");
      const double cx = (*x)[0], th = (*x)[1];
      total += (std::abs(cx) <= box->x_limit && std::abs(th) <= box->theta_limit) ? 1.0 : 0.0;
    }
    return total;
  }
  if (traj.true_rewards.size() != traj.states.size())
    throw ConfigError("digit-sum labeler needs per-state digit labels");
  return traj.true_return();
}

std::optional<PreferencePair> label_pair(const LabelerSpec& labeler, Trajectory a, Trajectory b) {
  if (a.size() != b.size()) throw ConfigError("label_pair: trajectory lengths differ");
  const double ra = ground_truth_return(labeler, a);
  const double rb = ground_truth_return(labeler, b);
  if (ra == rb) return std::nullopt;
  if (ra > rb) return PreferencePair{std::move(b), std::move(a)};
  return PreferencePair{std::move(a), std::move(b)};
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

namespace {

PreferencePair make_pair(const EnvSource& source, const LabelerSpec& labeler, bool validation, std::size_t length,
                         std::size_t max_attempts, std::mt19937_64& rng) {
  for (std::size_t attempt = 0; attempt < max_attempts; ++attempt) {
    std::optional<PreferencePair> pair;
    if (const auto* cp = std::get_if<CartPoleSource>(&source)) {
      Trajectory a = rollout_random(cp->env, cp->mode, length, rng);
      Trajectory b = rollout_random(cp->env, cp->mode, length, rng);
      pair = label_pair(labeler, std::move(a), std::move(b));
    } else {
      const auto& gw = std::get<GridworldSource>(source);
      const auto& pool = validation ? gw.validation_pool : gw.train_pool;
      const GridworldMDP mdp = gridworld_make(gw.size, gw.digits, pool, rng);
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, mdp.cell_count() - 1)(rng);
      Trajectory a = rollout_random(mdp, start, length, rng);
      Trajectory b = rollout_random(mdp, start, length, rng);
      pair = label_pair(labeler, std::move(a), std::move(b));
    }
    if (pair) return std::move(*pair);
  }
  throw ConfigError("labeler produced only ties after " + std::to_string(max_attempts) + " attempts");
}

}  // namespace

PreferenceDataset build_dataset(const EnvSource& source, const LabelerSpec& labeler, const DatasetRequest& request,
                                unsigned threads) {
  if (request.train_count == 0 || request.validation_count == 0)
    throw ConfigError("train and validation counts must be >= 1");
  if (request.trajectory_length == 0) throw ConfigError("trajectory length must be >= 1");
  PreferenceDataset ds;
  auto& prov = ds.provenance;
  prov.seed = request.seed;
  prov.labeler = labeler_name(labeler);
  prov.trajectory_length = request.trajectory_length;
  prov.train_count = request.train_count;
  prov.validation_count = request.validation_count;
  if (const auto* cp = std::get_if<CartPoleSource>(&source)) {
    prov.environment = "cartpole";
    prov.env_detail = "start=" + to_string(cp->mode);
    prov.observation_shape = InputShape::flat(2);
  } else {
    const auto& gw = std::get<GridworldSource>(source);
    if (!gw.train_pool || !gw.validation_pool) throw ConfigError("gridworld source needs train and validation pools");
    std::ostringstream os;
    os << gw.size << "x" << gw.size << " digits=";
    for (std::size_t k = 0; k < gw.digits.size(); ++k) os << (k ? "," : "") << gw.digits[k];
    os << " pool=" << to_string(gw.train_pool->source);
    prov.environment = "mnist_grid";
    prov.env_detail = os.str();
    prov.observation_shape = InputShape::image(1, kDigitSide, kDigitSide);
  }

  auto fill = [&](std::vector<PreferencePair>& out, std::size_t count, std::uint64_t stream) {
    out.resize(count);
    const std::size_t parts = std::max<std::size_t>(1, std::min<std::size_t>(threads, count));
    auto work = [&](std::size_t part) {
      for (std::size_t k = count * part / parts; k < count * (part + 1) / parts; ++k) {
        std::mt19937_64 rng(derive_seed(request.seed, stream, k));
        out[k] = make_pair(source, labeler, stream == 1, request.trajectory_length, request.max_attempts_per_pair, rng);
      }
    };
    run_parallel(parts, work);
  };
  fill(ds.train, request.train_count, 0);
  fill(ds.validation, request.validation_count, 1);
  return ds;
}

}  // namespace ddtrl
