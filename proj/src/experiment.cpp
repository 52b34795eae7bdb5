#include "ddtrl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "ddtrl/error.hpp"
#include "json.hpp"

namespace ddtrl {

using nlohmann::json;

// ------------------------------------------------------------- parsing

namespace {

class Schema {
 public:
  std::vector<std::string> errors;

  void keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : obj.items())
      if (!ok.count(k)) errors.push_back("unknown key '" + join(where, k) + "'");
  }

  // Returns the sub-object, or nullptr (recording an error) if it is not one.
  const json* object(const json& obj, const std::string& where, const char* key, bool required) {
    if (!obj.contains(key)) {
      if (required) errors.push_back("missing block '" + join(where, key) + "'");
      return nullptr;
    }
    const json& v = obj.at(key);
    if (!v.is_object()) {
      errors.push_back("'" + join(where, key) + "' must be an object");
      return nullptr;
    }
    return &v;
  }

  void get(const json& obj, const std::string& where, const char* key, std::size_t& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned())
      errors.push_back("'" + join(where, key) + "' must be a nonnegative integer");
    else
      out = v.get<std::size_t>();
  }
  void get(const json& obj, const std::string& where, const char* key, std::uint64_t& out, int) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned())
      errors.push_back("'" + join(where, key) + "' must be a nonnegative integer");
    else
      out = v.get<std::uint64_t>();
  }
  void get(const json& obj, const std::string& where, const char* key, double& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number())
      errors.push_back("'" + join(where, key) + "' must be a number");
    else
      out = v.get<double>();
  }
  void get(const json& obj, const std::string& where, const char* key, bool& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_boolean())
      errors.push_back("'" + join(where, key) + "' must be true or false");
    else
      out = v.get<bool>();
  }
  void get(const json& obj, const std::string& where, const char* key, std::string& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_string())
      errors.push_back("'" + join(where, key) + "' must be a string");
    else
      out = v.get<std::string>();
  }
  template <class T>
  void get_array(const json& obj, const std::string& where, const char* key, std::vector<T>& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    bool ok = v.is_array();
    if (ok)
      for (const auto& e : v) {
        if constexpr (std::is_floating_point_v<T>)
          ok = ok && e.is_number();
        else
          ok = ok && e.is_number_integer() && (std::is_signed_v<T> || e.is_number_unsigned());
      }
    if (!ok) {
      errors.push_back("'" + join(where, key) + "' must be an array of " +
                       (std::is_floating_point_v<T> ? "numbers" : "integers"));
      return;
    }
    out = v.get<std::vector<T>>();
  }

  void check(bool cond, const std::string& message) {
    if (!cond) errors.push_back(message);
  }

  static std::string join(const std::string& where, const std::string& key) {
    return where.empty() ? key : where + "." + key;
  }
};

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  Schema s;
  ExperimentConfig cfg;
  cfg.source_text = text;
  s.keys(doc, "", {"name", "environment", "tree", "training", "preferences", "rl", "interpret", "output_dir"});
  s.get(doc, "", "name", cfg.name);
  std::string output_dir;
  s.get(doc, "", "output_dir", output_dir);

  // environment
  auto& env = cfg.environment;
  if (const json* e = s.object(doc, "", "environment", true)) {
    s.get(*e, "environment", "type", env.type);
    if (env.type == "cartpole") {
      s.keys(*e, "environment", {"type"});
    } else if (env.type == "mnist_grid") {
      s.keys(*e, "environment", {"type", "size", "digits", "data"});
      s.get(*e, "environment", "size", env.size);
      s.get_array(*e, "environment", "digits", env.digits);
      s.check(env.size >= 1, "environment.size must be >= 1");
      s.check(!env.digits.empty(), "environment.digits must list at least one digit");
      for (int d : env.digits) s.check(d >= 0 && d <= 9, "environment.digits must lie in 0..9");
      s.check(std::any_of(env.digits.begin(), env.digits.end(), [](int d) { return d > 0; }),
              "environment.digits needs a positive digit");
      if (const json* d = s.object(*e, "environment", "data", false)) {
        const std::string w = "environment.data";
        s.keys(*d, w,
               {"source", "train_images", "train_labels", "validation_images", "validation_labels",
                "synthetic_variants", "validation_variants", "seed"});
        auto& dc = env.data;
        s.get(*d, w, "source", dc.source);
        std::string ti, tl, vi, vl;
        s.get(*d, w, "train_images", ti);
        s.get(*d, w, "train_labels", tl);
        s.get(*d, w, "validation_images", vi);
        s.get(*d, w, "validation_labels", vl);
        dc.train_images = resolve(base_dir, ti);
        dc.train_labels = resolve(base_dir, tl);
        dc.validation_images = resolve(base_dir, vi);
        dc.validation_labels = resolve(base_dir, vl);
        s.get(*d, w, "synthetic_variants", dc.synthetic_variants);
        s.get(*d, w, "validation_variants", dc.validation_variants);
        s.get(*d, w, "seed", dc.seed, 0);
        s.check(dc.source == "auto" || dc.source == "mnist" || dc.source == "synthetic",
                "environment.data.source must be auto, mnist or synthetic");
        s.check(dc.synthetic_variants >= 1 && dc.validation_variants >= 1,
                "environment.data variants must be >= 1");
      }
    } else {
      s.errors.push_back("environment.type must be cartpole or mnist_grid");
    }
  }
  const bool grid = env.type == "mnist_grid";

  // tree
  auto& spec = cfg.tree;
  spec.input = grid ? InputShape::image(1, kDigitSide, kDigitSide) : InputShape::flat(2);
  if (const json* t = s.object(doc, "", "tree", true)) {
    s.keys(*t, "tree",
           {"depth", "node_kind", "leaf_kind", "rewards", "r_min", "r_max", "temperature", "conv", "init_seed"});
    s.get(*t, "tree", "depth", spec.depth);
    std::string node_kind = "simple", leaf_kind = "crl";
    s.get(*t, "tree", "node_kind", node_kind);
    s.get(*t, "tree", "leaf_kind", leaf_kind);
    if (node_kind == "simple")
      spec.node_kind = NodeKind::Simple;
    else if (node_kind == "sophisticated")
      spec.node_kind = NodeKind::Sophisticated;
    else
      s.errors.push_back("tree.node_kind must be simple or sophisticated");
    if (leaf_kind == "crl") {
      std::vector<double> rewards{0.0, 1.0};
      s.get_array(*t, "tree", "rewards", rewards);
      s.check(!t->contains("r_min") && !t->contains("r_max"), "tree.r_min/r_max only apply to il leaves");
      spec.leaf_kind.type = LeafKind::Type::CRL;
      spec.leaf_kind.rewards = rewards;
    } else if (leaf_kind == "il") {
      double lo = 0.0, hi = 1.0;
      s.get(*t, "tree", "r_min", lo);
      s.get(*t, "tree", "r_max", hi);
      s.check(!t->contains("rewards"), "tree.rewards only applies to crl leaves");
      spec.leaf_kind.type = LeafKind::Type::IL;
      spec.leaf_kind.rewards = {lo, hi};
    } else {
      s.errors.push_back("tree.leaf_kind must be crl or il");
    }
    s.get(*t, "tree", "temperature", spec.temperature);
    s.get(*t, "tree", "init_seed", cfg.init_seed, 0);
    if (const json* c = s.object(*t, "tree", "conv", false)) {
      s.keys(*c, "tree.conv", {"kernel", "stride", "out_channels", "negative_slope"});
      s.get(*c, "tree.conv", "kernel", spec.conv.kernel);
      s.get(*c, "tree.conv", "stride", spec.conv.stride);
      s.get(*c, "tree.conv", "out_channels", spec.conv.out_channels);
      s.get(*c, "tree.conv", "negative_slope", spec.conv.negative_slope);
    }
    try {
      spec.validate();
    } catch (const ConfigError& e) {
      s.errors.push_back(std::string("tree: ") + e.what());
    }
  }

  // training
  auto& tr = cfg.training;
  tr.epochs = grid ? 50 : 100;
  if (const json* t = s.object(doc, "", "training", false)) {
    s.keys(*t, "training", {"lr", "weight_decay", "epochs", "batch_size", "penalty", "seed"});
    s.get(*t, "training", "lr", tr.lr);
    s.get(*t, "training", "weight_decay", tr.weight_decay);
    s.get(*t, "training", "epochs", tr.epochs);
    s.get(*t, "training", "batch_size", tr.batch_size);
    s.get(*t, "training", "seed", tr.seed, 0);
    if (t->contains("penalty") && t->at("penalty").is_null()) {
      tr.penalty.enabled = false;
    } else if (const json* p = s.object(*t, "training", "penalty", false)) {
      s.keys(*p, "training.penalty", {"enabled", "lambda0"});
      s.get(*p, "training.penalty", "enabled", tr.penalty.enabled);
      s.get(*p, "training.penalty", "lambda0", tr.penalty.lambda0);
    }
    try {
      tr.validate();
    } catch (const ConfigError& e) {
      s.errors.push_back(std::string("training: ") + e.what());
    }
  }

  // preferences
  auto& pr = cfg.preferences;
  pr.train_count = 2000;
  pr.validation_count = grid ? 1000 : 200;
  pr.trajectory_length = grid ? env.size : 20;
  if (const json* p = s.object(doc, "", "preferences", false)) {
    s.keys(*p, "preferences", {"train_count", "validation_count", "trajectory_length", "seed", "max_attempts"});
    s.get(*p, "preferences", "train_count", pr.train_count);
    s.get(*p, "preferences", "validation_count", pr.validation_count);
    s.get(*p, "preferences", "trajectory_length", pr.trajectory_length);
    s.get(*p, "preferences", "seed", pr.seed, 0);
    s.get(*p, "preferences", "max_attempts", pr.max_attempts_per_pair);
  }
  s.check(pr.train_count >= 1 && pr.validation_count >= 1, "preferences counts must be >= 1");
  s.check(pr.trajectory_length >= 1, "preferences.trajectory_length must be >= 1");
  s.check(pr.max_attempts_per_pair >= 1, "preferences.max_attempts must be >= 1");

  // rl
  auto& rl = cfg.rl;
  if (const json* r = s.object(doc, "", "rl", false)) {
    s.keys(*r, "rl",
           {"mode", "seeds", "episodes", "eval_seed", "iterations", "episodes_per_batch", "lr", "gamma", "hidden",
            "mdps", "horizon"});
    s.get(*r, "rl", "mode", rl.mode);
    s.get_array(*r, "rl", "seeds", rl.seeds);
    s.get(*r, "rl", "episodes", rl.episodes);
    s.get(*r, "rl", "eval_seed", rl.eval_seed, 0);
    s.get(*r, "rl", "iterations", rl.reinforce.iterations);
    s.get(*r, "rl", "episodes_per_batch", rl.reinforce.episodes_per_batch);
    s.get(*r, "rl", "lr", rl.reinforce.lr);
    s.get(*r, "rl", "gamma", rl.reinforce.gamma);
    s.get(*r, "rl", "hidden", rl.reinforce.hidden);
    s.get(*r, "rl", "mdps", rl.mdps);
    s.get(*r, "rl", "horizon", rl.horizon);
  }
  try {
    parse_rl_mode(rl.mode);
  } catch (const ConfigError& e) {
    s.errors.push_back(std::string("rl.mode: ") + e.what());
  }
  s.check(!rl.seeds.empty(), "rl.seeds must list at least one seed");
  s.check(rl.episodes >= 1, "rl.episodes must be >= 1");
  s.check(rl.mdps >= 1, "rl.mdps must be >= 1");
  try {
    rl.reinforce.validate();
  } catch (const ConfigError& e) {
    s.errors.push_back(std::string("rl: ") + e.what());
  }

  // interpret
  auto& ip = cfg.interpret;
  if (const json* i = s.object(doc, "", "interpret", false)) {
    s.keys(*i, "interpret", {"trace_k", "reach_threshold", "grid_resolution", "pool_size"});
    s.get(*i, "interpret", "trace_k", ip.trace_k);
    s.get(*i, "interpret", "reach_threshold", ip.reach_threshold);
    s.get(*i, "interpret", "grid_resolution", ip.grid_resolution);
    s.get(*i, "interpret", "pool_size", ip.pool_size);
  }
  s.check(ip.trace_k >= 1, "interpret.trace_k must be >= 1");
  s.check(ip.grid_resolution >= 2, "interpret.grid_resolution must be >= 2");
  s.check(ip.reach_threshold >= 0.0 && ip.reach_threshold < 1.0, "interpret.reach_threshold must be in [0, 1)");

  if (!s.errors.empty()) {
    std::ostringstream os;
    os << "config has " << s.errors.size() << " problem(s): ";
    for (std::size_t k = 0; k < s.errors.size(); ++k) os << (k ? "; " : "") << s.errors[k];
    throw ConfigError(os.str());
  }
  if (cfg.name.empty()) cfg.name = env.type;
  cfg.output_dir = output_dir.empty() ? std::filesystem::path("runs") / cfg.name : std::filesystem::path(output_dir);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_config(text, path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- data

namespace {

struct IdxPair {
  std::filesystem::path images, labels;
};

std::optional<IdxPair> find_idx(const std::filesystem::path& dir, const char* prefix) {
  const std::string p(prefix);
  for (const auto& [img, lbl] : {std::pair{p + "-images-idx3-ubyte", p + "-labels-idx1-ubyte"},
                                 std::pair{p + "-images.idx3-ubyte", p + "-labels.idx1-ubyte"}}) {
    std::error_code ec;
    if (std::filesystem::exists(dir / img, ec) && std::filesystem::exists(dir / lbl, ec))
      return IdxPair{dir / img, dir / lbl};
  }
  return std::nullopt;
}

}  // namespace

DigitPools load_digit_pools(const EnvironmentConfig& env) {
  DigitPools pools;
  if (env.type != "mnist_grid") return pools;
  const auto& dc = env.data;
  std::optional<IdxPair> train, val;
  if (!dc.train_images.empty() || !dc.train_labels.empty()) {
    train = IdxPair{dc.train_images, dc.train_labels};
    if (!dc.validation_images.empty()) val = IdxPair{dc.validation_images, dc.validation_labels};
  } else if (dc.source != "synthetic") {
    if (const char* dir = std::getenv("DDT_DATA_DIR"); dir && *dir) {
      train = find_idx(dir, "train");
      val = find_idx(dir, "t10k");
    }
  }
  if (dc.source == "mnist" && !train)
    throw IoError("MNIST requested but no IDX files configured or found under DDT_DATA_DIR");
  if (dc.source != "synthetic" && train) {
    pools.train = std::make_shared<const DigitPool>(load_mnist_idx(train->images, train->labels));
    if (val)
      pools.validation = std::make_shared<const DigitPool>(load_mnist_idx(val->images, val->labels));
    else
      pools.validation = pools.train;
    pools.description = "mnist_idx:" + train->images.string();
  } else {
    std::mt19937_64 train_rng(derive_seed(dc.seed, 0, 0));
    std::mt19937_64 val_rng(derive_seed(dc.seed, 1, 0));
    pools.train = std::make_shared<const DigitPool>(synthetic_glyphs(env.digits, dc.synthetic_variants, train_rng));
    pools.validation =
        std::make_shared<const DigitPool>(synthetic_glyphs(env.digits, dc.validation_variants, val_rng));
    pools.description = "synthetic";
  }
  for (int d : env.digits)
    if (pools.train->count(d) == 0 || pools.validation->count(d) == 0)
      throw ConfigError("digit pool has no images for digit " + std::to_string(d));
  return pools;
}

EnvSource make_env_source(const ExperimentConfig& cfg, const DigitPools& pools) {
  if (cfg.environment.type == "cartpole") return CartPoleSource{CartPoleEnv{}, StartMode::InDistribution};
  if (!pools.train) throw ConfigError("mnist_grid needs digit pools");
  return GridworldSource{cfg.environment.size, cfg.environment.digits, pools.train, pools.validation};
}

LabelerSpec make_labeler(const ExperimentConfig& cfg) {
  if (cfg.environment.type == "cartpole") return CartPoleBoxLabeler{};
  return DigitSumLabeler{};
}

PreferenceDataset generate_preferences(const ExperimentConfig& cfg, const DigitPools& pools, unsigned threads) {
  return build_dataset(make_env_source(cfg, pools), make_labeler(cfg), cfg.preferences, threads);
}

TrainResult train_reward_model(const ExperimentConfig& cfg, const PreferenceDataset& ds, unsigned threads) {
  if (!(ds.provenance.observation_shape == cfg.tree.input))
    throw ShapeError("dataset observations do not match the configured tree input");
  std::mt19937_64 rng(cfg.init_seed);
  TrainConfig tc = cfg.training;
  tc.threads = threads;
  return train(init_tree(cfg.tree, rng), ds.train, ds.validation, tc);
}

void check_model_matches(const ExperimentConfig& cfg, const RewardDDT& tree) {
  if (!(tree.spec().input == cfg.tree.input))
    throw ShapeError("model input shape does not match the " + cfg.environment.type + " environment");
}

RlMode parse_rl_mode(const std::string& s) {
  if (s == "soft") return RlMode::Soft;
  if (s == "argmax") return RlMode::Argmax;
  if (s == "ground-truth" || s == "ground_truth") return RlMode::GroundTruth;
  if (s == "random") return RlMode::Random;
  throw ConfigError("unknown mode '" + s + "' (expected soft, argmax, ground-truth or random)");
}

std::string to_string(RlMode mode) {
  switch (mode) {
    case RlMode::Soft: return "soft";
    case RlMode::Argmax: return "argmax";
    case RlMode::GroundTruth: return "ground_truth";
    case RlMode::Random: return "random";
  }
  return "unknown";
}

// ------------------------------------------------------------------ RL

RlReport run_rl(const ExperimentConfig& cfg, const RewardDDT* tree, RlMode mode, bool ood, const DigitPools& pools,
                unsigned threads, const std::string& run_id) {
  const bool learned = mode == RlMode::Soft || mode == RlMode::Argmax;
  if (learned && !tree) throw ConfigError("mode " + to_string(mode) + " needs a model");
  if (tree) check_model_matches(cfg, *tree);
  std::shared_ptr<const RewardDDT> shared = tree ? std::make_shared<const RewardDDT>(*tree) : nullptr;
  RlReport report;

  if (cfg.environment.type == "cartpole") {
    if (mode == RlMode::Random) throw ConfigError("random mode is only defined for mnist_grid");
    const CartPoleEnv env;
    const RewardSource source =
        learned ? RewardSource::ddt(shared, mode == RlMode::Soft ? RewardMode::Soft : RewardMode::Argmax)
                : RewardSource::ground_truth();
    for (std::uint64_t seed : cfg.rl.seeds) {
      ReinforceConfig rc = cfg.rl.reinforce;
      rc.seed = seed;
      rc.start = ood ? StartMode::OutOfDistribution : StartMode::InDistribution;
      rc.threads = threads;
      auto trained = train_cartpole_policy(env, source, rc);
      const auto stats = evaluate_cartpole_policy(env, trained.policy, rc.start, cfg.rl.episodes,
                                                  derive_seed(cfg.rl.eval_seed, seed, 0));
      report.rows.push_back({run_id, ood ? "cartpole_ood" : "cartpole", to_string(mode), seed, stats.mean, stats.std,
                             stats.iqm, std::numeric_limits<double>::quiet_NaN()});
      report.training_returns.push_back(std::move(trained.episode_returns));
    }
    return report;
  }

  if (ood) throw ConfigError("--ood only applies to cartpole");
  ObservationReward fn;
  if (mode == RlMode::Soft) fn = [shared](const Observation& o) { return soft_reward(*shared, o); };
  if (mode == RlMode::Argmax) fn = [shared](const Observation& o) { return reward_argmax(*shared, o); };
  for (std::uint64_t seed : cfg.rl.seeds) {
    GridworldBenchmarkConfig bc;
    bc.mdps = cfg.rl.mdps;
    bc.size = cfg.environment.size;
    bc.horizon = cfg.rl.horizon ? cfg.rl.horizon : cfg.preferences.trajectory_length;
    bc.digits = cfg.environment.digits;
    bc.seed = seed;
    bc.threads = threads;
    const auto score = gridworld_benchmark(bc, pools.validation, fn);
    const bool random = mode == RlMode::Random;
    const auto stats = summarize_returns(random ? score.per_mdp_random_return : score.per_mdp_return);
    report.rows.push_back({run_id, "mnist_grid", to_string(mode), seed, stats.mean, stats.std, stats.iqm,
                           random ? score.random_pct_of_optimal : score.pct_of_optimal});
  }
  return report;
}

std::vector<ObservationRef> interpret_pool(const ExperimentConfig& cfg, const PreferenceDataset* ds,
                                           const DigitPools& pools) {
  const std::size_t limit = cfg.interpret.pool_size;
  std::vector<ObservationRef> pool;
  std::set<const Observation*> seen;
  auto add = [&](const ObservationRef& o) {
    if (pool.size() < limit && seen.insert(o.get()).second) pool.push_back(o);
  };
  if (ds) {
    for (const auto* split : {&ds->validation, &ds->train})
      for (const auto& p : *split) {
        for (const auto& s : p.worse.states) add(s);
        for (const auto& s : p.better.states) add(s);
        if (pool.size() >= limit) return pool;
      }
    return pool;
  }
  if (cfg.environment.type == "cartpole") {
    const CartPoleEnv env;
    for (std::size_t k = 0; pool.size() < limit; ++k) {
      std::mt19937_64 rng(derive_seed(cfg.preferences.seed, 7, k));
      for (const auto& s : rollout_random(env, StartMode::InDistribution, cfg.preferences.trajectory_length, rng).states)
        add(s);
    }
    return pool;
  }
  for (std::size_t i = 0; pool.size() < limit; ++i) {
    bool any = false;
    for (int d : cfg.environment.digits)
      if (i < pools.validation->count(d)) {
        add(pools.validation->image(d, i));
        any = true;
      }
    if (!any) break;
  }
  return pool;
}

}  // namespace ddtrl
