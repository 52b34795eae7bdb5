// Command-line runner: each subcommand reads and writes files so stages can be
// run and checked independently.

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ddtrl/data_io.hpp"
#include "ddtrl/error.hpp"
#include "ddtrl/experiment.hpp"
#include "ddtrl/interpret.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ddtrl;

namespace {

struct Options {
  unsigned threads = 1;
  std::string config, dataset, model, mode, pool, csv;
  bool ood = false;
};

// Human-facing summaries; files keep full round-trip precision.
std::string brief(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::string file_hash(const fs::path& p) { return fnv1a_hex(read_file_bytes(p)); }

// provenance.json holds one entry per stage; rerunning a stage replaces it.
void record_provenance(const fs::path& dir, const std::string& stage, json entry) {
  const fs::path path = dir / "provenance.json";
  json doc = json::object();
  if (fs::exists(path)) {
    try {
      doc = json::parse(read_text_file(path));
    } catch (const json::exception&) {
      doc = json::object();
    }
  }
  doc[stage] = std::move(entry);
  write_text_file(path, doc.dump(2) + "\n");
}

json artifacts(const std::vector<fs::path>& files) {
  json out = json::object();
  for (const auto& f : files) out[f.filename().string()] = file_hash(f);
  return out;
}

json config_entry(const ExperimentConfig& cfg, const std::string& path, unsigned threads) {
  return {{"config", path},
          {"config_hash", cfg.hash()},
          {"threads", threads},
          {"seeds",
           {{"preferences", cfg.preferences.seed},
            {"init", cfg.init_seed},
            {"training", cfg.training.seed},
            {"rl", cfg.rl.seeds},
            {"rl_eval", cfg.rl.eval_seed},
            {"digit_data", cfg.environment.data.seed}}}};
}

fs::path dataset_path(const ExperimentConfig& cfg) { return cfg.output_dir / "preferences.ddtp"; }

void require_finite(const RewardDDT& tree) {
  for (double v : tree.flatten())
    if (!std::isfinite(v)) throw NumericError("model contains non-finite parameters");
}

int cmd_gen_prefs(const Options& o) {
  const auto cfg = load_config(o.config);
  const auto pools = load_digit_pools(cfg.environment);
  const auto ds = generate_preferences(cfg, pools, o.threads);
  fs::create_directories(cfg.output_dir);
  const fs::path out = dataset_path(cfg);
  save_dataset(ds, out);
  auto entry = config_entry(cfg, o.config, o.threads);
  entry["digit_pool"] = pools.description;
  entry["artifacts"] = artifacts({out});
  record_provenance(cfg.output_dir, "gen-prefs", entry);
  std::cout << "dataset=" << out.string() << " train=" << ds.train.size() << " validation=" << ds.validation.size()
            << "\n";
  return 0;
}

int cmd_train(const Options& o) {
  const auto cfg = load_config(o.config);
  fs::create_directories(cfg.output_dir);
  fs::path ds_path = o.dataset.empty() ? dataset_path(cfg) : fs::path(o.dataset);
  PreferenceDataset ds;
  auto entry = config_entry(cfg, o.config, o.threads);
  if (o.dataset.empty() && !fs::exists(ds_path)) {
    const auto pools = load_digit_pools(cfg.environment);
    ds = generate_preferences(cfg, pools, o.threads);
    save_dataset(ds, ds_path);
    entry["digit_pool"] = pools.description;
  } else {
    ds = load_dataset(ds_path);
  }
  const auto result = train_reward_model(cfg, ds, o.threads);
  require_finite(result.tree);
  const fs::path model = cfg.output_dir / "model.json";
  const fs::path metrics = cfg.output_dir / "metrics.csv";
  const fs::path alphas = cfg.output_dir / "final_alphas.json";
  save_checkpoint(result.tree, result.adam, model);
  write_metrics_csv(metrics, result.metrics);
  write_text_file(alphas, json(result.final_epoch_alphas).dump() + "\n");
  entry["dataset"] = {{"file", ds_path.string()}, {"hash", file_hash(ds_path)}};
  entry["artifacts"] = artifacts({model, metrics, alphas});
  record_provenance(cfg.output_dir, "train", entry);
  const auto& last = result.metrics.back();
  std::cout << "model=" << model.string() << " epochs=" << last.epoch
            << " val_acc_soft=" << brief(last.val_acc_soft)
            << " val_acc_argmax=" << brief(last.val_acc_argmax) << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const auto tree = load_model(o.model);
  require_finite(tree);
  const auto ds = load_dataset(o.dataset);
  if (!(ds.provenance.observation_shape == tree.spec().input))
    throw ShapeError("dataset observations do not match the model input");
  const RewardMode mode = o.mode == "argmax" ? RewardMode::Argmax : RewardMode::Soft;
  const double acc = preference_accuracy(tree, ds.validation, mode);
  const fs::path csv = o.csv.empty() ? fs::path(o.model).parent_path() / ("accuracy_" + o.mode + ".csv")
                                     : fs::path(o.csv);
  if (o.csv.empty()) fs::remove(csv);
  append_csv_row(csv, {"model", "model_hash", "dataset", "dataset_hash", "split", "mode", "pairs", "accuracy"},
                 {o.model, file_hash(o.model), o.dataset, file_hash(o.dataset), "validation", o.mode,
                  std::to_string(ds.validation.size()), format_double(acc)});
  std::cout << "accuracy=" << brief(acc) << " mode=" << o.mode << " split=validation pairs="
            << ds.validation.size() << "\n";
  return 0;
}

int cmd_rl(const Options& o) {
  const auto cfg = load_config(o.config);
  const RlMode mode = parse_rl_mode(o.mode.empty() ? cfg.rl.mode : o.mode);
  std::optional<RewardDDT> tree;
  if (!o.model.empty()) {
    tree = load_model(o.model);
    require_finite(*tree);
  }
  const auto pools = load_digit_pools(cfg.environment);
  const std::string tag = to_string(mode) + (o.ood ? "_ood" : "");
  const auto report =
      run_rl(cfg, tree ? &*tree : nullptr, mode, o.ood, pools, o.threads, cfg.name + "/" + tag);
  fs::create_directories(cfg.output_dir);
  const fs::path csv = cfg.output_dir / ("rl_" + tag + ".csv");
  fs::remove(csv);
  for (const auto& row : report.rows) append_eval_csv(csv, row);
  auto entry = config_entry(cfg, o.config, o.threads);
  if (tree) entry["model"] = {{"file", o.model}, {"hash", file_hash(o.model)}};
  if (pools.train) entry["digit_pool"] = pools.description;
  entry["artifacts"] = artifacts({csv});
  record_provenance(cfg.output_dir, "rl_" + tag, entry);
  double mean = 0.0, pct = 0.0;
  for (const auto& r : report.rows) {
    mean += r.mean / report.rows.size();
    pct += r.pct_of_optimal / report.rows.size();
  }
  std::cout << "csv=" << csv.string() << " mode=" << tag << " seeds=" << report.rows.size()
            << " mean_return=" << brief(mean);
  if (cfg.environment.type == "mnist_grid") std::cout << " pct_of_optimal=" << brief(pct);
  std::cout << "\n";
  return 0;
}

int cmd_interpret(const Options& o) {
  const auto cfg = load_config(o.config);
  const auto tree = load_model(o.model);
  require_finite(tree);
  check_model_matches(cfg, tree);
  const auto pools = load_digit_pools(cfg.environment);
  std::optional<PreferenceDataset> ds;
  if (!o.pool.empty()) ds = load_dataset(o.pool);
  const auto pool = interpret_pool(cfg, ds ? &*ds : nullptr, pools);
  ReportOptions ro;
  ro.trace_k = cfg.interpret.trace_k;
  ro.reach_threshold = cfg.interpret.reach_threshold;
  ro.grid.resolution = cfg.interpret.grid_resolution;
  const fs::path out = cfg.output_dir / "report";
  fs::create_directories(out);
  const auto bundle = render_tree_report(tree, pool, out, ro);
  std::vector<fs::path> files;
  for (const auto& f : bundle.files) files.push_back(out / f);
  auto entry = config_entry(cfg, o.config, o.threads);
  entry["model"] = {{"file", o.model}, {"hash", file_hash(o.model)}};
  if (ds) entry["pool"] = {{"file", o.pool}, {"hash", file_hash(o.pool)}};
  entry["artifacts"] = artifacts(files);
  record_provenance(cfg.output_dir, "interpret", entry);
  const auto reach = reachability_report(tree, pool, ro.reach_threshold);
  std::cout << "report=" << (out / "index.json").string() << " files=" << bundle.files.size()
            << " unreachable_leaves=" << reach.unreachable_leaves.size();
  if (tree.spec().input.size() == 2) {
    const auto sens = sensitivity_report(tree, ro.grid);
    std::cout << " misaligned=" << (sens.misaligned ? "true" : "false");
  }
  std::cout << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int fail(const char* kind, int code, const std::string& message) {
  std::cerr << "error kind=" << kind << " code=" << code << " message=" << json(one_line(message)).dump() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward learning from pairwise preferences with differentiable decision trees"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--threads", o.threads, "Worker thread cap (1 is bit-reproducible)")
      ->check(CLI::Range(1u, 1024u))
      ->capture_default_str();

  auto* gen = app.add_subcommand("gen-prefs", "Generate a preference dataset into the config's output directory");
  gen->add_option("--config", o.config, "Experiment config (JSON)")->required();

  auto* tr = app.add_subcommand("train", "Train a reward tree; writes model.json and metrics.csv");
  tr->add_option("--config", o.config, "Experiment config (JSON)")->required();
  tr->add_option("--dataset", o.dataset, "Preference dataset (defaults to the config's output directory)");

  auto* ev = app.add_subcommand("eval", "Validation preference accuracy of a model");
  ev->add_option("--model", o.model, "Model JSON")->required();
  ev->add_option("--dataset", o.dataset, "Preference dataset")->required();
  ev->add_option("--mode", o.mode, "Reward mode")->required()->check(CLI::IsMember({"soft", "argmax"}));
  ev->add_option("--csv", o.csv, "Append the result to this CSV instead of accuracy_<mode>.csv next to the model");

  auto* rl = app.add_subcommand("rl", "Optimize a policy against a reward and evaluate it on the true reward");
  rl->add_option("--model", o.model, "Model JSON (required for soft and argmax)");
  rl->add_option("--config", o.config, "Experiment config (JSON)")->required();
  rl->add_option("--mode", o.mode, "Reward used for policy optimization (defaults to the config)")
      ->check(CLI::IsMember({"soft", "argmax", "ground-truth", "random"}));
  rl->add_flag("--ood", o.ood, "CartPole: out-of-distribution starting positions");

  auto* in = app.add_subcommand("interpret", "Write heatmaps, synthetic traces and index.json");
  in->add_option("--model", o.model, "Model JSON")->required();
  in->add_option("--config", o.config, "Experiment config (JSON)")->required();
  in->add_option("--pool", o.pool, "Preference dataset whose states form the trace pool");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", 2, e.what());
  }

  try {
    if (*gen) return cmd_gen_prefs(o);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*rl) return cmd_rl(o);
    if (*in) return cmd_interpret(o);
  } catch (const ConfigError& e) {
    return fail("config", 2, e.what());
  } catch (const IoError& e) {
    return fail("io", 3, e.what());
  } catch (const FormatError& e) {
    return fail("format", 3, e.what());
  } catch (const NumericError& e) {
    return fail("numeric", 4, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("io", 3, e.what());
  } catch (const std::exception& e) {
    return fail("internal", 1, e.what());
  }
  return 0;
}
