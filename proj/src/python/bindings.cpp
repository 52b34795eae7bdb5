#include <pybind11/functional.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <random>

#include "ddtrl/data_io.hpp"
#include "ddtrl/error.hpp"
#include "ddtrl/experiment.hpp"
#include "ddtrl/interpret.hpp"
#include "ddtrl/policy.hpp"
#include "ddtrl/training.hpp"
#include "ddtrl/tree.hpp"

namespace py = pybind11;
using namespace ddtrl;

namespace {

std::vector<std::vector<double>> heatmap_rows(const Heatmap& h) {
  std::vector<std::vector<double>> out(h.rows, std::vector<double>(h.cols));
  for (std::size_t r = 0; r < h.rows; ++r)
    for (std::size_t c = 0; c < h.cols; ++c) out[r][c] = h.at(r, c);
  return out;
}

const std::vector<PreferencePair>& split_of(const PreferenceDataset& ds, const std::string& split) {
  if (split == "train") return ds.train;
  if (split == "validation") return ds.validation;
  throw ConfigError("split must be 'train' or 'validation', got '" + split + "'");
}

RewardMode mode_of(const std::string& m) {
  if (m == "soft") return RewardMode::Soft;
  if (m == "argmax") return RewardMode::Argmax;
  throw ConfigError("mode must be 'soft' or 'argmax', got '" + m + "'");
}

py::dict metrics_dict(const EpochMetrics& m) {
  py::dict d;
  d["epoch"] = m.epoch;
  d["train_loss"] = m.train_loss;
  d["val_loss"] = m.val_loss;
  d["val_acc_soft"] = m.val_acc_soft;
  d["val_acc_argmax"] = m.val_acc_argmax;
  d["penalty_value"] = m.penalty_value;
  d["wall_ms"] = m.wall_ms;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reward learning from pairwise preferences with differentiable decision trees";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  auto config = py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", config.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::enum_<NodeKind>(m, "NodeKind").value("Simple", NodeKind::Simple).value("Sophisticated", NodeKind::Sophisticated);

  py::class_<InputShape>(m, "InputShape")
      .def_static("flat", &InputShape::flat)
      .def_static("image", &InputShape::image)
      .def_readonly("channels", &InputShape::channels)
      .def_readonly("height", &InputShape::height)
      .def_readonly("width", &InputShape::width)
      .def_readonly("is_image", &InputShape::is_image)
      .def("size", &InputShape::size)
      .def(py::self == py::self);

  py::class_<LeafKind>(m, "LeafKind")
      .def_static("crl", &LeafKind::crl, py::arg("rewards"))
      .def_static("il", &LeafKind::il, py::arg("r_min"), py::arg("r_max"))
      .def_property_readonly("type", [](const LeafKind& k) { return to_string(k.type); })
      .def_readonly("rewards", &LeafKind::rewards);

  py::class_<ConvConfig>(m, "ConvConfig")
      .def(py::init([](std::size_t kernel, std::size_t stride, std::size_t out_channels, double slope) {
             return ConvConfig{kernel, stride, out_channels, slope};
           }),
           py::arg("kernel") = 3, py::arg("stride") = 1, py::arg("out_channels") = 1, py::arg("negative_slope") = 0.01)
      .def_readwrite("kernel", &ConvConfig::kernel)
      .def_readwrite("stride", &ConvConfig::stride)
      .def_readwrite("out_channels", &ConvConfig::out_channels)
      .def_readwrite("negative_slope", &ConvConfig::negative_slope);

  py::class_<TreeSpec>(m, "TreeSpec")
      .def(py::init([](std::size_t depth, InputShape input, LeafKind leaf, NodeKind kind, double temperature,
                       ConvConfig conv) {
             TreeSpec s;
             s.depth = depth;
             s.input = input;
             s.leaf_kind = std::move(leaf);
             s.node_kind = kind;
             s.temperature = temperature;
             s.conv = conv;
             s.validate();
             return s;
           }),
           py::arg("depth"), py::arg("input"), py::arg("leaf_kind") = LeafKind::il(0.0, 1.0),
           py::arg("node_kind") = NodeKind::Simple, py::arg("temperature") = 1.0, py::arg("conv") = ConvConfig{})
      .def_readonly("depth", &TreeSpec::depth)
      .def_readonly("input", &TreeSpec::input)
      .def_readonly("leaf_kind", &TreeSpec::leaf_kind)
      .def_readonly("node_kind", &TreeSpec::node_kind)
      .def_readonly("temperature", &TreeSpec::temperature)
      .def("internal_count", &TreeSpec::internal_count)
      .def("leaf_count", &TreeSpec::leaf_count);

  py::class_<RewardDDT>(m, "RewardDDT")
      .def_property_readonly("spec", &RewardDDT::spec)
      .def("parameter_count", &RewardDDT::parameter_count)
      .def("flatten", &RewardDDT::flatten)
      .def("assign", [](RewardDDT& t, const std::vector<double>& p) { t.assign(p); })
      .def("to_json", [](const RewardDDT& t) { return model_to_json(t); })
      .def_static("from_json", &model_from_json)
      .def(py::self == py::self);

  m.def(
      "init_tree",
      [](const TreeSpec& spec, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return init_tree(spec, rng);
      },
      py::arg("spec"), py::arg("seed") = 0);
  m.def(
      "soft_reward", [](const RewardDDT& t, const Observation& x) { return soft_reward(t, x); }, py::arg("tree"),
      py::arg("x"));
  m.def(
      "reward_argmax", [](const RewardDDT& t, const Observation& x) { return reward_argmax(t, x); },
      py::arg("tree"), py::arg("x"));
  m.def(
      "path_probabilities", [](const RewardDDT& t, const Observation& x) { return path_probabilities(t, x); },
      py::arg("tree"), py::arg("x"));
  m.def(
      "route_probability",
      [](const RewardDDT& t, std::size_t node, const Observation& x) { return route_probability(t, node, x); },
      py::arg("tree"), py::arg("node"), py::arg("x"));

  m.def("bradley_terry_pair_loss", &bradley_terry_pair_loss, py::arg("worse_return"), py::arg("better_return"));
  m.def(
      "penalty_from_alphas", [](const std::vector<double>& a, double lambda0) { return penalty_from_alphas(a, lambda0); },
      py::arg("alphas"), py::arg("lambda0") = 1.0);

  m.def("load_model", &load_model, py::arg("path"));
  m.def("save_model", &save_model, py::arg("tree"), py::arg("path"));

  py::class_<PreferenceDataset>(m, "PreferenceDataset")
      .def_property_readonly("train_count", [](const PreferenceDataset& d) { return d.train.size(); })
      .def_property_readonly("validation_count", [](const PreferenceDataset& d) { return d.validation.size(); })
      .def_property_readonly("environment", [](const PreferenceDataset& d) { return d.provenance.environment; })
      .def_property_readonly("trajectory_length",
                             [](const PreferenceDataset& d) { return d.provenance.trajectory_length; })
      .def(
          "pair",
          [](const PreferenceDataset& d, const std::string& split, std::size_t k) {
            const auto& pairs = split_of(d, split);
            if (k >= pairs.size()) throw py::index_error("pair index out of range");
            auto states = [](const Trajectory& t) {
              std::vector<Observation> out;
              for (const auto& s : t.states) out.push_back(*s);
              return out;
            };
            py::dict out;
            out["worse"] = states(pairs[k].worse);
            out["better"] = states(pairs[k].better);
            out["worse_return"] = pairs[k].worse.true_return();
            out["better_return"] = pairs[k].better.true_return();
            return out;
          },
          py::arg("split"), py::arg("index"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));

  m.def(
      "preference_accuracy",
      [](const RewardDDT& t, const PreferenceDataset& d, const std::string& mode, const std::string& split) {
        return preference_accuracy(t, split_of(d, split), mode_of(mode));
      },
      py::arg("tree"), py::arg("dataset"), py::arg("mode") = "soft", py::arg("split") = "validation");
  m.def(
      "loss_and_grad",
      [](const RewardDDT& t, const PreferenceDataset& d, const std::string& split, bool penalty, double lambda0,
         unsigned threads) {
        const auto r = loss_and_grad(t, split_of(d, split), PenaltyConfig{lambda0, penalty}, threads);
        py::dict out;
        out["loss"] = r.loss;
        out["bt_loss"] = r.bt_loss;
        out["penalty"] = r.penalty;
        out["alphas"] = r.alphas;
        out["grad"] = r.grad.values;
        return out;
      },
      py::arg("tree"), py::arg("dataset"), py::arg("split") = "train", py::arg("penalty") = false,
      py::arg("lambda0") = 1.0, py::arg("threads") = 1);

  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def_readonly("name", &ExperimentConfig::name)
      .def_readonly("tree", &ExperimentConfig::tree)
      .def_property_readonly("environment", [](const ExperimentConfig& c) { return c.environment.type; })
      .def_property_readonly("output_dir", [](const ExperimentConfig& c) { return c.output_dir; })
      .def("hash", &ExperimentConfig::hash);
  m.def("load_config", &load_config, py::arg("path"));
  m.def(
      "parse_config", [](const std::string& text) { return parse_config(text); }, py::arg("text"));

  py::class_<DigitPools>(m, "DigitPools").def_readonly("description", &DigitPools::description);
  m.def(
      "load_digit_pools", [](const ExperimentConfig& c) { return load_digit_pools(c.environment); },
      py::arg("config"));
  m.def("generate_preferences", &generate_preferences, py::arg("config"), py::arg("pools"), py::arg("threads") = 1);

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("tree", &TrainResult::tree)
      .def_property_readonly("metrics",
                             [](const TrainResult& r) {
                               py::list out;
                               for (const auto& e : r.metrics) out.append(metrics_dict(e));
                               return out;
                             })
      .def_readonly("final_epoch_alphas", &TrainResult::final_epoch_alphas);
  m.def("train_reward_model", &train_reward_model, py::arg("config"), py::arg("dataset"), py::arg("threads") = 1);

  m.def(
      "run_rl",
      [](const ExperimentConfig& c, const RewardDDT* tree, const std::string& mode, bool ood, const DigitPools& pools,
         unsigned threads) {
        const auto r = run_rl(c, tree, parse_rl_mode(mode), ood, pools, threads, c.name);
        py::list rows;
        for (const auto& row : r.rows) {
          py::dict d;
          d["env"] = row.env;
          d["reward_mode"] = row.reward_mode;
          d["seed"] = row.seed;
          d["mean"] = row.mean;
          d["std"] = row.std;
          d["iqm"] = row.iqm;
          d["pct_of_optimal"] = row.pct_of_optimal;
          rows.append(d);
        }
        return rows;
      },
      py::arg("config"), py::arg("tree"), py::arg("mode") = "soft", py::arg("ood") = false, py::arg("pools"),
      py::arg("threads") = 1);

  m.def(
      "pixel_toggle_heatmap", [](const RewardDDT& t, std::size_t node) { return heatmap_rows(pixel_toggle_heatmap(t, node)); },
      py::arg("tree"), py::arg("node"));
  m.def(
      "sensitivity_report",
      [](const RewardDDT& t) {
        const auto r = sensitivity_report(t);
        py::dict out;
        out["scores"] = r.scores;
        out["theta_x_ratio"] = r.theta_x_ratio;
        out["misaligned"] = r.misaligned;
        return out;
      },
      py::arg("tree"));

  m.def("interquartile_mean", [](const std::vector<double>& v) { return interquartile_mean(v); }, py::arg("values"));
  m.def(
      "cartpole_step",
      [](std::array<double, 4> s, int action) {
        const auto n = cartpole_step(CartPoleEnv{}, CartPoleState{s[0], s[1], s[2], s[3]},
                                     action == 0 ? CartPoleAction::PushLeft : CartPoleAction::PushRight);
        return std::array<double, 4>{n.x, n.x_dot, n.theta, n.theta_dot};
      },
      py::arg("state"), py::arg("action"));
}
