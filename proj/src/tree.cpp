#include "ddtrl/tree.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "ddtrl/error.hpp"

namespace ddtrl {

LeafKind LeafKind::crl(std::vector<double> rewards) {
  return LeafKind{Type::CRL, std::move(rewards)};
}

LeafKind LeafKind::il(double r_min, double r_max) { return LeafKind{Type::IL, {r_min, r_max}}; }

double LeafKind::min_reward() const { return *std::min_element(rewards.begin(), rewards.end()); }
double LeafKind::max_reward() const { return *std::max_element(rewards.begin(), rewards.end()); }

void TreeSpec::validate() const {
  if (depth < 1) throw ConfigError("tree depth must be >= 1");
  if (depth > 20) throw ConfigError("tree depth must be <= 20");
  if (input.size() == 0) throw ConfigError("input shape must be non-empty");
  if (!std::isfinite(temperature) || temperature < 0.0)
    throw ConfigError("temperature must be finite and non-negative");
  for (double r : leaf_kind.rewards)
    if (!std::isfinite(r)) throw ConfigError("leaf reward values must be finite");
  if (leaf_kind.type == LeafKind::Type::CRL) {
    if (leaf_kind.rewards.size() < 2) throw ConfigError("CRL leaves need at least 2 reward values");
    std::set<double> distinct(leaf_kind.rewards.begin(), leaf_kind.rewards.end());
    if (distinct.size() != leaf_kind.rewards.size())
      throw ConfigError("CRL reward values must be distinct");
  } else {
    if (leaf_kind.rewards.size() != 2) throw ConfigError("IL leaves take exactly (r_min, r_max)");
    if (!(leaf_kind.rewards[0] < leaf_kind.rewards[1])) throw ConfigError("IL requires r_min < r_max");
  }
  if (node_kind == NodeKind::Sophisticated) {
    if (!input.is_image) throw ConfigError("Sophisticated nodes require an image input shape");
    if (conv.kernel == 0 || conv.stride == 0 || conv.out_channels == 0)
      throw ConfigError("conv kernel, stride and out_channels must be positive");
    if (conv.kernel > input.height || conv.kernel > input.width)
      throw ConfigError("conv kernel larger than the input image");
    if (!std::isfinite(conv.negative_slope)) throw ConfigError("LeakyReLU slope must be finite");
  }
}

std::size_t TreeSpec::conv_out_height() const { return (input.height - conv.kernel) / conv.stride + 1; }
std::size_t TreeSpec::conv_out_width() const { return (input.width - conv.kernel) / conv.stride + 1; }

std::size_t TreeSpec::feature_count() const {
  if (node_kind == NodeKind::Simple) return input.size();
  return conv.out_channels * conv_out_height() * conv_out_width();
}

std::size_t TreeSpec::conv_kernel_size() const {
  if (node_kind == NodeKind::Simple) return 0;
  return conv.out_channels * input.channels * conv.kernel * conv.kernel;
}

std::size_t TreeSpec::node_parameter_count() const {
  const std::size_t conv_bias = node_kind == NodeKind::Simple ? 0 : conv.out_channels;
  return conv_kernel_size() + conv_bias + feature_count() + 1;
}

RewardDDT::RewardDDT(TreeSpec spec, std::vector<InternalNodeParams> nodes, std::vector<LeafParams> leaves)
    : spec_(std::move(spec)), nodes_(std::move(nodes)), leaves_(std::move(leaves)) {
  spec_.validate();
  check();
}

void RewardDDT::check() const {
  if (nodes_.size() != spec_.internal_count()) {
    std::ostringstream os;
    os << "expected " << spec_.internal_count() << " internal nodes, got " << nodes_.size();
    throw ShapeError(os.str());
  }
  if (leaves_.size() != spec_.leaf_count()) {
    std::ostringstream os;
    os << "expected " << spec_.leaf_count() << " leaves, got " << leaves_.size();
    throw ShapeError(os.str());
  }
  const std::size_t conv_bias = spec_.node_kind == NodeKind::Simple ? 0 : spec_.conv.out_channels;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (n.weights.size() != spec_.feature_count() || n.conv_kernel.size() != spec_.conv_kernel_size() ||
        n.conv_bias.size() != conv_bias) {
      std::ostringstream os;
      os << "internal node " << i << ": parameter shape does not match the tree spec (weights "
         << n.weights.size() << ", expected " << spec_.feature_count() << ")";
      throw ShapeError(os.str());
    }
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(n.weights.begin(), n.weights.end(), finite) ||
        !std::all_of(n.conv_kernel.begin(), n.conv_kernel.end(), finite) ||
        !std::all_of(n.conv_bias.begin(), n.conv_bias.end(), finite) || !std::isfinite(n.bias))
      throw NumericError("internal node " + std::to_string(i) + " has non-finite parameters");
  }
  for (std::size_t l = 0; l < leaves_.size(); ++l) {
    if (leaves_[l].logits.size() != spec_.leaf_kind.classes())
      throw ShapeError("leaf " + std::to_string(l) + ": logit count does not match reward vector");
    for (double v : leaves_[l].logits)
      if (!std::isfinite(v)) throw NumericError("leaf " + std::to_string(l) + " has non-finite logits");
  }
}

std::size_t RewardDDT::parameter_count() const {
  return nodes_.size() * spec_.node_parameter_count() + leaves_.size() * spec_.leaf_kind.classes();
}

std::vector<double> RewardDDT::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& n : nodes_) {
    out.insert(out.end(), n.conv_kernel.begin(), n.conv_kernel.end());
    out.insert(out.end(), n.conv_bias.begin(), n.conv_bias.end());
    out.insert(out.end(), n.weights.begin(), n.weights.end());
    out.push_back(n.bias);
  }
  for (const auto& l : leaves_) out.insert(out.end(), l.logits.begin(), l.logits.end());
  return out;
}

void RewardDDT::assign(std::span<const double> params) {
  if (params.size() != parameter_count())
    throw ShapeError("parameter vector length " + std::to_string(params.size()) + " != " +
                     std::to_string(parameter_count()));
  auto it = params.begin();
  auto take = [&it](std::vector<double>& dst) {
    std::copy(it, it + static_cast<std::ptrdiff_t>(dst.size()), dst.begin());
    it += static_cast<std::ptrdiff_t>(dst.size());
  };
  for (auto& n : nodes_) {
    take(n.conv_kernel);
    take(n.conv_bias);
    take(n.weights);
    n.bias = *it++;
  }
  for (auto& l : leaves_) take(l.logits);
  check();
}

std::size_t node_depth(std::size_t heap_index) {
  std::size_t d = 0;
  while (heap_index > 0) {
    heap_index = (heap_index - 1) / 2;
    ++d;
  }
  return d;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

void check_input(const TreeSpec& spec, std::span<const float> x) {
  if (x.size() != spec.input.size())
    throw ShapeError("input has " + std::to_string(x.size()) + " values, tree expects " +
                     std::to_string(spec.input.size()));
}

double dot(std::span<const double> w, std::span<const float> x) {
  double acc = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) acc += w[k] * static_cast<double>(x[k]);
  return acc;
}

}  // namespace

void conv_features(const TreeSpec& spec, const InternalNodeParams& node, std::span<const float> x,
                   std::vector<double>& pre, std::vector<double>& features) {
  const auto& cv = spec.conv;
  const std::size_t cin = spec.input.channels, h = spec.input.height, w = spec.input.width;
  const std::size_t oh = spec.conv_out_height(), ow = spec.conv_out_width(), k = cv.kernel;
  pre.assign(cv.out_channels * oh * ow, 0.0);
  features.resize(pre.size());
  for (std::size_t o = 0; o < cv.out_channels; ++o) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = node.conv_bias[o];
        for (std::size_t c = 0; c < cin; ++c) {
          const double* kern = &node.conv_kernel[((o * cin + c) * k) * k];
          const float* img = &x[c * h * w];
          for (std::size_t ky = 0; ky < k; ++ky) {
            const float* row = img + (oy * cv.stride + ky) * w + ox * cv.stride;
            const double* krow = kern + ky * k;
            for (std::size_t kx = 0; kx < k; ++kx) acc += krow[kx] * static_cast<double>(row[kx]);
          }
        }
        pre[(o * oh + oy) * ow + ox] = acc;
      }
    }
  }
  for (std::size_t f = 0; f < pre.size(); ++f)
    features[f] = pre[f] >= 0.0 ? pre[f] : cv.negative_slope * pre[f];
}

double node_logit(const TreeSpec& spec, const InternalNodeParams& node, std::span<const float> x) {
  check_input(spec, x);
  if (spec.node_kind == NodeKind::Simple) return spec.temperature * (dot(node.weights, x) + node.bias);
  std::vector<double> pre, features;
  conv_features(spec, node, x, pre, features);
  double acc = node.bias;
  for (std::size_t f = 0; f < features.size(); ++f) acc += node.weights[f] * features[f];
  return acc;
}

double route_probability(const InternalNodeParams& node, std::span<const float> x, double beta) {
  if (x.size() != node.weights.size())
    throw ShapeError("input has " + std::to_string(x.size()) + " values, node expects " +
                     std::to_string(node.weights.size()));
  return sigmoid(beta * (dot(node.weights, x) + node.bias));
}

double route_probability(const RewardDDT& tree, std::size_t node, std::span<const float> x) {
  return sigmoid(node_logit(tree.spec(), tree.node(node), x));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    total += out[k];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> leaf_distribution(const LeafParams& leaf) { return softmax(leaf.logits); }

double leaf_soft_reward(const LeafKind& kind, const LeafParams& leaf) {
  const auto q = leaf_distribution(leaf);
  double s = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) s += q[k] * kind.rewards[k];
  return s;
}

TreeForward tree_forward_from_left(const RewardDDT& tree, std::vector<double> left) {
  const auto& spec = tree.spec();
  const std::size_t internal = spec.internal_count();
  TreeForward fw;
  fw.left = std::move(left);
  fw.reach.assign(internal + spec.leaf_count(), 0.0);
  fw.reach[0] = 1.0;
  for (std::size_t i = 0; i < internal; ++i) {
    fw.reach[2 * i + 1] = fw.reach[i] * fw.left[i];
    fw.reach[2 * i + 2] = fw.reach[i] * (1.0 - fw.left[i]);
  }
  fw.leaf_reward.resize(spec.leaf_count());
  fw.leaf_q.resize(spec.leaf_count());
  for (std::size_t l = 0; l < spec.leaf_count(); ++l) {
    fw.leaf_q[l] = leaf_distribution(tree.leaf(l));
    double s = 0.0;
    for (std::size_t k = 0; k < fw.leaf_q[l].size(); ++k) s += fw.leaf_q[l][k] * spec.leaf_kind.rewards[k];
    fw.leaf_reward[l] = s;
  }
  return fw;
}

TreeForward tree_forward(const RewardDDT& tree, std::span<const float> x) {
  check_input(tree.spec(), x);
  std::vector<double> left(tree.spec().internal_count());
  for (std::size_t i = 0; i < left.size(); ++i) left[i] = route_probability(tree, i, x);
  return tree_forward_from_left(tree, std::move(left));
}

std::vector<double> path_probabilities(const RewardDDT& tree, std::span<const float> x) {
  const auto fw = tree_forward(tree, x);
  const auto first = fw.reach.begin() + static_cast<std::ptrdiff_t>(tree.spec().internal_count());
  return {first, fw.reach.end()};
}

RoutingDiagnostics forward_soft(const RewardDDT& tree, std::span<const float> x) {
  auto fw = tree_forward(tree, x);
  const std::size_t internal = tree.spec().internal_count();
  RoutingDiagnostics d;
  d.node_left_probs = fw.left;
  d.node_reach_probs.assign(fw.reach.begin(), fw.reach.begin() + static_cast<std::ptrdiff_t>(internal));
  d.leaf_path_probs.assign(fw.reach.begin() + static_cast<std::ptrdiff_t>(internal), fw.reach.end());
  d.leaf_soft_rewards = std::move(fw.leaf_reward);
  for (std::size_t l = 0; l < d.leaf_path_probs.size(); ++l) {
    d.soft_reward += d.leaf_path_probs[l] * d.leaf_soft_rewards[l];
    // strict > keeps the lowest index on ties
    if (d.leaf_path_probs[l] > d.leaf_path_probs[d.argmax_leaf_index]) d.argmax_leaf_index = l;
  }
  return d;
}

double soft_reward(const RewardDDT& tree, std::span<const float> x) { return forward_soft(tree, x).soft_reward; }

double reward_argmax(const RewardDDT& tree, std::span<const float> x) {
  const auto d = forward_soft(tree, x);
  const auto& kind = tree.spec().leaf_kind;
  const std::size_t best = d.argmax_leaf_index;
  if (kind.type == LeafKind::Type::IL) return d.leaf_soft_rewards[best];
  const auto q = leaf_distribution(tree.leaf(best));
  std::size_t cls = 0;
  for (std::size_t k = 1; k < q.size(); ++k)
    if (q[k] > q[cls]) cls = k;
  return kind.rewards[cls];
}

RewardDDT init_tree(const TreeSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  auto fill_uniform = [&rng](std::vector<double>& v, std::size_t fan_in) {
    const double k = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-k, k);
    for (double& x : v) x = dist(rng);
  };
  std::vector<InternalNodeParams> nodes(spec.internal_count());
  for (auto& n : nodes) {
    n.conv_kernel.assign(spec.conv_kernel_size(), 0.0);
    n.conv_bias.assign(spec.node_kind == NodeKind::Simple ? 0 : spec.conv.out_channels, 0.0);
    n.weights.assign(spec.feature_count(), 0.0);
    if (spec.node_kind == NodeKind::Sophisticated)
      fill_uniform(n.conv_kernel, spec.input.channels * spec.conv.kernel * spec.conv.kernel);
    fill_uniform(n.weights, spec.feature_count());
  }
  std::vector<LeafParams> leaves(spec.leaf_count(), LeafParams{std::vector<double>(spec.leaf_kind.classes(), 0.0)});
  return RewardDDT(spec, std::move(nodes), std::move(leaves));
}

std::string to_string(NodeKind kind) { return kind == NodeKind::Simple ? "simple" : "sophisticated"; }
std::string to_string(LeafKind::Type type) { return type == LeafKind::Type::CRL ? "crl" : "il"; }

}  // namespace ddtrl
