#pragma once

#include <cstddef>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace ddtrl {

// A single state as the reward model sees it. Images are stored channel-major
// (C, H, W) with intensities already normalized to [0, 1].
using Observation = std::vector<float>;
using ObservationRef = std::shared_ptr<const Observation>;

inline ObservationRef make_observation(Observation obs) {
  return std::make_shared<const Observation>(std::move(obs));
}

enum class NodeKind { Simple, Sophisticated };

struct InputShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  bool is_image = false;

  static InputShape flat(std::size_t n) { return {1, 1, n, false}; }
  static InputShape image(std::size_t c, std::size_t h, std::size_t w) { return {c, h, w, true}; }

  std::size_t size() const { return channels * height * width; }
  bool operator==(const InputShape&) const = default;
};

struct LeafKind {
  enum class Type { CRL, IL };

  Type type = Type::IL;
  // CRL: the c distinct reward values. IL: exactly {r_min, r_max}.
  std::vector<double> rewards{0.0, 1.0};

  static LeafKind crl(std::vector<double> rewards);
  static LeafKind il(double r_min, double r_max);

  std::size_t classes() const { return rewards.size(); }
  double min_reward() const;
  double max_reward() const;
  bool operator==(const LeafKind&) const = default;
};

// Only used by Sophisticated nodes: one valid (unpadded) convolution followed by
// LeakyReLU, then the usual linear layer over the flattened feature map.
struct ConvConfig {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t out_channels = 1;
  double negative_slope = 0.01;
  bool operator==(const ConvConfig&) const = default;
};

struct TreeSpec {
  std::size_t depth = 1;
  InputShape input = InputShape::flat(1);
  NodeKind node_kind = NodeKind::Simple;
  LeafKind leaf_kind;
  double temperature = 1.0;
  ConvConfig conv;

  // Throws ConfigError describing the first violated invariant.
  void validate() const;

  std::size_t internal_count() const { return (std::size_t{1} << depth) - 1; }
  std::size_t leaf_count() const { return std::size_t{1} << depth; }
  std::size_t conv_out_height() const;
  std::size_t conv_out_width() const;
  // Length of the weight vector w_i of every internal node.
  std::size_t feature_count() const;
  std::size_t conv_kernel_size() const;  // out * in * k * k, 0 for Simple
  std::size_t node_parameter_count() const;
  bool operator==(const TreeSpec&) const = default;
};

struct InternalNodeParams {
  std::vector<double> conv_kernel;  // [out][in][k][k]
  std::vector<double> conv_bias;    // [out]
  std::vector<double> weights;
  double bias = 0.0;
  bool operator==(const InternalNodeParams&) const = default;
};

struct LeafParams {
  std::vector<double> logits;
  bool operator==(const LeafParams&) const = default;
};

// Fixed-topology tree. Internal nodes are stored in heap order: the root is 0
// and the children of node i are 2i+1 (left) and 2i+2 (right). Heap indices
// >= internal_count() denote leaves, so leaf l lives at heap index I + l.
class RewardDDT {
 public:
  RewardDDT(TreeSpec spec, std::vector<InternalNodeParams> nodes, std::vector<LeafParams> leaves);

  const TreeSpec& spec() const { return spec_; }
  const std::vector<InternalNodeParams>& nodes() const { return nodes_; }
  const std::vector<LeafParams>& leaves() const { return leaves_; }
  const InternalNodeParams& node(std::size_t i) const { return nodes_.at(i); }
  const LeafParams& leaf(std::size_t l) const { return leaves_.at(l); }

  // Mutation keeps the shapes fixed; lengths are re-checked by assign().
  InternalNodeParams& mutable_node(std::size_t i) { return nodes_.at(i); }
  LeafParams& mutable_leaf(std::size_t l) { return leaves_.at(l); }

  std::size_t parameter_count() const;
  // Canonical flattening: nodes in heap order (conv kernel, conv bias, w, b),
  // then leaves in order.
  std::vector<double> flatten() const;
  void assign(std::span<const double> params);

  std::size_t node_offset(std::size_t i) const { return i * spec_.node_parameter_count(); }
  std::size_t leaf_offset(std::size_t l) const {
    return nodes_.size() * spec_.node_parameter_count() + l * spec_.leaf_kind.classes();
  }

  bool operator==(const RewardDDT&) const = default;

 private:
  void check() const;

  TreeSpec spec_;
  std::vector<InternalNodeParams> nodes_;
  std::vector<LeafParams> leaves_;
};

// Depth of a heap-indexed node (root = 0).
std::size_t node_depth(std::size_t heap_index);

struct RoutingDiagnostics {
  std::vector<double> node_left_probs;   // p_i(x), heap order
  std::vector<double> node_reach_probs;  // P^i(x) for internal nodes, root = 1
  std::vector<double> leaf_path_probs;   // P^l(x)
  std::vector<double> leaf_soft_rewards; // Q^l . R
  double soft_reward = 0.0;
  std::size_t argmax_leaf_index = 0;
};

double sigmoid(double z);

// Pre-sigmoid logit of internal node `node` for input x.
double node_logit(const TreeSpec& spec, const InternalNodeParams& node, std::span<const float> x);

// Simple-node routing probability sigma(beta (x.w + b)).
double route_probability(const InternalNodeParams& node, std::span<const float> x, double beta);
double route_probability(const RewardDDT& tree, std::size_t node, std::span<const float> x);

std::vector<double> path_probabilities(const RewardDDT& tree, std::span<const float> x);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> leaf_distribution(const LeafParams& leaf);
double leaf_soft_reward(const LeafKind& kind, const LeafParams& leaf);

RoutingDiagnostics forward_soft(const RewardDDT& tree, std::span<const float> x);
double soft_reward(const RewardDDT& tree, std::span<const float> x);
double reward_argmax(const RewardDDT& tree, std::span<const float> x);

// Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases, zero leaf
// logits.
RewardDDT init_tree(const TreeSpec& spec, std::mt19937_64& rng);

// Per-state forward values needed by the backward pass.
struct TreeForward {
  std::vector<double> left;   // p_i, over internal nodes
  std::vector<double> reach;  // P over all heap nodes (internal then leaves)
  std::vector<double> leaf_reward;
  std::vector<std::vector<double>> leaf_q;
};

TreeForward tree_forward(const RewardDDT& tree, std::span<const float> x);
// Same as tree_forward, but reuses previously computed left-routing probs.
TreeForward tree_forward_from_left(const RewardDDT& tree, std::vector<double> left);

// For Sophisticated nodes: LeakyReLU(conv(x)) and the pre-activation map.
void conv_features(const TreeSpec& spec, const InternalNodeParams& node, std::span<const float> x,
                   std::vector<double>& pre, std::vector<double>& features);

std::string to_string(NodeKind kind);
std::string to_string(LeafKind::Type type);

}  // namespace ddtrl
