#include "ddtrl/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "ddtrl/error.hpp"
#include "ddtrl/parallel.hpp"

namespace ddtrl {

double Trajectory::true_return() const { return std::accumulate(true_rewards.begin(), true_rewards.end(), 0.0); }

AdamState AdamState::zeros(std::size_t n, AdamConfig config) {
  AdamState s;
  s.config = config;
  s.m.assign(n, 0.0);
  s.v.assign(n, 0.0);
  return s;
}

namespace {

void require_nonempty(const Trajectory& traj) {
  if (traj.states.empty()) throw ConfigError("trajectory must contain at least one state");
}

// Leaf distributions do not depend on the input, so they are computed once
// per batch.
struct LeafTable {
  std::vector<std::vector<double>> q;
  std::vector<double> reward;

  explicit LeafTable(const RewardDDT& tree) {
    const auto& rewards = tree.spec().leaf_kind.rewards;
    for (const auto& leaf : tree.leaves()) {
      q.push_back(leaf_distribution(leaf));
      double s = 0.0;
      for (std::size_t k = 0; k < rewards.size(); ++k) s += q.back()[k] * rewards[k];
      reward.push_back(s);
    }
  }
};

void fill_reach(std::span<const double> left, std::span<double> reach) {
  reach[0] = 1.0;
  for (std::size_t i = 0; i < left.size(); ++i) {
    reach[2 * i + 1] = reach[i] * left[i];
    reach[2 * i + 2] = reach[i] * (1.0 - left[i]);
  }
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct ChunkForward {
  std::vector<double> left;    // [state][node]
  std::vector<double> returns; // [pair][0=worse,1=better]
  std::vector<double> alpha_num;
  std::vector<double> alpha_den;
};

std::vector<std::pair<std::size_t, std::size_t>> split_chunks(std::size_t n, unsigned threads) {
  const std::size_t parts = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t p = 0; p < parts; ++p) out.emplace_back(n * p / parts, n * (p + 1) / parts);
  return out;
}

void forward_chunk(const RewardDDT& tree, const LeafTable& leaves, std::span<const PreferencePair> pairs,
                   ChunkForward& out) {
  const std::size_t internal = tree.spec().internal_count();
  std::vector<double> reach(internal + tree.spec().leaf_count());
  out.alpha_num.assign(internal, 0.0);
  out.alpha_den.assign(internal, 0.0);
  for (const auto& pair : pairs) {
    for (const Trajectory* traj : {&pair.worse, &pair.better}) {
      require_nonempty(*traj);
      double total = 0.0;
      for (const auto& x : traj->states) {
        const std::size_t base = out.left.size();
        for (std::size_t i = 0; i < internal; ++i) out.left.push_back(route_probability(tree, i, *x));
        std::span<const double> left(out.left.data() + base, internal);
        fill_reach(left, reach);
        for (std::size_t i = 0; i < internal; ++i) {
          out.alpha_num[i] += reach[i] * left[i];
          out.alpha_den[i] += reach[i];
        }
        for (std::size_t l = 0; l < leaves.reward.size(); ++l) total += reach[internal + l] * leaves.reward[l];
      }
      out.returns.push_back(total);
    }
  }
}

bool same_states(const Trajectory& a, const Trajectory& b) {
  if (a.states.size() != b.states.size()) return false;
  for (std::size_t k = 0; k < a.states.size(); ++k)
    if (a.states[k] != b.states[k] && *a.states[k] != *b.states[k]) return false;
  return true;
}

// Accumulates parameter gradients of a single state given the adjoint of its
// soft reward and the penalty adjoints on P^i and p_i.
void backward_state(const RewardDDT& tree, std::span<const float> x, std::span<const double> left, double adj_reward,
                    std::span<const double> pen_adj_reach, std::span<const double> pen_adj_left,
                    const LeafTable& leaves, std::vector<double>& adj_leaf_reward, std::vector<double>& grad,
                    std::vector<double>& scratch_pre, std::vector<double>& scratch_feat) {
  const auto& spec = tree.spec();
  const std::size_t internal = spec.internal_count();
  const std::size_t nleaves = spec.leaf_count();
  std::vector<double> reach(internal + nleaves);
  fill_reach(left, reach);

  std::vector<double> adj_reach(internal + nleaves, 0.0);
  std::vector<double> adj_left(internal, 0.0);
  for (std::size_t l = 0; l < nleaves; ++l) {
    adj_reach[internal + l] = adj_reward * leaves.reward[l];
    adj_leaf_reward[l] += adj_reward * reach[internal + l];
  }
  if (!pen_adj_reach.empty()) {
    for (std::size_t i = 0; i < internal; ++i) {
      adj_reach[i] += pen_adj_reach[i];
      adj_left[i] += pen_adj_left[i];
    }
  }
  for (std::size_t i = internal; i-- > 0;) {
    const double al = adj_reach[2 * i + 1], ar = adj_reach[2 * i + 2];
    adj_left[i] += reach[i] * (al - ar);
    adj_reach[i] += left[i] * al + (1.0 - left[i]) * ar;
  }

  const std::size_t stride = spec.node_parameter_count();
  const std::size_t nfeat = spec.feature_count();
  for (std::size_t i = 0; i < internal; ++i) {
    const double adj_z = adj_left[i] * left[i] * (1.0 - left[i]);
    if (adj_z == 0.0) continue;
    double* g = grad.data() + i * stride;
    const auto& node = tree.node(i);
    if (spec.node_kind == NodeKind::Simple) {
      const double s = adj_z * spec.temperature;
      for (std::size_t k = 0; k < nfeat; ++k) g[k] += s * static_cast<double>(x[k]);
      g[nfeat] += s;
      continue;
    }
    conv_features(spec, node, x, scratch_pre, scratch_feat);
    const std::size_t ksize = spec.conv_kernel_size();
    const std::size_t outc = spec.conv.out_channels;
    double* g_kernel = g;
    double* g_cbias = g + ksize;
    double* g_w = g_cbias + outc;
    for (std::size_t f = 0; f < nfeat; ++f) g_w[f] += adj_z * scratch_feat[f];
    g_w[nfeat] += adj_z;

    const auto& cv = spec.conv;
    const std::size_t cin = spec.input.channels, h = spec.input.height, w = spec.input.width;
    const std::size_t oh = spec.conv_out_height(), ow = spec.conv_out_width(), k = cv.kernel;
    for (std::size_t o = 0; o < outc; ++o) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          const std::size_t f = (o * oh + oy) * ow + ox;
          const double adj_pre = adj_z * node.weights[f] * (scratch_pre[f] >= 0.0 ? 1.0 : cv.negative_slope);
          if (adj_pre == 0.0) continue;
          g_cbias[o] += adj_pre;
          for (std::size_t c = 0; c < cin; ++c) {
            double* gk = g_kernel + ((o * cin + c) * k) * k;
            const float* img = &x[c * h * w];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const float* row = img + (oy * cv.stride + ky) * w + ox * cv.stride;
              for (std::size_t kx = 0; kx < k; ++kx) gk[ky * k + kx] += adj_pre * static_cast<double>(row[kx]);
            }
          }
        }
      }
    }
  }
}

struct PenaltyGrad {
  double value = 0.0;
  std::vector<double> alphas;
  std::vector<double> d_alpha;  // dC/d alpha_i
};

PenaltyGrad penalty_from_sums(std::span<const double> num, std::span<const double> den, double lambda0) {
  PenaltyGrad pg;
  pg.alphas.resize(num.size());
  pg.d_alpha.assign(num.size(), 0.0);
  for (std::size_t i = 0; i < num.size(); ++i) {
    pg.alphas[i] = den[i] > 0.0 ? num[i] / den[i] : 0.5;
    const double coef = lambda0 * std::ldexp(1.0, -static_cast<int>(node_depth(i)));
    const double a = std::clamp(pg.alphas[i], kAlphaClamp, 1.0 - kAlphaClamp);
    pg.value += -coef * (0.5 * std::log(a) + 0.5 * std::log(1.0 - a));
    if (den[i] > 0.0 && a == pg.alphas[i]) pg.d_alpha[i] = -coef * 0.5 * (1.0 / a - 1.0 / (1.0 - a));
  }
  return pg;
}

LossAndGrad evaluate(const RewardDDT& tree, std::span<const PreferencePair> batch, const PenaltyConfig& cfg,
                     unsigned threads, bool want_grad) {
  if (batch.empty()) throw ConfigError("preference batch must be non-empty");
  const auto& spec = tree.spec();
  const std::size_t internal = spec.internal_count();
  const LeafTable leaves(tree);
  const auto chunks = split_chunks(batch.size(), threads);

  std::vector<ChunkForward> fwd(chunks.size());
  run_parallel(chunks.size(), [&](std::size_t c) {
    forward_chunk(tree, leaves, batch.subspan(chunks[c].first, chunks[c].second - chunks[c].first), fwd[c]);
  });

  LossAndGrad out;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<double> num(internal, 0.0), den(internal, 0.0);
  for (const auto& f : fwd) {
    for (std::size_t p = 0; p < f.returns.size(); p += 2) out.bt_loss += softplus(f.returns[p] - f.returns[p + 1]);
    for (std::size_t i = 0; i < internal; ++i) {
      num[i] += f.alpha_num[i];
      den[i] += f.alpha_den[i];
    }
  }
  out.bt_loss *= inv_b;
  PenaltyGrad pen;
  if (cfg.enabled) {
    pen = penalty_from_sums(num, den, cfg.lambda0);
    out.penalty = pen.value;
    out.alphas = pen.alphas;
  } else {
    out.alphas.resize(internal);
    for (std::size_t i = 0; i < internal; ++i) out.alphas[i] = den[i] > 0.0 ? num[i] / den[i] : 0.5;
  }
  out.loss = out.bt_loss + out.penalty;
  if (!std::isfinite(out.loss)) throw NumericError("non-finite preference loss");
  if (!want_grad) return out;

  const std::size_t nparams = tree.parameter_count();
  std::vector<std::vector<double>> grads(chunks.size(), std::vector<double>(nparams, 0.0));
  std::vector<std::vector<double>> adj_leaf(chunks.size(), std::vector<double>(spec.leaf_count(), 0.0));
  run_parallel(chunks.size(), [&](std::size_t c) {
    const auto& f = fwd[c];
    std::vector<double> pen_reach, pen_left, pre, feat;
    if (cfg.enabled) {
      pen_reach.resize(internal);
      pen_left.resize(internal);
    }
    std::vector<double> reach(internal + spec.leaf_count());
    std::size_t state = 0;
    for (std::size_t p = chunks[c].first; p < chunks[c].second; ++p) {
      const std::size_t local = p - chunks[c].first;
      // G_w and G_b coincide as functions of theta when the state sequences
      // match, so the pair's gradient is exactly zero.
      const double s =
          same_states(batch[p].worse, batch[p].better) ? 0.0 : sigmoid(f.returns[2 * local] - f.returns[2 * local + 1]) * inv_b;
      for (int side = 0; side < 2; ++side) {
        const Trajectory& traj = side == 0 ? batch[p].worse : batch[p].better;
        const double adj_return = side == 0 ? s : -s;
        for (const auto& x : traj.states) {
          std::span<const double> left(f.left.data() + state * internal, internal);
          if (cfg.enabled) {
            fill_reach(left, reach);
            for (std::size_t i = 0; i < internal; ++i) {
              if (den[i] <= 0.0) {
                pen_reach[i] = pen_left[i] = 0.0;
                continue;
              }
              pen_reach[i] = pen.d_alpha[i] * (left[i] - pen.alphas[i]) / den[i];
              pen_left[i] = pen.d_alpha[i] * reach[i] / den[i];
            }
          }
          backward_state(tree, *x, left, adj_return, pen_reach, pen_left, leaves, adj_leaf[c], grads[c], pre, feat);
          ++state;
        }
      }
    }
  });

  out.grad.values.assign(nparams, 0.0);
  std::vector<double> adj_leaf_total(spec.leaf_count(), 0.0);
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (std::size_t k = 0; k < nparams; ++k) out.grad.values[k] += grads[c][k];
    for (std::size_t l = 0; l < adj_leaf_total.size(); ++l) adj_leaf_total[l] += adj_leaf[c][l];
  }
  const auto& rewards = spec.leaf_kind.rewards;
  for (std::size_t l = 0; l < spec.leaf_count(); ++l) {
    double* g = out.grad.values.data() + tree.leaf_offset(l);
    for (std::size_t k = 0; k < rewards.size(); ++k)
      g[k] += adj_leaf_total[l] * leaves.q[l][k] * (rewards[k] - leaves.reward[l]);
  }
  for (double g : out.grad.values)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient");
  return out;
}

}  // namespace

double trajectory_return_soft(const RewardDDT& tree, const Trajectory& traj) {
  require_nonempty(traj);
  double total = 0.0;
  for (const auto& x : traj.states) total += soft_reward(tree, *x);
  return total;
}

double trajectory_return_argmax(const RewardDDT& tree, const Trajectory& traj) {
  require_nonempty(traj);
  double total = 0.0;
  for (const auto& x : traj.states) total += reward_argmax(tree, *x);
  return total;
}

double trajectory_return(const RewardDDT& tree, const Trajectory& traj, RewardMode mode) {
  return mode == RewardMode::Soft ? trajectory_return_soft(tree, traj) : trajectory_return_argmax(tree, traj);
}

double bradley_terry_pair_loss(double worse_return, double better_return) {
  return softplus(worse_return - better_return);
}

double bradley_terry_loss(const RewardDDT& tree, std::span<const PreferencePair> batch) {
  if (batch.empty()) throw ConfigError("preference batch must be non-empty");
  double total = 0.0;
  for (const auto& p : batch)
    total += bradley_terry_pair_loss(trajectory_return_soft(tree, p.worse), trajectory_return_soft(tree, p.better));
  return total / static_cast<double>(batch.size());
}

std::vector<ObservationRef> collect_states(std::span<const PreferencePair> batch) {
  std::vector<ObservationRef> out;
  for (const auto& p : batch) {
    out.insert(out.end(), p.worse.states.begin(), p.worse.states.end());
    out.insert(out.end(), p.better.states.begin(), p.better.states.end());
  }
  return out;
}

double penalty_from_alphas(std::span<const double> alphas, double lambda0) {
  std::vector<double> den(alphas.size(), 1.0);
  return penalty_from_sums(alphas, den, lambda0).value;
}

PenaltyValue penalty_term(const RewardDDT& tree, std::span<const ObservationRef> states, const PenaltyConfig& cfg) {
  if (states.empty()) throw ConfigError("penalty needs at least one state");
  const std::size_t internal = tree.spec().internal_count();
  std::vector<double> num(internal, 0.0), den(internal, 0.0), reach(internal + tree.spec().leaf_count());
  std::vector<double> left(internal);
  for (const auto& x : states) {
    for (std::size_t i = 0; i < internal; ++i) left[i] = route_probability(tree, i, *x);
    fill_reach(left, reach);
    for (std::size_t i = 0; i < internal; ++i) {
      num[i] += reach[i] * left[i];
      den[i] += reach[i];
    }
  }
  auto pg = penalty_from_sums(num, den, cfg.lambda0);
  return {pg.value, pg.alphas};
}

LossAndGrad loss_and_grad(const RewardDDT& tree, std::span<const PreferencePair> batch, const PenaltyConfig& cfg,
                          unsigned threads) {
  return evaluate(tree, batch, cfg, std::max(1u, threads), true);
}

double total_loss(const RewardDDT& tree, std::span<const PreferencePair> batch, const PenaltyConfig& cfg) {
  return evaluate(tree, batch, cfg, 1, false).loss;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> theta, double h) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  std::vector<double> x(theta.begin(), theta.end()), g(theta.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double orig = x[k];
    x[k] = orig + h;
    const double up = f(x);
    x[k] = orig - h;
    const double down = f(x);
    x[k] = orig;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

GradientBundle finite_diff_grad(const RewardDDT& tree, std::span<const PreferencePair> batch,
                                const PenaltyConfig& cfg, double h) {
  std::vector<std::size_t> all(tree.parameter_count());
  std::iota(all.begin(), all.end(), 0);
  return finite_diff_grad(tree, batch, cfg, h, all);
}

GradientBundle finite_diff_grad(const RewardDDT& tree, std::span<const PreferencePair> batch,
                                const PenaltyConfig& cfg, double h, std::span<const std::size_t> coords) {
  if (!(h > 0.0)) throw ConfigError("finite-difference step must be positive");
  RewardDDT probe = tree;
  std::vector<double> theta = tree.flatten();
  GradientBundle out{std::vector<double>(theta.size(), 0.0)};
  for (std::size_t k : coords) {
    const double orig = theta[k];
    theta[k] = orig + h;
    probe.assign(theta);
    const double up = total_loss(probe, batch, cfg);
    theta[k] = orig - h;
    probe.assign(theta);
    const double down = total_loss(probe, batch, cfg);
    theta[k] = orig;
    out.values[k] = (up - down) / (2.0 * h);
  }
  return out;
}

void adam_step(std::span<double> params, std::span<const double> grad, AdamState& st) {
  if (params.size() != grad.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("Adam: parameter, gradient and moment lengths differ");
  const auto& c = st.config;
  ++st.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(st.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grad[k] + c.weight_decay * params[k];
    st.m[k] = c.beta1 * st.m[k] + (1.0 - c.beta1) * g;
    st.v[k] = c.beta2 * st.v[k] + (1.0 - c.beta2) * g * g;
    const double m_hat = st.m[k] / bc1;
    const double v_hat = st.v[k] / bc2;
    params[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

void adam_step(RewardDDT& tree, const GradientBundle& grad, AdamState& state) {
  auto params = tree.flatten();
  adam_step(params, grad.values, state);
  tree.assign(params);
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("training.epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("training.batch_size must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("training.lr must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("training.weight_decay must be >= 0");
  if (penalty.enabled && !(penalty.lambda0 >= 0.0)) throw ConfigError("penalty lambda must be >= 0");
}

TrainResult train(RewardDDT tree, std::span<const PreferencePair> train_set,
                  std::span<const PreferencePair> validation, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set must be non-empty");
  AdamState adam = AdamState::zeros(tree.parameter_count(), AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  std::vector<EpochMetrics> metrics;
  std::vector<std::vector<double>> last_alphas;
  std::vector<PreferencePair> batch;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0, pen_sum = 0.0;
    std::size_t batches = 0;
    last_alphas.clear();
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      batch.clear();
      for (std::size_t k = b; k < std::min(order.size(), b + config.batch_size); ++k)
        batch.push_back(train_set[order[k]]);
      auto lg = loss_and_grad(tree, batch, config.penalty, config.threads);
      adam_step(tree, lg.grad, adam);
      loss_sum += lg.loss;
      pen_sum += lg.penalty;
      last_alphas.push_back(std::move(lg.alphas));
      ++batches;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(batches);
    m.penalty_value = pen_sum / static_cast<double>(batches);
    if (!validation.empty()) {
      m.val_loss = bradley_terry_loss(tree, validation);
      m.val_acc_soft = preference_accuracy(tree, validation, RewardMode::Soft);
      m.val_acc_argmax = preference_accuracy(tree, validation, RewardMode::Argmax);
    }
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    metrics.push_back(m);
  }
  return TrainResult{std::move(tree), std::move(adam), std::move(metrics), std::move(last_alphas)};
}

double preference_accuracy(const std::function<double(const Trajectory&)>& predicted_return,
                           std::span<const PreferencePair> pairs) {
  if (pairs.empty()) throw ConfigError("accuracy needs at least one pair");
  std::size_t correct = 0;
  for (const auto& p : pairs)
    if (predicted_return(p.better) > predicted_return(p.worse)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

double preference_accuracy(const RewardDDT& tree, std::span<const PreferencePair> pairs, RewardMode mode) {
  return preference_accuracy([&](const Trajectory& t) { return trajectory_return(tree, t, mode); }, pairs);
}

}  // namespace ddtrl
