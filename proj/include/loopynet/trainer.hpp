#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopynet/backprop.hpp"
#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/model.hpp"
#include "loopynet/rng.hpp"
#include "loopynet/tree.hpp"

namespace loopynet {

// ---------------------------------------------------------------------------
// Optimizers

enum class Algorithm { sgd, adam };

struct OptConfig {
  Algorithm algorithm = Algorithm::sgd;
  double lr_weight = 0.1;  // η^w
  double lr_bias = 0.1;    // η^b
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double max_norm = 0.0;  // global gradient norm cap, 0 = off

  static OptConfig sgd(double lr_w = 0.1, double lr_b = 0.1) {
    return {Algorithm::sgd, lr_w, lr_b};
  }
  static OptConfig adam(double lr_w = 0.01, double lr_b = 0.01) {
    return {Algorithm::adam, lr_w, lr_b};
  }
};

struct OptState {
  OptConfig config;
  std::uint64_t step = 0;  // τ
  Params first_moment;
  Params second_moment;

  OptState() = default;
  OptState(OptConfig cfg, const Dims& dims)
      : config(cfg), first_moment(dims), second_moment(dims) {}
};

namespace detail {

inline void check_gradients(const Params& p, const GradAccum& g) {
  if (!(g.grads.dims() == p.dims())) {
    throw Error(ErrorKind::shape, "gradient shapes do not match params");
  }
  for (const VarTag& tag : p.tags()) {
    if (!g[tag].weight.allFinite()) {
      throw Error(ErrorKind::numeric, "non-finite gradient in " + weight_name(tag));
    }
    if (!g[tag].bias.allFinite()) {
      throw Error(ErrorKind::numeric, "non-finite gradient in " + bias_name(tag));
    }
  }
}

}  // namespace detail

/// W ← W − η^w ∂E/∂W and b ← b − η^b ∂E/∂b for every block.
inline void sgd_step(Params& p, const GradAccum& g, OptState& s) {
  detail::check_gradients(p, g);
  for (std::size_t i = 0; i < p.blocks().size(); ++i) {
    p.blocks()[i].weight -= s.config.lr_weight * g.grads.blocks()[i].weight;
    p.blocks()[i].bias -= s.config.lr_bias * g.grads.blocks()[i].bias;
  }
  ++s.step;
}

/// Bias-corrected Adam with separate rates for weights and biases.
inline void adam_step(Params& p, const GradAccum& g, OptState& s) {
  detail::check_gradients(p, g);
  if (!(s.first_moment.dims() == p.dims())) {
    s.first_moment = Params(p.dims());
    s.second_moment = Params(p.dims());
  }
  ++s.step;
  const double b1 = s.config.beta1;
  const double b2 = s.config.beta2;
  const double eps = s.config.epsilon;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));

  auto update = [&](auto& value, auto& m, auto& v, const auto& grad, double lr) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < p.blocks().size(); ++i) {
    auto& blk = p.blocks()[i];
    auto& m = s.first_moment.blocks()[i];
    auto& v = s.second_moment.blocks()[i];
    const auto& gb = g.grads.blocks()[i];
    update(blk.weight, m.weight, v.weight, gb.weight, s.config.lr_weight);
    update(blk.bias, m.bias, v.bias, gb.bias, s.config.lr_bias);
  }
}

inline void optimizer_step(Params& p, GradAccum& g, OptState& s) {
  if (s.config.max_norm > 0.0) {
    const double norm = std::sqrt(g.squared_norm());
    if (norm > s.config.max_norm) g.scale(s.config.max_norm / norm);
  }
  if (s.config.algorithm == Algorithm::adam) {
    adam_step(p, g, s);
  } else {
    sgd_step(p, g, s);
  }
}

// ---------------------------------------------------------------------------
// Trees per root

/// Output-rooted trees depend only on graph structure and g, so they are
/// built once per root and reused across epochs.
class TreeCache {
 public:
  TreeCache(const Graph& g, ModelGraph mg, int hops)
      : graph_(&g), model_(std::move(mg)), hops_(hops), trees_(g.node_count()) {}

  const SpanTree& output_tree(NodeIndex i) {
    auto& slot = trees_.at(i);
    if (!slot) slot = build_tree(model_, *graph_, NeuronId::output(i), hops_);
    return *slot;
  }

  /// Builds every tree in `nodes` up front; afterwards concurrent reads are safe.
  void prepare(const std::vector<NodeIndex>& nodes) {
    for (NodeIndex i : nodes) output_tree(i);
  }

  const SpanTree& prepared(NodeIndex i) const { return *trees_.at(i); }

  const ModelGraph& model() const { return model_; }
  int hops() const { return hops_; }

 private:
  const Graph* graph_;
  ModelGraph model_;
  int hops_;
  std::vector<std::optional<SpanTree>> trees_;
};

// ---------------------------------------------------------------------------
// Training

struct EpochConfig {
  LossKind loss = LossKind::mse;
  bool batch = false;  // sum all node gradients, then one step
  unsigned jobs = 1;   // workers for batch mode
};

inline Eigen::VectorXd predict(TreeCache& trees, const Params& p, const Graph& g, NodeIndex i) {
  return forward_tree(trees.output_tree(i), p, g).root_value();
}

/// One pass over `nodes` in an order drawn from `rng`. In the default
/// per-node mode each node's tree gets its own forward pass, reverse sweep
/// and optimizer step. Returns the mean per-node loss seen during the pass.
inline double train_epoch(const Graph& g, TreeCache& trees, Params& p, OptState& opt,
                          const EpochConfig& cfg, const std::vector<NodeIndex>& nodes, Rng& rng) {
  if (nodes.empty()) throw Error(ErrorKind::config, "no training nodes");
  if (!g.has_labels()) throw Error(ErrorKind::state, "graph has no labels");
  std::vector<NodeIndex> order = nodes;
  rng.shuffle(order);

  double total = 0.0;
  if (!cfg.batch) {
    for (NodeIndex i : order) {
      const SpanTree& tree = trees.output_tree(i);
      const auto tape = forward_tree(tree, p, g);
      total += node_loss<double>(tape.root_value(), g.labels[i], cfg.loss);
      GradAccum grads = prop_gradients(tree, tape, p, g.labels[i], cfg.loss);
      optimizer_step(p, grads, opt);
    }
    return total / static_cast<double>(order.size());
  }

  trees.prepare(order);
  std::vector<GradAccum> per_node(order.size());
  std::vector<double> losses(order.size(), 0.0);
  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t k = first; k < order.size(); k += stride) {
      const NodeIndex i = order[k];
      const SpanTree& tree = trees.prepared(i);
      const auto tape = forward_tree(tree, p, g);
      losses[k] = node_loss<double>(tape.root_value(), g.labels[i], cfg.loss);
      per_node[k] = prop_gradients(tree, tape, p, g.labels[i], cfg.loss);
    }
  };
  const unsigned jobs = std::max(1u, cfg.jobs);
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> workers;
    for (unsigned j = 0; j < jobs; ++j) workers.emplace_back(work, j, jobs);
    for (auto& w : workers) w.join();
  }
  // Merge in ascending node index so the sum does not depend on the shuffle.
  std::vector<std::size_t> by_node(order.size());
  std::iota(by_node.begin(), by_node.end(), std::size_t{0});
  std::sort(by_node.begin(), by_node.end(),
            [&](std::size_t a, std::size_t b) { return order[a] < order[b]; });
  GradAccum sum(p.dims());
  for (std::size_t k : by_node) {
    sum.merge(per_node[k]);
    total += losses[k];
  }
  optimizer_step(p, sum, opt);
  return total / static_cast<double>(order.size());
}

struct TrainConfig {
  int hops = 2;
  std::size_t max_epochs = 50;
  std::uint64_t seed = 7;
  EpochConfig epoch;
  OptConfig optimizer;
  /// Stop once the relative improvement stays below `tolerance` for
  /// `patience` consecutive epochs. A tolerance of 0 disables the check.
  double tolerance = 1e-5;
  std::size_t patience = 5;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  Params params;
  std::vector<EpochLog> log;
  bool converged = false;
};

inline TrainResult train(const Graph& g, Params params, const TrainConfig& cfg,
                         const std::vector<NodeIndex>& nodes,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (cfg.hops < 1) throw Error(ErrorKind::config, "g must be >= 1");
  TreeCache trees(g, ModelGraph(g, params.dims().hidden), cfg.hops);
  OptState opt(cfg.optimizer, params.dims());
  Rng rng(cfg.seed);
  TrainResult result;
  std::size_t stalled = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const double loss = train_epoch(g, trees, params, opt, cfg.epoch, nodes, rng);
    const auto stop = std::chrono::steady_clock::now();
    EpochLog entry{epoch, loss, std::chrono::duration<double, std::milli>(stop - start).count()};
    if (!std::isfinite(loss)) throw Error(ErrorKind::numeric, "training loss became non-finite");
    if (!result.log.empty() && cfg.tolerance > 0.0) {
      const double prev = result.log.back().mean_loss;
      const double improvement = prev > 0.0 ? (prev - loss) / prev : 0.0;
      stalled = improvement < cfg.tolerance ? stalled + 1 : 0;
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (cfg.tolerance > 0.0 && stalled >= cfg.patience) {
      result.converged = true;
      break;
    }
  }
  result.params = std::move(params);
  return result;
}

inline std::vector<NodeIndex> all_nodes(const Graph& g) {
  std::vector<NodeIndex> out(g.node_count());
  std::iota(out.begin(), out.end(), NodeIndex{0});
  return out;
}

// ---------------------------------------------------------------------------
// Cross validation and metrics

/// Shuffles 0..node_count-1 and cuts it into `folds` contiguous chunks; the
/// first node_count % folds chunks get one extra node. Each fold is sorted.
inline std::vector<std::vector<NodeIndex>> kfold_split(std::size_t node_count, std::size_t folds,
                                                       std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorKind::config, "k_folds must be >= 2");
  if (node_count < folds) {
    throw Error(ErrorKind::config, "cannot split " + std::to_string(node_count) + " nodes into " +
                                       std::to_string(folds) + " folds");
  }
  std::vector<NodeIndex> order(node_count);
  std::iota(order.begin(), order.end(), NodeIndex{0});
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<NodeIndex>> out(folds);
  const std::size_t base = node_count / folds;
  const std::size_t extra = node_count % folds;
  std::size_t cursor = 0;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    out[f].assign(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                  order.begin() + static_cast<std::ptrdiff_t>(cursor + size));
    std::sort(out[f].begin(), out[f].end());
    cursor += size;
  }
  return out;
}

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  std::optional<double> lrs;  // empty when no node has both label classes
};

/// Label ranking loss of one node: the fraction of (positive, negative) label
/// pairs whose predicted scores are not strictly ordered. Entries with target
/// >= 0.5 count as positive. Empty when either class is missing.
inline std::optional<double> node_ranking_loss(const Eigen::VectorXd& pred,
                                               const Eigen::VectorXd& target) {
  std::size_t pos = 0, neg = 0, bad = 0;
  for (Eigen::Index a = 0; a < target.size(); ++a) {
    if (target[a] >= 0.5) ++pos; else ++neg;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  for (Eigen::Index a = 0; a < target.size(); ++a) {
    if (target[a] < 0.5) continue;
    for (Eigen::Index b = 0; b < target.size(); ++b) {
      if (target[b] >= 0.5) continue;
      if (pred[a] <= pred[b]) ++bad;
    }
  }
  return static_cast<double>(bad) / static_cast<double>(pos * neg);
}

inline Metrics compute_metrics(const std::vector<Eigen::VectorXd>& predictions,
                               const std::vector<Eigen::VectorXd>& targets) {
  if (predictions.empty()) throw Error(ErrorKind::config, "no nodes to evaluate");
  if (predictions.size() != targets.size()) {
    throw Error(ErrorKind::shape, "prediction and target counts differ");
  }
  Metrics m;
  double sq = 0.0, abs = 0.0, lrs = 0.0;
  std::size_t entries = 0, ranked = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].size() != targets[i].size()) {
      throw Error(ErrorKind::shape, "prediction and label lengths differ");
    }
    const Eigen::VectorXd diff = predictions[i] - targets[i];
    sq += diff.squaredNorm();
    abs += diff.cwiseAbs().sum();
    entries += static_cast<std::size_t>(diff.size());
    if (auto r = node_ranking_loss(predictions[i], targets[i])) {
      lrs += *r;
      ++ranked;
    }
  }
  m.mse = sq / static_cast<double>(entries);
  m.mae = abs / static_cast<double>(entries);
  if (ranked > 0) m.lrs = lrs / static_cast<double>(ranked);
  return m;
}

/// Tree-unrolled predictions at y_i for every node in `nodes`, scored
/// against the node labels.
inline Metrics evaluate(const Graph& g, const Params& p, const std::vector<NodeIndex>& nodes,
                        int hops) {
  if (nodes.empty()) throw Error(ErrorKind::config, "no nodes to evaluate");
  if (!g.has_labels()) throw Error(ErrorKind::state, "graph has no labels");
  if (p.dims().output != g.label_dim) {
    throw Error(ErrorKind::shape, "params output dim does not match label dim");
  }
  TreeCache trees(g, ModelGraph(g, p.dims().hidden), hops);
  std::vector<Eigen::VectorXd> preds, targets;
  for (NodeIndex i : nodes) {
    preds.push_back(predict(trees, p, g, i));
    targets.push_back(g.labels[i]);
  }
  return compute_metrics(preds, targets);
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over folds
};

struct MetricsReport {
  std::vector<Metrics> folds;
  MetricSummary mse, mae;
  std::optional<MetricSummary> lrs;
};

inline MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

inline MetricsReport make_report(std::vector<Metrics> folds) {
  MetricsReport r;
  std::vector<double> mse, mae, lrs;
  for (const auto& m : folds) {
    mse.push_back(m.mse);
    mae.push_back(m.mae);
    if (m.lrs) lrs.push_back(*m.lrs);
  }
  r.mse = summarize(mse);
  r.mae = summarize(mae);
  if (!lrs.empty()) r.lrs = summarize(lrs);
  r.folds = std::move(folds);
  return r;
}

/// k-fold protocol: for each fold, train fresh parameters on the other folds
/// and score the held-out fold.
inline MetricsReport cross_validate(const Graph& g, const Params& initial, const TrainConfig& cfg,
                                    std::size_t folds, std::uint64_t fold_seed) {
  const auto split = kfold_split(g.node_count(), folds, fold_seed);
  std::vector<Metrics> scores;
  for (std::size_t f = 0; f < split.size(); ++f) {
    std::vector<NodeIndex> train_nodes;
    for (std::size_t o = 0; o < split.size(); ++o) {
      if (o != f) train_nodes.insert(train_nodes.end(), split[o].begin(), split[o].end());
    }
    std::sort(train_nodes.begin(), train_nodes.end());
    const TrainResult trained = train(g, initial, cfg, train_nodes);
    scores.push_back(evaluate(g, trained.params, split[f], cfg.hops));
  }
  return make_report(std::move(scores));
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
  nlohmann::ordered_json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["lrs"] = m.lrs ? nlohmann::ordered_json(*m.lrs) : nlohmann::ordered_json(nullptr);
  return j;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  auto summary = [](const MetricSummary& s) {
    return nlohmann::ordered_json{{"mean", s.mean}, {"std", s.std}};
  };
  nlohmann::ordered_json j;
  j["mse"] = summary(r.mse);
  j["mae"] = summary(r.mae);
  j["lrs"] = r.lrs ? summary(*r.lrs) : nlohmann::ordered_json(nullptr);
  auto& folds = j["folds"] = nlohmann::ordered_json::array();
  for (const auto& m : r.folds) folds.push_back(metrics_to_json(m));
  return j;
}

/// Plain-text table: one method row with mean ± std per metric.
inline std::string report_table(const MetricsReport& r, const std::string& method = "LNN") {
  auto cell = [](const std::optional<MetricSummary>& s) {
    if (!s) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << s->mean << " ± " << s->std;
    return os.str();
  };
  std::ostringstream os;
  os << std::left << std::setw(10) << "method" << std::setw(20) << "MSE" << std::setw(20) << "MAE"
     << "LRS" << '\n';
  // "±" is two bytes in UTF-8, hence the wider fields for data cells.
  os << std::left << std::setw(10) << method << std::setw(21) << cell(r.mse) << std::setw(21)
     << cell(r.mae) << cell(r.lrs) << '\n';
  return os.str();
}

}  // namespace loopynet
