#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <deque>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/rng.hpp"

namespace loopynet {

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Neurons and links

enum class NeuronKind : std::uint8_t { input, hidden, output };

/// One neuron of the model graph: x_i, h_i^(l) or y_i.
/// `layer` is 1..k for hidden neurons and 0 otherwise.
struct NeuronId {
  NeuronKind kind = NeuronKind::input;
  int layer = 0;
  NodeIndex node = 0;

  static NeuronId input(NodeIndex i) { return {NeuronKind::input, 0, i}; }
  static NeuronId hidden(int l, NodeIndex i) { return {NeuronKind::hidden, l, i}; }
  static NeuronId output(NodeIndex i) { return {NeuronKind::output, 0, i}; }

  bool is_input() const { return kind == NeuronKind::input; }
  bool is_hidden() const { return kind == NeuronKind::hidden; }
  bool is_output() const { return kind == NeuronKind::output; }

  /// Layer rank used for ordering: input 0, hidden l -> l, output after all hidden.
  int rank() const {
    switch (kind) {
      case NeuronKind::input: return 0;
      case NeuronKind::hidden: return layer;
      case NeuronKind::output: return std::numeric_limits<int>::max();
    }
    return 0;
  }

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
  friend auto operator<=>(const NeuronId& a, const NeuronId& b) {
    if (auto c = a.rank() <=> b.rank(); c != 0) return c;
    return a.node <=> b.node;
  }
};

inline std::string to_string(const NeuronId& n, const Graph* g = nullptr) {
  const std::string node = g ? g->node_ids.at(n.node) : std::to_string(n.node);
  switch (n.kind) {
    case NeuronKind::input: return "x[" + node + "]";
    case NeuronKind::hidden: return "h" + std::to_string(n.layer) + "[" + node + "]";
    case NeuronKind::output: return "y[" + node + "]";
  }
  return "?";
}

inline const char* kind_name(NeuronKind kind) {
  switch (kind) {
    case NeuronKind::input: return "input";
    case NeuronKind::hidden: return "hidden";
    case NeuronKind::output: return "output";
  }
  return "?";
}

/// Which (W, b) pair parameterizes a link.
///   input  : x_i -> h_i^(1)            (W^x, b^x)
///   intra  : h_j^(l) -> h_i^(l)         (W^{h_l}, b^{h_l})
///   inter  : h_i^(l-1) -> h_i^(l)       (W^{h_{l-1},h_l}, b^{h_{l-1},h_l}); layer = l
///   output : h_i^(k) -> y_i             (W^y, b^y)
struct VarTag {
  enum class Kind : std::uint8_t { input, intra, inter, output };
  Kind kind = Kind::input;
  int layer = 0;

  static VarTag input() { return {Kind::input, 1}; }
  static VarTag intra(int l) { return {Kind::intra, l}; }
  static VarTag inter(int l) { return {Kind::inter, l}; }
  static VarTag output() { return {Kind::output, 0}; }

  friend bool operator==(const VarTag&, const VarTag&) = default;
  friend auto operator<=>(const VarTag&, const VarTag&) = default;
};

/// Short key used in JSON documents: x, h1, h1_h2, y.
inline std::string tag_key(const VarTag& t) {
  switch (t.kind) {
    case VarTag::Kind::input: return "x";
    case VarTag::Kind::intra: return "h" + std::to_string(t.layer);
    case VarTag::Kind::inter:
      return "h" + std::to_string(t.layer - 1) + "_h" + std::to_string(t.layer);
    case VarTag::Kind::output: return "y";
  }
  return "?";
}

inline std::string weight_name(const VarTag& t) { return "W_" + tag_key(t); }
inline std::string bias_name(const VarTag& t) { return "b_" + tag_key(t); }

/// Tags of a depth-k model in canonical slot order:
/// x, h1..hk, h1_h2..h{k-1}_hk, y.
inline std::vector<VarTag> all_tags(int k) {
  std::vector<VarTag> tags{VarTag::input()};
  for (int l = 1; l <= k; ++l) tags.push_back(VarTag::intra(l));
  for (int l = 2; l <= k; ++l) tags.push_back(VarTag::inter(l));
  tags.push_back(VarTag::output());
  return tags;
}

struct Link {
  NeuronId from;
  NeuronId to;
  VarTag tag;
};

// ---------------------------------------------------------------------------
// Parameters

/// Layer widths (n, m^(1)..m^(k), d).
struct Dims {
  std::size_t input = 1;
  std::vector<std::size_t> hidden{1};
  std::size_t output = 1;

  int depth() const { return static_cast<int>(hidden.size()); }
  std::size_t width(int layer) const { return hidden.at(static_cast<std::size_t>(layer - 1)); }

  friend bool operator==(const Dims&, const Dims&) = default;
};

inline void validate(const Dims& dims) {
  if (dims.hidden.empty()) throw Error(ErrorKind::config, "hidden depth k must be >= 1");
  if (dims.input < 1 || dims.output < 1) {
    throw Error(ErrorKind::config, "input and output dims must be >= 1");
  }
  for (std::size_t m : dims.hidden) {
    if (m < 1) throw Error(ErrorKind::config, "hidden widths must be >= 1");
  }
}

template <class T>
struct BasicAffine {
  Mat<T> weight;
  Vec<T> bias;
};

/// The full variable set, one affine block per tag. Weights map source-space
/// vectors to target-space vectors (rows = target width).
template <class T>
class BasicParams {
 public:
  BasicParams() = default;

  explicit BasicParams(Dims dims) : dims_(std::move(dims)) {
    validate(dims_);
    const int k = dims_.depth();
    for (const VarTag& tag : all_tags(k)) {
      const auto [rows, cols] = shape(tag);
      blocks_.push_back({Mat<T>::Zero(rows, cols), Vec<T>::Zero(rows)});
    }
  }

  const Dims& dims() const { return dims_; }
  int depth() const { return dims_.depth(); }
  std::vector<VarTag> tags() const { return all_tags(depth()); }

  std::size_t slot(const VarTag& t) const {
    const int k = depth();
    switch (t.kind) {
      case VarTag::Kind::input: return 0;
      case VarTag::Kind::intra:
        if (t.layer >= 1 && t.layer <= k) return static_cast<std::size_t>(t.layer);
        break;
      case VarTag::Kind::inter:
        if (t.layer >= 2 && t.layer <= k) return static_cast<std::size_t>(k + t.layer - 1);
        break;
      case VarTag::Kind::output: return static_cast<std::size_t>(2 * k);
    }
    throw Error(ErrorKind::bounds, "variable tag " + tag_key(t) + " not present at depth " +
                                       std::to_string(k));
  }

  /// (rows, cols) of the weight matrix for `t`.
  std::pair<Eigen::Index, Eigen::Index> shape(const VarTag& t) const {
    auto w = [&](std::size_t v) { return static_cast<Eigen::Index>(v); };
    switch (t.kind) {
      case VarTag::Kind::input: return {w(dims_.width(1)), w(dims_.input)};
      case VarTag::Kind::intra: return {w(dims_.width(t.layer)), w(dims_.width(t.layer))};
      case VarTag::Kind::inter: return {w(dims_.width(t.layer)), w(dims_.width(t.layer - 1))};
      case VarTag::Kind::output: return {w(dims_.output), w(dims_.width(depth()))};
    }
    return {0, 0};
  }

  BasicAffine<T>& operator[](const VarTag& t) { return blocks_[slot(t)]; }
  const BasicAffine<T>& operator[](const VarTag& t) const { return blocks_[slot(t)]; }

  std::vector<BasicAffine<T>>& blocks() { return blocks_; }
  const std::vector<BasicAffine<T>>& blocks() const { return blocks_; }

  template <class U>
  BasicParams<U> cast() const {
    BasicParams<U> out(dims_);
    for (std::size_t s = 0; s < blocks_.size(); ++s) {
      out.blocks()[s].weight = blocks_[s].weight.template cast<U>();
      out.blocks()[s].bias = blocks_[s].bias.template cast<U>();
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& b : blocks_) {
      if (!b.weight.allFinite() || !b.bias.allFinite()) return false;
    }
    return true;
  }

  friend bool operator==(const BasicParams& a, const BasicParams& b) {
    if (a.dims_ != b.dims_) return false;
    for (std::size_t s = 0; s < a.blocks_.size(); ++s) {
      if (a.blocks_[s].weight != b.blocks_[s].weight) return false;
      if (a.blocks_[s].bias != b.blocks_[s].bias) return false;
    }
    return true;
  }

 private:
  Dims dims_;
  std::vector<BasicAffine<T>> blocks_;
};

using Affine = BasicAffine<double>;
using Params = BasicParams<double>;

struct InitScheme {
  enum class Kind { zeros, uniform };
  Kind kind = Kind::uniform;
  double scale = 0.1;  // a, for uniform(a)

  static InitScheme zeros() { return {Kind::zeros, 0.0}; }
  static InitScheme uniform(double a) { return {Kind::uniform, a}; }
};

/// Fresh parameters; every entry of uniform(a) is drawn from [-a, a].
inline Params init_params(const Dims& dims, std::uint64_t seed, InitScheme scheme) {
  Params p(dims);
  if (scheme.kind == InitScheme::Kind::zeros) return p;
  if (!(scheme.scale > 0.0)) throw Error(ErrorKind::config, "uniform init needs a > 0");
  Rng rng(seed);
  const double a = scheme.scale;
  for (auto& block : p.blocks()) {
    for (Eigen::Index r = 0; r < block.weight.rows(); ++r)
      for (Eigen::Index c = 0; c < block.weight.cols(); ++c) block.weight(r, c) = rng.uniform(-a, a);
    for (Eigen::Index r = 0; r < block.bias.size(); ++r) block.bias[r] = rng.uniform(-a, a);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Model graph

/// The neuron graph built over an input graph: k+2 layers of one neuron per
/// node, same-layer hidden links along every edge, and one vertical chain
/// x_i -> h_i^(1) -> ... -> h_i^(k) -> y_i per node.
class ModelGraph {
 public:
  ModelGraph(const Graph& g, std::vector<std::size_t> hidden_dims)
      : adjacency_(g.adjacency), hidden_dims_(std::move(hidden_dims)) {
    if (g.node_count() == 0) throw Error(ErrorKind::config, "model graph over an empty graph");
    if (hidden_dims_.empty()) throw Error(ErrorKind::config, "hidden depth k must be >= 1");
    for (std::size_t m : hidden_dims_) {
      if (m < 1) throw Error(ErrorKind::config, "hidden widths must be >= 1");
    }
  }

  int depth() const { return static_cast<int>(hidden_dims_.size()); }
  const std::vector<std::size_t>& hidden_dims() const { return hidden_dims_; }
  std::size_t node_count() const { return adjacency_.size(); }
  std::size_t neuron_count() const { return node_count() * static_cast<std::size_t>(depth() + 2); }
  const std::vector<std::vector<NodeIndex>>& adjacency() const { return adjacency_; }

  bool contains(const NeuronId& n) const {
    if (n.node >= node_count()) return false;
    if (n.is_hidden()) return n.layer >= 1 && n.layer <= depth();
    return n.layer == 0;
  }

  /// Dense index in [0, neuron_count): layer position * node_count + node.
  std::size_t index(const NeuronId& n) const {
    std::size_t level = 0;
    if (n.is_hidden()) level = static_cast<std::size_t>(n.layer);
    if (n.is_output()) level = static_cast<std::size_t>(depth() + 1);
    return level * node_count() + n.node;
  }

  NeuronId neuron(std::size_t index) const {
    const std::size_t level = index / node_count();
    const NodeIndex node = index % node_count();
    if (level == 0) return NeuronId::input(node);
    if (level == static_cast<std::size_t>(depth() + 1)) return NeuronId::output(node);
    return NeuronId::hidden(static_cast<int>(level), node);
  }

  std::vector<NeuronId> neurons() const {
    std::vector<NeuronId> out;
    out.reserve(neuron_count());
    for (std::size_t i = 0; i < neuron_count(); ++i) out.push_back(neuron(i));
    return out;
  }

  /// Links feeding `n`, sorted by (layer rank, node index) of the source.
  std::vector<Link> in_links(const NeuronId& n) const {
    std::vector<Link> links;
    switch (n.kind) {
      case NeuronKind::input:
        break;
      case NeuronKind::output:
        links.push_back({NeuronId::hidden(depth(), n.node), n, VarTag::output()});
        break;
      case NeuronKind::hidden: {
        if (n.layer == 1) {
          links.push_back({NeuronId::input(n.node), n, VarTag::input()});
        } else {
          links.push_back({NeuronId::hidden(n.layer - 1, n.node), n, VarTag::inter(n.layer)});
        }
        for (NodeIndex j : adjacency_[n.node]) {
          links.push_back({NeuronId::hidden(n.layer, j), n, VarTag::intra(n.layer)});
        }
        break;
      }
    }
    return links;
  }

  /// Links leaving `n` in the forward direction.
  std::vector<Link> out_links(const NeuronId& n) const {
    std::vector<Link> links;
    switch (n.kind) {
      case NeuronKind::input:
        links.push_back({n, NeuronId::hidden(1, n.node), VarTag::input()});
        break;
      case NeuronKind::output:
        break;
      case NeuronKind::hidden:
        for (NodeIndex j : adjacency_[n.node]) {
          links.push_back({n, NeuronId::hidden(n.layer, j), VarTag::intra(n.layer)});
        }
        if (n.layer == depth()) {
          links.push_back({n, NeuronId::output(n.node), VarTag::output()});
        } else {
          links.push_back({n, NeuronId::hidden(n.layer + 1, n.node), VarTag::inter(n.layer + 1)});
        }
        break;
    }
    return links;
  }

  /// ℒ_a: same-layer hidden links, both directions of every edge.
  std::vector<Link> intra_links() const {
    std::vector<Link> links;
    for (int l = 1; l <= depth(); ++l) {
      for (NodeIndex i = 0; i < node_count(); ++i) {
        for (NodeIndex j : adjacency_[i]) {
          links.push_back({NeuronId::hidden(l, j), NeuronId::hidden(l, i), VarTag::intra(l)});
        }
      }
    }
    return links;
  }

  /// ℒ_e: the vertical chains.
  std::vector<Link> inter_links() const {
    std::vector<Link> links;
    for (NodeIndex i = 0; i < node_count(); ++i) {
      links.push_back({NeuronId::input(i), NeuronId::hidden(1, i), VarTag::input()});
      for (int l = 2; l <= depth(); ++l) {
        links.push_back({NeuronId::hidden(l - 1, i), NeuronId::hidden(l, i), VarTag::inter(l)});
      }
      links.push_back({NeuronId::hidden(depth(), i), NeuronId::output(i), VarTag::output()});
    }
    return links;
  }

  /// Longest shortest path of the model graph with links taken as undirected,
  /// over connected neuron pairs.
  std::size_t diameter() const {
    const std::size_t count = neuron_count();
    std::vector<std::vector<NodeIndex>> undirected(count);
    for (std::size_t i = 0; i < count; ++i) {
      for (const Link& l : in_links(neuron(i))) {
        undirected[i].push_back(index(l.from));
        undirected[index(l.from)].push_back(i);
      }
    }
    std::size_t best = 0;
    for (std::size_t s = 0; s < count; ++s) {
      for (std::size_t d : bfs_distances(undirected, s)) {
        if (d != std::numeric_limits<std::size_t>::max()) best = std::max(best, d);
      }
    }
    return best;
  }

 private:
  std::vector<std::vector<NodeIndex>> adjacency_;
  std::vector<std::size_t> hidden_dims_;
};

inline ModelGraph build_model_graph(const Graph& g, int k, std::vector<std::size_t> hidden_dims) {
  if (k < 1) throw Error(ErrorKind::config, "hidden depth k must be >= 1, got " + std::to_string(k));
  if (hidden_dims.size() != static_cast<std::size_t>(k)) {
    throw Error(ErrorKind::config, "hidden_dims must list one width per hidden layer");
  }
  return ModelGraph(g, std::move(hidden_dims));
}

// ---------------------------------------------------------------------------
// Activation and losses

/// Logistic sigmoid, evaluated without overflow for large |z|.
template <class T>
T sigmoid(T z) {
  using std::exp;
  if (z >= T(0)) return T(1) / (T(1) + exp(-z));
  const T e = exp(z);
  return e / (T(1) + e);
}

template <class T>
Vec<T> activation(const Vec<T>& z) {
  return z.unaryExpr([](T v) { return sigmoid(v); });
}

/// σ'(z) expressed through the post-activation value v = σ(z).
template <class T>
Vec<T> activation_deriv(const Vec<T>& value) {
  return value.array() * (T(1) - value.array());
}

enum class LossKind { mse, cross_entropy };

inline constexpr double kCrossEntropyClamp = 1e-12;

template <class T>
void check_same_length(const Vec<T>& y, const Vec<T>& target) {
  if (y.size() != target.size()) {
    throw Error(ErrorKind::shape, "loss length mismatch: " + std::to_string(y.size()) + " vs " +
                                      std::to_string(target.size()));
  }
}

template <class T>
T node_loss(const Vec<T>& y, const Vec<T>& target, LossKind kind) {
  check_same_length(y, target);
  if (kind == LossKind::mse) return T(0.5) * (y - target).squaredNorm();
  using std::log;
  T total(0);
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const T p = std::clamp(y[j], T(kCrossEntropyClamp), T(1) - T(kCrossEntropyClamp));
    total -= target[j] * log(p) + (T(1) - target[j]) * log(T(1) - p);
  }
  return total;
}

/// ∂ node_loss / ∂ y.
template <class T>
Vec<T> node_loss_grad(const Vec<T>& y, const Vec<T>& target, LossKind kind) {
  check_same_length(y, target);
  if (kind == LossKind::mse) return y - target;
  Vec<T> grad(y.size());
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const T lo(kCrossEntropyClamp);
    const T hi = T(1) - lo;
    if (y[j] < lo || y[j] > hi) {
      grad[j] = T(0);  // clamped region is flat
      continue;
    }
    grad[j] = (y[j] - target[j]) / (y[j] * (T(1) - y[j]));
  }
  return grad;
}

/// E(G) = Σ_i E(v_i).
inline double graph_loss(const std::vector<Eigen::VectorXd>& predictions,
                         const std::vector<Eigen::VectorXd>& targets, LossKind kind) {
  if (predictions.size() != targets.size()) {
    throw Error(ErrorKind::shape, "prediction and target counts differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    total += node_loss<double>(predictions[i], targets[i], kind);
  }
  return total;
}

struct OutputGrads {
  Eigen::MatrixXd weight;  // d x m^(k)
  Eigen::VectorXd bias;    // d
};

/// Output-layer gradients of the mean-square node loss written out entry by
/// entry: (y_j - ŷ_j) · y_j (1 - y_j) · h_e, and the same without h_e for the
/// bias. Used as an oracle for the generic reverse sweep.
inline OutputGrads output_layer_grads_closed_form(const Eigen::VectorXd& hidden_top,
                                                  const Eigen::VectorXd& y,
                                                  const Eigen::VectorXd& target) {
  if (y.size() != target.size()) throw Error(ErrorKind::shape, "label length mismatch");
  OutputGrads g{Eigen::MatrixXd(y.size(), hidden_top.size()), Eigen::VectorXd(y.size())};
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    const double residual = y[j] - target[j];
    const double slope = y[j] * (1.0 - y[j]);
    for (Eigen::Index e = 0; e < hidden_top.size(); ++e) {
      g.weight(j, e) = residual * slope * hidden_top[e];
    }
    g.bias[j] = residual * slope * 1.0;
  }
  return g;
}

}  // namespace loopynet
