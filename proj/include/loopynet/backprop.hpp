#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/model.hpp"
#include "loopynet/tree.hpp"

namespace loopynet {

/// Forward values for one tree position. Input neurons carry only `value`.
/// A bootstrapped hidden leaf at layer l keeps the inputs of its feature-only
/// chain in `chain`: x, h^(1), ..., h^(l-1).
template <class T>
struct TapeEntry {
  Vec<T> pre;    // z, empty for input neurons
  Vec<T> value;  // σ(z), or x for input neurons
  std::vector<Vec<T>> chain;
};

template <class T = double>
struct ForwardTape {
  std::vector<NeuronId> neurons;  // tree order, for consistency checks
  std::vector<TapeEntry<T>> entries;

  const Vec<T>& root_value() const { return entries.front().value; }
};

namespace detail {

template <class T>
void check_dims(const BasicParams<T>& p, const Graph& g, int model_depth) {
  if (p.depth() != model_depth) {
    throw Error(ErrorKind::shape, "params depth " + std::to_string(p.depth()) +
                                      " does not match tree depth k=" +
                                      std::to_string(model_depth));
  }
  if (!g.has_features()) throw Error(ErrorKind::state, "graph has no feature table");
  if (p.dims().input != g.feature_dim) {
    throw Error(ErrorKind::shape, "params expect feature dim " + std::to_string(p.dims().input) +
                                      ", graph has " + std::to_string(g.feature_dim));
  }
}

}  // namespace detail

/// Evaluates the tree bottom-up.
///
/// An internal neuron sums W·v + b over its tree children, each child link
/// using the affine block of its tag, and applies σ. Neighbors that are not
/// tree children contribute nothing. A hidden leaf h_i^(l) is bootstrapped
/// from x_i alone: h^(1) = σ(W^x x_i + b^x), then through the inter-layer
/// blocks up to layer l.
template <class T = double>
ForwardTape<T> forward_tree(const SpanTree& tree, const BasicParams<T>& p, const Graph& g) {
  if (!tree.leaves_attached()) {
    throw Error(ErrorKind::state, "leaf inputs are not attached to the tree");
  }
  detail::check_dims(p, g, tree.model_depth());

  ForwardTape<T> tape;
  tape.entries.resize(tree.size());
  tape.neurons.reserve(tree.size());
  for (const auto& n : tree.nodes()) tape.neurons.push_back(n.neuron);

  auto feature = [&](NodeIndex i) -> Vec<T> { return g.features[i].template cast<T>(); };

  for (std::size_t p_idx = tree.size(); p_idx-- > 0;) {
    const TreeNode& node = tree.node(p_idx);
    TapeEntry<T>& entry = tape.entries[p_idx];
    const NeuronId& n = node.neuron;

    if (n.is_input()) {
      entry.value = feature(n.node);
      continue;
    }
    if (node.children.empty()) {
      const auto leaf = tree.leaf_input(static_cast<int>(p_idx));
      if (!n.is_hidden() || !leaf) {
        throw Error(ErrorKind::state, "leaf " + to_string(n) + " has no attached input");
      }
      entry.chain.push_back(feature(*leaf));
      const auto& first = p[VarTag::input()];
      Vec<T> pre = first.weight * entry.chain.back() + first.bias;
      Vec<T> value = activation<T>(pre);
      for (int l = 2; l <= n.layer; ++l) {
        entry.chain.push_back(value);
        const auto& block = p[VarTag::inter(l)];
        pre = block.weight * value + block.bias;
        value = activation<T>(pre);
      }
      entry.pre = std::move(pre);
      entry.value = std::move(value);
      continue;
    }

    const auto& first_child = tree.node(static_cast<std::size_t>(node.children.front()));
    const auto rows = p[*first_child.tag].weight.rows();
    Vec<T> pre = Vec<T>::Zero(rows);
    for (int c : node.children) {
      const TreeNode& child = tree.node(static_cast<std::size_t>(c));
      const auto& block = p[*child.tag];
      pre.noalias() += block.weight * tape.entries[static_cast<std::size_t>(c)].value;
      pre += block.bias;
    }
    entry.value = activation<T>(pre);
    entry.pre = std::move(pre);
  }
  return tape;
}

/// Gradient buffers for every variable plus the Prop-call count.
/// `prop_calls` counts tree links visited; `chain_steps` counts the extra
/// affine steps taken inside bootstrapped leaf chains.
struct GradAccum {
  Params grads;
  std::size_t prop_calls = 0;
  std::size_t chain_steps = 0;

  GradAccum() = default;
  explicit GradAccum(const Dims& dims) : grads(dims) {}

  Affine& operator[](const VarTag& t) { return grads[t]; }
  const Affine& operator[](const VarTag& t) const { return grads[t]; }

  /// Entry-wise sum; callers merge in a fixed order for reproducibility.
  void merge(const GradAccum& other) {
    for (std::size_t s = 0; s < grads.blocks().size(); ++s) {
      grads.blocks()[s].weight += other.grads.blocks()[s].weight;
      grads.blocks()[s].bias += other.grads.blocks()[s].bias;
    }
    prop_calls += other.prop_calls;
    chain_steps += other.chain_steps;
  }

  double squared_norm() const {
    double total = 0.0;
    for (const auto& b : grads.blocks()) total += b.weight.squaredNorm() + b.bias.squaredNorm();
    return total;
  }

  void scale(double factor) {
    for (auto& b : grads.blocks()) {
      b.weight *= factor;
      b.bias *= factor;
    }
  }

  bool is_zero(const VarTag& t) const {
    return grads[t].weight.isZero(0.0) && grads[t].bias.isZero(0.0);
  }
};

/// Reverse sweep from an arbitrary root, given ∂E/∂(root value).
///
/// Adjoints are held with respect to pre-activations. Visiting parent x and
/// child m over a link tagged W: W's weight buffer gains δ_x ⊗ value(m), its
/// bias gains δ_x, and a hidden child receives δ_m = σ'(m) ⊙ Wᵀ δ_x. Each
/// node has one parent, so every adjoint is written exactly once.
inline GradAccum prop_gradients_from(const SpanTree& tree, const ForwardTape<double>& tape,
                                     const Params& p, const Eigen::VectorXd& root_value_grad) {
  if (tape.entries.size() != tree.size()) {
    throw Error(ErrorKind::state, "tape does not belong to this tree");
  }
  for (std::size_t i = 0; i < tree.size(); ++i) {
    if (tape.neurons[i] != tree.node(i).neuron) {
      throw Error(ErrorKind::state, "tape does not belong to this tree");
    }
  }
  if (tree.root().is_input()) {
    throw Error(ErrorKind::state, "input neurons have no parameters upstream");
  }
  if (root_value_grad.size() != tape.root_value().size()) {
    throw Error(ErrorKind::shape, "root gradient length mismatch");
  }

  GradAccum acc(p.dims());
  std::vector<Eigen::VectorXd> delta(tree.size());
  delta[0] = root_value_grad.cwiseProduct(activation_deriv<double>(tape.root_value()));

  for (std::size_t pos = 0; pos < tree.size(); ++pos) {
    const TreeNode& node = tree.node(pos);
    const Eigen::VectorXd& d = delta[pos];
    if (node.neuron.is_input()) continue;

    if (node.children.empty()) {
      // Bootstrapped leaf: walk the feature-only chain back down to x.
      const auto leaf = tree.leaf_input(static_cast<int>(pos));
      if (!leaf) throw Error(ErrorKind::state, "leaf without attached input");
      const auto& chain = tape.entries[pos].chain;
      if (chain.size() != static_cast<std::size_t>(node.neuron.layer)) {
        throw Error(ErrorKind::state, "bootstrap chain missing from tape");
      }
      Eigen::VectorXd cur = d;
      for (int l = node.neuron.layer; l >= 1; --l) {
        const Eigen::VectorXd& below = chain[static_cast<std::size_t>(l - 1)];
        const VarTag tag = l == 1 ? VarTag::input() : VarTag::inter(l);
        Affine& gb = acc[tag];
        gb.weight.noalias() += cur * below.transpose();
        gb.bias += cur;
        ++acc.chain_steps;
        if (l > 1) {
          cur = activation_deriv<double>(below).cwiseProduct(p[tag].weight.transpose() * cur);
        }
      }
      continue;
    }

    for (int c : node.children) {
      const TreeNode& child = tree.node(static_cast<std::size_t>(c));
      const VarTag tag = *child.tag;
      const Eigen::VectorXd& v = tape.entries[static_cast<std::size_t>(c)].value;
      Affine& gb = acc[tag];
      gb.weight.noalias() += d * v.transpose();
      gb.bias += d;
      ++acc.prop_calls;
      if (!child.neuron.is_input()) {
        delta[static_cast<std::size_t>(c)] =
            activation_deriv<double>(v).cwiseProduct(p[tag].weight.transpose() * d);
      }
    }
  }
  return acc;
}

/// ∂E/∂W for every W, for an output-rooted tree and the root's target ŷ.
inline GradAccum prop_gradients(const SpanTree& tree, const ForwardTape<double>& tape,
                                const Params& p, const Eigen::VectorXd& target,
                                LossKind loss) {
  if (!tree.root().is_output()) {
    throw Error(ErrorKind::state, "prop_gradients needs an output-rooted tree");
  }
  if (tape.entries.empty()) throw Error(ErrorKind::state, "empty tape");
  return prop_gradients_from(tree, tape, p, node_loss_grad<double>(tape.root_value(), target, loss));
}

/// Closed-form output-layer gradients read off a tape of an output-rooted tree.
inline OutputGrads output_layer_grads_closed_form(const SpanTree& tree,
                                                  const ForwardTape<double>& tape,
                                                  const Eigen::VectorXd& target) {
  if (!tree.root().is_output() || tape.entries.size() != tree.size() ||
      tree.node(0).children.size() != 1) {
    throw Error(ErrorKind::state, "tape lacks the root output and its top hidden state");
  }
  const auto child = static_cast<std::size_t>(tree.node(0).children.front());
  return output_layer_grads_closed_form(tape.entries[child].value, tape.root_value(), target);
}

/// Root loss of the tree-unrolled model.
template <class T>
T tree_loss(const SpanTree& tree, const BasicParams<T>& p, const Graph& g, const Vec<T>& target,
            LossKind loss) {
  const ForwardTape<T> tape = forward_tree<T>(tree, p, g);
  return node_loss<T>(tape.root_value(), target, loss);
}

}  // namespace loopynet
