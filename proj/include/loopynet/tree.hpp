#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "loopynet/error.hpp"
#include "loopynet/graph.hpp"
#include "loopynet/model.hpp"

namespace loopynet {

/// Neurons within g reversed-link hops of a root neuron.
///
/// `members` are the neurons that can send error back to the root: every one
/// reaches the root along forward links in at most g steps. Label neurons of
/// other nodes hang off member top-layer hidden neurons but have no path to
/// the root; they are kept apart in `dangling_labels`, together with their
/// undirected hop count, and never enter a spanning tree.
struct SubGraph {
  NeuronId root;
  int hops = 0;
  std::vector<NeuronId> members;  // BFS order, root first
  std::vector<int> hop;           // parallel to members
  std::vector<Link> links;        // model links with both ends in members
  std::vector<NeuronId> dangling_labels;
  std::vector<int> dangling_hop;

  bool contains(const NeuronId& n) const {
    return std::find(members.begin(), members.end(), n) != members.end();
  }
};

namespace detail {

inline void require_neuron(const ModelGraph& mg, const NeuronId& root) {
  if (!mg.contains(root)) throw Error(ErrorKind::bounds, "root neuron not in model graph");
}

inline void require_hops(int g) {
  if (g < 1) throw Error(ErrorKind::config, "g must be >= 1, got " + std::to_string(g));
}

}  // namespace detail

inline SubGraph extract_subgraph(const ModelGraph& mg, const NeuronId& root, int g) {
  detail::require_hops(g);
  detail::require_neuron(mg, root);
  SubGraph sg;
  sg.root = root;
  sg.hops = g;

  std::unordered_map<std::size_t, int> hop_of;
  std::deque<NeuronId> queue{root};
  hop_of[mg.index(root)] = 0;
  while (!queue.empty()) {
    const NeuronId n = queue.front();
    queue.pop_front();
    const int h = hop_of[mg.index(n)];
    sg.members.push_back(n);
    sg.hop.push_back(h);
    if (h == g) continue;
    for (const Link& link : mg.in_links(n)) {
      if (hop_of.try_emplace(mg.index(link.from), h + 1).second) queue.push_back(link.from);
    }
  }
  for (const NeuronId& n : sg.members) {
    for (const Link& link : mg.in_links(n)) {
      if (hop_of.count(mg.index(link.from))) sg.links.push_back(link);
    }
  }
  const int k = mg.depth();
  for (std::size_t p = 0; p < sg.members.size(); ++p) {
    const NeuronId& n = sg.members[p];
    if (n.is_hidden() && n.layer == k && sg.hop[p] < g) {
      const NeuronId label = NeuronId::output(n.node);
      if (label != root) {
        sg.dangling_labels.push_back(label);
        sg.dangling_hop.push_back(sg.hop[p] + 1);
      }
    }
  }
  return sg;
}

struct TreeNode {
  NeuronId neuron;
  int depth = 0;
  int parent = -1;             // position of the parent, -1 for the root
  std::optional<VarTag> tag;   // tag of the link child -> parent
  std::vector<int> children;   // positions, in canonical order
};

/// A leaf hidden neuron and the node whose feature vector bootstraps it.
struct LeafInput {
  int position = 0;
  NodeIndex node = 0;
};

/// g-hop rooted spanning tree. Nodes are stored in BFS order, so parents
/// always precede their children and position 0 is the root.
class SpanTree {
 public:
  SpanTree() = default;
  SpanTree(int hops, int model_depth, std::vector<TreeNode> nodes)
      : hops_(hops), model_depth_(model_depth), nodes_(std::move(nodes)) {}

  const NeuronId& root() const { return nodes_.front().neuron; }
  int hops() const { return hops_; }
  int model_depth() const { return model_depth_; }
  std::size_t size() const { return nodes_.size(); }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(std::size_t pos) const { return nodes_.at(pos); }

  int depth() const {
    int d = 0;
    for (const auto& n : nodes_) d = std::max(d, n.depth);
    return d;
  }

  std::optional<int> position_of(const NeuronId& n) const {
    for (std::size_t p = 0; p < nodes_.size(); ++p) {
      if (nodes_[p].neuron == n) return static_cast<int>(p);
    }
    return std::nullopt;
  }
  bool contains(const NeuronId& n) const { return position_of(n).has_value(); }

  bool leaves_attached() const { return leaves_attached_; }
  const std::vector<LeafInput>& leaf_inputs() const { return leaf_inputs_; }

  /// Node index bootstrapping the leaf at `pos`, if any.
  std::optional<NodeIndex> leaf_input(int pos) const {
    if (pos < 0 || static_cast<std::size_t>(pos) >= leaf_at_.size()) return std::nullopt;
    return leaf_at_[static_cast<std::size_t>(pos)];
  }

  /// Tags carried by tree links.
  std::set<VarTag> link_tags() const {
    std::set<VarTag> tags;
    for (const auto& n : nodes_) {
      if (n.tag) tags.insert(*n.tag);
    }
    return tags;
  }

  /// Every tag the tree-unrolled loss depends on: link tags plus the
  /// x -> h^(1) -> ... -> h^(l) chains that bootstrap hidden leaves.
  std::set<VarTag> variable_tags() const {
    std::set<VarTag> tags = link_tags();
    for (const auto& leaf : leaf_inputs_) {
      const NeuronId& n = nodes_[static_cast<std::size_t>(leaf.position)].neuron;
      tags.insert(VarTag::input());
      for (int l = 2; l <= n.layer; ++l) tags.insert(VarTag::inter(l));
    }
    return tags;
  }

  void set_leaf_inputs(std::vector<LeafInput> leaves) {
    leaf_inputs_ = std::move(leaves);
    leaf_at_.assign(nodes_.size(), std::nullopt);
    for (const auto& leaf : leaf_inputs_) leaf_at_.at(static_cast<std::size_t>(leaf.position)) = leaf.node;
    leaves_attached_ = true;
  }

 private:
  int hops_ = 0;
  int model_depth_ = 0;
  std::vector<TreeNode> nodes_;
  std::vector<LeafInput> leaf_inputs_;
  std::vector<std::optional<NodeIndex>> leaf_at_;
  bool leaves_attached_ = false;
};

/// BFS spanning tree of `sg` over reversed links.
///
/// Children of a node are discovered in the order of its in-links, i.e. by
/// (layer rank, node index) of the source, and each neuron is claimed by the
/// first node that reaches it. Label neurons never appear below the root.
inline SpanTree extract_tree(const ModelGraph& mg, const SubGraph& sg) {
  if (sg.members.empty()) throw Error(ErrorKind::state, "empty subgraph");
  std::unordered_map<std::size_t, bool> member;
  for (const NeuronId& n : sg.members) member[mg.index(n)] = true;

  std::vector<TreeNode> nodes;
  std::unordered_map<std::size_t, int> placed;
  nodes.push_back({sg.root, 0, -1, std::nullopt, {}});
  placed[mg.index(sg.root)] = 0;
  for (std::size_t head = 0; head < nodes.size(); ++head) {
    if (nodes[head].depth == sg.hops) continue;
    const NeuronId parent = nodes[head].neuron;
    const int depth = nodes[head].depth + 1;
    for (const Link& link : mg.in_links(parent)) {
      const std::size_t idx = mg.index(link.from);
      if (!member.count(idx) || placed.count(idx)) continue;
      const int pos = static_cast<int>(nodes.size());
      placed[idx] = pos;
      nodes.push_back({link.from, depth, static_cast<int>(head), link.tag, {}});
      nodes[head].children.push_back(pos);
    }
  }
  return SpanTree(sg.hops, mg.depth(), std::move(nodes));
}

/// Records, for every hidden leaf h_i^(l), that its state is bootstrapped
/// from the feature vector x_i. Input-neuron leaves need nothing.
inline SpanTree attach_leaf_inputs(SpanTree t, const Graph& g) {
  std::vector<LeafInput> leaves;
  for (std::size_t p = 0; p < t.size(); ++p) {
    const TreeNode& n = t.node(p);
    if (!n.children.empty() || !n.neuron.is_hidden()) continue;
    if (n.neuron.node >= g.node_count()) {
      throw Error(ErrorKind::state, "tree references a node outside the graph");
    }
    leaves.push_back({static_cast<int>(p), n.neuron.node});
  }
  t.set_leaf_inputs(std::move(leaves));
  return t;
}

/// Subgraph, spanning tree and leaf attachment for one root.
inline SpanTree build_tree(const ModelGraph& mg, const Graph& g, const NeuronId& root, int hops) {
  return attach_leaf_inputs(extract_tree(mg, extract_subgraph(mg, root, hops)), g);
}

struct TreeStats {
  std::size_t node_count_excl_root = 0;
  int depth = 0;
  std::uint64_t prop_call_bound = 0;
  bool bound_saturated = false;  // true bound exceeds 64 bits
};

/// ((d_max+1)^(g+1) - d_max - 1) / d_max, i.e. Σ_{i=1..g} (d_max+1)^i, the
/// most non-root nodes a depth-g tree with fan-out d_max+1 can hold.
inline std::uint64_t prop_call_bound(std::uint64_t d_max, int g, bool* saturated = nullptr) {
  if (d_max < 1) throw Error(ErrorKind::config, "prop-call bound needs d_max >= 1");
  if (g < 0) throw Error(ErrorKind::config, "g must be non-negative");
  __extension__ typedef unsigned __int128 u128;
  const u128 base = static_cast<u128>(d_max) + 1;
  const u128 cap = static_cast<u128>(UINT64_MAX) * d_max + d_max + 1;
  u128 power = 1;
  bool over = false;
  for (int i = 0; i <= g && !over; ++i) {
    power *= base;
    if (power > cap) over = true;
  }
  if (saturated) *saturated = over;
  if (over) return UINT64_MAX;
  const u128 bound = (power - d_max - 1) / d_max;
  if (bound > UINT64_MAX) {
    if (saturated) *saturated = true;
    return UINT64_MAX;
  }
  return static_cast<std::uint64_t>(bound);
}

inline TreeStats tree_stats(const SpanTree& t, std::size_t d_max, int g) {
  TreeStats stats;
  stats.node_count_excl_root = t.size() - 1;
  stats.depth = t.depth();
  stats.prop_call_bound = prop_call_bound(d_max, g, &stats.bound_saturated);
  return stats;
}

/// Canonical JSON dump: nodes in tree order with (kind, layer, node, depth,
/// parent, tag), plus the leaf feature attachments.
inline nlohmann::ordered_json tree_to_json(const SpanTree& t, const Graph& g) {
  auto neuron_json = [&](const NeuronId& n) {
    nlohmann::ordered_json j;
    j["kind"] = kind_name(n.kind);
    j["layer"] = n.layer;
    j["node"] = g.node_ids.at(n.node);
    return j;
  };
  nlohmann::ordered_json doc;
  doc["g"] = t.hops();
  doc["k"] = t.model_depth();
  doc["root"] = neuron_json(t.root());
  auto& nodes = doc["nodes"] = nlohmann::ordered_json::array();
  for (std::size_t p = 0; p < t.size(); ++p) {
    const TreeNode& n = t.node(p);
    auto j = neuron_json(n.neuron);
    j["depth"] = n.depth;
    j["parent"] = n.parent;
    j["tag"] = n.tag ? nlohmann::ordered_json(tag_key(*n.tag)) : nlohmann::ordered_json(nullptr);
    nodes.push_back(std::move(j));
  }
  auto& leaves = doc["leaf_inputs"] = nlohmann::ordered_json::array();
  for (const auto& leaf : t.leaf_inputs()) {
    leaves.push_back({{"position", leaf.position}, {"feature", g.node_ids.at(leaf.node)}});
  }
  return doc;
}

}  // namespace loopynet
